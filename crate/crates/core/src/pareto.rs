//! Non-dominated filtering for two maximized reward axes.

use alloc::vec::Vec;

/// `true` for every point no other point weakly beats on both axes while
/// strictly beating it on one.
pub fn non_dominated(points: &[(f64, f64)]) -> Vec<bool> {
    points
        .iter()
        .map(|&(x, y)| {
            !points
                .iter()
                .any(|&(qx, qy)| qx >= x && qy >= y && (qx > x || qy > y))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn incomparable_points_all_survive() {
        let pts = [(0.2, 0.9), (0.5, 0.5), (0.6, 0.4)];
        assert_eq!(non_dominated(&pts), vec![true; 3]);
    }

    #[test]
    fn dominated_point_is_dropped() {
        let pts = [(0.2, 0.9), (0.5, 0.5), (0.6, 0.4), (0.1, 0.1)];
        assert_eq!(non_dominated(&pts), vec![true, true, true, false]);
    }

    #[test]
    fn single_point_frontier() {
        assert_eq!(non_dominated(&[(0.3, 0.3)]), vec![true]);
    }
}
