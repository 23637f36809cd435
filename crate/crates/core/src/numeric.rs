//! Deterministic numeric kernels: simplex projection, softmax, the cosine
//! schedule, seeded random streams and a few dense helpers.
//!
//! All reductions run left to right in `f64` so that results are bitwise
//! reproducible for a fixed input order.

use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{invalid, Result};

/// Euclidean projection of `v` onto the probability simplex.
///
/// Sort-based: with `u` sorted descending, the pivot `rho` is the largest
/// index where `u_rho - (sum_{i<=rho} u_i - 1) / rho > 0`, and every entry is
/// shifted by the resulting threshold and clipped at zero.
pub fn project_to_simplex(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(invalid!("cannot project an empty vector onto the simplex"));
    }
    if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
        return Err(invalid!("non-finite entry {bad} in simplex projection input"));
    }

    let mut u = v.to_vec();
    u.sort_unstable_by(|a, b| b.total_cmp(a));

    let mut cumsum = 0.0;
    let mut threshold = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cumsum += ui;
        let candidate = (cumsum - 1.0) / (i + 1) as f64;
        if ui - candidate > 0.0 {
            threshold = candidate;
        }
    }

    Ok(v.iter().map(|&x| (x - threshold).max(0.0)).collect())
}

/// Exp-normalize with max subtraction.
pub fn softmax(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(invalid!("softmax of an empty vector"));
    }
    if let Some(bad) = scores.iter().find(|x| !x.is_finite()) {
        return Err(invalid!("non-finite score {bad} in softmax input"));
    }
    let mut out = Vec::with_capacity(scores.len());
    softmax_into(scores, &mut out);
    Ok(out)
}

/// Unchecked softmax used on hot paths; `scores` must be finite and nonempty.
pub(crate) fn softmax_into(scores: &[f64], out: &mut Vec<f64>) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    out.clear();
    let mut total = 0.0;
    for &s in scores {
        let e = libm::exp(s - max);
        total += e;
        out.push(e);
    }
    for p in out.iter_mut() {
        *p /= total;
    }
}

/// Half-cosine decay from `lr0` at `step = 0` to zero at `step = total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, lr0: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(invalid!("cosine schedule needs total_steps >= 1"));
    }
    if step > total_steps {
        return Err(invalid!("step {step} exceeds total_steps {total_steps}"));
    }
    if !(lr0 > 0.0 && lr0.is_finite()) {
        return Err(invalid!("base learning rate must be positive, got {lr0}"));
    }
    let phase = core::f64::consts::PI * step as f64 / total_steps as f64;
    Ok(lr0 * 0.5 * (1.0 + libm::cos(phase)))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream identifier for one client in one round.
///
/// Stable across platforms and releases, unlike `core::hash`.
pub fn client_stream_id(client_id: u32, round: usize) -> u64 {
    splitmix64(splitmix64(u64::from(client_id)) ^ (round as u64).rotate_left(32))
}

/// Derive a stream id for an arbitrary labelled purpose (init, eval, ...).
pub fn purpose_stream_id(tag: &str, index: u64) -> u64 {
    // FNV-1a over the tag, then mixed with the index
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    splitmix64(h ^ splitmix64(index))
}

/// A seeded pseudo-random stream.
///
/// `(seed, stream_id)` fully determines the draw sequence; each stream is
/// owned by exactly one client-round (or one evaluation) at a time.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform index in `0..n`; `n` must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Lemire's multiply-shift; the bias is < n / 2^64.
        ((u128::from(self.next_u64()) * n as u128) >> 64) as usize
    }

    /// Draw an index from a discrete distribution given by `probs`.
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        let u = self.uniform();
        let mut acc = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        // rounding left a sliver above the cumulative sum
        probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn projection_identity_on_simplex_point() {
        assert_eq!(project_to_simplex(&[0.5, 0.5]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn projection_clips_overshoot() {
        let p = project_to_simplex(&[1.2, -0.2]).unwrap();
        assert!(close(&p, &[1.0, 0.0], 1e-15), "{p:?}");
    }

    #[test]
    fn projection_is_shift_invariant_for_uniform_shift() {
        let third = 1.0 / 3.0;
        for c in [-5.0, -0.3, 0.0, 0.7, 12.0] {
            let p = project_to_simplex(&[third + c, third + c, third + c]).unwrap();
            assert!(close(&p, &[third; 3], 1e-12), "c={c}: {p:?}");
        }
    }

    #[test]
    fn projection_rejects_empty_and_nan() {
        assert!(matches!(project_to_simplex(&[]), Err(crate::Error::InvalidInput(_))));
        assert!(project_to_simplex(&[f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn softmax_reference_values() {
        let p = softmax(&[2.0, 4.0]).unwrap();
        // 1 / (1 + e^2) and e^2 / (1 + e^2)
        assert!(close(&p, &[0.119_202_922_022_117_6, 0.880_797_077_977_882_3], 1e-15));
        let q = softmax(&[7.0, 7.0, 7.0]).unwrap();
        assert!(close(&q, &[1.0 / 3.0; 3], 1e-15));
        let r = softmax(&[0.0, 700.0]).unwrap();
        assert!(r.iter().all(|x| x.is_finite()));
        assert!(r[0] < 1e-300 && (r[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cosine_schedule_points() {
        assert_eq!(cosine_lr(0, 100, 2e-5).unwrap(), 2e-5);
        assert!((cosine_lr(50, 100, 2e-5).unwrap() - 1e-5).abs() < 1e-18);
        assert!(cosine_lr(100, 100, 2e-5).unwrap().abs() < 1e-20);
        assert!(cosine_lr(101, 100, 2e-5).is_err());
        assert!(cosine_lr(0, 0, 2e-5).is_err());
    }

    #[test]
    fn cosine_schedule_nonincreasing() {
        let lrs: Vec<f64> = (0..=40).map(|s| cosine_lr(s, 40, 0.05).unwrap()).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn rng_streams_are_reproducible_and_distinct() {
        let mut a = RngStream::new(7, 3);
        let mut b = RngStream::new(7, 3);
        let mut c = RngStream::new(7, 4);
        let xs: Vec<u64> = (0..16).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..16).map(|_| b.next_u64()).collect();
        let zs: Vec<u64> = (0..16).map(|_| c.next_u64()).collect();
        assert_eq!(xs, ys);
        assert_ne!(xs, zs);
    }

    #[test]
    fn client_streams_do_not_collide_on_small_grid() {
        let mut ids: Vec<u64> = (0..64u32)
            .flat_map(|c| (0..16).map(move |r| client_stream_id(c, r)))
            .collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 64 * 16);
    }

    #[test]
    fn categorical_respects_point_mass() {
        let mut rng = RngStream::new(1, 1);
        for _ in 0..100 {
            assert_eq!(rng.categorical(&[0.0, 0.0, 1.0, 0.0]), 2);
        }
    }
}
