//! Client-side objective weights and their hypergradient adaptation.
//!
//! Each step, for every objective `k`, the signal `Delta_k = <g_k^t, g_k^{t-1}>`
//! of consecutive hidden-layer gradients moves the weight by `lambda * Delta_k`,
//! after which the whole vector is projected back onto the simplex.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use alloc::{format, vec};

use crate::envs::ACCURACY;
use crate::error::{invalid, Error, Result};
use crate::numeric::{dot, project_to_simplex};
use crate::policy::HiddenGradient;

pub const DEFAULT_LAMBDA: f64 = 0.01;
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Named weights on the probability simplex; `accuracy` is entry 0.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveWeights {
    names: Vec<String>,
    values: Vec<f64>,
}

impl ObjectiveWeights {
    pub fn uniform(names: &[String]) -> Result<Self> {
        let k = names.len();
        if k == 0 {
            return Err(invalid!("no objectives"));
        }
        Self::new(names.to_vec(), vec![1.0 / k as f64; k])
    }

    /// Validated constructor: accuracy first, unique names, on the simplex.
    pub fn new(names: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if names.len() != values.len() {
            return Err(invalid!("{} names for {} weights", names.len(), values.len()));
        }
        if names.first().map(String::as_str) != Some(ACCURACY) {
            return Err(invalid!("objective weights must start with '{ACCURACY}'"));
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(invalid!("duplicate objective '{n}'"));
            }
        }
        if values.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(invalid!("objective weights must be finite and nonnegative: {values:?}"));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(invalid!("objective weights sum to {sum}, not 1"));
        }
        Ok(Self { names, values })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }

    pub fn accuracy(&self) -> f64 {
        self.values[0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.names.iter().map(String::as_str).zip(self.values.iter().copied())
    }

    fn with_values(&self, values: Vec<f64>) -> Self {
        Self {
            names: self.names.clone(),
            values,
        }
    }
}

/// Previous per-objective gradients and the hypergradient step size.
#[derive(Clone, Debug, PartialEq)]
pub struct HypergradState {
    pub prev_grads: Option<Vec<HiddenGradient>>,
    pub lambda: f64,
}

impl HypergradState {
    pub fn new(lambda: f64) -> Self {
        Self {
            prev_grads: None,
            lambda,
        }
    }

    /// Forget the stored gradients (round boundary).
    pub fn clear(&mut self) {
        self.prev_grads = None;
    }
}

impl Default for HypergradState {
    fn default() -> Self {
        Self::new(DEFAULT_LAMBDA)
    }
}

/// `Delta = <g_t, g_prev>`
pub fn hypergrad_signal(g_t: &HiddenGradient, g_prev: &HiddenGradient) -> Result<f64> {
    if g_t.dim() != g_prev.dim() {
        return Err(invalid!(
            "hidden gradient dimensions differ: {} vs {}",
            g_t.dim(),
            g_prev.dim()
        ));
    }
    Ok(dot(g_t.as_slice(), g_prev.as_slice()))
}

/// Pre-projection weights `w_k + lambda * Delta_k`.
pub fn propose_weights(
    w: &ObjectiveWeights,
    prev: &[HiddenGradient],
    grads: &[HiddenGradient],
    lambda: f64,
) -> Result<Vec<f64>> {
    if prev.len() != w.len() || grads.len() != w.len() {
        return Err(invalid!(
            "{} weights, {} previous and {} current gradients",
            w.len(),
            prev.len(),
            grads.len()
        ));
    }
    w.values()
        .iter()
        .zip(grads.iter().zip(prev))
        .map(|(&wk, (g, gp))| Ok(wk + lambda * hypergrad_signal(g, gp)?))
        .collect()
}

/// One adaptation step. The first call after a reset only stores the
/// gradients. If the proposal equals the current weights bit for bit (zero
/// step size or zero signal) the weights are returned untouched rather than
/// re-projected.
pub fn update_weights(
    w: &ObjectiveWeights,
    state: HypergradState,
    grads: Vec<HiddenGradient>,
) -> Result<(ObjectiveWeights, HypergradState)> {
    if grads.len() != w.len() {
        return Err(invalid!(
            "{} hidden gradients for {} objectives",
            grads.len(),
            w.len()
        ));
    }
    let lambda = state.lambda;
    let next = match &state.prev_grads {
        None => w.clone(),
        Some(prev) => {
            let proposal = propose_weights(w, prev, &grads, lambda)?;
            if proposal.iter().any(|x| !x.is_finite()) {
                return Err(invalid!("hypergradient step produced non-finite weights"));
            }
            if proposal == w.values() {
                w.clone()
            } else {
                w.with_values(project_to_simplex(&proposal)?)
            }
        }
    };
    Ok((
        next,
        HypergradState {
            prev_grads: Some(grads),
            lambda,
        },
    ))
}

/// Result of a round-boundary reset.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundReset {
    pub weights: ObjectiveWeights,
    /// The broadcast shared nothing with this client, uniform weights were used.
    pub fell_back: bool,
}

/// Round-start weights for a client with components `names`.
///
/// Without a broadcast the weights are uniform. Otherwise shared components
/// take the broadcast value, client-specific ones keep their value from the
/// end of the previous round (uniform `1/K` if none is known), and the result
/// is projected onto the simplex.
pub fn reset_for_round(
    broadcast: Option<&[(String, f64)]>,
    names: &[String],
    previous: Option<&ObjectiveWeights>,
) -> Result<RoundReset> {
    let uniform = ObjectiveWeights::uniform(names)?;
    let Some(shared) = broadcast else {
        return Ok(RoundReset {
            weights: uniform,
            fell_back: false,
        });
    };
    let lookup = |name: &str| shared.iter().find(|(n, _)| n == name).map(|(_, v)| *v);
    if !names.iter().any(|n| lookup(n).is_some()) {
        log::warn!("broadcast shares no component with {names:?}; using uniform weights");
        return Ok(RoundReset {
            weights: uniform,
            fell_back: true,
        });
    }
    let k = names.len() as f64;
    let raw: Vec<f64> = names
        .iter()
        .map(|n| {
            lookup(n)
                .or_else(|| previous.and_then(|p| p.get(n)))
                .unwrap_or(1.0 / k)
        })
        .collect();
    if raw.iter().any(|x| !x.is_finite()) {
        return Err(Error::Protocol(format!("non-finite broadcast weight in {shared:?}")));
    }
    let values = if raw.iter().sum::<f64>() == 1.0 && raw.iter().all(|&x| x >= 0.0) {
        raw
    } else {
        project_to_simplex(&raw)?
    };
    Ok(RoundReset {
        weights: ObjectiveWeights::new(names.to_vec(), values)?,
        fell_back: false,
    })
}

pub fn names_of(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}
