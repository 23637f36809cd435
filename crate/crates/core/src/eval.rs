//! Greedy evaluation of a policy on a task's eval prompts.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::envs::{score_all, Completion, RewardComponent, TaskSpec, Token};
use crate::numeric::{purpose_stream_id, RngStream};
use crate::policy::PolicyParams;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalFragment {
    /// Mean accuracy reward over the eval prompts.
    pub accuracy: f64,
    /// Unweighted mean over `components`, averaged over eval prompts.
    pub mean_reward: f64,
    /// Per-component means in `components` order.
    pub components: Vec<(String, f64)>,
}

/// Argmax decoding; exact ties are broken uniformly with a stream derived
/// from `tie_seed`, so evaluation never touches training randomness.
pub fn greedy_decode(params: &PolicyParams, task: &TaskSpec, prompt_id: usize, rng: &mut RngStream) -> Completion {
    let slot = task.prompt_slot[prompt_id];
    let mut hidden = Vec::new();
    let mut logits = Vec::new();
    let mut tied = Vec::new();
    let mut tokens: Vec<Token> = Vec::with_capacity(task.max_len);
    let mut prev = None;
    for _ in 0..task.max_len {
        params.forward(slot, prev, &mut hidden, &mut logits);
        let best = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        tied.clear();
        tied.extend(logits.iter().enumerate().filter(|(_, &l)| l == best).map(|(i, _)| i));
        let a = if tied.len() == 1 { tied[0] } else { tied[rng.below(tied.len())] };
        tokens.push(a);
        prev = Some(a);
    }
    Completion { prompt_id, tokens }
}

/// Score greedy completions on every eval prompt of `task`.
///
/// `components` must lead with accuracy (the task's canonical set does).
pub fn evaluate(params: &PolicyParams, task: &TaskSpec, components: &[RewardComponent], tie_seed: u64) -> EvalFragment {
    let mut rng = RngStream::new(tie_seed, purpose_stream_id("eval", 0));
    let k = components.len();
    let mut sums = alloc::vec![0.0; k];
    for &p in &task.eval {
        let c = greedy_decode(params, task, p, &mut rng);
        for (s, r) in sums.iter_mut().zip(score_all(components, task, &c)) {
            *s += r;
        }
    }
    let n = task.eval.len().max(1) as f64;
    let means: Vec<f64> = sums.iter().map(|s| s / n).collect();
    let accuracy = components
        .iter()
        .position(|c| *c == RewardComponent::Accuracy)
        .map_or(0.0, |i| means[i]);
    let mean_reward = if k == 0 { 0.0 } else { means.iter().sum::<f64>() / k as f64 };
    EvalFragment {
        accuracy,
        mean_reward,
        components: components.iter().map(|c| c.name().to_string()).zip(means).collect(),
    }
}
