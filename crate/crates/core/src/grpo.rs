//! One local GRPO step: sample groups, score every reward component,
//! scalarize with the current objective weights, normalize within each group
//! and take a plain SGD step on the unclipped surrogate. Per-objective hidden
//! gradients for the weight adaptation are produced alongside.

use alloc::vec::Vec;

use crate::envs::{score_all, RewardComponent, TaskSpec};
use crate::error::{invalid, Result};
use crate::numeric::{norm_sq, RngStream};
use crate::policy::{self, HiddenGradient, PolicyParams, SampledCompletion};
use crate::weights::ObjectiveWeights;

pub const DEFAULT_GROUP_SIZE: usize = 16;
pub const ADVANTAGE_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrpoConfig {
    /// Completions per prompt.
    pub group_size: usize,
    /// Divide by the group's population std; off = mean-centering only.
    pub normalize_std: bool,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: DEFAULT_GROUP_SIZE,
            normalize_std: true,
        }
    }
}

/// `G` completions for one prompt with their `G x K` reward matrix.
#[derive(Clone, Debug)]
pub struct RolloutGroup {
    pub prompt_id: usize,
    pub completions: Vec<SampledCompletion>,
    pub rewards: Vec<Vec<f64>>,
    pub scalarized: Vec<f64>,
}

impl RolloutGroup {
    /// Column `k` of the reward matrix.
    pub fn component(&self, k: usize) -> Vec<f64> {
        self.rewards.iter().map(|row| row[k]).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub step: usize,
    /// Mean reward per component, in the client's component order.
    pub component_means: Vec<f64>,
    pub scalarized_mean: f64,
    /// Mean count of non-pad tokens.
    pub mean_response_len: f64,
    /// Objective weights the rewards were scalarized with.
    pub weights: Vec<f64>,
    /// `g_k` for every objective, same order as `component_means`.
    pub hidden_grads: Vec<HiddenGradient>,
    pub grad_norm: f64,
    pub lr: f64,
}

/// Group-relative advantages `(R_i - mean) / (std + 1e-8)` with population std.
///
/// A constant group yields exact zeros.
pub fn group_advantages(rewards: &[f64], normalize_std: bool) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(invalid!(
            "group-relative advantages need at least 2 rewards, got {}",
            rewards.len()
        ));
    }
    if let Some(r) = rewards.iter().find(|r| !r.is_finite()) {
        return Err(invalid!("non-finite reward {r}"));
    }
    let first = rewards[0];
    if rewards.iter().all(|&r| r == first) {
        return Ok(alloc::vec![0.0; rewards.len()]);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    if !normalize_std {
        return Ok(rewards.iter().map(|r| r - mean).collect());
    }
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let denom = libm::sqrt(var) + ADVANTAGE_EPS;
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}

/// `r_w = sum_k w_k r_k`
pub fn scalarize(rewards: &[f64], weights: &[f64]) -> f64 {
    rewards.iter().zip(weights).fold(0.0, |acc, (r, w)| acc + r * w)
}

fn check_weights(weights: &ObjectiveWeights, components: &[RewardComponent]) -> Result<()> {
    if weights.len() != components.len() {
        return Err(invalid!(
            "{} objective weights for {} reward components",
            weights.len(),
            components.len()
        ));
    }
    for (name, c) in weights.names().iter().zip(components) {
        if name != c.name() {
            return Err(invalid!("weight '{name}' does not line up with component '{}'", c.name()));
        }
    }
    Ok(())
}

/// Sample and score one group per prompt.
pub fn collect_rollouts(
    params: &PolicyParams,
    weights: &ObjectiveWeights,
    task: &TaskSpec,
    components: &[RewardComponent],
    batch_prompts: &[usize],
    group_size: usize,
    rng: &mut RngStream,
) -> Result<Vec<RolloutGroup>> {
    check_weights(weights, components)?;
    if batch_prompts.is_empty() {
        return Err(invalid!("empty prompt batch"));
    }
    if group_size < 2 {
        return Err(invalid!("group size must be at least 2, got {group_size}"));
    }
    batch_prompts
        .iter()
        .map(|&prompt_id| {
            let mut completions = Vec::with_capacity(group_size);
            let mut rewards = Vec::with_capacity(group_size);
            let mut scalarized = Vec::with_capacity(group_size);
            for _ in 0..group_size {
                let c = policy::sample(params, task, prompt_id, rng)?;
                let r = score_all(components, task, &c.completion);
                scalarized.push(scalarize(&r, weights.values()));
                rewards.push(r);
                completions.push(c);
            }
            Ok(RolloutGroup {
                prompt_id,
                completions,
                rewards,
                scalarized,
            })
        })
        .collect()
}

/// Policy-gradient update and report from already collected groups.
pub fn grpo_update(
    params: &PolicyParams,
    weights: &ObjectiveWeights,
    task: &TaskSpec,
    groups: Vec<RolloutGroup>,
    lr: f64,
    cfg: &GrpoConfig,
    step: usize,
) -> Result<(PolicyParams, StepReport)> {
    let k = weights.len();
    let mut advantages = Vec::new();
    let mut per_objective: Vec<Vec<f64>> = (0..k).map(|_| Vec::new()).collect();
    let mut component_sums = alloc::vec![0.0; k];
    let mut scalar_sum = 0.0;
    let mut len_sum = 0.0;
    for g in &groups {
        advantages.extend(group_advantages(&g.scalarized, cfg.normalize_std)?);
        for (j, adv) in per_objective.iter_mut().enumerate() {
            adv.extend(group_advantages(&g.component(j), cfg.normalize_std)?);
        }
        for row in &g.rewards {
            for (s, r) in component_sums.iter_mut().zip(row) {
                *s += r;
            }
        }
        scalar_sum += g.scalarized.iter().sum::<f64>();
        for c in &g.completions {
            len_sum += c.completion.tokens.iter().filter(|&&t| t != task.special.pad).count() as f64;
        }
    }
    let batch: Vec<SampledCompletion> = groups.into_iter().flat_map(|g| g.completions).collect();
    let n = batch.len() as f64;

    let (grad, _) = policy::surrogate_gradient(params, &batch, &advantages)?;
    let directions = policy::hidden_directions(params, &batch);
    let pairs = policy::batch_pairs(&batch);
    let hidden_grads = per_objective
        .iter()
        .map(|adv| policy::hidden_gradient(&directions, adv, pairs))
        .collect::<Result<Vec<_>>>()?;

    let mut next = params.clone();
    next.descend(&grad, lr);
    if !next.is_finite() {
        return Err(invalid!("policy update produced non-finite parameters"));
    }

    let report = StepReport {
        step,
        component_means: component_sums.iter().map(|s| s / n).collect(),
        scalarized_mean: scalar_sum / n,
        mean_response_len: len_sum / n,
        weights: weights.values().to_vec(),
        hidden_grads,
        grad_norm: libm::sqrt(norm_sq(&grad)),
        lr,
    };
    Ok((next, report))
}

/// One GRPO optimization step on `batch_prompts`.
#[allow(clippy::too_many_arguments)]
pub fn grpo_step(
    params: &PolicyParams,
    weights: &ObjectiveWeights,
    task: &TaskSpec,
    components: &[RewardComponent],
    batch_prompts: &[usize],
    rng: &mut RngStream,
    lr: f64,
    cfg: &GrpoConfig,
    step: usize,
) -> Result<(PolicyParams, StepReport)> {
    let groups = collect_rollouts(params, weights, task, components, batch_prompts, cfg.group_size, rng)?;
    grpo_update(params, weights, task, groups, lr, cfg, step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn advantages_hand_example() {
        let a = group_advantages(&[1.0, 0.0, 1.0, 0.0], true).unwrap();
        for (x, y) in a.iter().zip([1.0, -1.0, 1.0, -1.0]) {
            assert!((x - y).abs() < 1e-7);
        }
    }

    #[test]
    fn constant_group_is_all_zero() {
        assert_eq!(group_advantages(&[0.3; 4], true).unwrap(), vec![0.0; 4]);
        assert_eq!(group_advantages(&[0.3; 4], false).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn singleton_group_rejected() {
        assert!(group_advantages(&[1.0], true).is_err());
    }

    #[test]
    fn mean_centering_only_when_std_disabled() {
        let a = group_advantages(&[1.0, 0.0, 0.0, 0.0], false).unwrap();
        assert_eq!(a, vec![0.75, -0.25, -0.25, -0.25]);
    }

    #[test]
    fn scalarize_is_weighted_sum() {
        assert_eq!(scalarize(&[1.0, 0.5, 0.0], &[0.5, 0.5, 0.0]), 0.75);
    }
}
