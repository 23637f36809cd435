//! A full client round: reset the objective weights, run `S` local GRPO
//! steps with per-step hypergradient weight updates, package the result.

use alloc::string::String;
use alloc::vec::Vec;

use crate::envs::{component_names, validate_components, RewardComponent, TaskSpec};
use crate::error::{invalid, Error, Result};
use crate::grpo::{grpo_step, GrpoConfig, StepReport};
use crate::numeric::{client_stream_id, cosine_lr, RngStream};
use crate::policy::PolicyParams;
use crate::weights::{reset_for_round, update_weights, HypergradState, ObjectiveWeights, DEFAULT_LAMBDA};

/// Default base learning rate for the tiny policies.
pub const DEFAULT_LR0: f64 = 0.05;
pub const DEFAULT_LOCAL_STEPS: usize = 50;
pub const DEFAULT_PROMPTS_PER_STEP: usize = 8;

#[derive(Clone, Debug)]
pub struct ClientConfig {
    pub client_id: u32,
    pub task_label: String,
    /// Reward components, `accuracy` first.
    pub components: Vec<RewardComponent>,
    pub local_steps: usize,
    pub prompts_per_step: usize,
    /// Local training prompts; its size is the client's sample count `N_m`.
    pub prompt_pool: Vec<usize>,
    pub lr0: f64,
    /// Hypergradient step size; zero freezes the weights.
    pub lambda: f64,
    pub grpo: GrpoConfig,
    /// Master seed; the per-round stream id is derived from client id and round.
    pub seed: u64,
}

impl ClientConfig {
    pub fn new(client_id: u32, task: &TaskSpec, components: Vec<RewardComponent>, prompt_pool: Vec<usize>) -> Self {
        Self {
            client_id,
            task_label: task.label.clone(),
            components,
            local_steps: DEFAULT_LOCAL_STEPS,
            prompts_per_step: DEFAULT_PROMPTS_PER_STEP,
            prompt_pool,
            lr0: DEFAULT_LR0,
            lambda: DEFAULT_LAMBDA,
            grpo: GrpoConfig::default(),
            seed: 0,
        }
    }

    pub fn sample_count(&self) -> usize {
        self.prompt_pool.len()
    }

    pub fn component_names(&self) -> Vec<String> {
        component_names(&self.components)
    }

    pub fn validate(&self, task: &TaskSpec) -> Result<()> {
        validate_components(&self.components)?;
        let cfg = |m: String| Err(Error::Config(alloc::format!("client {}: {m}", self.client_id)));
        if self.task_label != task.label {
            return cfg(alloc::format!("configured for task '{}', got '{}'", self.task_label, task.label));
        }
        if self.local_steps == 0 {
            return cfg("local_steps must be at least 1".into());
        }
        if self.prompts_per_step == 0 {
            return cfg("prompts_per_step must be at least 1".into());
        }
        if self.prompt_pool.is_empty() {
            return cfg("empty prompt pool".into());
        }
        if let Some(p) = self.prompt_pool.iter().find(|p| !task.train.contains(p)) {
            return cfg(alloc::format!("prompt {p} is not a train prompt of '{}'", task.label));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return cfg(alloc::format!("lr0 must be positive, got {}", self.lr0));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return cfg(alloc::format!("lambda must be nonnegative, got {}", self.lambda));
        }
        if self.grpo.group_size < 2 {
            return cfg("group_size must be at least 2".into());
        }
        Ok(())
    }
}

/// What a client sends to the server at the end of a round.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientUpdate {
    pub client_id: u32,
    pub params: PolicyParams,
    pub weights: ObjectiveWeights,
    pub task_label: String,
    pub sample_count: usize,
}

/// Everything a client round produced.
#[derive(Clone, Debug)]
pub struct LocalRound {
    pub update: ClientUpdate,
    pub steps: Vec<StepReport>,
    /// The broadcast shared no component with this client.
    pub reset_fell_back: bool,
}

/// Run one communication round on a client.
///
/// The learning rate follows a half-cosine over all `total_rounds * S` local
/// steps of the run; the hypergradient state starts empty every round.
#[allow(clippy::too_many_arguments)]
pub fn run_local_round(
    cfg: &ClientConfig,
    task: &TaskSpec,
    global_params: &PolicyParams,
    broadcast: Option<&[(String, f64)]>,
    previous_weights: Option<&ObjectiveWeights>,
    round: usize,
    total_rounds: usize,
) -> Result<LocalRound> {
    cfg.validate(task)?;
    if round >= total_rounds {
        return Err(invalid!("round {round} outside run of {total_rounds} rounds"));
    }
    let names = cfg.component_names();
    let reset = reset_for_round(broadcast, &names, previous_weights)?;
    let mut weights = reset.weights;
    let mut state = HypergradState::new(cfg.lambda);

    let mut rng = RngStream::new(cfg.seed, client_stream_id(cfg.client_id, round));
    let total_steps = total_rounds * cfg.local_steps;
    let mut params = global_params.clone();
    let mut steps = Vec::with_capacity(cfg.local_steps);
    let mut batch = Vec::with_capacity(cfg.prompts_per_step);

    for t in 0..cfg.local_steps {
        let global_step = round * cfg.local_steps + t;
        let lr = cosine_lr(global_step, total_steps, cfg.lr0)?;
        batch.clear();
        for _ in 0..cfg.prompts_per_step {
            batch.push(cfg.prompt_pool[rng.below(cfg.prompt_pool.len())]);
        }
        let (next, report) = grpo_step(
            &params,
            &weights,
            task,
            &cfg.components,
            &batch,
            &mut rng,
            lr,
            &cfg.grpo,
            t,
        )?;
        params = next;
        let (w, s) = update_weights(&weights, state, report.hidden_grads.clone())?;
        weights = w;
        state = s;
        steps.push(report);
    }

    Ok(LocalRound {
        update: ClientUpdate {
            client_id: cfg.client_id,
            params,
            weights,
            task_label: cfg.task_label.clone(),
            sample_count: cfg.sample_count(),
        },
        steps,
        reset_fell_back: reset.fell_back,
    })
}
