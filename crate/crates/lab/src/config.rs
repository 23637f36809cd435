//! Scenario configuration: one JSON document, unknown keys rejected.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use fedmo_core::server::ClusterBy;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Base learning rate for scenario runs. Plain SGD on a 32-unit policy at
/// 0.05 leaves every reward at its initial level after 150 steps; above
/// about 3 the policies collapse onto a single token.
pub const DESK_LR0: f64 = 1.0;
/// Hypergradient step size for scenario runs. Consecutive hidden-gradient
/// inner products are around 3e-4 here, so 0.01 moves a weight by about
/// 3e-6 per step; 30 gives steps of about 0.01.
pub const DESK_LAMBDA: f64 = 30.0;
/// Prompt keys (distinct answers) per task.
pub const DESK_KEYS_PER_TASK: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// One task, every client on reward config A.
    HomoHomo,
    /// One task, clients cycle through reward configs A, B, C.
    HomoHeter,
    /// Three tasks with disjoint prompts, configs cycled within each task.
    HeterHeter,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClusterKey {
    #[default]
    TaskLabel,
    RewardNames,
}

impl From<ClusterKey> for ClusterBy {
    fn from(k: ClusterKey) -> Self {
        match k {
            ClusterKey::TaskLabel => ClusterBy::TaskLabel,
            ClusterKey::RewardNames => ClusterBy::RewardNames,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKindName {
    Math,
    Code,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskEntry {
    pub label: String,
    pub kind: TaskKindName,
    #[serde(default)]
    pub keys: Option<usize>,
    #[serde(default)]
    pub train_prompts: Option<usize>,
    #[serde(default)]
    pub eval_prompts: Option<usize>,
}

/// A reward component given either by bare name or with parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ComponentEntry {
    Name(String),
    WithParams {
        name: String,
        #[serde(default)]
        params: BTreeMap<String, f64>,
    },
}

impl ComponentEntry {
    pub fn resolve(&self) -> Result<fedmo_core::RewardComponent> {
        let (name, params): (&str, Vec<(String, f64)>) = match self {
            ComponentEntry::Name(n) => (n, Vec::new()),
            ComponentEntry::WithParams { name, params } => {
                (name, params.iter().map(|(k, v)| (k.clone(), *v)).collect())
            }
        };
        Ok(fedmo_core::RewardComponent::parse(name, &params)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientEntry {
    pub task: String,
    pub components: Vec<ComponentEntry>,
}

fn default_rounds() -> usize {
    3
}
fn default_local_steps() -> usize {
    fedmo_core::client::DEFAULT_LOCAL_STEPS
}
fn default_prompts_per_step() -> usize {
    fedmo_core::client::DEFAULT_PROMPTS_PER_STEP
}
fn default_group_size() -> usize {
    fedmo_core::grpo::DEFAULT_GROUP_SIZE
}
fn default_hidden_dim() -> usize {
    32
}
fn default_vocab_size() -> usize {
    16
}
fn default_max_len() -> usize {
    8
}
fn default_keys() -> usize {
    DESK_KEYS_PER_TASK
}
fn default_train_prompts() -> usize {
    64
}
fn default_eval_prompts() -> usize {
    32
}
fn default_lr0() -> f64 {
    DESK_LR0
}
fn default_lambda() -> f64 {
    DESK_LAMBDA
}
fn default_epsilon() -> f64 {
    fedmo_core::server::DEFAULT_EPSILON
}
fn yes() -> bool {
    true
}

/// Every knob of a run. All fields but `scenario` have defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    /// Total clients (homo settings) or clients per task (heter_heter).
    /// Defaults: 10 for homo settings, 5 per task for heter_heter.
    #[serde(default)]
    pub client_count: Option<usize>,
    #[serde(default = "default_local_steps")]
    pub local_steps: usize,
    #[serde(default = "default_prompts_per_step")]
    pub prompts_per_step: usize,
    #[serde(default = "default_group_size")]
    pub group_size: usize,
    #[serde(default = "default_hidden_dim")]
    pub hidden_dim: usize,
    #[serde(default = "default_vocab_size")]
    pub vocab_size: usize,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    #[serde(default = "default_keys")]
    pub keys_per_task: usize,
    #[serde(default = "default_train_prompts")]
    pub train_prompts: usize,
    #[serde(default = "default_eval_prompts")]
    pub eval_prompts: usize,
    /// Base learning rate of the cosine schedule; see [`DESK_LR0`].
    #[serde(default = "default_lr0")]
    pub lr0: f64,
    /// Hypergradient step size for the objective weights; see [`DESK_LAMBDA`].
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Smoothing constant of the inverse accuracy-weight scores.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Off forces `lambda = 0`.
    #[serde(default = "yes")]
    pub adaptive_weights: bool,
    /// Off forces uniform coefficients inside each cluster.
    #[serde(default = "yes")]
    pub accuracy_aware_aggregation: bool,
    /// Off keeps only the mean-centering of group advantages.
    #[serde(default = "yes")]
    pub normalize_std: bool,
    #[serde(default)]
    pub cluster_by: ClusterKey,
    #[serde(default)]
    pub seed: u64,
    /// Explicit tasks; replaces the scenario's default task set.
    #[serde(default)]
    pub tasks: Option<Vec<TaskEntry>>,
    /// Explicit clients; replaces the scenario's default client set.
    #[serde(default)]
    pub clients: Option<Vec<ClientEntry>>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl ScenarioConfig {
    pub fn new(scenario: ScenarioKind) -> Self {
        Self {
            scenario,
            rounds: default_rounds(),
            client_count: None,
            local_steps: default_local_steps(),
            prompts_per_step: default_prompts_per_step(),
            group_size: default_group_size(),
            hidden_dim: default_hidden_dim(),
            vocab_size: default_vocab_size(),
            max_len: default_max_len(),
            keys_per_task: default_keys(),
            train_prompts: default_train_prompts(),
            eval_prompts: default_eval_prompts(),
            lr0: default_lr0(),
            lambda: default_lambda(),
            epsilon: default_epsilon(),
            adaptive_weights: true,
            accuracy_aware_aggregation: true,
            normalize_std: true,
            cluster_by: ClusterKey::TaskLabel,
            seed: 0,
            tasks: None,
            clients: None,
            out_dir: None,
        }
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        let cfg = Self::from_json(&text).map_err(|source| LabError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Clients per task for heter_heter, total clients otherwise.
    pub fn effective_client_count(&self) -> usize {
        self.client_count.unwrap_or(match self.scenario {
            ScenarioKind::HeterHeter => 5,
            _ => 10,
        })
    }

    /// The hypergradient step size actually used.
    pub fn effective_lambda(&self) -> f64 {
        if self.adaptive_weights {
            self.lambda
        } else {
            0.0
        }
    }

    /// Checks everything that can be checked before building tasks.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LabError::Config(m));
        if self.effective_client_count() == 0 {
            return bad("client_count must be positive".into());
        }
        if self.local_steps == 0 {
            return bad("local_steps must be at least 1".into());
        }
        if self.prompts_per_step == 0 {
            return bad("prompts_per_step must be at least 1".into());
        }
        if self.group_size < 2 {
            return bad(format!("group_size must be at least 2, got {}", self.group_size));
        }
        if self.hidden_dim == 0 {
            return bad("hidden_dim must be positive".into());
        }
        if self.vocab_size < 4 {
            return bad(format!("vocab_size must be at least 4, got {}", self.vocab_size));
        }
        if self.max_len == 0 {
            return bad("max_len must be positive".into());
        }
        if self.eval_prompts == 0 {
            return bad("eval_prompts must be positive".into());
        }
        if self.train_prompts == 0 {
            return bad("train_prompts must be positive".into());
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be positive, got {}", self.lr0));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be nonnegative, got {}", self.lambda));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if let Some(tasks) = &self.tasks {
            if tasks.is_empty() {
                return bad("tasks list is empty".into());
            }
            for (i, t) in tasks.iter().enumerate() {
                if tasks[..i].iter().any(|u| u.label == t.label) {
                    return bad(format!("duplicate task label '{}'", t.label));
                }
                if t.eval_prompts == Some(0) {
                    return bad(format!("task '{}' has zero eval prompts", t.label));
                }
                if t.train_prompts == Some(0) {
                    return bad(format!("task '{}' has zero train prompts", t.label));
                }
            }
        }
        if let Some(clients) = &self.clients {
            if clients.is_empty() {
                return bad("clients list is empty".into());
            }
            for (i, c) in clients.iter().enumerate() {
                let comps = c
                    .components
                    .iter()
                    .map(ComponentEntry::resolve)
                    .collect::<Result<Vec<_>>>()?;
                fedmo_core::envs::validate_components(&comps)
                    .map_err(|e| LabError::Config(format!("client {i}: {}", e.message())))?;
            }
        }
        Ok(())
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
