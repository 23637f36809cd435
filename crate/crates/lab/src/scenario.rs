//! Turn a [`ScenarioConfig`] into concrete tasks, client configurations and
//! an initial model.

use fedmo_core::client::ClientConfig;
use fedmo_core::envs::{reward_config, TaskKind, TaskLayout, TaskSpec};
use fedmo_core::grpo::GrpoConfig;
use fedmo_core::numeric::{purpose_stream_id, RngStream};
use fedmo_core::policy::{PolicyParams, PolicyShape};

use crate::config::{ComponentEntry, ScenarioConfig, ScenarioKind, TaskEntry, TaskKindName};
use crate::error::{LabError, Result};

/// Everything needed to start round one.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub tasks: Vec<TaskSpec>,
    pub clients: Vec<ClientConfig>,
    pub shape: PolicyShape,
    pub initial: PolicyParams,
}

impl Scenario {
    pub fn task(&self, label: &str) -> Option<&TaskSpec> {
        self.tasks.iter().find(|t| t.label == label)
    }

    /// The task a client trains on; always present for built scenarios.
    pub fn task_of(&self, client: &ClientConfig) -> &TaskSpec {
        self.task(&client.task_label).expect("client task exists")
    }

    pub fn build(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let entries = task_entries(cfg);
        let prompt_dim: usize = entries.iter().map(|e| e.keys.unwrap_or(cfg.keys_per_task)).sum();

        let mut tasks = Vec::with_capacity(entries.len());
        let mut offset = 0;
        for (i, e) in entries.iter().enumerate() {
            let keys = e.keys.unwrap_or(cfg.keys_per_task);
            let layout = TaskLayout {
                label: e.label.clone(),
                kind: kind_of(e.kind),
                vocab_size: cfg.vocab_size,
                max_len: cfg.max_len,
                keys,
                train_prompts: e.train_prompts.unwrap_or(cfg.train_prompts),
                eval_prompts: e.eval_prompts.unwrap_or(cfg.eval_prompts),
                slot_offset: offset,
                prompt_dim,
            };
            offset += keys;
            let mut rng = RngStream::new(cfg.seed, purpose_stream_id("task", i as u64));
            tasks.push(layout.build(&mut rng)?);
        }

        let assignments = client_assignments(cfg, &tasks)?;
        let mut clients = Vec::with_capacity(assignments.len());
        for (ti, task) in tasks.iter().enumerate() {
            let members: Vec<usize> = (0..assignments.len())
                .filter(|&c| assignments[c].0 == ti)
                .collect();
            if members.is_empty() {
                continue;
            }
            if members.len() > task.train.len() {
                return Err(LabError::Config(format!(
                    "task '{}' has {} train prompts for {} clients",
                    task.label,
                    task.train.len(),
                    members.len()
                )));
            }
            let mut pool = task.train.clone();
            let mut rng = RngStream::new(cfg.seed, purpose_stream_id("partition", ti as u64));
            rng.shuffle(&mut pool);
            for (j, &c) in members.iter().enumerate() {
                let mine: Vec<usize> = pool.iter().skip(j).step_by(members.len()).copied().collect();
                let mut cc = ClientConfig::new(c as u32, task, assignments[c].1.clone(), mine);
                cc.local_steps = cfg.local_steps;
                cc.prompts_per_step = cfg.prompts_per_step;
                cc.lr0 = cfg.lr0;
                cc.lambda = cfg.effective_lambda();
                cc.grpo = GrpoConfig {
                    group_size: cfg.group_size,
                    normalize_std: cfg.normalize_std,
                };
                cc.seed = cfg.seed;
                clients.push(cc);
            }
        }
        clients.sort_by_key(|c| c.client_id);
        for c in &clients {
            let task = tasks.iter().find(|t| t.label == c.task_label).expect("task exists");
            c.validate(task)?;
        }

        let shape = PolicyShape::new(prompt_dim, cfg.vocab_size, cfg.hidden_dim);
        let mut rng = RngStream::new(cfg.seed, purpose_stream_id("init", 0));
        let initial = PolicyParams::init(shape, &mut rng);
        Ok(Self {
            tasks,
            clients,
            shape,
            initial,
        })
    }
}

fn kind_of(k: TaskKindName) -> TaskKind {
    match k {
        TaskKindName::Math => TaskKind::MathLike,
        TaskKindName::Code => TaskKind::CodeLike,
    }
}

fn default_task(label: &str, kind: TaskKindName) -> TaskEntry {
    TaskEntry {
        label: label.into(),
        kind,
        keys: None,
        train_prompts: None,
        eval_prompts: None,
    }
}

fn task_entries(cfg: &ScenarioConfig) -> Vec<TaskEntry> {
    if let Some(t) = &cfg.tasks {
        return t.clone();
    }
    match cfg.scenario {
        ScenarioKind::HomoHomo | ScenarioKind::HomoHeter => vec![default_task("math-like", TaskKindName::Math)],
        ScenarioKind::HeterHeter => vec![
            default_task("math-like", TaskKindName::Math),
            default_task("arith-like", TaskKindName::Math),
            default_task("code-like", TaskKindName::Code),
        ],
    }
}

/// `(task index, components)` for every client, in client-id order.
fn client_assignments(
    cfg: &ScenarioConfig,
    tasks: &[TaskSpec],
) -> Result<Vec<(usize, Vec<fedmo_core::RewardComponent>)>> {
    if let Some(list) = &cfg.clients {
        return list
            .iter()
            .map(|c| {
                let ti = tasks
                    .iter()
                    .position(|t| t.label == c.task)
                    .ok_or_else(|| LabError::Config(format!("client names unknown task '{}'", c.task)))?;
                let comps = c.components.iter().map(ComponentEntry::resolve).collect::<Result<Vec<_>>>()?;
                Ok((ti, comps))
            })
            .collect();
    }
    let n = cfg.effective_client_count();
    let mut out = Vec::new();
    match cfg.scenario {
        ScenarioKind::HomoHomo => {
            for _ in 0..n {
                out.push((0, reward_config(tasks[0].kind, 0)));
            }
        }
        ScenarioKind::HomoHeter => {
            for i in 0..n {
                out.push((0, reward_config(tasks[0].kind, i)));
            }
        }
        ScenarioKind::HeterHeter => {
            for (ti, t) in tasks.iter().enumerate() {
                for i in 0..n {
                    out.push((ti, reward_config(t.kind, i)));
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heter_heter_pools_are_disjoint_and_cover_train() {
        let s = Scenario::build(&ScenarioConfig::new(ScenarioKind::HeterHeter)).unwrap();
        assert_eq!(s.tasks.len(), 3);
        assert_eq!(s.clients.len(), 15);
        for t in &s.tasks {
            let mut all: Vec<usize> = s
                .clients
                .iter()
                .filter(|c| c.task_label == t.label)
                .flat_map(|c| c.prompt_pool.clone())
                .collect();
            all.sort_unstable();
            assert_eq!(all, t.train);
        }
        // Tasks never share a one-hot slot.
        for (i, a) in s.tasks.iter().enumerate() {
            for b in &s.tasks[i + 1..] {
                assert!(a.prompt_slot.iter().all(|k| !b.prompt_slot.contains(k)));
            }
        }
    }

    #[test]
    fn homo_heter_cycles_reward_configs() {
        let s = Scenario::build(&ScenarioConfig::new(ScenarioKind::HomoHeter)).unwrap();
        let names: Vec<Vec<String>> = s.clients.iter().take(3).map(|c| c.component_names()).collect();
        assert_eq!(names[0], ["accuracy", "format", "tag_count"]);
        assert_eq!(names[1], ["accuracy", "format"]);
        assert_eq!(names[2], ["accuracy", "tag_count"]);
    }

    #[test]
    fn ablation_flag_reaches_clients() {
        let mut cfg = ScenarioConfig::new(ScenarioKind::HomoHomo);
        cfg.adaptive_weights = false;
        let s = Scenario::build(&cfg).unwrap();
        assert!(s.clients.iter().all(|c| c.lambda == 0.0));
    }

    #[test]
    fn too_many_clients_for_prompts() {
        let mut cfg = ScenarioConfig::new(ScenarioKind::HomoHomo);
        cfg.train_prompts = 4;
        assert!(matches!(Scenario::build(&cfg), Err(LabError::Config(_))));
    }
}
