//! The round orchestrator.
//!
//! Each round: every client trains locally from the broadcast model (in
//! parallel, one independent RNG stream per client and round), the server
//! clusters the updates, aggregates within and across clusters, and the new
//! global model is evaluated on every task. Rounds are barriers, and only
//! this module writes logs.

use std::fs;
use std::path::{Path, PathBuf};

use fedmo_core::client::{run_local_round, ClientUpdate, LocalRound};
use fedmo_core::envs::ACCURACY;
use fedmo_core::eval::{evaluate, EvalFragment};
use fedmo_core::policy::PolicyParams;
use fedmo_core::server::{
    cluster_clients, cross_cluster_aggregate, intra_cluster_aggregate, make_broadcast, Broadcast, ClusterAggregate,
    ClusterBy,
};
use fedmo_core::weights::ObjectiveWeights;
use rayon::prelude::*;

use crate::checkpoint;
use crate::config::ScenarioConfig;
use crate::error::{LabError, Result};
use crate::records::{
    checkpoint_path, write_eval_csv, write_text, ClientFailure, ClientStepRecord, ClusterRecord, EvalRow, JsonlWriter,
    ServerRoundRecord, CHECKPOINT_DIR, CLIENT_STEPS_FILE, CONFIG_FILE, EVAL_FILE, GLOBAL_MODEL, LOCAL_MEAN_MODEL,
    SERVER_ROUNDS_FILE, SUMMARY_FILE,
};
use crate::scenario::Scenario;

/// In-memory result of a run.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub dir: Option<PathBuf>,
    /// Global parameters after each round; index 0 is the initial model.
    pub global_params: Vec<PolicyParams>,
    /// Client updates of the last round, in client-id order.
    pub last_updates: Vec<ClientUpdate>,
    pub client_steps: Vec<ClientStepRecord>,
    pub server_rounds: Vec<ServerRoundRecord>,
    pub eval: Vec<EvalRow>,
}

impl RunOutput {
    pub fn eval_value(&self, round: usize, task: &str, model: &str, metric: &str) -> Option<f64> {
        self.eval
            .iter()
            .find(|r| r.round == round && r.task == task && r.model == model && r.metric == metric)
            .map(|r| r.value)
    }

    pub fn rounds(&self) -> usize {
        self.global_params.len() - 1
    }
}

fn push_fragment(rows: &mut Vec<EvalRow>, round: usize, task: &str, model: &str, f: &EvalFragment) {
    let mut push = |metric: &str, value: f64| {
        rows.push(EvalRow {
            round,
            task: task.to_string(),
            model: model.to_string(),
            metric: metric.to_string(),
            value,
        })
    };
    push("accuracy", f.accuracy);
    push("mean_reward", f.mean_reward);
    for (name, v) in f.components.iter().filter(|(n, _)| n != ACCURACY) {
        push(name, *v);
    }
}

fn mean_fragment(frags: &[&EvalFragment]) -> EvalFragment {
    let n = frags.len() as f64;
    let avg = |get: &dyn Fn(&EvalFragment) -> f64| frags.iter().map(|f| get(f)).sum::<f64>() / n;
    EvalFragment {
        accuracy: avg(&|f| f.accuracy),
        mean_reward: avg(&|f| f.mean_reward),
        components: frags[0]
            .components
            .iter()
            .enumerate()
            .map(|(k, (name, _))| (name.clone(), avg(&|f| f.components[k].1)))
            .collect(),
    }
}

/// Evaluate the global model on every task, plus local models when given.
fn evaluate_round(
    scenario: &Scenario,
    round: usize,
    global: &PolicyParams,
    local: Option<&[ClientUpdate]>,
    tie_seed: u64,
) -> Vec<EvalRow> {
    let mut rows = Vec::new();
    for task in &scenario.tasks {
        let g = evaluate(global, task, &task.canonical, tie_seed);
        push_fragment(&mut rows, round, &task.label, GLOBAL_MODEL, &g);
        let Some(updates) = local else { continue };
        let frags: Vec<(u32, EvalFragment)> = updates
            .par_iter()
            .filter(|u| u.task_label == task.label)
            .map(|u| (u.client_id, evaluate(&u.params, task, &task.canonical, tie_seed)))
            .collect();
        if frags.is_empty() {
            continue;
        }
        let refs: Vec<&EvalFragment> = frags.iter().map(|(_, f)| f).collect();
        push_fragment(&mut rows, round, &task.label, LOCAL_MEAN_MODEL, &mean_fragment(&refs));
        for (id, f) in &frags {
            push_fragment(&mut rows, round, &task.label, &format!("client_{id}"), f);
        }
    }
    rows
}

fn step_records(round: usize, local_steps: usize, lr: &LocalRound) -> Vec<ClientStepRecord> {
    let names: Vec<String> = lr.update.weights.names().to_vec();
    lr.steps
        .iter()
        .map(|s| ClientStepRecord {
            round: round + 1,
            client_id: lr.update.client_id,
            task: lr.update.task_label.clone(),
            step: s.step,
            global_step: round * local_steps + s.step,
            components: names.clone(),
            component_rewards: s.component_means.clone(),
            scalarized: s.scalarized_mean,
            weights: s.weights.clone(),
            response_len: s.mean_response_len,
            grad_norm: s.grad_norm,
            lr: s.lr,
        })
        .collect()
}

fn cluster_record(a: &ClusterAggregate) -> ClusterRecord {
    ClusterRecord {
        key: a.key.clone(),
        members: a.alpha.iter().map(|(id, _)| *id).collect(),
        alpha: a.alpha.iter().map(|(_, x)| *x).collect(),
        shared_weights: a.shared_weights.clone(),
        sample_count: a.sample_count,
    }
}

/// One server aggregation over the round's updates.
pub fn aggregate(
    updates: &[ClientUpdate],
    by: ClusterBy,
    epsilon: f64,
    accuracy_aware: bool,
) -> Result<(PolicyParams, Vec<ClusterAggregate>)> {
    let clusters = cluster_clients(updates, by);
    let aggs = clusters
        .iter()
        .map(|(key, idx)| {
            let members: Vec<&ClientUpdate> = idx.iter().map(|&i| &updates[i]).collect();
            intra_cluster_aggregate(key, &members, epsilon, accuracy_aware)
        })
        .collect::<fedmo_core::Result<Vec<_>>>()?;
    let global = cross_cluster_aggregate(&aggs)?;
    Ok((global, aggs))
}

/// Run a scenario; writes the run directory when `cfg.out_dir` is set.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunOutput> {
    let scenario = Scenario::build(cfg)?;
    let dir = cfg.out_dir.clone();
    if let Some(d) = &dir {
        fs::create_dir_all(d.join(CHECKPOINT_DIR)).map_err(|e| LabError::io(d, e))?;
        write_text(&d.join(CONFIG_FILE), &cfg.to_json_pretty())?;
    }
    let by: ClusterBy = cfg.cluster_by.into();
    let rounds = cfg.rounds;

    let mut global = scenario.initial.clone();
    let mut history = vec![global.clone()];
    let mut eval = evaluate_round(&scenario, 0, &global, None, cfg.seed);
    if let Some(d) = &dir {
        checkpoint::save(&checkpoint_path(d, 0), &global)?;
    }

    let mut broadcast: Option<Broadcast> = None;
    let mut previous: Vec<Option<ObjectiveWeights>> = vec![None; scenario.clients.len()];
    let mut client_steps = Vec::new();
    let mut server_rounds = Vec::new();
    let mut last_updates = Vec::new();

    for r in 0..rounds {
        let results: Vec<fedmo_core::Result<LocalRound>> = scenario
            .clients
            .par_iter()
            .zip(previous.par_iter())
            .map(|(c, prev)| {
                let key = by.key(&c.task_label, &c.component_names());
                let shared = broadcast.as_ref().map(|b| b.weights_for(&key));
                run_local_round(c, scenario.task_of(c), &global, shared, prev.as_ref(), r, rounds)
            })
            .collect();

        let mut locals = Vec::with_capacity(results.len());
        let mut failed = Vec::new();
        for (c, res) in scenario.clients.iter().zip(results) {
            match res {
                Ok(l) => locals.push(l),
                Err(e) => {
                    log::warn!("round {}: client {} failed: {e}", r + 1, c.client_id);
                    failed.push(ClientFailure {
                        client_id: c.client_id,
                        kind: e.kind().to_string(),
                        message: e.message().to_string(),
                    });
                }
            }
        }
        if locals.is_empty() {
            return Err(LabError::Config(format!("round {}: every client failed", r + 1)));
        }

        for l in &locals {
            client_steps.extend(step_records(r, cfg.local_steps, l));
        }
        let reset_fallbacks = locals
            .iter()
            .filter(|l| l.reset_fell_back)
            .map(|l| l.update.client_id)
            .collect();
        let updates: Vec<ClientUpdate> = locals.into_iter().map(|l| l.update).collect();
        for u in &updates {
            let i = scenario
                .clients
                .iter()
                .position(|c| c.client_id == u.client_id)
                .expect("update from a known client");
            previous[i] = Some(u.weights.clone());
        }

        let (next, aggs) = aggregate(&updates, by, cfg.epsilon, cfg.accuracy_aware_aggregation)?;
        global = next;
        let ckpt = format!("{CHECKPOINT_DIR}/round_{}.bin", r + 1);
        if let Some(d) = &dir {
            checkpoint::save(&checkpoint_path(d, r + 1), &global)?;
        }
        server_rounds.push(ServerRoundRecord {
            round: r + 1,
            clusters: aggs.iter().map(cluster_record).collect(),
            reset_fallbacks,
            failed,
            checkpoint: ckpt,
        });
        eval.extend(evaluate_round(&scenario, r + 1, &global, Some(&updates), cfg.seed));
        broadcast = Some(make_broadcast(global.clone(), &aggs));
        history.push(global.clone());
        last_updates = updates;
        log::info!("round {}/{} done", r + 1, rounds);
    }

    let out = RunOutput {
        dir,
        global_params: history,
        last_updates,
        client_steps,
        server_rounds,
        eval,
    };
    if let Some(d) = &out.dir {
        write_logs(d, &out, &scenario)?;
    }
    Ok(out)
}

fn write_logs(dir: &Path, out: &RunOutput, scenario: &Scenario) -> Result<()> {
    let mut w = JsonlWriter::create(&dir.join(CLIENT_STEPS_FILE))?;
    for rec in &out.client_steps {
        w.write(rec)?;
    }
    w.finish()?;
    let mut w = JsonlWriter::create(&dir.join(SERVER_ROUNDS_FILE))?;
    for rec in &out.server_rounds {
        w.write(rec)?;
    }
    w.finish()?;
    write_eval_csv(&dir.join(EVAL_FILE), &out.eval)?;
    write_text(&dir.join(SUMMARY_FILE), &summary(out, scenario))
}

/// Round whose global model has the highest accuracy averaged over tasks;
/// the earliest wins ties. Round 0 only counts when no training happened.
pub fn best_round(out: &RunOutput, tasks: &[String]) -> usize {
    let first = if out.rounds() == 0 { 0 } else { 1 };
    let score = |r: usize| {
        tasks
            .iter()
            .map(|t| out.eval_value(r, t, GLOBAL_MODEL, "accuracy").unwrap_or(0.0))
            .sum::<f64>()
    };
    (first..=out.rounds()).fold(first, |best, r| if score(r) > score(best) { r } else { best })
}

fn summary(out: &RunOutput, scenario: &Scenario) -> String {
    let tasks: Vec<String> = scenario.tasks.iter().map(|t| t.label.clone()).collect();
    let last = out.rounds();
    let best = best_round(out, &tasks);
    let mut s = String::new();
    s.push_str("# Run summary\n\n");
    s.push_str(&format!(
        "Clients: {}. Rounds: {}. Best round by global accuracy: {}.\n\n",
        scenario.clients.len(),
        last,
        best
    ));
    s.push_str("| selection | round | task | global accuracy | global mean reward | local accuracy (mean) |\n");
    s.push_str("|---|---|---|---|---|---|\n");
    for (label, r) in [("final", last), ("best", best)] {
        for t in &tasks {
            let g = |m: &str| out.eval_value(r, t, GLOBAL_MODEL, m);
            let local = out
                .eval_value(r, t, LOCAL_MEAN_MODEL, "accuracy")
                .map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
            s.push_str(&format!(
                "| {label} | {r} | {t} | {:.4} | {:.4} | {local} |\n",
                g("accuracy").unwrap_or(0.0),
                g("mean_reward").unwrap_or(0.0),
            ));
        }
    }
    s
}
