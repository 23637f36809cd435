//! Post-hoc views over run logs: reward curves, Pareto frontiers and
//! run-to-run comparison tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use fedmo_core::envs::ACCURACY;
use fedmo_core::pareto::non_dominated;

use crate::error::{LabError, Result};
use crate::records::{ClientStepRecord, RunLogs, CONFIG_FILE, GLOBAL_MODEL, LOCAL_MEAN_MODEL};

/// One named series indexed by global step.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub name: String,
    /// `None` where no client logged this name at that step.
    pub values: Vec<Option<f64>>,
}

impl Curve {
    /// Points with data, as `(step, value)`.
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.values
            .iter()
            .enumerate()
            .filter_map(|(t, v)| v.map(|v| (t as f64, v)))
            .collect()
    }
}

fn sort_names(names: &mut [String]) {
    names.sort_by(|a, b| (a != ACCURACY, a).cmp(&(b != ACCURACY, b)));
}

fn mean_curves(steps: &[ClientStepRecord], pick: impl Fn(&ClientStepRecord) -> &[f64]) -> Vec<Curve> {
    let horizon = steps.iter().map(|s| s.global_step + 1).max().unwrap_or(0);
    let mut acc: BTreeMap<&str, Vec<(f64, usize)>> = BTreeMap::new();
    for s in steps {
        for (name, v) in s.components.iter().zip(pick(s)) {
            let slot = &mut acc.entry(name).or_insert_with(|| vec![(0.0, 0); horizon])[s.global_step];
            slot.0 += v;
            slot.1 += 1;
        }
    }
    let mut names: Vec<String> = acc.keys().map(|s| s.to_string()).collect();
    sort_names(&mut names);
    names
        .into_iter()
        .map(|name| {
            let values = acc[name.as_str()]
                .iter()
                .map(|&(sum, n)| (n > 0).then(|| sum / n as f64))
                .collect();
            Curve { name, values }
        })
        .collect()
}

/// Per-component mean reward over the clients that optimize it, per step.
pub fn reward_curves(steps: &[ClientStepRecord]) -> Vec<Curve> {
    mean_curves(steps, |s| &s.component_rewards)
}

/// Per-component mean objective weight over clients, per step.
pub fn weight_curves(steps: &[ClientStepRecord]) -> Vec<Curve> {
    mean_curves(steps, |s| &s.weights)
}

/// Early level of a curve relative to where it ends up.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyLevel {
    pub name: String,
    /// Step at which the early level is read.
    pub at_step: usize,
    /// Trailing mean over `window` steps ending at `at_step`.
    pub early: f64,
    /// Mean over the last tenth of the run.
    pub last: f64,
    /// `early / last`; NaN when `last` is zero.
    pub ratio: f64,
}

/// Read a curve at the end of the first `fraction` of its steps.
///
/// Both readings are averaged so single noisy steps do not decide the
/// outcome: a trailing window of `T / 50` steps early, and the final
/// `T / 10` steps late.
pub fn early_level(curve: &Curve, fraction: f64) -> Option<EarlyLevel> {
    let xs: Vec<f64> = curve.values.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
    let t = xs.len();
    if t == 0 {
        return None;
    }
    let window = (t / 50).max(1);
    let at = ((fraction * t as f64).ceil() as usize).clamp(1, t) - 1;
    let lo = (at + 1).saturating_sub(window);
    let early = mean(&xs[lo..=at]);
    let tail = (t / 10).max(1);
    let last = mean(&xs[t - tail..]);
    Some(EarlyLevel {
        name: curve.name.clone(),
        at_step: at,
        early,
        last,
        ratio: if last > 0.0 { early / last } else { f64::NAN },
    })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// A global-model checkpoint placed on two reward axes.
#[derive(Clone, Debug, PartialEq)]
pub struct FrontierPoint {
    pub task: String,
    pub round: usize,
    pub x: f64,
    pub y: f64,
    pub non_dominated: bool,
}

/// The per-round global-model trajectory on `(x, y)` for every task that
/// logs both metrics, with the non-dominated subset flagged per task.
pub fn pareto_extract(run_dir: &Path, x: &str, y: &str) -> Result<Vec<FrontierPoint>> {
    let logs = RunLogs::load(run_dir)?;
    pareto_from_logs(&logs, x, y)
}

pub fn pareto_from_logs(logs: &RunLogs, x: &str, y: &str) -> Result<Vec<FrontierPoint>> {
    for axis in [x, y] {
        if !logs.eval.iter().any(|r| r.metric == axis) {
            return Err(LabError::UnknownAxis(axis.to_string()));
        }
    }
    let mut out = Vec::new();
    for task in logs.tasks() {
        let traj: Vec<(usize, f64, f64)> = (0..=logs.last_round())
            .filter_map(|r| {
                let vx = logs.eval_value(r, &task, GLOBAL_MODEL, x)?;
                let vy = logs.eval_value(r, &task, GLOBAL_MODEL, y)?;
                Some((r, vx, vy))
            })
            .collect();
        let pts: Vec<(f64, f64)> = traj.iter().map(|&(_, a, b)| (a, b)).collect();
        for (&(round, vx, vy), keep) in traj.iter().zip(non_dominated(&pts)) {
            out.push(FrontierPoint {
                task: task.clone(),
                round,
                x: vx,
                y: vy,
                non_dominated: keep,
            });
        }
    }
    Ok(out)
}

pub fn frontier_csv(points: &[FrontierPoint], x: &str, y: &str) -> String {
    let mut s = format!("task,round,{x},{y},non_dominated\n");
    for p in points {
        let _ = writeln!(s, "{},{},{},{},{}", p.task, p.round, p.x, p.y, p.non_dominated);
    }
    s
}

/// Metrics compared between runs, all read at the final round.
pub const COMPARED: [(&str, &str); 3] = [
    ("global_accuracy", "accuracy"),
    ("local_accuracy", "accuracy"),
    ("mean_reward", "mean_reward"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    /// Run name within a sweep; empty for a single pair.
    pub pair: String,
    pub task: String,
    pub metric: String,
    pub a: f64,
    pub b: f64,
    pub delta: f64,
}

/// Win/loss count of `b` over `a` on summed final global accuracy.
#[derive(Clone, Debug, PartialEq)]
pub struct SignTest {
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
    /// Two-sided exact binomial p-value over the non-tied pairs.
    pub p_value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub rows: Vec<CompareRow>,
    pub sign_test: Option<SignTest>,
}

/// Run directories under `dir`: itself when it holds a run, otherwise its
/// immediate subdirectories that do, by name.
pub fn run_dirs(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    if dir.join(CONFIG_FILE).is_file() {
        return Ok(vec![(String::new(), dir.to_path_buf())]);
    }
    let entries = std::fs::read_dir(dir).map_err(|e| LabError::io(dir, e))?;
    let mut out = Vec::new();
    for e in entries {
        let p = e.map_err(|e| LabError::io(dir, e))?.path();
        if p.join(CONFIG_FILE).is_file() {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            out.push((name, p));
        }
    }
    if out.is_empty() {
        return Err(LabError::Schema(format!("{} holds no run", dir.display())));
    }
    out.sort();
    Ok(out)
}

fn list_diff(a: &[String], b: &[String]) -> (Vec<String>, Vec<String>) {
    let only = |x: &[String], y: &[String]| x.iter().filter(|t| !y.contains(t)).cloned().collect();
    (only(a, b), only(b, a))
}

fn compare_pair(pair: &str, a: &RunLogs, b: &RunLogs) -> Result<Vec<CompareRow>> {
    let (ta, tb) = (a.tasks(), b.tasks());
    let (only_a, only_b) = list_diff(&ta, &tb);
    if !only_a.is_empty() || !only_b.is_empty() {
        return Err(LabError::Schema(format!(
            "task sets differ{}: only in a {only_a:?}, only in b {only_b:?}",
            if pair.is_empty() { String::new() } else { format!(" for '{pair}'") }
        )));
    }
    let (ra, rb) = (a.last_round(), b.last_round());
    let mut rows = Vec::new();
    for task in &ta {
        for (label, metric) in COMPARED {
            let model = if label == "local_accuracy" { LOCAL_MEAN_MODEL } else { GLOBAL_MODEL };
            let (Some(va), Some(vb)) = (a.eval_value(ra, task, model, metric), b.eval_value(rb, task, model, metric))
            else {
                continue;
            };
            rows.push(CompareRow {
                pair: pair.to_string(),
                task: task.clone(),
                metric: label.to_string(),
                a: va,
                b: vb,
                delta: vb - va,
            });
        }
    }
    Ok(rows)
}

/// Two-sided exact sign test p-value for `wins` out of `n` non-tied pairs.
pub fn sign_test_p(wins: usize, n: usize) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let k = wins.min(n - wins);
    let mut tail = 0.0;
    let mut c = 1.0_f64;
    for i in 0..=k {
        if i > 0 {
            c = c * (n - i + 1) as f64 / i as f64;
        }
        tail += c;
    }
    (2.0 * tail / 2f64.powi(n as i32)).min(1.0)
}

/// Compare run `b` against run `a`, or two seed sweeps pairwise by run name.
pub fn compare_runs(a: &Path, b: &Path) -> Result<Comparison> {
    let (da, db) = (run_dirs(a)?, run_dirs(b)?);
    let na: Vec<String> = da.iter().map(|(n, _)| n.clone()).collect();
    let nb: Vec<String> = db.iter().map(|(n, _)| n.clone()).collect();
    if na != nb {
        let (only_a, only_b) = list_diff(&na, &nb);
        return Err(LabError::Schema(format!(
            "run sets differ: only in a {only_a:?}, only in b {only_b:?}"
        )));
    }
    let mut rows = Vec::new();
    let mut totals = Vec::new();
    for ((name, pa), (_, pb)) in da.iter().zip(&db) {
        let pair = compare_pair(name, &RunLogs::load(pa)?, &RunLogs::load(pb)?)?;
        totals.push(
            pair.iter()
                .filter(|r| r.metric == "global_accuracy")
                .map(|r| r.delta)
                .sum::<f64>(),
        );
        rows.extend(pair);
    }
    let sign_test = (da.len() > 1).then(|| {
        let wins = totals.iter().filter(|&&d| d > 0.0).count();
        let losses = totals.iter().filter(|&&d| d < 0.0).count();
        SignTest {
            wins,
            ties: totals.len() - wins - losses,
            losses,
            p_value: sign_test_p(wins, wins + losses),
        }
    });
    Ok(Comparison { rows, sign_test })
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("pair,task,metric,a,b,delta\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{},{}", r.pair, r.task, r.metric, r.a, r.b, r.delta);
        }
        s
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| run | task | metric | a | b | b - a |\n|---|---|---|---|---|---|\n");
        for r in &self.rows {
            let pair = if r.pair.is_empty() { "-" } else { &r.pair };
            let _ = writeln!(
                s,
                "| {pair} | {} | {} | {:.4} | {:.4} | {:+.4} |",
                r.task, r.metric, r.a, r.b, r.delta
            );
        }
        if let Some(t) = &self.sign_test {
            let _ = write!(
                s,
                "\nFinal global accuracy, b vs a: {} wins, {} ties, {} losses (sign test p = {:.4}).\n",
                t.wins, t.ties, t.losses, t.p_value
            );
        }
        s
    }
}
