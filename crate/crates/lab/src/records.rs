//! On-disk record types and the run directory layout.
//!
//! ```text
//! run_dir/
//!   config.json          effective configuration
//!   client_steps.jsonl   one line per client local step
//!   server_rounds.jsonl  one line per communication round
//!   eval.csv             round,task,model,metric,value
//!   checkpoints/round_<r>.bin
//!   summary.md
//! ```

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub const CONFIG_FILE: &str = "config.json";
pub const CLIENT_STEPS_FILE: &str = "client_steps.jsonl";
pub const SERVER_ROUNDS_FILE: &str = "server_rounds.jsonl";
pub const EVAL_FILE: &str = "eval.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const SUMMARY_FILE: &str = "summary.md";

/// Model label of the aggregated global model in `eval.csv`.
pub const GLOBAL_MODEL: &str = "global";
/// Model label of the mean over a task's local client models.
pub const LOCAL_MEAN_MODEL: &str = "local_mean";

pub fn checkpoint_path(run_dir: &Path, round: usize) -> PathBuf {
    run_dir.join(CHECKPOINT_DIR).join(format!("round_{round}.bin"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientStepRecord {
    /// 1-based communication round.
    pub round: usize,
    pub client_id: u32,
    pub task: String,
    /// Local step within the round.
    pub step: usize,
    /// Step index over the whole run: `(round - 1) * S + step`.
    pub global_step: usize,
    pub components: Vec<String>,
    pub component_rewards: Vec<f64>,
    pub scalarized: f64,
    /// Weights used to scalarize this step's rewards.
    pub weights: Vec<f64>,
    pub response_len: f64,
    pub grad_norm: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterRecord {
    pub key: String,
    pub members: Vec<u32>,
    pub alpha: Vec<f64>,
    pub shared_weights: Vec<(String, f64)>,
    pub sample_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServerRoundRecord {
    pub round: usize,
    pub clusters: Vec<ClusterRecord>,
    /// Clients whose round reset found no shared component.
    pub reset_fallbacks: Vec<u32>,
    /// Clients excluded from this round's aggregation.
    pub failed: Vec<ClientFailure>,
    pub checkpoint: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientFailure {
    pub client_id: u32,
    pub kind: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    /// 0 is the initial model.
    pub round: usize,
    pub task: String,
    /// [`GLOBAL_MODEL`], [`LOCAL_MEAN_MODEL`] or `client_<id>`.
    pub model: String,
    /// `accuracy`, `mean_reward` or a component name.
    pub metric: String,
    pub value: f64,
}

pub struct JsonlWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl JsonlWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let f = File::create(path).map_err(|e| LabError::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(f),
        })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        let line = serde_json::to_string(record).expect("records serialize");
        writeln!(self.out, "{line}").map_err(|e| LabError::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| LabError::io(&self.path, e))
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).map_err(|e| LabError::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| LabError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| LabError::Json {
            path: path.to_path_buf(),
            source,
        })?);
    }
    Ok(out)
}

fn csv_err(path: &Path, e: csv::Error) -> LabError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => LabError::io(path, io),
        other => LabError::Schema(format!("{}: {other:?}", path.display())),
    }
}

pub fn write_eval_csv(path: &Path, rows: &[EvalRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| LabError::io(path, e))
}

pub fn read_eval_csv(path: &Path) -> Result<Vec<EvalRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| LabError::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| LabError::io(path, e))
}

/// Everything a finished run left on disk, minus checkpoints.
#[derive(Clone, Debug)]
pub struct RunLogs {
    pub dir: PathBuf,
    pub config: crate::config::ScenarioConfig,
    pub client_steps: Vec<ClientStepRecord>,
    pub server_rounds: Vec<ServerRoundRecord>,
    pub eval: Vec<EvalRow>,
}

impl RunLogs {
    pub fn load(dir: &Path) -> Result<Self> {
        let cfg_path = dir.join(CONFIG_FILE);
        let config = crate::config::ScenarioConfig::from_json(&read_text(&cfg_path)?).map_err(|source| {
            LabError::Json {
                path: cfg_path.clone(),
                source,
            }
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            config,
            client_steps: read_jsonl(&dir.join(CLIENT_STEPS_FILE))?,
            server_rounds: read_jsonl(&dir.join(SERVER_ROUNDS_FILE))?,
            eval: read_eval_csv(&dir.join(EVAL_FILE))?,
        })
    }

    /// Task labels in first-seen order of the eval table.
    pub fn tasks(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.eval {
            if !out.contains(&r.task) {
                out.push(r.task.clone());
            }
        }
        out
    }

    pub fn last_round(&self) -> usize {
        self.eval.iter().map(|r| r.round).max().unwrap_or(0)
    }

    pub fn eval_value(&self, round: usize, task: &str, model: &str, metric: &str) -> Option<f64> {
        self.eval
            .iter()
            .find(|r| r.round == round && r.task == task && r.model == model && r.metric == metric)
            .map(|r| r.value)
    }
}
