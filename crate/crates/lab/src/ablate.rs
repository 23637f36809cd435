//! Three-arm ablation over the two server/client switches.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::ScenarioConfig;
use crate::error::{LabError, Result};
use crate::records::{write_text, GLOBAL_MODEL, LOCAL_MEAN_MODEL};
use crate::runner::{run_scenario, RunOutput};

pub const ABLATION_MD: &str = "ablation.md";
pub const ABLATION_CSV: &str = "ablation.csv";

/// One row of the ablation table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Arm {
    pub adaptive_weights: bool,
    pub accuracy_aware_aggregation: bool,
}

impl Arm {
    /// Baseline first, then aggregation only, then both.
    pub const ALL: [Arm; 3] = [
        Arm {
            adaptive_weights: false,
            accuracy_aware_aggregation: false,
        },
        Arm {
            adaptive_weights: false,
            accuracy_aware_aggregation: true,
        },
        Arm {
            adaptive_weights: true,
            accuracy_aware_aggregation: true,
        },
    ];

    fn flag(on: bool) -> &'static str {
        if on {
            "ON"
        } else {
            "OFF"
        }
    }

    /// `OFF/ON` style label: weights switch, then aggregation switch.
    pub fn label(&self) -> String {
        format!(
            "{}/{}",
            Self::flag(self.adaptive_weights),
            Self::flag(self.accuracy_aware_aggregation)
        )
    }

    pub fn dir_name(&self) -> String {
        self.label().to_lowercase().replace('/', "_")
    }

    pub fn apply(&self, cfg: &mut ScenarioConfig) {
        cfg.adaptive_weights = self.adaptive_weights;
        cfg.accuracy_aware_aggregation = self.accuracy_aware_aggregation;
    }
}

/// Final-round metrics of one arm, averaged over seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct ArmRow {
    pub arm: Arm,
    pub task: String,
    pub seeds: usize,
    pub global_accuracy: Stat,
    pub local_accuracy: Stat,
    pub mean_reward: Stat,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; zero for a single seed.
    pub std: f64,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Clone, Debug)]
pub struct Ablation {
    pub rows: Vec<ArmRow>,
    pub seeds: Vec<u64>,
    pub out_dir: Option<PathBuf>,
}

/// Run every arm on seeds `base.seed .. base.seed + seeds`.
///
/// With an output directory, each run lands in `<out>/<arm>/seed_<s>` and
/// the table is written next to them.
pub fn ablate(base: &ScenarioConfig, seeds: usize) -> Result<Ablation> {
    if seeds == 0 {
        return Err(LabError::Config("ablate needs at least one seed".into()));
    }
    base.validate()?;
    let seed_list: Vec<u64> = (0..seeds as u64).map(|i| base.seed + i).collect();
    let mut rows = Vec::new();
    for arm in Arm::ALL {
        let mut runs: Vec<RunOutput> = Vec::with_capacity(seeds);
        for &seed in &seed_list {
            let mut cfg = base.clone();
            arm.apply(&mut cfg);
            cfg.seed = seed;
            cfg.out_dir = base
                .out_dir
                .as_ref()
                .map(|d| d.join(arm.dir_name()).join(format!("seed_{seed}")));
            log::info!("ablation arm {} seed {seed}", arm.label());
            runs.push(run_scenario(&cfg)?);
        }
        rows.extend(arm_rows(arm, &runs));
    }
    let out = Ablation {
        rows,
        seeds: seed_list,
        out_dir: base.out_dir.clone(),
    };
    if let Some(d) = &out.out_dir {
        fs::create_dir_all(d).map_err(|e| LabError::io(d, e))?;
        write_text(&d.join(ABLATION_MD), &out.to_markdown())?;
        write_text(&d.join(ABLATION_CSV), &out.to_csv())?;
    }
    Ok(out)
}

fn arm_rows(arm: Arm, runs: &[RunOutput]) -> Vec<ArmRow> {
    let mut tasks: Vec<String> = Vec::new();
    for r in &runs[0].eval {
        if !tasks.contains(&r.task) {
            tasks.push(r.task.clone());
        }
    }
    tasks
        .into_iter()
        .map(|task| {
            let col = |model: &str, metric: &str| {
                let xs: Vec<f64> = runs
                    .iter()
                    .map(|r| r.eval_value(r.rounds(), &task, model, metric).unwrap_or(f64::NAN))
                    .collect();
                Stat::of(&xs)
            };
            ArmRow {
                arm,
                seeds: runs.len(),
                global_accuracy: col(GLOBAL_MODEL, "accuracy"),
                local_accuracy: col(LOCAL_MEAN_MODEL, "accuracy"),
                mean_reward: col(GLOBAL_MODEL, "mean_reward"),
                task,
            }
        })
        .collect()
}

fn check(on: bool) -> &'static str {
    if on {
        "✓"
    } else {
        "✗"
    }
}

fn cell(s: Stat) -> String {
    format!("{:.4} ± {:.4}", s.mean, s.std)
}

impl Ablation {
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("# Ablation\n\n");
        let _ = writeln!(
            s,
            "Final-round metrics, mean ± std over seeds {:?}. The first row is the plain federated GRPO baseline.\n",
            self.seeds
        );
        s.push_str("| arm | adaptive weights (λ) | accuracy-aware aggregation (α) | task | global accuracy | local accuracy | mean reward |\n");
        s.push_str("|---|---|---|---|---|---|---|\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} | {} | {} |",
                r.arm.label(),
                check(r.arm.adaptive_weights),
                check(r.arm.accuracy_aware_aggregation),
                r.task,
                cell(r.global_accuracy),
                cell(r.local_accuracy),
                cell(r.mean_reward),
            );
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "arm,adaptive_weights,accuracy_aware_aggregation,task,seeds,global_accuracy,global_accuracy_std,local_accuracy,local_accuracy_std,mean_reward,mean_reward_std\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.arm.label(),
                r.arm.adaptive_weights,
                r.arm.accuracy_aware_aggregation,
                r.task,
                r.seeds,
                r.global_accuracy.mean,
                r.global_accuracy.std,
                r.local_accuracy.mean,
                r.local_accuracy.std,
                r.mean_reward.mean,
                r.mean_reward.std,
            );
        }
        s
    }
}

/// Arm directories an ablation wrote under `out`.
pub fn arm_dir(out: &Path, arm: Arm) -> PathBuf {
    out.join(arm.dir_name())
}
