//! Derived CSV tables and SVG charts for a finished run.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::analysis::{pareto_from_logs, reward_curves, weight_curves, Curve};
use crate::error::Result;
use crate::records::{write_text, RunLogs, GLOBAL_MODEL};
use crate::svg::{line_chart, scatter_chart, Series};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Svg,
}

fn curves_csv(curves: &[Curve]) -> String {
    let mut s = String::from("global_step,component,value\n");
    for c in curves {
        for (t, v) in c.values.iter().enumerate() {
            if let Some(v) = v {
                let _ = writeln!(s, "{t},{},{v}", c.name);
            }
        }
    }
    s
}

fn curves_svg(title: &str, ylabel: &str, curves: &[Curve]) -> String {
    let series: Vec<Series> = curves
        .iter()
        .map(|c| Series {
            name: c.name.clone(),
            points: c.points(),
        })
        .collect();
    line_chart(title, "global step", ylabel, &series)
}

/// The format-like axis a task logs, else its mean reward.
fn pareto_x_axis(logs: &RunLogs, task: &str) -> String {
    logs.eval
        .iter()
        .filter(|r| r.task == task && r.model == GLOBAL_MODEL && r.metric.contains("format"))
        .map(|r| r.metric.clone())
        .next()
        .unwrap_or_else(|| "mean_reward".to_string())
}

/// Write derived files into the run directory; returns their paths.
pub fn export_run(run_dir: &Path, format: Format) -> Result<Vec<PathBuf>> {
    let logs = RunLogs::load(run_dir)?;
    let rewards = reward_curves(&logs.client_steps);
    let weights = weight_curves(&logs.client_steps);
    let mut written = Vec::new();
    let mut put = |name: String, text: String| -> Result<()> {
        let p = run_dir.join(name);
        write_text(&p, &text)?;
        written.push(p);
        Ok(())
    };
    match format {
        Format::Csv => {
            put("reward_curves.csv".into(), curves_csv(&rewards))?;
            put("weight_curves.csv".into(), curves_csv(&weights))?;
        }
        Format::Svg => {
            put(
                "reward_curves.svg".into(),
                curves_svg("Mean component reward", "reward", &rewards),
            )?;
            put(
                "weight_curves.svg".into(),
                curves_svg("Mean objective weight", "weight", &weights),
            )?;
            for task in logs.tasks() {
                let x = pareto_x_axis(&logs, &task);
                let pts: Vec<(f64, f64, String, bool)> = pareto_from_logs(&logs, &x, "accuracy")?
                    .into_iter()
                    .filter(|p| p.task == task)
                    .map(|p| (p.x, p.y, format!("r{}", p.round), p.non_dominated))
                    .collect();
                put(
                    format!("pareto_{task}.svg"),
                    scatter_chart(&format!("{task}: global model by round"), &x, "accuracy", &pts),
                )?;
            }
        }
    }
    Ok(written)
}
