use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fedmo_lab::ablate::{ablate, ABLATION_MD};
use fedmo_lab::analysis::{compare_runs, frontier_csv, pareto_extract};
use fedmo_lab::export::{export_run, Format};
use fedmo_lab::records::{read_text, write_text, SUMMARY_FILE};
use fedmo_lab::{run_scenario, LabError, Result, ScenarioConfig};

/// Federated multi-objective GRPO simulator.
#[derive(Parser)]
#[command(name = "fedmo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its run directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Freeze objective weights (λ = 0).
        #[arg(long)]
        no_adaptive: bool,
        /// Uniform aggregation coefficients within each cluster.
        #[arg(long)]
        uniform_agg: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the three ablation arms over several seeds.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Global-model trajectory on two reward axes with its non-dominated set.
    Pareto {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        x: String,
        #[arg(long)]
        y: String,
    },
    /// Compare two runs, or two directories of runs paired by name.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, value_enum, default_value_t = TableFormat::Md)]
        format: TableFormat,
    },
    /// Write derived CSV tables or SVG charts into a run directory.
    Export {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum)]
        format: ExportFormat,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TableFormat {
    Md,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportFormat {
    Csv,
    Svg,
}

fn default_out(cfg: &ScenarioConfig, prefix: &str) -> PathBuf {
    let kind = serde_json::to_value(cfg.scenario)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default();
    Path::new("runs").join(format!("{prefix}{kind}_seed{}", cfg.seed))
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run {
            config,
            seed,
            no_adaptive,
            uniform_agg,
            out,
        } => {
            let mut cfg = ScenarioConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.adaptive_weights &= !no_adaptive;
            cfg.accuracy_aware_aggregation &= !uniform_agg;
            let dir = out.or(cfg.out_dir.clone()).unwrap_or_else(|| default_out(&cfg, ""));
            cfg.out_dir = Some(dir.clone());
            run_scenario(&cfg)?;
            print!("{}", read_text(&dir.join(SUMMARY_FILE))?);
            println!("\nrun directory: {}", dir.display());
        }
        Command::Ablate { config, seeds, out } => {
            let mut cfg = ScenarioConfig::load(&config)?;
            let dir = out.or(cfg.out_dir.clone()).unwrap_or_else(|| default_out(&cfg, "ablate_"));
            cfg.out_dir = Some(dir.clone());
            ablate(&cfg, seeds)?;
            print!("{}", read_text(&dir.join(ABLATION_MD))?);
        }
        Command::Pareto { run, x, y } => {
            let csv = frontier_csv(&pareto_extract(&run, &x, &y)?, &x, &y);
            write_text(&run.join(format!("pareto_{x}_{y}.csv")), &csv)?;
            print!("{csv}");
        }
        Command::Compare { a, b, format } => {
            let c = compare_runs(&a, &b)?;
            match format {
                TableFormat::Md => print!("{}", c.to_markdown()),
                TableFormat::Csv => print!("{}", c.to_csv()),
            }
        }
        Command::Export { run, format } => {
            let format = match format {
                ExportFormat::Csv => Format::Csv,
                ExportFormat::Svg => Format::Svg,
            };
            for p in export_run(&run, format)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn error_record(e: &LabError) -> String {
    serde_json::json!({ "error": { "kind": e.kind(), "message": e.to_string() } }).to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_record(&e));
            ExitCode::FAILURE
        }
    }
}
