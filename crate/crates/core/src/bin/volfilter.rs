use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use volfilter::harness::{
    run_experiment, stage_filter, stage_optimize, stage_simulate, stage_value, worker_pool, ExperimentConfig,
    Summary, VerificationReport, REPORT_FILE,
};

#[derive(Parser)]
#[command(name = "volfilter", version, about = "Partial-information portfolio experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate market paths and write paths.csv.
    Simulate(Common),
    /// Run the exact and particle filters on the first path.
    Filter(Common),
    /// Solve the value coefficients and print the closed-form value.
    Value(Common),
    /// Monte Carlo of the optimal policy against the closed-form value.
    Optimize(Common),
    /// Full pipeline plus the configured checks; writes report.toml.
    Verify(Common),
    /// Print a stored report.
    Report {
        /// Directory holding report.toml.
        #[arg(long)]
        out: PathBuf,
    },
}

type Stage = fn(&ExperimentConfig, &mut Summary) -> volfilter::Result<Vec<PathBuf>>;

fn load(c: &Common) -> volfilter::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.output_dir = o.clone();
    }
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| volfilter::Error::Config(e.to_string()))?;
    Ok(cfg)
}

fn run_stage(c: &Common, name: &'static str, stage: Stage) -> volfilter::Result<i32> {
    let cfg = load(c)?;
    let mut summary = Summary::new();
    let files = worker_pool()?.install(|| stage(&cfg, &mut summary)).map_err(|e| e.in_stage(name))?;
    for (k, v) in &summary {
        println!("{k:<32} {v:.6e}");
    }
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(0)
}

fn run(cli: Cli) -> volfilter::Result<i32> {
    match &cli.command {
        Command::Simulate(c) => run_stage(c, "simulate", stage_simulate),
        Command::Filter(c) => run_stage(c, "filter", stage_filter),
        Command::Value(c) => run_stage(c, "value", stage_value),
        Command::Optimize(c) => run_stage(c, "optimize", stage_optimize),
        Command::Verify(c) => {
            let (report, files) = run_experiment(&load(c)?)?;
            println!("{report}");
            for f in files {
                println!("wrote {}", f.display());
            }
            Ok(report.exit_code())
        }
        Command::Report { out } => {
            let report = VerificationReport::read(&out.join(REPORT_FILE))?;
            println!("{report}");
            Ok(report.exit_code())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
