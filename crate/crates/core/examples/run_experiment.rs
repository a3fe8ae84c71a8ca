//! Config-driven run: all stages plus a few checks, written to a temp dir.
//!
//! `cargo run --release --example run_experiment -- examples/canonical.toml`
//! runs the file as given; without an argument a reduced config is used.

use volfilter::harness::{run_experiment, CheckName, ExperimentConfig};
use volfilter::TimeGrid;

fn main() -> volfilter::Result<()> {
    let cfg = match std::env::args().nth(1) {
        Some(path) => ExperimentConfig::load(path.as_ref())?,
        None => ExperimentConfig {
            n_paths: 5000,
            n_particles: 500,
            grid: TimeGrid::new(0.0, 1.0, 250)?,
            output_dir: std::env::temp_dir().join("volfilter_example"),
            plots: true,
            checks: vec![CheckName::Riccati, CheckName::PdeResidual, CheckName::DualityGapLog, CheckName::Degenerate],
            ..ExperimentConfig::canonical()
        },
    };
    let (report, files) = run_experiment(&cfg)?;
    println!("{report}");
    for f in files {
        println!("wrote {}", f.display());
    }
    std::process::exit(report.exit_code());
}
