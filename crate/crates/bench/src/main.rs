use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use odegrad_bench::{run, ExperimentConfig, ExperimentId};

const EXIT_CONFIG: u8 = 2;
const EXIT_CELL: u8 = 3;

/// Run one benchmark experiment and write `<out>/<experiment>.csv`.
#[derive(Debug, Parser)]
#[command(name = "bench", version)]
struct Cli {
    /// tol_grid_sweep, collapse_nfe, traj_fit or interp_compare.
    experiment: String,
    /// Flat `key = value` config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out_dir` in the config.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, env = "ODEGRAD_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    repeat: Option<usize>,
    /// Worker threads; 0 uses one per core.
    #[arg(long, env = "ODEGRAD_JOBS")]
    jobs: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let id: ExperimentId = match cli.experiment.parse() {
        Ok(id) => id,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let mut cfg = match ExperimentConfig::load(id, &cli.config) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: config: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    cfg.out_dir = cli.out;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(repeat) = cli.repeat {
        cfg.repeat = repeat;
    }
    if let Err(e) = cfg.validate() {
        eprintln!("error: config: {e}");
        return ExitCode::from(EXIT_CONFIG);
    }
    match run(&cfg, cli.jobs.unwrap_or(0)) {
        Ok(report) => {
            eprintln!(
                "{}: {} rows -> {}",
                cfg.experiment,
                report.table.rows.len(),
                report.path.display()
            );
            if report.failures > 0 {
                eprintln!("error: {} cell(s) failed", report.failures);
                ExitCode::from(EXIT_CELL)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CELL)
        }
    }
}
