//! The four experiments. Each returns typed rows plus a [`Table`] view of
//! them; [`run`] dispatches on the experiment id and writes the CSV.

use std::fmt;
use std::path::PathBuf;

use odegrad::grad::{GradientResult, Method, MethodConfig};
use odegrad::interp::InterpKind;
use thiserror::Error;

use crate::config::{ExperimentConfig, ExperimentId};
use crate::output::Table;

pub mod collapse;
pub mod fit;
pub mod interp_compare;
pub mod sweep;

pub use collapse::{exp_collapse_nfe, CollapseRow};
pub use fit::{exp_traj_fit, FitRun};
pub use interp_compare::{exp_interp_compare, InterpRow};
pub use sweep::{exp_tol_grid_sweep, SweepCell};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
    #[error("writing output: {0}")]
    Io(#[from] std::io::Error),
}

/// How a cell ended.
#[derive(Debug, Clone, PartialEq)]
pub enum CellStatus {
    Ok,
    /// A failure the experiment is designed to observe, such as an unstable
    /// reverse solve or a diverging training run.
    Recorded(String),
    Failed(String),
}

impl CellStatus {
    pub fn is_failure(&self) -> bool {
        matches!(self, CellStatus::Failed(_))
    }
}

impl fmt::Display for CellStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CellStatus::Ok => f.write_str("ok"),
            CellStatus::Recorded(msg) => write!(f, "recorded: {msg}"),
            CellStatus::Failed(msg) => write!(f, "failed: {msg}"),
        }
    }
}

/// Outcome of [`run`].
#[derive(Debug, Clone)]
pub struct Report {
    pub table: Table,
    pub path: PathBuf,
    pub failures: usize,
}

/// Runs `cfg.experiment` on `jobs` threads (0 picks the rayon default) and
/// writes `<out_dir>/<experiment>.csv`.
pub fn run(cfg: &ExperimentConfig, jobs: usize) -> Result<Report, BenchError> {
    let (table, failures) = match cfg.experiment {
        ExperimentId::TolGridSweep => {
            let cells = exp_tol_grid_sweep(cfg, jobs)?;
            (sweep::table(cfg, &cells), count(cells.iter().map(|c| &c.status)))
        }
        ExperimentId::CollapseNfe => {
            let rows = exp_collapse_nfe(cfg, jobs)?;
            (collapse::table(cfg, &rows), count(rows.iter().map(|r| &r.status)))
        }
        ExperimentId::TrajFit => {
            let runs = exp_traj_fit(cfg, jobs)?;
            (fit::table(cfg, &runs), count(runs.iter().map(|r| &r.status)))
        }
        ExperimentId::InterpCompare => {
            let rows = exp_interp_compare(cfg, jobs)?;
            (interp_compare::table(cfg, &rows), count(rows.iter().map(|r| &r.status)))
        }
    };
    let path = table.write_to_dir(&cfg.out_dir, cfg.experiment.as_str())?;
    Ok(Report { table, path, failures })
}

fn count<'a>(statuses: impl Iterator<Item = &'a CellStatus>) -> usize {
    statuses.filter(|s| s.is_failure()).count()
}

/// Maps `f` over `0..n` on a pool of `jobs` threads, keeping index order.
pub(crate) fn par_map<T, F>(jobs: usize, n: usize, f: F) -> Result<Vec<T>, BenchError>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    Ok(pool.install(|| (0..n).into_par_iter().map(f).collect()))
}

/// Relative l-infinity distance between two concatenated gradients, with
/// the denominator floored at `floor`.
pub fn rel_linf(got: &[f64], want: &[f64], floor: f64) -> f64 {
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(floor);
    got.iter()
        .zip(want)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        / scale
}

/// `dL/dtheta` followed by `dL/dz0`.
pub fn flat_gradient(g: &GradientResult) -> Vec<f64> {
    let mut v = g.dl_dtheta.as_slice().to_vec();
    v.extend_from_slice(&g.dl_dz0);
    v
}

pub(crate) fn method_n(m: &MethodConfig) -> String {
    match m.method {
        Method::Irdm { n, .. } => n.to_string(),
        _ => String::new(),
    }
}

pub(crate) fn method_k(m: &MethodConfig) -> String {
    match m.method {
        Method::Checkpoint { k } => k.to_string(),
        _ => String::new(),
    }
}

pub(crate) fn irdm_label(n: usize, kind: InterpKind) -> String {
    MethodConfig::irdm_with(n, kind).to_string()
}

pub(crate) fn echo(cfg: &ExperimentConfig, repeat: usize) -> Vec<String> {
    vec![
        cfg.experiment.to_string(),
        cfg.seed.to_string(),
        cfg.system.to_string(),
        repeat.to_string(),
    ]
}

pub(crate) const ECHO_HEADER: [&str; 4] = ["experiment", "seed", "system", "repeat"];

pub(crate) fn opt_usize(x: Option<usize>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}
