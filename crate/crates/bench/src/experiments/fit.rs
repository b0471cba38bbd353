use odegrad::autodiff::{Architecture, VectorField};
use odegrad::grad::{field_rhs, train, Dataset, MethodConfig, OdeProblem, Optimizer, TrainTrace};
use odegrad::ode::{solve_with_outputs, SolverConfig};
use rand::Rng;

use super::{echo, method_k, method_n, par_map, BenchError, CellStatus, ECHO_HEADER};
use crate::config::ExperimentConfig;
use crate::output::{float, millis, Table};
use crate::systems::{cell_rng, jittered};

/// Initial state and span of the fitted trajectories.
pub const FIT_Z0: [f64; 2] = [1.0, 0.0];
pub const FIT_SPAN: (f64, f64) = (0.0, 2.0);
/// Tolerance of the solve that produces the targets.
pub const DATA_TOL: f64 = 1e-10;

/// Training trace of one method at one tolerance.
#[derive(Debug, Clone)]
pub struct FitRun {
    pub repeat: usize,
    pub tol: f64,
    pub method: MethodConfig,
    pub trace: TrainTrace,
    pub status: CellStatus,
}

impl FitRun {
    /// Forward plus backward evaluations over the whole run.
    pub fn cumulative_nfe(&self) -> usize {
        self.trace.total_nfe()
    }
}

/// Fits a `tanh` MLP to `cfg.samples` states of `cfg.system` started at
/// [`FIT_Z0`] and sampled uniformly over [`FIT_SPAN`], once per method and
/// tolerance. All methods of a repeat start from the same network.
pub fn exp_traj_fit(cfg: &ExperimentConfig, jobs: usize) -> Result<Vec<FitRun>, BenchError> {
    let instances = par_map(jobs, cfg.repeat, |r| instance(cfg, r))?;
    let per_rep = cfg.tolerances.len() * cfg.methods.len();
    par_map(jobs, cfg.repeat * per_rep, |idx| {
        let r = idx / per_rep;
        let tol = cfg.tolerances[(idx % per_rep) / cfg.methods.len()];
        let method = cfg.methods[idx % cfg.methods.len()].clone();
        let (trace, status) = match &instances[r] {
            Err(e) => (TrainTrace::default(), CellStatus::Failed(e.clone())),
            Ok((problem, data)) => {
                let mut p = problem.clone();
                p.cfg = SolverConfig::with_tol(tol);
                match train(&mut p, &method, data, Optimizer::adam(cfg.learning_rate), cfg.epochs) {
                    Ok(trace) => {
                        let status = match &trace.stopped {
                            Some(why) => CellStatus::Recorded(why.clone()),
                            None => CellStatus::Ok,
                        };
                        (trace, status)
                    }
                    Err(e) => (TrainTrace::default(), CellStatus::Failed(e.to_string())),
                }
            }
        };
        FitRun {
            repeat: r,
            tol,
            method,
            trace,
            status,
        }
    })
}

type Instance = Result<(OdeProblem, Dataset), String>;

fn instance(cfg: &ExperimentConfig, r: usize) -> Instance {
    let mut rng = cell_rng(cfg.seed, r as u64);
    let truth = cfg.system.field(cfg.hidden, &mut rng).map_err(|e| e.to_string())?;
    let z0 = jittered(&FIT_Z0, cfg.z0_jitter, &mut rng);
    let (t0, t1) = FIT_SPAN;
    let times: Vec<f64> = (1..=cfg.samples)
        .map(|i| t0 + (t1 - t0) * i as f64 / cfg.samples as f64)
        .collect();
    let (_, targets) = solve_with_outputs(field_rhs(&truth), &z0, FIT_SPAN, &SolverConfig::with_tol(DATA_TOL), &times)
        .map_err(|e| format!("data: {e}"))?;
    let data = Dataset::new(times, targets).map_err(|e| e.to_string())?;
    let model = VectorField::new(Architecture::tanh_mlp(2, cfg.hidden), rng.random());
    let problem = OdeProblem::new(model, z0, FIT_SPAN, SolverConfig::default()).map_err(|e| e.to_string())?;
    Ok((problem, data))
}

/// One row per recorded epoch. A run that stops before its first epoch
/// gets a single row with empty epoch columns.
pub fn table(cfg: &ExperimentConfig, runs: &[FitRun]) -> Table {
    let mut header = ECHO_HEADER.to_vec();
    header.extend([
        "method",
        "tol",
        "n",
        "k",
        "epochs",
        "learning_rate",
        "hidden",
        "samples",
        "z0_jitter",
        "epoch",
        "loss",
        "forward_nfe",
        "backward_nfe",
        "status",
        "cumulative_wall_ms",
    ]);
    let mut t = Table::new(&header);
    for run in runs {
        let mut prefix = echo(cfg, run.repeat);
        prefix.extend([
            run.method.to_string(),
            float(run.tol),
            method_n(&run.method),
            method_k(&run.method),
            cfg.epochs.to_string(),
            float(cfg.learning_rate),
            cfg.hidden.to_string(),
            cfg.samples.to_string(),
            float(cfg.z0_jitter),
        ]);
        let status = run.status.to_string();
        for rec in &run.trace.records {
            let mut row = prefix.clone();
            row.extend([
                rec.epoch.to_string(),
                float(rec.loss),
                rec.forward_nfe.to_string(),
                rec.backward_nfe.to_string(),
                status.clone(),
                millis(rec.cumulative_wall_ms),
            ]);
            t.push(row);
        }
        if run.trace.records.is_empty() && run.status != CellStatus::Ok {
            let mut row = prefix;
            row.extend([String::new(), String::new(), String::new(), String::new(), status, String::new()]);
            t.push(row);
        }
    }
    t
}
