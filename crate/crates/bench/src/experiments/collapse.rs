use std::time::Instant;

use odegrad::diagnostics::fd_gradient;
use odegrad::grad::{grad, LossSeed, Method, MethodConfig, OdeProblem};
use odegrad::ode::SolverConfig;

use super::{echo, flat_gradient, method_k, method_n, opt_usize, par_map, rel_linf, BenchError, CellStatus, ECHO_HEADER};
use crate::config::ExperimentConfig;
use crate::output::{float, millis, opt_float, Table};
use crate::systems::cell_rng;

/// Floor of the denominator in the relative error against the oracle.
pub const ERROR_FLOOR: f64 = 1e-8;

/// One method at one tolerance on one collapsing-system instance.
#[derive(Debug, Clone, PartialEq)]
pub struct CollapseRow {
    pub repeat: usize,
    pub tol: f64,
    pub method: MethodConfig,
    pub forward_nfe: Option<usize>,
    pub backward_nfe: Option<usize>,
    /// Relative l-infinity error of `(dL/dtheta, dL/dz0)` against central
    /// differences.
    pub rel_error: Option<f64>,
    /// RDM backward NFE divided by this row's backward NFE.
    pub rdm_nfe_ratio: Option<f64>,
    pub wall_ms: f64,
    pub status: CellStatus,
}

/// Every method of `cfg` at every tolerance, on `cfg.repeat` jittered
/// instances. RDM failures are recorded rather than counted as failures.
pub fn exp_collapse_nfe(cfg: &ExperimentConfig, jobs: usize) -> Result<Vec<CollapseRow>, BenchError> {
    let instances = par_map(jobs, cfg.repeat, |r| instance(cfg, r))?;
    let per_rep = cfg.tolerances.len() * cfg.methods.len();
    let mut rows = par_map(jobs, cfg.repeat * per_rep, |idx| {
        let r = idx / per_rep;
        let tol = cfg.tolerances[(idx % per_rep) / cfg.methods.len()];
        let method = &cfg.methods[idx % cfg.methods.len()];
        row(r, tol, method, &instances[r])
    })?;
    for group in rows.chunks_mut(cfg.methods.len()) {
        let rdm = group
            .iter()
            .find(|r| r.method.method == Method::Rdm)
            .and_then(|r| r.backward_nfe);
        for r in group.iter_mut() {
            r.rdm_nfe_ratio = match (rdm, r.backward_nfe) {
                (Some(a), Some(b)) if b > 0 => Some(a as f64 / b as f64),
                _ => None,
            };
        }
    }
    Ok(rows)
}

type Instance = Result<(OdeProblem, Vec<f64>), String>;

fn instance(cfg: &ExperimentConfig, r: usize) -> Instance {
    let mut rng = cell_rng(cfg.seed, r as u64);
    let problem = cfg
        .system
        .problem(cfg.hidden, cfg.z0_jitter, cfg.tolerances[0], &mut rng)
        .map_err(|e| e.to_string())?;
    let seed = LossSeed::ones(problem.state_dim());
    let fd = fd_gradient(&problem, &seed, cfg.fd_step).map_err(|e| format!("oracle: {e}"))?;
    let mut oracle = fd.dl_dtheta.as_slice().to_vec();
    oracle.extend(fd.dl_dz0);
    Ok((problem, oracle))
}

fn row(repeat: usize, tol: f64, method: &MethodConfig, instance: &Instance) -> CollapseRow {
    let start = Instant::now();
    let mut out = CollapseRow {
        repeat,
        tol,
        method: method.clone(),
        forward_nfe: None,
        backward_nfe: None,
        rel_error: None,
        rdm_nfe_ratio: None,
        wall_ms: 0.0,
        status: CellStatus::Ok,
    };
    match instance {
        Err(e) => out.status = CellStatus::Failed(e.clone()),
        Ok((problem, oracle)) => {
            let mut p = problem.clone();
            p.cfg = SolverConfig::with_tol(tol);
            let seed = LossSeed::ones(p.state_dim());
            match grad(&p, method, &seed) {
                Ok(g) => {
                    out.forward_nfe = Some(g.stats.forward_nfe);
                    out.backward_nfe = Some(g.stats.backward_nfe);
                    out.rel_error = Some(rel_linf(&flat_gradient(&g), oracle, ERROR_FLOOR));
                }
                Err(e) if method.method == Method::Rdm => out.status = CellStatus::Recorded(e.to_string()),
                Err(e) => out.status = CellStatus::Failed(e.to_string()),
            }
        }
    }
    out.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    out
}

pub fn table(cfg: &ExperimentConfig, rows: &[CollapseRow]) -> Table {
    let mut header = ECHO_HEADER.to_vec();
    header.extend([
        "method",
        "tol",
        "n",
        "k",
        "z0_jitter",
        "fd_step",
        "forward_nfe",
        "backward_nfe",
        "rel_error",
        "rdm_nfe_ratio",
        "status",
        "wall_ms",
    ]);
    let mut t = Table::new(&header);
    for r in rows {
        let mut row = echo(cfg, r.repeat);
        row.extend([
            r.method.to_string(),
            float(r.tol),
            method_n(&r.method),
            method_k(&r.method),
            float(cfg.z0_jitter),
            float(cfg.fd_step),
            opt_usize(r.forward_nfe),
            opt_usize(r.backward_nfe),
            opt_float(r.rel_error),
            opt_float(r.rdm_nfe_ratio),
            r.status.to_string(),
            millis(r.wall_ms),
        ]);
        t.push(row);
    }
    t
}
