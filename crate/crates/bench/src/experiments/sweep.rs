use std::time::Instant;

use odegrad::diagnostics::compare;
use odegrad::grad::{grad, GradientResult, LossSeed, MethodConfig};
use odegrad::ode::SolverConfig;

use super::{echo, irdm_label, par_map, BenchError, CellStatus, ECHO_HEADER};
use crate::config::ExperimentConfig;
use crate::output::{float, millis, opt_float, Table};
use crate::systems::cell_rng;

/// One `(tol, N)` cell of the tolerance by grid-size sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub repeat: usize,
    pub tol: f64,
    pub n: usize,
    pub l1_error: Option<f64>,
    pub l2_error: Option<f64>,
    pub forward_nfe: Option<usize>,
    pub backward_nfe: Option<usize>,
    pub wall_ms: f64,
    pub status: CellStatus,
}

/// IRDM gradient error against a `direct` gradient solved at
/// `reference_tol`, for every tolerance and grid size in `cfg`. The loss is
/// the sum of the final state components. Repeat `r` draws its initial
/// state jitter from stream `r`.
pub fn exp_tol_grid_sweep(cfg: &ExperimentConfig, jobs: usize) -> Result<Vec<SweepCell>, BenchError> {
    let references = par_map(jobs, cfg.repeat, |r| reference(cfg, r))?;
    let per_rep = cfg.tolerances.len() * cfg.grid_sizes.len();
    par_map(jobs, cfg.repeat * per_rep, |idx| {
        let r = idx / per_rep;
        let tol = cfg.tolerances[(idx % per_rep) / cfg.grid_sizes.len()];
        let n = cfg.grid_sizes[idx % cfg.grid_sizes.len()];
        cell(r, tol, n, &references[r])
    })
}

type Reference = Result<(odegrad::grad::OdeProblem, GradientResult), String>;

fn reference(cfg: &ExperimentConfig, r: usize) -> Reference {
    let mut rng = cell_rng(cfg.seed, r as u64);
    let problem = cfg
        .system
        .problem(cfg.hidden, cfg.z0_jitter, cfg.reference_tol, &mut rng)
        .map_err(|e| e.to_string())?;
    let seed = LossSeed::ones(problem.state_dim());
    let g = grad(&problem, &MethodConfig::direct(), &seed).map_err(|e| format!("reference: {e}"))?;
    Ok((problem, g))
}

fn cell(repeat: usize, tol: f64, n: usize, reference: &Reference) -> SweepCell {
    let start = Instant::now();
    let mut out = SweepCell {
        repeat,
        tol,
        n,
        l1_error: None,
        l2_error: None,
        forward_nfe: None,
        backward_nfe: None,
        wall_ms: 0.0,
        status: CellStatus::Ok,
    };
    match reference {
        Err(e) => out.status = CellStatus::Failed(e.clone()),
        Ok((problem, g_ref)) => {
            let mut p = problem.clone();
            p.cfg = SolverConfig::with_tol(tol);
            let seed = LossSeed::ones(p.state_dim());
            match grad(&p, &MethodConfig::irdm(n), &seed) {
                Ok(g) => {
                    out.forward_nfe = Some(g.stats.forward_nfe);
                    out.backward_nfe = Some(g.stats.backward_nfe);
                    let e = compare(g, g_ref.clone());
                    out.l1_error = Some(e.l1);
                    out.l2_error = Some(e.l2);
                }
                Err(e) => out.status = CellStatus::Failed(e.to_string()),
            }
        }
    }
    out.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    out
}

pub fn table(cfg: &ExperimentConfig, cells: &[SweepCell]) -> Table {
    let mut header = ECHO_HEADER.to_vec();
    header.extend([
        "method",
        "tol",
        "n",
        "reference_tol",
        "z0_jitter",
        "l1_error",
        "l2_error",
        "forward_nfe",
        "backward_nfe",
        "status",
        "wall_ms",
    ]);
    let mut t = Table::new(&header);
    for c in cells {
        let mut row = echo(cfg, c.repeat);
        row.extend([
            irdm_label(c.n, odegrad::interp::InterpKind::Bli),
            float(c.tol),
            c.n.to_string(),
            float(cfg.reference_tol),
            float(cfg.z0_jitter),
            opt_float(c.l1_error),
            opt_float(c.l2_error),
            super::opt_usize(c.forward_nfe),
            super::opt_usize(c.backward_nfe),
            c.status.to_string(),
            millis(c.wall_ms),
        ]);
        t.push(row);
    }
    t
}
