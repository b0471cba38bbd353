use std::time::Instant;

use odegrad::diagnostics::compare;
use odegrad::grad::{grad, LossSeed, MethodConfig, OdeProblem};
use odegrad::interp::InterpKind;
use odegrad::ode::SolverConfig;

use super::{echo, irdm_label, opt_usize, par_map, BenchError, CellStatus, ECHO_HEADER};
use crate::config::ExperimentConfig;
use crate::output::{float, millis, opt_float, Table};
use crate::systems::cell_rng;

/// IRDM with one interpolant at one grid size and tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpRow {
    pub repeat: usize,
    pub tol: f64,
    pub n: usize,
    pub kind: InterpKind,
    pub l1_error: Option<f64>,
    pub l2_error: Option<f64>,
    pub forward_nfe: Option<usize>,
    pub backward_nfe: Option<usize>,
    pub wall_ms: f64,
    pub status: CellStatus,
}

/// IRDM gradient error for each interpolant, grid size and tolerance
/// against a `direct` gradient at `reference_tol`.
pub fn exp_interp_compare(cfg: &ExperimentConfig, jobs: usize) -> Result<Vec<InterpRow>, BenchError> {
    let references = par_map(jobs, cfg.repeat, |r| {
        let mut rng = cell_rng(cfg.seed, r as u64);
        let problem = cfg
            .system
            .problem(cfg.hidden, cfg.z0_jitter, cfg.reference_tol, &mut rng)
            .map_err(|e| e.to_string())?;
        let g = grad(&problem, &MethodConfig::direct(), &LossSeed::ones(problem.state_dim()))
            .map_err(|e| format!("reference: {e}"))?;
        Ok::<_, String>((problem, g))
    })?;
    let (nt, nn, nk) = (cfg.tolerances.len(), cfg.grid_sizes.len(), cfg.interpolants.len());
    let per_rep = nt * nn * nk;
    par_map(jobs, cfg.repeat * per_rep, |idx| {
        let r = idx / per_rep;
        let rest = idx % per_rep;
        let tol = cfg.tolerances[rest / (nn * nk)];
        let n = cfg.grid_sizes[(rest / nk) % nn];
        let kind = cfg.interpolants[rest % nk];
        let start = Instant::now();
        let mut out = InterpRow {
            repeat: r,
            tol,
            n,
            kind,
            l1_error: None,
            l2_error: None,
            forward_nfe: None,
            backward_nfe: None,
            wall_ms: 0.0,
            status: CellStatus::Ok,
        };
        match &references[r] {
            Err(e) => out.status = CellStatus::Failed(e.clone()),
            Ok((problem, g_ref)) => {
                let p = OdeProblem {
                    cfg: SolverConfig::with_tol(tol),
                    ..problem.clone()
                };
                match grad(&p, &MethodConfig::irdm_with(n, kind), &LossSeed::ones(p.state_dim())) {
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
    })
}

pub fn table(cfg: &ExperimentConfig, rows: &[InterpRow]) -> Table {
    let mut header = ECHO_HEADER.to_vec();
    header.extend([
        "method",
        "interp",
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
    for r in rows {
        let mut row = echo(cfg, r.repeat);
        row.extend([
            irdm_label(r.n, r.kind),
            r.kind.to_string(),
            float(r.tol),
            r.n.to_string(),
            float(cfg.reference_tol),
            float(cfg.z0_jitter),
            opt_float(r.l1_error),
            opt_float(r.l2_error),
            opt_usize(r.forward_nfe),
            opt_usize(r.backward_nfe),
            r.status.to_string(),
            millis(r.wall_ms),
        ]);
        t.push(row);
    }
    t
}
