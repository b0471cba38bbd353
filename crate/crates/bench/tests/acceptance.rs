//! Acceptance suite. Prints one line per criterion and exits non-zero if
//! any criterion fails. Every tolerance is a named constant below.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use nalgebra::dmatrix;
use odegrad::autodiff::{Architecture, VectorField};
use odegrad::diagnostics::{fd_gradient, log_norm, reference_solution, BoundReport};
use odegrad::grad::{grad, LossSeed, MethodConfig, OdeProblem};
use odegrad::interp::{interp_error, BaryInterpolant, ChebyshevGrid, InterpKind};
use odegrad::ode::{solve_fixed, SolverConfig};
use odegrad_bench::experiments::{exp_interp_compare, exp_tol_grid_sweep, rel_linf};
use odegrad_bench::output::TIMING_COLUMNS;
use odegrad_bench::{run, ExperimentConfig, ExperimentId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FD_REL_TOL: f64 = 1e-4;
const FD_FLOOR: f64 = 1e-8;
const FD_STEP: f64 = 1e-5;
const ORACLE_SOLVE_TOL: f64 = 1e-10;
const ORACLE_BUDGET: Duration = Duration::from_secs(60);
const MAX_PARAMS: usize = 100;

const ANALYTIC_TOL: f64 = 1e-5;
const ANALYTIC_SOLVE_TOL: f64 = 1e-8;

const POLY_REL_TOL: f64 = 1e-12;
const UNITY_TOL: f64 = 1e-13;
const DECAY_RATIO: f64 = 0.5;
const DECAY_SPAN: (f64, f64) = (0.0, 4.0);

const FIXED_ORDER: f64 = 4.8;
const DENSE_ORDER: f64 = 3.8;

const SWEEP_BUDGET: Duration = Duration::from_secs(300);

const BOUND_SLACK: f64 = 1.1;
const BOUND_POINTS: usize = 101;
const BOUND_GRID: usize = 4;

const LOG_NORM_TOL: f64 = 1e-12;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("gradient correctness vs finite differences", gradient_correctness),
        ("analytic exactness on dz/dt = theta z", analytic_exactness),
        ("barycentric interpolation properties", bli_properties),
        ("solver convergence order", solver_order),
        ("tolerance trend and grid-size dip", sweep_trend),
        ("IRDM backward NFE below RDM on the collapsing system", collapse_nfe),
        ("adjoint and perturbation bounds dominate", bound_dominance),
        ("log_norm unit values", log_norm_values),
        ("backward dimensions and stored-state ordering", structural_accounting),
        ("BLI beats piecewise-linear at N = 8", interp_comparison),
        ("tol_grid_sweep CSV reproducibility", reproducibility),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("[PASS] {:>2} {name}: {detail} ({secs:.2}s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {:>2} {name}: {detail} ({secs:.2}s)", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn mlp_problem(seed: u64, tol: f64) -> OdeProblem {
    let field = VectorField::new(Architecture::tanh_mlp(4, 8), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let z0 = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
    OdeProblem::new(field, z0, (0.0, 1.0), SolverConfig::with_tol(tol)).unwrap()
}

fn all_methods() -> Vec<MethodConfig> {
    vec![
        MethodConfig::direct(),
        MethodConfig::rdm(),
        MethodConfig::irdm(16),
        MethodConfig::checkpoint(8),
    ]
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for s in 0..5 {
        let p = mlp_problem(s, ORACLE_SOLVE_TOL);
        ensure(p.param_dim() <= MAX_PARAMS, || format!("{} params", p.param_dim()))?;
        let seed = LossSeed::ones(p.state_dim());
        let fd = fd_gradient(&p, &seed, FD_STEP).map_err(|e| e.to_string())?;
        for m in all_methods() {
            let g = grad(&p, &m, &seed).map_err(|e| format!("seed {s} {m}: {e}"))?;
            let et = rel_linf(g.dl_dtheta.as_slice(), fd.dl_dtheta.as_slice(), FD_FLOOR);
            let ez = rel_linf(&g.dl_dz0, &fd.dl_dz0, FD_FLOOR);
            ensure(et <= FD_REL_TOL && ez <= FD_REL_TOL, || {
                format!("seed {s} {m}: theta {et:.2e}, z0 {ez:.2e}")
            })?;
            worst = worst.max(et).max(ez);
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed <= ORACLE_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!("worst relative error {worst:.2e} <= {FD_REL_TOL:.0e}"))
}

fn analytic_exactness() -> Outcome {
    let field = VectorField::with_params(Architecture::linear(1), &[1.0]).unwrap();
    let p = OdeProblem::new(field, vec![1.0], (0.0, 1.0), SolverConfig::with_tol(ANALYTIC_SOLVE_TOL)).unwrap();
    let mut worst: f64 = 0.0;
    for m in all_methods() {
        let g = grad(&p, &m, &LossSeed::ones(1)).map_err(|e| e.to_string())?;
        let err = (g.dl_dtheta.as_slice()[0] - std::f64::consts::E).abs();
        ensure(err <= ANALYTIC_TOL, || format!("{m}: error {err:.2e}"))?;
        worst = worst.max(err);
    }
    Ok(format!("max |dL/dtheta - e| = {worst:.2e}"))
}

fn bli_properties() -> Outcome {
    let span = (-0.5, 2.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_poly: f64 = 0.0;
    for n in [1usize, 4, 8, 16] {
        let coeffs: Vec<f64> = (0..=n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let poly = |t: f64| coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c);
        let grid = ChebyshevGrid::new(n, span).unwrap();
        let values = grid.nodes().iter().map(|&t| vec![poly(t)]).collect();
        let b = BaryInterpolant::new(grid, values).unwrap();
        let (mut err, mut scale) = (0.0f64, 0.0f64);
        for i in 0..=1000 {
            let t = span.0 + (span.1 - span.0) * i as f64 / 1000.0;
            err = err.max((b.eval(t).unwrap()[0] - poly(t)).abs());
            scale = scale.max(poly(t).abs());
        }
        let rel = err / scale;
        ensure(rel <= POLY_REL_TOL, || format!("degree {n} reproduction {rel:.2e}"))?;
        worst_poly = worst_poly.max(rel);
    }

    // Interpolating the unit vectors gives the Lagrange basis itself.
    let mut worst_unity: f64 = 0.0;
    for n in [1usize, 4, 8, 16, 32] {
        let grid = ChebyshevGrid::new(n, span).unwrap();
        let values = (0..=n)
            .map(|j| (0..=n).map(|k| if j == k { 1.0 } else { 0.0 }).collect())
            .collect();
        let b = BaryInterpolant::new(grid, values).unwrap();
        for i in 0..=997 {
            let t = span.0 + (span.1 - span.0) * i as f64 / 997.0;
            let sum: f64 = b.eval(t).unwrap().iter().sum();
            worst_unity = worst_unity.max((sum - 1.0).abs());
        }
    }
    ensure(worst_unity <= UNITY_TOL, || format!("partition of unity off by {worst_unity:.2e}"))?;

    let errs: Vec<f64> = (4..=14)
        .map(|n| {
            let grid = ChebyshevGrid::new(n, DECAY_SPAN).unwrap();
            let values = grid.nodes().iter().map(|&t| vec![t.exp()]).collect();
            let b = BaryInterpolant::new(grid, values).unwrap();
            interp_error(&b, |t| vec![t.exp()], 2001).unwrap()
        })
        .collect();
    let max_ratio = errs.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max);
    ensure(max_ratio < DECAY_RATIO, || format!("e^t error ratios up to {max_ratio:.3}: {errs:?}"))?;
    Ok(format!(
        "reproduction {worst_poly:.1e}, unity {worst_unity:.1e}, largest e^t error ratio {max_ratio:.3}"
    ))
}

fn exp_rhs(_t: f64, z: &[f64], dz: &mut [f64]) -> Result<(), odegrad::ode::RhsError> {
    dz[0] = z[0];
    Ok(())
}

fn solver_order() -> Outcome {
    let ns = [8usize, 16, 32, 64];
    let mut end_errs = Vec::new();
    let mut dense_errs = Vec::new();
    for &n in &ns {
        let sol = solve_fixed(exp_rhs, &[1.0], (0.0, 1.0), n).map_err(|e| e.to_string())?;
        end_errs.push((sol.final_state()[0] - 1f64.exp()).abs());
        let mut worst: f64 = 0.0;
        for k in 0..n {
            for frac in [0.25, 0.5, 0.75] {
                let t = (k as f64 + frac) / n as f64;
                worst = worst.max((sol.eval(t).unwrap()[0] - t.exp()).abs());
            }
        }
        dense_errs.push(worst);
    }
    let order = |e: &[f64]| e.windows(2).map(|w| (w[0] / w[1]).log2()).fold(f64::INFINITY, f64::min);
    let (fixed, dense) = (order(&end_errs), order(&dense_errs));
    ensure(fixed >= FIXED_ORDER, || format!("endpoint order {fixed:.2} from {end_errs:?}"))?;
    ensure(dense >= DENSE_ORDER, || format!("dense order {dense:.2} from {dense_errs:?}"))?;
    Ok(format!("endpoint order {fixed:.2}, dense order {dense:.2}"))
}

fn sweep_trend() -> Outcome {
    let start = Instant::now();
    let cfg = ExperimentConfig::defaults(ExperimentId::TolGridSweep);
    let cells = exp_tol_grid_sweep(&cfg, 0).map_err(|e| e.to_string())?;
    let err = |tol: f64, n: usize| -> Result<f64, String> {
        let c = cells
            .iter()
            .find(|c| c.tol == tol && c.n == n)
            .ok_or(format!("no cell tol {tol:e} N {n}"))?;
        c.l1_error.ok_or(format!("cell tol {tol:e} N {n}: {}", c.status))
    };
    for n in [4usize, 8, 16, 32] {
        let col = [err(1e-3, n)?, err(1e-5, n)?, err(1e-7, n)?];
        ensure(col[0] > col[1] && col[1] > col[2], || format!("N {n}: {col:?} not decreasing"))?;
    }
    let (e4, e64) = (err(1e-3, 4)?, err(1e-3, 64)?);
    let mut best = (0, f64::INFINITY);
    for n in [8usize, 16, 32] {
        let e = err(1e-3, n)?;
        if e < best.1 {
            best = (n, e);
        }
    }
    ensure(best.1 < e4 && best.1 < e64, || {
        format!("tol 1e-3 row is monotone: N4 {e4:.3e}, best mid {best:?}, N64 {e64:.3e}")
    })?;
    let elapsed = start.elapsed();
    ensure(elapsed <= SWEEP_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "columns decrease for N = 4..32; at tol 1e-3 N = {} gives {:.3e} vs {e4:.3e} (N 4) and {e64:.3e} (N 64)",
        best.0, best.1
    ))
}

fn read_csv(path: &Path) -> Result<(csv::StringRecord, Vec<csv::StringRecord>), String> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| e.to_string())?;
    let header = rd.headers().map_err(|e| e.to_string())?.clone();
    let rows = rd.records().collect::<Result<Vec<_>, _>>().map_err(|e| e.to_string())?;
    Ok((header, rows))
}

fn collapse_nfe() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = ExperimentConfig::defaults(ExperimentId::CollapseNfe);
    cfg.out_dir = dir.path().to_path_buf();
    let report = run(&cfg, 0).map_err(|e| e.to_string())?;
    ensure(report.failures == 0, || format!("{} failed cells", report.failures))?;
    let (header, rows) = read_csv(&report.path)?;
    let col = |name: &str| header.iter().position(|h| h == name).ok_or(format!("no column {name}"));
    let (c_rep, c_tol, c_method, c_bnfe, c_ratio) =
        (col("repeat")?, col("tol")?, col("method")?, col("backward_nfe")?, col("rdm_nfe_ratio")?);
    let mut ratios = Vec::new();
    for rep in 0..3 {
        for tol in [1e-5, 1e-7] {
            let group: Vec<_> = rows
                .iter()
                .filter(|r| r[c_rep] == rep.to_string() && r[c_tol].parse::<f64>() == Ok(tol))
                .collect();
            let bnfe = |prefix: &str| -> Result<usize, String> {
                let r = group
                    .iter()
                    .find(|r| r[c_method].starts_with(prefix))
                    .ok_or(format!("repeat {rep} tol {tol:e}: no {prefix} row"))?;
                r[c_bnfe].parse().map_err(|_| format!("repeat {rep} tol {tol:e}: {prefix} has no NFE"))
            };
            let (rdm, irdm) = (bnfe("rdm")?, bnfe("irdm")?);
            ensure(irdm < rdm, || format!("repeat {rep} tol {tol:e}: IRDM {irdm} vs RDM {rdm}"))?;
            let ratio: f64 = group
                .iter()
                .find(|r| r[c_method].starts_with("irdm"))
                .and_then(|r| r[c_ratio].parse().ok())
                .ok_or("ratio not recorded")?;
            ratios.push(ratio);
        }
    }
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().copied().fold(0.0, f64::max);
    Ok(format!("6/6 cells, RDM/IRDM backward NFE ratio {lo:.3}..{hi:.3}"))
}

fn bound_dominance() -> Outcome {
    let mut worst_a: f64 = 0.0;
    let mut worst_d: f64 = 0.0;
    for s in 0..5 {
        let p = mlp_problem(s, ORACLE_SOLVE_TOL);
        let seed = LossSeed::ones(p.state_dim());
        let reference = reference_solution(&p, ORACLE_SOLVE_TOL).map_err(|e| e.to_string())?;
        let forward = p.solve().map_err(|e| e.to_string())?;
        let grid = ChebyshevGrid::new(BOUND_GRID, p.span).unwrap();
        let values = grid.nodes().iter().map(|&t| forward.eval(t).unwrap()).collect();
        let interp = BaryInterpolant::new(grid, values).unwrap();
        let backward = SolverConfig::with_tol(ORACLE_SOLVE_TOL);
        let r = BoundReport::build(&p, &reference, &interp, &seed, BOUND_POINTS, &backward)
            .map_err(|e| e.to_string())?;
        ensure(r.times.len() == BOUND_POINTS, || format!("{} sample times", r.times.len()))?;
        for i in 0..r.times.len() {
            let t = r.times[i];
            let (ma, ba) = (r.measured_a_norm[i], r.a_norm_bound[i]);
            let (md, bd) = (r.measured_delta_a[i], r.delta_a_bound[i]);
            ensure(ma <= BOUND_SLACK * ba, || format!("seed {s} t {t:.4}: |a| {ma:.3e} > bound {ba:.3e}"))?;
            ensure(md <= BOUND_SLACK * bd, || format!("seed {s} t {t:.4}: |da| {md:.3e} > bound {bd:.3e}"))?;
            if ba > 0.0 {
                worst_a = worst_a.max(ma / ba);
            }
            if bd > 0.0 {
                worst_d = worst_d.max(md / bd);
            }
        }
    }
    Ok(format!(
        "largest measured/bound: |a| {worst_a:.3}, |da| {worst_d:.3} (limit {BOUND_SLACK})"
    ))
}

fn log_norm_values() -> Outcome {
    let cases = [
        (dmatrix![-1.0, 0.0; 0.0, -3.0], -1.0),
        (dmatrix![0.0, 2.0; -2.0, 0.0], 0.0),
        (dmatrix![0.0, 2.0; 0.0, 0.0], 1.0),
    ];
    for (m, want) in cases {
        let got = log_norm(&m).map_err(|e| e.to_string())?;
        ensure((got - want).abs() <= LOG_NORM_TOL, || format!("{m}: {got} vs {want}"))?;
    }
    Ok("-1, 0, 1 exact".into())
}

fn structural_accounting() -> Outcome {
    let p = mlp_problem(0, 1e-8);
    let (d, np) = (p.state_dim(), p.param_dim());
    let seed = LossSeed::ones(d);
    let run = |m: MethodConfig| grad(&p, &m, &seed).map(|g| g.stats).map_err(|e| format!("{m}: {e}"));
    let n = 16;
    let irdm = run(MethodConfig::irdm(n))?;
    let rdm = run(MethodConfig::rdm())?;
    let ckpt = run(MethodConfig::checkpoint(2 * n))?;
    let direct = run(MethodConfig::direct())?;
    ensure(irdm.backward_dim == d + np, || format!("IRDM dim {}", irdm.backward_dim))?;
    ensure(rdm.backward_dim == 2 * d + np, || format!("RDM dim {}", rdm.backward_dim))?;
    let peaks = [
        rdm.peak_stored_states,
        irdm.peak_stored_states,
        ckpt.peak_stored_states,
        direct.peak_stored_states,
    ];
    ensure(peaks.windows(2).all(|w| w[0] <= w[1]), || format!("peaks {peaks:?}"))?;
    Ok(format!(
        "dims {} / {}, peak stored states rdm {} <= irdm:{n} {} <= checkpoint:{} {} <= direct {}",
        irdm.backward_dim,
        rdm.backward_dim,
        peaks[0],
        peaks[1],
        2 * n,
        peaks[2],
        peaks[3]
    ))
}

fn interp_comparison() -> Outcome {
    let mut cfg = ExperimentConfig::defaults(ExperimentId::InterpCompare);
    cfg.grid_sizes = vec![8];
    cfg.interpolants = vec![InterpKind::Bli, InterpKind::Linear];
    let rows = exp_interp_compare(&cfg, 0).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for rep in 0..cfg.repeat {
        let err = |kind| {
            rows.iter()
                .find(|r| r.repeat == rep && r.kind == kind)
                .and_then(|r| r.l1_error)
                .ok_or(format!("repeat {rep} {kind}: no error"))
        };
        let (bli, lin) = (err(InterpKind::Bli)?, err(InterpKind::Linear)?);
        ensure(bli <= lin, || format!("repeat {rep}: bli {bli:.3e} > linear {lin:.3e}"))?;
        worst = worst.max(bli / lin);
    }
    Ok(format!("{} seeds, largest bli/linear error ratio {worst:.2e}", cfg.repeat))
}

fn strip_timing(path: &Path) -> Result<Vec<Vec<String>>, String> {
    let (header, rows) = read_csv(path)?;
    let keep: Vec<usize> = (0..header.len())
        .filter(|&i| !TIMING_COLUMNS.contains(&&header[i]))
        .collect();
    let mut out = vec![keep.iter().map(|&i| header[i].to_string()).collect()];
    out.extend(rows.iter().map(|r| keep.iter().map(|&i| r[i].to_string()).collect()));
    Ok(out)
}

fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = dir.path().join("sweep.cfg");
    std::fs::write(
        &config,
        "experiment = tol_grid_sweep\ntolerances = 1e-3, 1e-5\ngrid_sizes = 4, 8, 16\nz0_jitter = 0.05\nrepeat = 2\n",
    )
    .map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for (i, jobs) in ["1", "4"].into_iter().enumerate() {
        let out = dir.path().join(format!("run{i}"));
        let status = Command::new(env!("CARGO_BIN_EXE_bench"))
            .args(["tol_grid_sweep", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .args(["--seed", "11", "--jobs", jobs])
            .status()
            .map_err(|e| e.to_string())?;
        ensure(status.success(), || format!("run {i} exited with {status}"))?;
        outputs.push(out.join("tol_grid_sweep.csv"));
    }
    let (a, b) = (strip_timing(&outputs[0])?, strip_timing(&outputs[1])?);
    ensure(a.len() == 13, || format!("{} lines", a.len()))?;
    ensure(a == b, || "CSVs differ outside timing columns".into())?;
    Ok(format!("{} rows identical across --jobs 1 and --jobs 4", a.len() - 1))
}
