//! Error-bound machinery for adjoint gradients.
//!
//! With `J = df/dz` along the forward trajectory and `mu` the logarithmic
//! 2-norm, the adjoint obeys
//!
//! ```text
//! |a(t)| <= |a(t1)| * exp( int_t^t1 mu[J] )
//! ```
//!
//! and the adjoint computed on an interpolated trajectory deviates from the
//! exact one by at most
//!
//! ```text
//! xi(t) = phi(t) * int_t^t1 |(J~ - J)^T a~| / phi(tau) dtau,   phi(t) = exp( int_t^t1 mu[J] )
//! ```
//!
//! where `J~` and `a~` are the Jacobian and adjoint on the interpolant.
//!
//! ```
//! use nalgebra::dmatrix;
//! use odegrad::diagnostics::log_norm;
//!
//! assert_eq!(log_norm(&dmatrix![-1.0, 0.0; 0.0, -3.0]).unwrap(), -1.0);
//! assert!((log_norm(&dmatrix![0.0, 2.0; 0.0, 0.0]).unwrap() - 1.0).abs() < 1e-12);
//! ```

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

use crate::autodiff::{FieldError, ParamVector, VectorField};
use crate::grad::{self, adjoint_along, GradError, LossSeed, MethodConfig, OdeProblem};
use crate::ode::{DenseSolution, OdeError, SolverConfig, Trajectory};

#[derive(Debug, Error)]
pub enum DiagError {
    #[error("matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("need at least 2 quadrature points, got {0}")]
    TooFewPoints(usize),
    #[error("finite-difference step must be positive, got {0}")]
    BadStep(f64),
    #[error("reference config must be at least as tight as the method config")]
    LooseReference,
    #[error("solution span ({0}, {1}) differs from the problem span")]
    SpanMismatch(f64, f64),
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Ode(#[from] OdeError),
}

/// `mu[A] = lambda_max((A + A^T) / 2)`.
pub fn log_norm(a: &DMatrix<f64>) -> Result<f64, DiagError> {
    if a.nrows() != a.ncols() {
        return Err(DiagError::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(DiagError::NonFinite("matrix entry"));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    Ok(eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// `quad_points` Chebyshev-Lobatto points on `[t0, t1]`, ascending, with
/// both endpoints exact.
pub fn quadrature_grid((t0, t1): (f64, f64), quad_points: usize) -> Result<Vec<f64>, DiagError> {
    if quad_points < 2 {
        return Err(DiagError::TooFewPoints(quad_points));
    }
    let m = (quad_points - 1) as f64;
    Ok((0..quad_points)
        .map(|i| match i {
            0 => t0,
            _ if i + 1 == quad_points => t1,
            _ => {
                let x = -(std::f64::consts::PI * i as f64 / m).cos();
                0.5 * (t0 + t1) + 0.5 * (t1 - t0) * x
            }
        })
        .collect())
}

/// `out[j] = int_{t_j}^{t_last} g` by the trapezoid rule on ascending `t`.
fn integral_to_end(t: &[f64], g: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; t.len()];
    for j in (0..t.len().saturating_sub(1)).rev() {
        out[j] = out[j + 1] + 0.5 * (t[j + 1] - t[j]) * (g[j] + g[j + 1]);
    }
    out
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Samples of the adjoint-norm bound on an ascending quadrature grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointBound {
    pub times: Vec<f64>,
    /// `mu[J(t)]`.
    pub mu: Vec<f64>,
    /// `int_t^t1 mu[J]`.
    pub mu_integral: Vec<f64>,
    /// `|seed| * exp(mu_integral)`.
    pub bound: Vec<f64>,
}

fn check_span(problem: &OdeProblem, span: (f64, f64)) -> Result<(), DiagError> {
    let (a, b) = if span.0 <= span.1 { span } else { (span.1, span.0) };
    if a != problem.span.0 || b != problem.span.1 {
        return Err(DiagError::SpanMismatch(span.0, span.1));
    }
    Ok(())
}

/// Log-norm bound on `|a(t)|` along the forward trajectory `sol`.
pub fn adjoint_norm_bound<T: Trajectory + ?Sized>(
    problem: &OdeProblem,
    sol: &T,
    seed: &LossSeed,
    quad_points: usize,
) -> Result<AdjointBound, DiagError> {
    check_span(problem, sol.span())?;
    let times = quadrature_grid(problem.span, quad_points)?;
    let mut z = vec![0.0; problem.state_dim()];
    let mu = times
        .iter()
        .map(|&t| {
            sol.state_into(t, &mut z)?;
            log_norm(&problem.field.jacobian_state(&z, t)?)
        })
        .collect::<Result<Vec<_>, DiagError>>()?;
    let mu_integral = integral_to_end(&times, &mu);
    let s = seed.norm();
    let bound = mu_integral.iter().map(|i| s * i.exp()).collect();
    Ok(AdjointBound {
        times,
        mu,
        mu_integral,
        bound,
    })
}

/// Samples of the perturbation bound for an adjoint computed on an
/// interpolated trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaBound {
    pub times: Vec<f64>,
    /// `|(J~ - J)^T a~|`.
    pub forcing: Vec<f64>,
    /// `xi(t)`.
    pub bound: Vec<f64>,
    /// `a~(t)` from the backward solve on the interpolant.
    pub adjoint: Vec<Vec<f64>>,
}

/// Bound `xi(t)` on `|a~(t) - a(t)|`, where `a` is the adjoint along
/// `reference` and `a~` the adjoint along `interp`, integrated with
/// `backward_cfg`.
pub fn delta_a_bound<R, I>(
    problem: &OdeProblem,
    reference: &R,
    interp: &I,
    seed: &LossSeed,
    quad_points: usize,
    backward_cfg: &SolverConfig,
) -> Result<DeltaBound, DiagError>
where
    R: Trajectory + ?Sized,
    I: Trajectory + ?Sized,
{
    check_span(problem, reference.span())?;
    check_span(problem, interp.span())?;
    let times = quadrature_grid(problem.span, quad_points)?;
    let d = problem.state_dim();
    let field = &problem.field;
    let adj = adjoint_along(field, interp, seed, backward_cfg)?;
    let (mut z, mut zt) = (vec![0.0; d], vec![0.0; d]);
    let mut mu = Vec::with_capacity(times.len());
    let mut forcing = Vec::with_capacity(times.len());
    let mut adjoint = Vec::with_capacity(times.len());
    for &t in &times {
        reference.state_into(t, &mut z)?;
        interp.state_into(t, &mut zt)?;
        let jac = field.jacobian_state(&z, t)?;
        let jac_t = field.jacobian_state(&zt, t)?;
        let a = DVector::from_column_slice(&adj.eval(t)?[..d]);
        mu.push(log_norm(&jac)?);
        forcing.push(((jac_t - &jac).transpose() * &a).norm());
        adjoint.push(a.as_slice().to_vec());
    }
    let mu_int = integral_to_end(&times, &mu);
    // phi(t) / phi(tau) = exp(mu_int(t) - mu_int(tau)); integrate from the
    // right with the running factor pulled out to avoid overflow.
    let weighted: Vec<f64> = forcing.iter().zip(&mu_int).map(|(r, m)| r * (-m).exp()).collect();
    let inner = integral_to_end(&times, &weighted);
    let bound = inner.iter().zip(&mu_int).map(|(i, m)| i * m.exp()).collect();
    Ok(DeltaBound {
        times,
        forcing,
        bound,
        adjoint,
    })
}

/// Gradient error of a method against a tighter `direct` reference.
#[derive(Debug, Clone)]
pub struct GradientError {
    pub l1: f64,
    pub l2: f64,
    pub method: grad::GradientResult,
    pub reference: grad::GradientResult,
}

/// `|dL/dtheta_method - dL/dtheta_reference|` in the l1 and l2 norms, where
/// the reference is the `direct` method solved with `reference_cfg`.
pub fn gradient_error(
    problem: &OdeProblem,
    method: &MethodConfig,
    seed: &LossSeed,
    reference_cfg: &SolverConfig,
) -> Result<GradientError, DiagError> {
    if reference_cfg.rtol > problem.cfg.rtol || reference_cfg.atol > problem.cfg.atol {
        return Err(DiagError::LooseReference);
    }
    let g = grad::grad(problem, method, seed)?;
    let mut rp = problem.clone();
    rp.cfg = reference_cfg.clone();
    let r = grad::grad(&rp, &MethodConfig::direct(), seed)?;
    Ok(compare(g, r))
}

/// Error of `method` against an already computed reference gradient.
pub fn compare(method: grad::GradientResult, reference: grad::GradientResult) -> GradientError {
    let diff = method
        .dl_dtheta
        .as_slice()
        .iter()
        .zip(reference.dl_dtheta.as_slice())
        .map(|(a, b)| a - b);
    let (l1, l2sq) = diff.fold((0.0, 0.0), |(l1, l2), d| (l1 + d.abs(), l2 + d * d));
    GradientError {
        l1,
        l2: l2sq.sqrt(),
        method,
        reference,
    }
}

/// Central finite differences of `L = seed . z(t1)`.
#[derive(Debug, Clone)]
pub struct FdGradient {
    pub dl_dtheta: ParamVector,
    pub dl_dz0: Vec<f64>,
}

/// Tolerance of the solves inside [`fd_gradient`].
pub const FD_SOLVE_TOL: f64 = 1e-10;

/// Central differences with step `h` of `seed . z(t1)` with respect to every
/// parameter and every initial-state component, through `1e-10` solves.
pub fn fd_gradient(problem: &OdeProblem, seed: &LossSeed, h: f64) -> Result<FdGradient, DiagError> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(DiagError::BadStep(h));
    }
    problem.validate()?;
    if seed.dl_dz1.len() != problem.state_dim() {
        return Err(GradError::SeedLength {
            expected: problem.state_dim(),
            got: seed.dl_dz1.len(),
        }
        .into());
    }
    let cfg = SolverConfig {
        rtol: FD_SOLVE_TOL,
        atol: FD_SOLVE_TOL,
        ..problem.cfg.clone()
    };
    let loss = |field: &VectorField, z0: &[f64]| -> Result<f64, DiagError> {
        let sol = crate::ode::solve(grad::field_rhs(field), z0, problem.span, &cfg)?;
        let l: f64 = sol.final_state().iter().zip(&seed.dl_dz1).map(|(z, s)| z * s).sum();
        if l.is_finite() {
            Ok(l)
        } else {
            Err(DiagError::NonFinite("loss"))
        }
    };
    let theta = problem.field.params().as_slice().to_vec();
    let mut field = problem.field.clone();
    let mut dtheta = vec![0.0; theta.len()];
    let mut work = theta.clone();
    for (i, g) in dtheta.iter_mut().enumerate() {
        work[i] = theta[i] + h;
        field.set_params(&work)?;
        let up = loss(&field, &problem.z0)?;
        work[i] = theta[i] - h;
        field.set_params(&work)?;
        let dn = loss(&field, &problem.z0)?;
        work[i] = theta[i];
        *g = (up - dn) / (2.0 * h);
    }
    field.set_params(&theta)?;
    let mut z0 = problem.z0.clone();
    let mut dz0 = vec![0.0; z0.len()];
    for (i, g) in dz0.iter_mut().enumerate() {
        let base = z0[i];
        z0[i] = base + h;
        let up = loss(&field, &z0)?;
        z0[i] = base - h;
        let dn = loss(&field, &z0)?;
        z0[i] = base;
        *g = (up - dn) / (2.0 * h);
    }
    Ok(FdGradient {
        dl_dtheta: problem.field.params().with_values(dtheta)?,
        dl_dz0: dz0,
    })
}

/// Spectral norm of `v -> (d/dz df/dtheta) v`, estimated by central
/// differences of `df/dtheta` along each state direction with step
/// `1e-4 (1 + |z|)` and 20 power iterations.
pub fn hessian_mixed_norm_estimate(field: &VectorField, z: &[f64], t: f64) -> Result<f64, DiagError> {
    hessian_mixed_norm_with_step(field, z, t, 1e-4 * (1.0 + norm2(z)))
}

/// [`hessian_mixed_norm_estimate`] with an explicit difference step.
pub fn hessian_mixed_norm_with_step(field: &VectorField, z: &[f64], t: f64, eps: f64) -> Result<f64, DiagError> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(DiagError::BadStep(eps));
    }
    let d = field.state_dim();
    let p = field.param_dim();
    let mut l = DMatrix::zeros(d * p, d);
    let mut zp = z.to_vec();
    for j in 0..d {
        zp[j] = z[j] + eps;
        let up = field.jacobian_params(&zp, t)?;
        zp[j] = z[j] - eps;
        let dn = field.jacobian_params(&zp, t)?;
        zp[j] = z[j];
        let col = (up - dn) / (2.0 * eps);
        l.column_mut(j).copy_from_slice(col.as_slice());
    }
    let ltl = l.transpose() * &l;
    let mut v = DVector::from_element(d, 1.0 / (d as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..20 {
        let w = &ltl * &v;
        let n = w.norm();
        if n == 0.0 {
            return Ok(0.0);
        }
        lambda = v.dot(&w);
        v = w / n;
    }
    let lambda = v.dot(&(&ltl * &v)).max(lambda);
    Ok(lambda.max(0.0).sqrt())
}

/// Measured adjoint quantities next to their bounds on one time grid, plus
/// the individually measurable factors of the gradient-error estimate.
#[derive(Debug, Clone)]
pub struct BoundReport {
    pub times: Vec<f64>,
    pub mu_integral: Vec<f64>,
    pub measured_a_norm: Vec<f64>,
    pub a_norm_bound: Vec<f64>,
    pub measured_delta_a: Vec<f64>,
    pub delta_a_bound: Vec<f64>,
    /// Max over the grid of `|z~(t) - z(t)|_inf`.
    pub interp_error_max: f64,
    /// Max over the grid of the spectral norm of `df/dtheta`.
    pub dfdtheta_norm_max: f64,
    /// Max over the grid of the mixed second-derivative estimate.
    pub mixed_hessian_max: f64,
    /// l1 gradient error of the interpolated adjoint, when measured.
    pub measured_e: Option<f64>,
}

impl BoundReport {
    /// Builds a report for an adjoint computed on `interp`, measured against
    /// the adjoint on `reference`. Both backward solves use `backward_cfg`.
    pub fn build<R, I>(
        problem: &OdeProblem,
        reference: &R,
        interp: &I,
        seed: &LossSeed,
        quad_points: usize,
        backward_cfg: &SolverConfig,
    ) -> Result<Self, DiagError>
    where
        R: Trajectory + ?Sized,
        I: Trajectory + ?Sized,
    {
        let d = problem.state_dim();
        let p = problem.param_dim();
        let abound = adjoint_norm_bound(problem, reference, seed, quad_points)?;
        let dbound = delta_a_bound(problem, reference, interp, seed, quad_points, backward_cfg)?;
        let exact = adjoint_along(&problem.field, reference, seed, backward_cfg)?;
        let (mut z, mut zt) = (vec![0.0; d], vec![0.0; d]);
        let mut measured_delta_a = Vec::with_capacity(abound.times.len());
        let mut interp_error_max: f64 = 0.0;
        let mut dfdtheta_norm_max: f64 = 0.0;
        let mut mixed_hessian_max: f64 = 0.0;
        for (&t, at) in abound.times.iter().zip(&dbound.adjoint) {
            let a = exact.eval(t)?;
            let diff: Vec<f64> = at.iter().zip(&a[..d]).map(|(x, y)| x - y).collect();
            measured_delta_a.push(norm2(&diff));
            reference.state_into(t, &mut z)?;
            interp.state_into(t, &mut zt)?;
            for (x, y) in z.iter().zip(&zt) {
                interp_error_max = interp_error_max.max((x - y).abs());
            }
            let jp = problem.field.jacobian_params(&z, t)?;
            let sn = jp.singular_values().iter().copied().fold(0.0, f64::max);
            dfdtheta_norm_max = dfdtheta_norm_max.max(sn);
            mixed_hessian_max = mixed_hessian_max.max(hessian_mixed_norm_estimate(&problem.field, &z, t)?);
        }
        let measured_a_norm = dbound.adjoint.iter().map(|a| norm2(a)).collect();
        let (_, t0) = exact.span();
        let g_exact = &exact.eval(t0)?[d..d + p];
        let adj = adjoint_along(&problem.field, interp, seed, backward_cfg)?;
        let g_interp = &adj.final_state()[d..d + p];
        let e = g_exact.iter().zip(g_interp).map(|(a, b)| (a - b).abs()).sum();
        Ok(Self {
            times: abound.times,
            mu_integral: abound.mu_integral,
            measured_a_norm,
            a_norm_bound: abound.bound,
            measured_delta_a,
            delta_a_bound: dbound.bound,
            interp_error_max,
            dfdtheta_norm_max,
            mixed_hessian_max,
            measured_e: Some(e),
        })
    }

    /// Columns `t, measured_a_norm, a_norm_bound, measured_delta_a, delta_a_bound`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "measured_a_norm", "a_norm_bound", "measured_delta_a", "delta_a_bound"])?;
        for i in 0..self.times.len() {
            wr.write_record(
                [
                    self.times[i],
                    self.measured_a_norm[i],
                    self.a_norm_bound[i],
                    self.measured_delta_a[i],
                    self.delta_a_bound[i],
                ]
                .map(|v| format!("{v:.16e}")),
            )?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// A forward solve as a trajectory, for callers that only hold the problem.
pub fn reference_solution(problem: &OdeProblem, tol: f64) -> Result<DenseSolution, DiagError> {
    Ok(problem.solve_with(&SolverConfig {
        rtol: tol,
        atol: tol,
        ..problem.cfg.clone()
    })?)
}
