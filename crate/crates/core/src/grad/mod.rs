//! Gradients of a loss on `z(t1)` through a neural ODE solve.
//!
//! Four strategies share one interface:
//!
//! - [`Method::Direct`] differentiates the accepted Runge-Kutta steps
//!   exactly, keeping every stage tape from the forward solve.
//! - [`Method::Rdm`] integrates the adjoint, the state and the parameter
//!   gradient backward together, storing only `z(t1)`.
//! - [`Method::Irdm`] stores the state at interpolation nodes during the
//!   forward solve and integrates only the adjoint and parameter gradient
//!   backward, reading `z(t)` from the interpolant.
//! - [`Method::Checkpoint`] stores `K` uniformly spaced states and re-solves
//!   each interval before differentiating it like `Direct`.
//!
//! ```
//! use odegrad::autodiff::{Architecture, VectorField};
//! use odegrad::grad::{grad, LossSeed, MethodConfig, OdeProblem};
//! use odegrad::ode::SolverConfig;
//!
//! // dz/dt = theta z with theta = 1 and L = z(1): dL/dtheta = e.
//! let field = VectorField::with_params(Architecture::linear(1), &[1.0]).unwrap();
//! let problem = OdeProblem::new(field, vec![1.0], (0.0, 1.0), SolverConfig::with_tol(1e-8)).unwrap();
//! let seed = LossSeed::new(vec![1.0]);
//! for method in [MethodConfig::direct(), MethodConfig::irdm(16)] {
//!     let g = grad(&problem, &method, &seed).unwrap();
//!     assert!((g.dl_dtheta.as_slice()[0] - std::f64::consts::E).abs() < 1e-5);
//! }
//! ```

mod train;

pub use train::{
    mse_loss_grad, train, Dataset, EpochRecord, Optimizer, TrainTrace,
};

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::autodiff::{FieldError, ParamVector, Tape, VectorField};
use crate::interp::{BaryInterpolant, ChebyshevGrid, InterpError, InterpKind, PiecewiseInterpolant};
use crate::ode::tableau::{A, B};
use crate::ode::{
    self, integrate, DenseSolution, OdeError, RhsError, SolveStats, SolverConfig, StepMode, Trajectory,
};

#[derive(Debug, Error)]
pub enum GradError {
    #[error("invalid problem: {0}")]
    Problem(String),
    #[error("invalid method config: {0}")]
    Method(String),
    #[error("seed has length {got}, state dimension is {expected}")]
    SeedLength { expected: usize, got: usize },
    #[error("forward artifacts were produced by `{found}`, not `{expected}`")]
    ArtifactMismatch {
        expected: &'static str,
        found: &'static str,
    },
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Interp(#[from] InterpError),
}

/// `dz/dt = f(z, t, theta)`, `z(t0) = z0`, solved over `span` with `cfg`.
#[derive(Debug, Clone)]
pub struct OdeProblem {
    pub field: VectorField,
    pub z0: Vec<f64>,
    pub span: (f64, f64),
    pub cfg: SolverConfig,
}

impl OdeProblem {
    pub fn new(field: VectorField, z0: Vec<f64>, span: (f64, f64), cfg: SolverConfig) -> Result<Self, GradError> {
        let p = Self { field, z0, span, cfg };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), GradError> {
        if self.z0.len() != self.field.state_dim() {
            return Err(GradError::Problem(format!(
                "z0 has length {}, field state dimension is {}",
                self.z0.len(),
                self.field.state_dim()
            )));
        }
        let (t0, t1) = self.span;
        if !(t0.is_finite() && t1.is_finite() && t0 < t1) {
            return Err(GradError::Problem(format!("span ({t0}, {t1}) must satisfy t0 < t1")));
        }
        self.cfg.validate()?;
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.field.state_dim()
    }

    pub fn param_dim(&self) -> usize {
        self.field.param_dim()
    }

    /// Plain dense forward solve.
    pub fn solve(&self) -> Result<DenseSolution, GradError> {
        Ok(ode::solve(field_rhs(&self.field), &self.z0, self.span, &self.cfg)?)
    }

    /// Dense forward solve with a different config.
    pub fn solve_with(&self, cfg: &SolverConfig) -> Result<DenseSolution, GradError> {
        Ok(ode::solve(field_rhs(&self.field), &self.z0, self.span, cfg)?)
    }
}

/// `dL/dz(t1)`, the terminal condition of the adjoint.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSeed {
    pub dl_dz1: Vec<f64>,
}

impl LossSeed {
    pub fn new(dl_dz1: Vec<f64>) -> Self {
        Self { dl_dz1 }
    }

    pub fn zeros(dim: usize) -> Self {
        Self::new(vec![0.0; dim])
    }

    /// Seed of `L = sum_i z_i(t1)`.
    pub fn ones(dim: usize) -> Self {
        Self::new(vec![1.0; dim])
    }

    pub fn norm(&self) -> f64 {
        self.dl_dz1.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn check(&self, dim: usize) -> Result<(), GradError> {
        if self.dl_dz1.len() != dim {
            return Err(GradError::SeedLength {
                expected: dim,
                got: self.dl_dz1.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Direct,
    Rdm,
    Irdm { n: usize, kind: InterpKind },
    Checkpoint { k: usize },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Direct => "direct",
            Method::Rdm => "rdm",
            Method::Irdm { .. } => "irdm",
            Method::Checkpoint { .. } => "checkpoint",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A method plus an optional tolerance override for its backward solve.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodConfig {
    pub method: Method,
    /// Config for the backward solve of `rdm` and `irdm`, and for the
    /// interval re-solves of `checkpoint`; the problem's config when absent.
    pub backward_cfg: Option<SolverConfig>,
}

impl MethodConfig {
    pub const DEFAULT_CHECKPOINTS: usize = 8;

    pub fn new(method: Method) -> Self {
        Self {
            method,
            backward_cfg: None,
        }
    }

    pub fn direct() -> Self {
        Self::new(Method::Direct)
    }

    pub fn rdm() -> Self {
        Self::new(Method::Rdm)
    }

    pub fn irdm(n: usize) -> Self {
        Self::irdm_with(n, InterpKind::Bli)
    }

    pub fn irdm_with(n: usize, kind: InterpKind) -> Self {
        Self::new(Method::Irdm { n, kind })
    }

    pub fn checkpoint(k: usize) -> Self {
        Self::new(Method::Checkpoint { k })
    }

    pub fn with_backward_cfg(mut self, cfg: SolverConfig) -> Self {
        self.backward_cfg = Some(cfg);
        self
    }

    pub fn validate(&self) -> Result<(), GradError> {
        match self.method {
            Method::Irdm { n, .. } if n < 1 => Err(GradError::Method("irdm needs N >= 1".into())),
            Method::Checkpoint { k } if k < 1 => Err(GradError::Method("checkpoint needs K >= 1".into())),
            _ => {
                if let Some(cfg) = &self.backward_cfg {
                    cfg.validate()?;
                }
                Ok(())
            }
        }
    }

    fn backward<'a>(&'a self, problem: &'a OdeProblem) -> &'a SolverConfig {
        self.backward_cfg.as_ref().unwrap_or(&problem.cfg)
    }
}

/// Parses `direct`, `rdm`, `checkpoint`, `checkpoint:K`, `irdm`, `irdm:N`
/// or `irdm:N:KIND`. Missing sizes default to `N = 16`, `K = 8`.
impl FromStr for MethodConfig {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.trim().split(':');
        let name = parts.next().unwrap_or("");
        let num = |p: Option<&str>, default: usize| -> Result<usize, String> {
            p.map_or(Ok(default), |v| v.parse().map_err(|_| format!("bad size `{v}` in `{s}`")))
        };
        let cfg = match name {
            "direct" => MethodConfig::direct(),
            "rdm" => MethodConfig::rdm(),
            "irdm" => {
                let n = num(parts.next(), 16)?;
                let kind = parts.next().map_or(Ok(InterpKind::Bli), str::parse)?;
                MethodConfig::irdm_with(n, kind)
            }
            "checkpoint" => MethodConfig::checkpoint(num(parts.next(), Self::DEFAULT_CHECKPOINTS)?),
            other => return Err(format!("unknown method `{other}`")),
        };
        if parts.next().is_some() {
            return Err(format!("trailing fields in `{s}`"));
        }
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

impl fmt::Display for MethodConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.method {
            Method::Direct | Method::Rdm => write!(f, "{}", self.method),
            Method::Irdm { n, kind } => write!(f, "irdm:{n}:{kind}"),
            Method::Checkpoint { k } => write!(f, "checkpoint:{k}"),
        }
    }
}

/// Stage tapes of one accepted step, in stage order.
#[derive(Debug, Clone)]
pub struct TapedStep {
    h: f64,
    tapes: Vec<Tape>,
}

impl TapedStep {
    pub fn h(&self) -> f64 {
        self.h
    }
}

/// Interpolant of the forward trajectory used by `irdm`.
#[derive(Debug, Clone)]
pub enum StateInterpolant {
    Bary(BaryInterpolant),
    Piecewise(PiecewiseInterpolant),
}

impl StateInterpolant {
    /// Number of stored states.
    pub fn node_count(&self) -> usize {
        match self {
            StateInterpolant::Bary(b) => b.grid().n() + 1,
            StateInterpolant::Piecewise(p) => p.times().len(),
        }
    }
}

impl Trajectory for StateInterpolant {
    fn span(&self) -> (f64, f64) {
        match self {
            StateInterpolant::Bary(b) => Trajectory::span(b),
            StateInterpolant::Piecewise(p) => Trajectory::span(p),
        }
    }

    fn state_dim(&self) -> usize {
        match self {
            StateInterpolant::Bary(b) => Trajectory::state_dim(b),
            StateInterpolant::Piecewise(p) => Trajectory::state_dim(p),
        }
    }

    fn state_into(&self, t: f64, out: &mut [f64]) -> Result<(), OdeError> {
        match self {
            StateInterpolant::Bary(b) => b.state_into(t, out),
            StateInterpolant::Piecewise(p) => p.state_into(t, out),
        }
    }
}

/// What a forward pass keeps for its backward pass.
#[derive(Debug, Clone)]
pub enum ForwardArtifacts {
    Direct { steps: Vec<TapedStep> },
    Rdm,
    Irdm { interp: StateInterpolant },
    Checkpoint { times: Vec<f64>, states: Vec<Vec<f64>> },
}

impl ForwardArtifacts {
    fn name(&self) -> &'static str {
        match self {
            ForwardArtifacts::Direct { .. } => "direct",
            ForwardArtifacts::Rdm => "rdm",
            ForwardArtifacts::Irdm { .. } => "irdm",
            ForwardArtifacts::Checkpoint { .. } => "checkpoint",
        }
    }

    /// Number of states (including RK stage inputs) held for the backward pass.
    pub fn stored_states(&self) -> usize {
        match self {
            ForwardArtifacts::Direct { steps } => steps.iter().map(|s| s.tapes.len()).sum(),
            ForwardArtifacts::Rdm => 1,
            ForwardArtifacts::Irdm { interp } => interp.node_count(),
            ForwardArtifacts::Checkpoint { states, .. } => states.len(),
        }
    }
}

/// Output of [`forward`].
#[derive(Debug, Clone)]
pub struct Forward {
    pub z1: Vec<f64>,
    pub artifacts: ForwardArtifacts,
    pub solve_stats: SolveStats,
    /// Every right-hand side evaluation of the forward pass, including the
    /// node derivatives a cubic interpolant needs.
    pub nfe: usize,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GradStats {
    pub forward_nfe: usize,
    /// Right-hand side evaluations in the backward pass, including
    /// forward re-solves for `checkpoint`.
    pub backward_nfe: usize,
    /// Vector-Jacobian products in the backward pass.
    pub backward_vjps: usize,
    pub forward_steps: usize,
    pub backward_steps: usize,
    /// Largest number of forward states held at once.
    pub peak_stored_states: usize,
    /// Dimension of the backward system.
    pub backward_dim: usize,
    pub wall_time: Duration,
}

#[derive(Debug, Clone)]
pub struct GradientResult {
    pub dl_dtheta: ParamVector,
    pub dl_dz0: Vec<f64>,
    pub stats: GradStats,
}

pub fn field_rhs(field: &VectorField) -> impl FnMut(f64, &[f64], &mut [f64]) -> Result<(), RhsError> + '_ {
    move |t, z, dz| {
        let (f, _) = field.eval(z, t)?;
        dz.copy_from_slice(&f);
        Ok(())
    }
}

/// Solve forward keeping stage tapes for every accepted step.
fn taped_solve(
    field: &VectorField,
    z0: &[f64],
    span: (f64, f64),
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, Vec<TapedStep>, SolveStats), GradError> {
    let mut tapes: Vec<Option<Tape>> = Vec::new();
    let mut rhs = |t: f64, z: &[f64], dz: &mut [f64]| -> Result<(), RhsError> {
        let (f, tape) = field.eval(z, t)?;
        dz.copy_from_slice(&f);
        tapes.push(Some(tape));
        Ok(())
    };
    let mut records = Vec::new();
    let (z1, stats) = integrate(&mut rhs, z0, span, cfg, StepMode::Adaptive, |s| {
        records.push((s.h, s.evals))
    })?;
    let steps = records
        .into_iter()
        .map(|(h, evals)| TapedStep {
            h,
            tapes: evals[..6]
                .iter()
                .map(|&id| tapes[id].take().expect("each stage tape is used once"))
                .collect(),
        })
        .collect();
    Ok((z1, steps, stats))
}

/// Reverse sweep through taped steps. On entry `lambda` is `dL/dy` at the
/// end of the last step; on exit it is `dL/dy` at the start of the first.
fn sweep(
    field: &VectorField,
    steps: &[TapedStep],
    lambda: &mut [f64],
    theta_bar: &mut [f64],
) -> Result<usize, GradError> {
    let d = lambda.len();
    let mut kbar = vec![vec![0.0; d]; 6];
    let mut ybar = vec![0.0; d];
    let mut vjps = 0;
    for step in steps.iter().rev() {
        let h = step.h;
        for (i, kb) in kbar.iter_mut().enumerate() {
            for (k, l) in kb.iter_mut().zip(lambda.iter()) {
                *k = h * B[i] * l;
            }
        }
        for i in (0..6).rev() {
            field.vjp_accumulate(&step.tapes[i], &kbar[i], &mut ybar, theta_bar)?;
            vjps += 1;
            for j in 0..i {
                let c = h * A[i][j];
                if c != 0.0 {
                    for (k, y) in kbar[j].iter_mut().zip(&ybar) {
                        *k += c * y;
                    }
                }
            }
            for (l, y) in lambda.iter_mut().zip(&ybar) {
                *l += y;
            }
        }
    }
    Ok(vjps)
}

fn chebyshev_forward(
    problem: &OdeProblem,
    n: usize,
    kind: InterpKind,
) -> Result<(Vec<f64>, StateInterpolant, SolveStats, usize), GradError> {
    let (t0, t1) = problem.span;
    let times: Vec<f64> = match kind {
        InterpKind::Bli => ChebyshevGrid::new(n, problem.span)?.ascending().0,
        InterpKind::Linear | InterpKind::Cubic => (0..=n)
            .map(|i| if i == n { t1 } else { t0 + (t1 - t0) * i as f64 / n as f64 })
            .collect(),
    };
    let (z1, states, stats) =
        ode::integrate_outputs(field_rhs(&problem.field), &problem.z0, problem.span, &problem.cfg, &times)?;
    let mut extra = 0;
    let interp = match kind {
        InterpKind::Bli => {
            let grid = ChebyshevGrid::new(n, problem.span)?;
            StateInterpolant::Bary(BaryInterpolant::new(grid, states.into_iter().rev().collect())?)
        }
        InterpKind::Linear => StateInterpolant::Piecewise(PiecewiseInterpolant::linear(times, states)?),
        InterpKind::Cubic => {
            let derivs = times
                .iter()
                .zip(&states)
                .map(|(&t, z)| problem.field.eval(z, t).map(|(f, _)| f))
                .collect::<Result<Vec<_>, _>>()?;
            extra = derivs.len();
            StateInterpolant::Piecewise(PiecewiseInterpolant::cubic_hermite(times, states, derivs)?)
        }
    };
    Ok((z1, interp, stats, extra))
}

fn checkpoint_times(span: (f64, f64), k: usize) -> Vec<f64> {
    (0..k)
        .map(|i| span.0 + (span.1 - span.0) * i as f64 / k as f64)
        .collect()
}

/// Runs the forward solve and keeps what `method` needs for the backward pass.
pub fn forward(problem: &OdeProblem, method: &MethodConfig) -> Result<Forward, GradError> {
    problem.validate()?;
    method.validate()?;
    let start = Instant::now();
    let (z1, artifacts, stats, extra) = match method.method {
        Method::Direct => {
            let (z1, steps, stats) = taped_solve(&problem.field, &problem.z0, problem.span, &problem.cfg)?;
            (z1, ForwardArtifacts::Direct { steps }, stats, 0)
        }
        Method::Rdm => {
            let (z1, _, stats) =
                ode::integrate_outputs(field_rhs(&problem.field), &problem.z0, problem.span, &problem.cfg, &[])?;
            (z1, ForwardArtifacts::Rdm, stats, 0)
        }
        Method::Irdm { n, kind } => {
            let (z1, interp, stats, extra) = chebyshev_forward(problem, n, kind)?;
            (z1, ForwardArtifacts::Irdm { interp }, stats, extra)
        }
        Method::Checkpoint { k } => {
            let times = checkpoint_times(problem.span, k);
            let (z1, states, stats) =
                ode::integrate_outputs(field_rhs(&problem.field), &problem.z0, problem.span, &problem.cfg, &times)?;
            (z1, ForwardArtifacts::Checkpoint { times, states }, stats, 0)
        }
    };
    Ok(Forward {
        z1,
        artifacts,
        nfe: stats.nfe + extra,
        solve_stats: stats,
        wall_time: start.elapsed(),
    })
}

/// Right-hand side of the backward system `[a, g]` (or `[a, z, g]` when
/// `z` is carried along), integrated from `t1` to `t0`:
///
/// `da/dt = -a^T df/dz`, `dz/dt = f`, `dg/dt = -a^T df/dtheta`, `g(t1) = 0`,
/// so that `g(t0) = dL/dtheta` and `a(t0) = dL/dz0`.
struct AdjointRhs<'a, T: ?Sized> {
    field: &'a VectorField,
    states: Option<&'a T>,
    z: Vec<f64>,
    vjps: usize,
}

impl<T: Trajectory + ?Sized> AdjointRhs<'_, T> {
    fn call(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), RhsError> {
        let d = self.field.state_dim();
        let (a, rest) = y.split_at(d);
        let (da, drest) = dy.split_at_mut(d);
        let dg = match self.states {
            Some(traj) => {
                traj.state_into(t, &mut self.z)?;
                let (_, tape) = self.field.eval(&self.z, t)?;
                drest.fill(0.0);
                self.field.vjp_accumulate(&tape, a, da, drest)?;
                drest
            }
            None => {
                let (f, tape) = self.field.eval(&rest[..d], t)?;
                let (dz, dg) = drest.split_at_mut(d);
                dz.copy_from_slice(&f);
                dg.fill(0.0);
                self.field.vjp_accumulate(&tape, a, da, dg)?;
                dg
            }
        };
        self.vjps += 1;
        for v in da.iter_mut().chain(dg.iter_mut()) {
            *v = -*v;
        }
        Ok(())
    }
}

struct BackwardRun {
    dl_dz0: Vec<f64>,
    dl_dtheta: Vec<f64>,
    stats: SolveStats,
    vjps: usize,
    dim: usize,
}

fn run_backward<T, S>(
    field: &VectorField,
    states: Option<&T>,
    z1: &[f64],
    span: (f64, f64),
    seed: &[f64],
    cfg: &SolverConfig,
    sink: S,
) -> Result<BackwardRun, GradError>
where
    T: Trajectory + ?Sized,
    S: FnMut(ode::StepRecord),
{
    let d = field.state_dim();
    let p = field.param_dim();
    let mut y0 = seed.to_vec();
    if states.is_none() {
        y0.extend_from_slice(z1);
    }
    let dim = y0.len() + p;
    y0.resize(dim, 0.0);
    let mut rhs = AdjointRhs {
        field,
        states,
        z: vec![0.0; d],
        vjps: 0,
    };
    let mut f = |t: f64, y: &[f64], dy: &mut [f64]| rhs.call(t, y, dy);
    let (y, stats) = integrate(&mut f, &y0, (span.1, span.0), cfg, StepMode::Adaptive, sink)?;
    Ok(BackwardRun {
        dl_dz0: y[..d].to_vec(),
        dl_dtheta: y[dim - p..].to_vec(),
        stats,
        vjps: rhs.vjps,
        dim,
    })
}

/// Backward solve of `[a, g]` with `z(t)` read from `states`, kept as a
/// dense solution running from `t1` to `t0`. Components `0..d` hold `a`.
pub fn adjoint_along<T: Trajectory + ?Sized>(
    field: &VectorField,
    states: &T,
    seed: &LossSeed,
    cfg: &SolverConfig,
) -> Result<DenseSolution, GradError> {
    seed.check(field.state_dim())?;
    let span = states.span();
    let mut rhs = AdjointRhs {
        field,
        states: Some(states),
        z: vec![0.0; field.state_dim()],
        vjps: 0,
    };
    let mut y0 = seed.dl_dz1.clone();
    y0.resize(field.state_dim() + field.param_dim(), 0.0);
    Ok(ode::solve(|t, y: &[f64], dy: &mut [f64]| rhs.call(t, y, dy), &y0, (span.1, span.0), cfg)?)
}

/// The `rdm` backward system `[a, z, g]` from `z(t1) = z1`, kept as a dense
/// solution running from `t1` to `t0`. Components `0..d` hold `a`.
pub fn rdm_backward_solution(
    problem: &OdeProblem,
    z1: &[f64],
    seed: &LossSeed,
    cfg: &SolverConfig,
) -> Result<DenseSolution, GradError> {
    seed.check(problem.state_dim())?;
    let d = problem.state_dim();
    let mut rhs = AdjointRhs::<DenseSolution> {
        field: &problem.field,
        states: None,
        z: vec![0.0; d],
        vjps: 0,
    };
    let mut y0 = seed.dl_dz1.clone();
    y0.extend_from_slice(z1);
    y0.resize(2 * d + problem.param_dim(), 0.0);
    let span = problem.span;
    Ok(ode::solve(|t, y: &[f64], dy: &mut [f64]| rhs.call(t, y, dy), &y0, (span.1, span.0), cfg)?)
}

/// Gradient of the loss whose `dL/dz(t1)` is `seed`, given a matching [`forward`].
pub fn backward(
    problem: &OdeProblem,
    method: &MethodConfig,
    fwd: &Forward,
    seed: &LossSeed,
) -> Result<GradientResult, GradError> {
    seed.check(problem.state_dim())?;
    let start = Instant::now();
    let d = problem.state_dim();
    let p = problem.param_dim();
    let field = &problem.field;
    let bcfg = method.backward(problem);
    let mismatch = || GradError::ArtifactMismatch {
        expected: method.method.name(),
        found: fwd.artifacts.name(),
    };
    let mut stats = GradStats {
        forward_nfe: fwd.nfe,
        forward_steps: fwd.solve_stats.accepted,
        peak_stored_states: fwd.artifacts.stored_states(),
        backward_dim: d + p,
        ..GradStats::default()
    };
    let (dl_dz0, dl_dtheta) = match (&method.method, &fwd.artifacts) {
        (Method::Direct, ForwardArtifacts::Direct { steps }) => {
            let mut lambda = seed.dl_dz1.clone();
            let mut theta = vec![0.0; p];
            stats.backward_vjps = sweep(field, steps, &mut lambda, &mut theta)?;
            stats.backward_steps = steps.len();
            (lambda, theta)
        }
        (Method::Rdm, ForwardArtifacts::Rdm) => {
            let run = run_backward::<DenseSolution, _>(field, None, &fwd.z1, problem.span, &seed.dl_dz1, bcfg, |_| {})?;
            stats.backward_nfe = run.stats.nfe;
            stats.backward_vjps = run.vjps;
            stats.backward_steps = run.stats.accepted;
            stats.backward_dim = run.dim;
            (run.dl_dz0, run.dl_dtheta)
        }
        (Method::Irdm { .. }, ForwardArtifacts::Irdm { interp }) => {
            if interp.span() != problem.span {
                return Err(GradError::Problem("interpolant span differs from the problem span".into()));
            }
            let run = run_backward(field, Some(interp), &fwd.z1, problem.span, &seed.dl_dz1, bcfg, |_| {})?;
            stats.backward_nfe = run.stats.nfe;
            stats.backward_vjps = run.vjps;
            stats.backward_steps = run.stats.accepted;
            stats.backward_dim = run.dim;
            (run.dl_dz0, run.dl_dtheta)
        }
        (Method::Checkpoint { .. }, ForwardArtifacts::Checkpoint { times, states }) => {
            let mut lambda = seed.dl_dz1.clone();
            let mut theta = vec![0.0; p];
            let mut widest = 0;
            for i in (0..times.len()).rev() {
                let end = times.get(i + 1).copied().unwrap_or(problem.span.1);
                let (_, steps, s) = taped_solve(field, &states[i], (times[i], end), bcfg)?;
                stats.backward_nfe += s.nfe;
                stats.backward_steps += s.accepted;
                widest = widest.max(6 * steps.len());
                stats.backward_vjps += sweep(field, &steps, &mut lambda, &mut theta)?;
            }
            stats.peak_stored_states += widest;
            (lambda, theta)
        }
        _ => return Err(mismatch()),
    };
    stats.wall_time = fwd.wall_time + start.elapsed();
    Ok(GradientResult {
        dl_dtheta: field.params().with_values(dl_dtheta)?,
        dl_dz0,
        stats,
    })
}

/// [`forward`] followed by [`backward`].
pub fn grad(problem: &OdeProblem, method: &MethodConfig, seed: &LossSeed) -> Result<GradientResult, GradError> {
    seed.check(problem.state_dim())?;
    let fwd = forward(problem, method)?;
    backward(problem, method, &fwd, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Architecture;

    fn linear_problem(theta: f64, tol: f64) -> OdeProblem {
        let field = VectorField::with_params(Architecture::linear(1), &[theta]).unwrap();
        OdeProblem::new(field, vec![1.0], (0.0, 1.0), SolverConfig::with_tol(tol)).unwrap()
    }

    fn all_methods() -> Vec<MethodConfig> {
        vec![
            MethodConfig::direct(),
            MethodConfig::rdm(),
            MethodConfig::irdm(16),
            MethodConfig::checkpoint(8),
        ]
    }

    #[test]
    fn forward_is_shared() {
        let p = linear_problem(1.0, 1e-8);
        let z1: Vec<f64> = all_methods().iter().map(|m| forward(&p, m).unwrap().z1[0]).collect();
        for z in &z1 {
            assert!((z - std::f64::consts::E).abs() < 1e-6);
            assert_eq!(*z, z1[0]);
        }
        let p0 = linear_problem(0.0, 1e-8);
        for m in all_methods() {
            assert_eq!(forward(&p0, &m).unwrap().z1, vec![1.0]);
        }
    }

    #[test]
    fn irdm_nodes_match_exponential() {
        let p = linear_problem(1.0, 1e-8);
        let fwd = forward(&p, &MethodConfig::irdm(8)).unwrap();
        let ForwardArtifacts::Irdm { interp: StateInterpolant::Bary(b) } = &fwd.artifacts else {
            panic!("expected a barycentric interpolant");
        };
        for (t, z) in b.grid().nodes().iter().zip(b.node_values()) {
            assert!((z[0] - t.exp()).abs() < 1e-7);
        }
    }

    #[test]
    fn linear_case_at_zero() {
        let p = linear_problem(0.0, 1e-8);
        for m in all_methods() {
            let g = grad(&p, &m, &LossSeed::ones(1)).unwrap();
            assert!((g.dl_dtheta.as_slice()[0] - 1.0).abs() < 1e-5, "{m}");
            assert!((g.dl_dz0[0] - 1.0).abs() < 1e-5, "{m}");
        }
    }

    #[test]
    fn linear_case_at_one() {
        let p = linear_problem(1.0, 1e-8);
        for m in all_methods() {
            let g = grad(&p, &m, &LossSeed::ones(1)).unwrap();
            let e = std::f64::consts::E;
            assert!((g.dl_dtheta.as_slice()[0] - e).abs() < 1e-5, "{m}: {:?}", g.dl_dtheta);
            assert!((g.dl_dz0[0] - e).abs() < 1e-5, "{m}");
        }
    }

    #[test]
    fn zero_seed_gives_zero_gradient() {
        let field = VectorField::new(Architecture::tanh_mlp(3, 6), 4);
        let p = OdeProblem::new(field, vec![0.3, -0.2, 0.5], (0.0, 1.0), SolverConfig::with_tol(1e-7)).unwrap();
        for m in all_methods() {
            let g = grad(&p, &m, &LossSeed::zeros(3)).unwrap();
            assert!(g.dl_dtheta.as_slice().iter().all(|v| *v == 0.0), "{m}");
            assert!(g.dl_dz0.iter().all(|v| *v == 0.0), "{m}");
        }
    }

    #[test]
    fn structural_dimensions() {
        let field = VectorField::new(Architecture::tanh_mlp(4, 8), 1);
        let (d, p) = (field.state_dim(), field.param_dim());
        let prob = OdeProblem::new(field, vec![0.1, 0.2, -0.3, 0.4], (0.0, 1.0), SolverConfig::with_tol(1e-8)).unwrap();
        let seed = LossSeed::ones(4);
        let rdm = grad(&prob, &MethodConfig::rdm(), &seed).unwrap();
        let irdm = grad(&prob, &MethodConfig::irdm(16), &seed).unwrap();
        assert_eq!(rdm.stats.backward_dim, 2 * d + p);
        assert_eq!(irdm.stats.backward_dim, d + p);
        assert_eq!(irdm.stats.backward_vjps, irdm.stats.backward_nfe);
        let direct = grad(&prob, &MethodConfig::direct(), &seed).unwrap();
        assert_eq!(direct.stats.backward_nfe, 0);
        assert_eq!(direct.stats.forward_nfe, irdm.stats.forward_nfe);
    }

    #[test]
    fn artifacts_must_match_method() {
        let p = linear_problem(1.0, 1e-6);
        let fwd = forward(&p, &MethodConfig::rdm()).unwrap();
        let err = backward(&p, &MethodConfig::direct(), &fwd, &LossSeed::ones(1));
        assert!(matches!(err, Err(GradError::ArtifactMismatch { .. })));
        assert!(matches!(
            grad(&p, &MethodConfig::direct(), &LossSeed::ones(2)),
            Err(GradError::SeedLength { .. })
        ));
        assert!(matches!(
            grad(&p, &MethodConfig::irdm(0), &LossSeed::ones(1)),
            Err(GradError::Method(_))
        ));
    }

    #[test]
    fn method_strings_round_trip() {
        for s in ["direct", "rdm", "irdm:8:linear", "irdm:16:bli", "checkpoint:12"] {
            let m: MethodConfig = s.parse().unwrap();
            assert_eq!(m.to_string(), s);
        }
        assert_eq!("irdm".parse::<MethodConfig>().unwrap(), MethodConfig::irdm(16));
        assert_eq!("checkpoint".parse::<MethodConfig>().unwrap(), MethodConfig::checkpoint(8));
        assert!("adjoint".parse::<MethodConfig>().is_err());
        assert!("irdm:x".parse::<MethodConfig>().is_err());
    }
}
