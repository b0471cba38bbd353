//! Adaptive Dormand-Prince 5(4) integration with dense output.
//!
//! ```
//! use odegrad::ode::{solve, SolverConfig};
//!
//! let cfg = SolverConfig::with_tol(1e-8);
//! let sol = solve(
//!     |_t, z: &[f64], dz: &mut [f64]| {
//!         dz[0] = z[0];
//!         Ok(())
//!     },
//!     &[1.0],
//!     (0.0, 1.0),
//!     &cfg,
//! )
//! .unwrap();
//! assert!((sol.final_state()[0] - std::f64::consts::E).abs() < 1e-6);
//! let mid = sol.eval(0.5).unwrap();
//! assert!((mid[0] - 0.5f64.exp()).abs() < 1e-7);
//! ```

mod solver;
pub(crate) mod tableau;

use std::io::Write;

use thiserror::Error;

pub use solver::StepRecord;
pub(crate) use solver::{integrate, StepMode};

/// Error type a right-hand side may return.
pub type RhsError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub rtol: f64,
    pub atol: f64,
    /// First step size; chosen automatically when absent.
    pub h_init: Option<f64>,
    /// Largest step magnitude; the span length when absent.
    pub h_max: Option<f64>,
    pub max_steps: usize,
    pub safety: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-6,
            atol: 1e-6,
            h_init: None,
            h_max: None,
            max_steps: 100_000,
            safety: 0.9,
        }
    }
}

impl SolverConfig {
    /// Default config with `rtol = atol = tol`.
    pub fn with_tol(tol: f64) -> Self {
        Self {
            rtol: tol,
            atol: tol,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), OdeError> {
        let bad = |msg: &str| Err(OdeError::InvalidConfig(msg.into()));
        if !(self.rtol > 0.0 && self.rtol.is_finite()) {
            return bad("rtol must be positive");
        }
        if !(self.atol > 0.0 && self.atol.is_finite()) {
            return bad("atol must be positive");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be at least 1");
        }
        if !(self.safety > 0.0 && self.safety < 1.0) {
            return bad("safety must lie in (0, 1)");
        }
        if let Some(h) = self.h_init {
            if !(h.is_finite() && h != 0.0) {
                return bad("h_init must be finite and nonzero");
            }
        }
        if let Some(h) = self.h_max {
            if !(h.is_finite() && h != 0.0) {
                return bad("h_max must be finite and nonzero");
            }
        }
        Ok(())
    }
}

/// Evaluation and step counts of one solve.
///
/// `nfe == 1 + init_evals + 6 * (accepted + rejected)`: one evaluation at
/// the initial state, one for the automatic first-step guess, and six per
/// attempted step thanks to first-same-as-last reuse.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SolveStats {
    pub nfe: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub init_evals: usize,
}

#[derive(Debug, Error)]
pub enum OdeError {
    #[error("invalid solver config: {0}")]
    InvalidConfig(String),
    #[error("empty or non-finite span ({t0}, {t1})")]
    EmptySpan { t0: f64, t1: f64 },
    #[error("initial state is not finite")]
    NonFiniteInitial,
    #[error("exceeded {max_steps} steps at t = {t}")]
    MaxSteps {
        max_steps: usize,
        t: f64,
        /// Steps accepted before giving up.
        partial: Option<Box<DenseSolution>>,
    },
    #[error("non-finite state at step attempt {step} (t = {t})")]
    NonFinite { step: usize, t: f64 },
    #[error("step size {h} too small at t = {t}")]
    StepSizeTooSmall { t: f64, h: f64 },
    #[error("t = {t} lies outside the solution span")]
    OutOfSpan { t: f64 },
    #[error("output times are not sorted in the integration direction")]
    UnsortedOutputs,
    #[error("right-hand side failed at t = {t}: {source}")]
    Rhs { t: f64, source: RhsError },
}

/// Accepted steps of a solve plus their continuous extension.
#[derive(Debug, Clone)]
pub struct DenseSolution {
    span: (f64, f64),
    steps: Vec<StepRecord>,
    stats: SolveStats,
    y_final: Vec<f64>,
}

impl DenseSolution {
    pub fn span(&self) -> (f64, f64) {
        self.span
    }

    pub fn steps(&self) -> &[StepRecord] {
        &self.steps
    }

    pub fn stats(&self) -> SolveStats {
        self.stats
    }

    pub fn nfe(&self) -> usize {
        self.stats.nfe
    }

    pub fn state_dim(&self) -> usize {
        self.y_final.len()
    }

    pub fn final_state(&self) -> &[f64] {
        &self.y_final
    }

    /// Accepted step start times followed by the end of the span.
    pub fn step_times(&self) -> Vec<f64> {
        let mut ts: Vec<f64> = self.steps.iter().map(|s| s.t).collect();
        ts.push(self.span.1);
        ts
    }

    pub fn eval(&self, t: f64) -> Result<Vec<f64>, OdeError> {
        let mut out = vec![0.0; self.state_dim()];
        self.eval_into(t, &mut out)?;
        Ok(out)
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) -> Result<(), OdeError> {
        let (t0, t1) = self.span;
        let dir = (t1 - t0).signum();
        let slack = 1e-12 * (t1 - t0).abs();
        let rel = (t - t0) * dir;
        if !(rel >= -slack && (t - t1) * dir <= slack) {
            return Err(OdeError::OutOfSpan { t });
        }
        if t == t1 {
            out.copy_from_slice(&self.y_final);
            return Ok(());
        }
        // Last step whose start is not past `t` along the integration direction.
        let idx = self
            .steps
            .partition_point(|s| (s.t - t) * dir <= 0.0)
            .saturating_sub(1);
        self.steps[idx].eval_into(t, out);
        Ok(())
    }

    /// One row per accepted step: `t, h, z0, z1, ...` at the step start,
    /// then a final row for the span end with `h = 0`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string(), "h".to_string()];
        header.extend((0..self.state_dim()).map(|i| format!("z{i}")));
        wr.write_record(&header)?;
        let row = |t: f64, h: f64, y: &[f64]| {
            let mut r = vec![format!("{t:.16e}"), format!("{h:.16e}")];
            r.extend(y.iter().map(|v| format!("{v:.16e}")));
            r
        };
        for s in &self.steps {
            wr.write_record(row(s.t, s.h, &s.y))?;
        }
        wr.write_record(row(self.span.1, 0.0, &self.y_final))?;
        wr.flush()?;
        Ok(())
    }
}

/// Trajectory that can be sampled anywhere in its span.
pub trait Trajectory {
    fn span(&self) -> (f64, f64);
    fn state_dim(&self) -> usize;
    fn state_into(&self, t: f64, out: &mut [f64]) -> Result<(), OdeError>;
}

impl Trajectory for DenseSolution {
    fn span(&self) -> (f64, f64) {
        self.span
    }

    fn state_dim(&self) -> usize {
        self.y_final.len()
    }

    fn state_into(&self, t: f64, out: &mut [f64]) -> Result<(), OdeError> {
        self.eval_into(t, out)
    }
}

fn collect<F>(
    mut rhs: F,
    z0: &[f64],
    span: (f64, f64),
    cfg: &SolverConfig,
    mode: StepMode,
) -> Result<DenseSolution, OdeError>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), RhsError>,
{
    let mut steps = Vec::new();
    match integrate(&mut rhs, z0, span, cfg, mode, |s| steps.push(s)) {
        Ok((y_final, stats)) => Ok(DenseSolution {
            span,
            steps,
            stats,
            y_final,
        }),
        Err(OdeError::MaxSteps { max_steps, t, .. }) => {
            let partial = steps.last().map(|last| (last.t_end, last.y_end.clone())).map(|(t_end, y_final)| {
                let accepted = steps.len();
                Box::new(DenseSolution {
                    span: (span.0, t_end),
                    steps,
                    stats: SolveStats {
                        accepted,
                        ..SolveStats::default()
                    },
                    y_final,
                })
            });
            Err(OdeError::MaxSteps {
                max_steps,
                t,
                partial,
            })
        }
        Err(e) => Err(e),
    }
}

/// Integrate `dz/dt = rhs(t, z)` over `span`, which may run backward.
pub fn solve<F>(rhs: F, z0: &[f64], span: (f64, f64), cfg: &SolverConfig) -> Result<DenseSolution, OdeError>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), RhsError>,
{
    collect(rhs, z0, span, cfg, StepMode::Adaptive)
}

/// `steps` equal steps with no error control. Meant for order measurements.
pub fn solve_fixed<F>(rhs: F, z0: &[f64], span: (f64, f64), steps: usize) -> Result<DenseSolution, OdeError>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), RhsError>,
{
    collect(rhs, z0, span, &SolverConfig::default(), StepMode::Fixed(steps))
}

fn check_outputs(span: (f64, f64), t_out: &[f64]) -> Result<(), OdeError> {
    let (t0, t1) = span;
    let dir = (t1 - t0).signum();
    let slack = 1e-12 * (t1 - t0).abs();
    for &t in t_out {
        if !((t - t0) * dir >= -slack && (t - t1) * dir <= slack) {
            return Err(OdeError::OutOfSpan { t });
        }
    }
    if t_out.windows(2).any(|w| (w[1] - w[0]) * dir < 0.0) {
        return Err(OdeError::UnsortedOutputs);
    }
    Ok(())
}

/// Solve and sample the dense output at `t_out`, which must be sorted in the
/// integration direction. Output times never shorten a step.
pub fn solve_with_outputs<F>(
    rhs: F,
    z0: &[f64],
    span: (f64, f64),
    cfg: &SolverConfig,
    t_out: &[f64],
) -> Result<(DenseSolution, Vec<Vec<f64>>), OdeError>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), RhsError>,
{
    check_outputs(span, t_out)?;
    let sol = solve(rhs, z0, span, cfg)?;
    let states = t_out
        .iter()
        .map(|&t| sol.eval(t))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((sol, states))
}

/// Like [`solve_with_outputs`] but keeps only the current step in memory.
/// Returns the final state, the sampled states and the solve statistics.
#[allow(clippy::type_complexity)]
pub fn integrate_outputs<F>(
    mut rhs: F,
    z0: &[f64],
    span: (f64, f64),
    cfg: &SolverConfig,
    t_out: &[f64],
) -> Result<(Vec<f64>, Vec<Vec<f64>>, SolveStats), OdeError>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), RhsError>,
{
    check_outputs(span, t_out)?;
    let dir = (span.1 - span.0).signum();
    let dim = z0.len();
    let mut states = Vec::with_capacity(t_out.len());
    let mut next = 0;
    let (y_final, stats) = integrate(&mut rhs, z0, span, cfg, StepMode::Adaptive, |s| {
        while next < t_out.len() && (t_out[next] - s.t_end) * dir < 0.0 {
            let mut out = vec![0.0; dim];
            s.eval_into(t_out[next], &mut out);
            states.push(out);
            next += 1;
        }
    })?;
    states.extend(t_out[next..].iter().map(|_| y_final.clone()));
    Ok((y_final, states, stats))
}
