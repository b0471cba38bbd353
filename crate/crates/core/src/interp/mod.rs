//! Interpolation of stored trajectories.
//!
//! [`BaryInterpolant`] is the barycentric Lagrange form on first-kind
//! Chebyshev points. [`PiecewiseInterpolant`] gives linear and cubic Hermite
//! alternatives on arbitrary increasing nodes.
//!
//! ```
//! use odegrad::interp::{BaryInterpolant, ChebyshevGrid};
//!
//! let grid = ChebyshevGrid::new(12, (0.0, 1.0)).unwrap();
//! let values = grid.nodes().iter().map(|t| vec![t.exp()]).collect();
//! let interp = BaryInterpolant::new(grid, values).unwrap();
//! let z = interp.eval(0.3).unwrap();
//! assert!((z[0] - 0.3f64.exp()).abs() < 1e-12);
//! ```

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use thiserror::Error;

use crate::ode::{OdeError, Trajectory};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InterpError {
    #[error("grid size N must be at least 1, got {0}")]
    GridSize(usize),
    #[error("span ({t0}, {t1}) must be finite with t0 < t1")]
    BadSpan { t0: f64, t1: f64 },
    #[error("expected {expected} node values, got {got}")]
    NodeCount { expected: usize, got: usize },
    #[error("node values must share one dimension")]
    RaggedValues,
    #[error("non-finite node value")]
    NonFinite,
    #[error("node times must be strictly increasing")]
    Unsorted,
    #[error("cubic Hermite interpolation needs node derivatives")]
    MissingDerivatives,
    #[error("t = {t} lies outside [{t0}, {t1}]")]
    OutOfSpan { t: f64, t0: f64, t1: f64 },
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
}

impl From<InterpError> for OdeError {
    fn from(e: InterpError) -> Self {
        match e {
            InterpError::OutOfSpan { t, .. } => OdeError::OutOfSpan { t },
            other => OdeError::Rhs {
                t: f64::NAN,
                source: Box::new(other),
            },
        }
    }
}

/// First-kind Chebyshev points `x_n = cos((2n+1)π/(2N+2))`, `n = 0..=N`,
/// mapped to `[t0, t1]`, with weights `w_n = (-1)^n sin((2n+1)π/(2N+2))`.
///
/// Index order follows `x_n`, so nodes are stored in descending time.
#[derive(Debug, Clone, PartialEq)]
pub struct ChebyshevGrid {
    n: usize,
    span: (f64, f64),
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl ChebyshevGrid {
    pub fn new(n: usize, span: (f64, f64)) -> Result<Self, InterpError> {
        if n < 1 {
            return Err(InterpError::GridSize(n));
        }
        check_span(span)?;
        let (t0, t1) = span;
        let mut nodes = Vec::with_capacity(n + 1);
        let mut weights = Vec::with_capacity(n + 1);
        for i in 0..=n {
            let theta = (2 * i + 1) as f64 * PI / (2 * n + 2) as f64;
            let x = theta.cos();
            nodes.push(0.5 * (t0 + t1) + 0.5 * (t1 - t0) * x);
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            weights.push(sign * theta.sin());
        }
        Ok(Self {
            n,
            span,
            nodes,
            weights,
        })
    }

    /// Polynomial degree; the grid holds `n + 1` nodes.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn span(&self) -> (f64, f64) {
        self.span
    }

    /// Node times in index order (descending).
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `(times, weights)` sorted by ascending time.
    pub fn ascending(&self) -> (Vec<f64>, Vec<f64>) {
        (
            self.nodes.iter().rev().copied().collect(),
            self.weights.iter().rev().copied().collect(),
        )
    }
}

fn check_span((t0, t1): (f64, f64)) -> Result<(), InterpError> {
    if t0.is_finite() && t1.is_finite() && t0 < t1 {
        Ok(())
    } else {
        Err(InterpError::BadSpan { t0, t1 })
    }
}

fn check_values(values: &[Vec<f64>], expected: usize) -> Result<usize, InterpError> {
    if values.len() != expected {
        return Err(InterpError::NodeCount {
            expected,
            got: values.len(),
        });
    }
    let dim = values.first().map_or(0, Vec::len);
    if values.iter().any(|v| v.len() != dim) {
        return Err(InterpError::RaggedValues);
    }
    if values.iter().flatten().any(|v| !v.is_finite()) {
        return Err(InterpError::NonFinite);
    }
    Ok(dim)
}

fn in_span(t: f64, (t0, t1): (f64, f64)) -> Result<(), InterpError> {
    let slack = 1e-12 * (t1 - t0);
    if t >= t0 - slack && t <= t1 + slack {
        Ok(())
    } else {
        Err(InterpError::OutOfSpan { t, t0, t1 })
    }
}

/// Barycentric Lagrange interpolant of vector states on a [`ChebyshevGrid`].
#[derive(Debug, Clone)]
pub struct BaryInterpolant {
    grid: ChebyshevGrid,
    values: Vec<Vec<f64>>,
    dim: usize,
}

impl BaryInterpolant {
    /// `values[n]` is the state at `grid.nodes()[n]`.
    pub fn new(grid: ChebyshevGrid, values: Vec<Vec<f64>>) -> Result<Self, InterpError> {
        let dim = check_values(&values, grid.n + 1)?;
        Ok(Self { grid, values, dim })
    }

    pub fn grid(&self) -> &ChebyshevGrid {
        &self.grid
    }

    pub fn node_values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn state_dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, t: f64) -> Result<Vec<f64>, InterpError> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(t, &mut out)?;
        Ok(out)
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) -> Result<(), InterpError> {
        let span = self.grid.span;
        in_span(t, span)?;
        let guard = 1e-14 * (span.1 - span.0);
        out.fill(0.0);
        let mut denom = 0.0;
        for ((tau, w), z) in self.grid.nodes.iter().zip(&self.grid.weights).zip(&self.values) {
            let diff = t - tau;
            if diff.abs() <= guard {
                out.copy_from_slice(z);
                return Ok(());
            }
            let c = w / diff;
            denom += c;
            for (o, v) in out.iter_mut().zip(z) {
                *o += c * v;
            }
        }
        for o in out.iter_mut() {
            *o /= denom;
        }
        Ok(())
    }

    /// One row per node in ascending time: `t, z0, z1, ...`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((0..self.dim).map(|i| format!("z{i}")));
        wr.write_record(&header)?;
        for (t, z) in self.grid.nodes.iter().zip(&self.values).rev() {
            let mut row = vec![format!("{t:.16e}")];
            row.extend(z.iter().map(|v| format!("{v:.16e}")));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

impl Trajectory for BaryInterpolant {
    fn span(&self) -> (f64, f64) {
        self.grid.span
    }

    fn state_dim(&self) -> usize {
        self.dim
    }

    fn state_into(&self, t: f64, out: &mut [f64]) -> Result<(), OdeError> {
        Ok(self.eval_into(t, out)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InterpKind {
    /// Barycentric Lagrange on Chebyshev points.
    Bli,
    Linear,
    /// Cubic Hermite using node derivatives.
    Cubic,
}

impl fmt::Display for InterpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InterpKind::Bli => "bli",
            InterpKind::Linear => "linear",
            InterpKind::Cubic => "cubic",
        })
    }
}

impl FromStr for InterpKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "bli" => Ok(InterpKind::Bli),
            "linear" => Ok(InterpKind::Linear),
            "cubic" => Ok(InterpKind::Cubic),
            other => Err(format!("unknown interpolant `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PiecewiseKind {
    Linear,
    CubicHermite,
}

/// Piecewise interpolant on strictly increasing node times.
#[derive(Debug, Clone)]
pub struct PiecewiseInterpolant {
    kind: PiecewiseKind,
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
    derivs: Option<Vec<Vec<f64>>>,
    dim: usize,
}

impl PiecewiseInterpolant {
    pub fn linear(times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self, InterpError> {
        Self::build(PiecewiseKind::Linear, times, values, None)
    }

    pub fn cubic_hermite(
        times: Vec<f64>,
        values: Vec<Vec<f64>>,
        derivs: Vec<Vec<f64>>,
    ) -> Result<Self, InterpError> {
        Self::build(PiecewiseKind::CubicHermite, times, values, Some(derivs))
    }

    pub fn new(
        kind: PiecewiseKind,
        times: Vec<f64>,
        values: Vec<Vec<f64>>,
        derivs: Option<Vec<Vec<f64>>>,
    ) -> Result<Self, InterpError> {
        Self::build(kind, times, values, derivs)
    }

    fn build(
        kind: PiecewiseKind,
        times: Vec<f64>,
        values: Vec<Vec<f64>>,
        derivs: Option<Vec<Vec<f64>>>,
    ) -> Result<Self, InterpError> {
        if times.len() < 2 {
            return Err(InterpError::NodeCount {
                expected: 2,
                got: times.len(),
            });
        }
        if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(InterpError::Unsorted);
        }
        let dim = check_values(&values, times.len())?;
        let derivs = match (kind, derivs) {
            (PiecewiseKind::CubicHermite, None) => return Err(InterpError::MissingDerivatives),
            (PiecewiseKind::CubicHermite, Some(d)) => {
                if check_values(&d, times.len())? != dim {
                    return Err(InterpError::RaggedValues);
                }
                Some(d)
            }
            (PiecewiseKind::Linear, _) => None,
        };
        Ok(Self {
            kind,
            times,
            values,
            derivs,
            dim,
        })
    }

    pub fn kind(&self) -> PiecewiseKind {
        self.kind
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn span(&self) -> (f64, f64) {
        (self.times[0], *self.times.last().expect("at least two nodes"))
    }

    pub fn eval(&self, t: f64) -> Result<Vec<f64>, InterpError> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(t, &mut out)?;
        Ok(out)
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) -> Result<(), InterpError> {
        let span = self.span();
        in_span(t, span)?;
        let i = self.times.partition_point(|&x| x <= t);
        if i > 0 && self.times[i - 1] == t {
            out.copy_from_slice(&self.values[i - 1]);
            return Ok(());
        }
        let i = i.clamp(1, self.times.len() - 1) - 1;
        let (ta, tb) = (self.times[i], self.times[i + 1]);
        let h = tb - ta;
        let s = (t - ta) / h;
        let (za, zb) = (&self.values[i], &self.values[i + 1]);
        match (&self.derivs, self.kind) {
            (Some(d), PiecewiseKind::CubicHermite) => {
                let (da, db) = (&d[i], &d[i + 1]);
                let s2 = s * s;
                let s3 = s2 * s;
                let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
                let h10 = s3 - 2.0 * s2 + s;
                let h01 = -2.0 * s3 + 3.0 * s2;
                let h11 = s3 - s2;
                for (k, o) in out.iter_mut().enumerate() {
                    *o = h00 * za[k] + h10 * h * da[k] + h01 * zb[k] + h11 * h * db[k];
                }
            }
            _ => {
                for (k, o) in out.iter_mut().enumerate() {
                    *o = za[k] + s * (zb[k] - za[k]);
                }
            }
        }
        Ok(())
    }
}

impl Trajectory for PiecewiseInterpolant {
    fn span(&self) -> (f64, f64) {
        PiecewiseInterpolant::span(self)
    }

    fn state_dim(&self) -> usize {
        self.dim
    }

    fn state_into(&self, t: f64, out: &mut [f64]) -> Result<(), OdeError> {
        Ok(self.eval_into(t, out)?)
    }
}

/// Maximum over `samples` uniform points of `max_i |interp_i(t) - reference_i(t)|`.
pub fn interp_error<T, R>(interp: &T, mut reference: R, samples: usize) -> Result<f64, OdeError>
where
    T: Trajectory + ?Sized,
    R: FnMut(f64) -> Vec<f64>,
{
    if samples < 2 {
        return Err(InterpError::TooFewSamples(samples).into());
    }
    let (t0, t1) = interp.span();
    let mut z = vec![0.0; interp.state_dim()];
    let mut worst: f64 = 0.0;
    for i in 0..samples {
        let t = if i + 1 == samples {
            t1
        } else {
            t0 + (t1 - t0) * i as f64 / (samples - 1) as f64
        };
        interp.state_into(t, &mut z)?;
        let r = reference(t);
        for (a, b) in z.iter().zip(&r) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}
