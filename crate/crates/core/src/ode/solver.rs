use super::tableau::{A, C, D, E};
use super::{OdeError, RhsError, SolveStats, SolverConfig};

/// One accepted step: start time/state, the seven stage derivatives and the
/// evaluation index (0-based, in call order) that produced each stage.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub t: f64,
    pub t_end: f64,
    pub h: f64,
    pub y: Vec<f64>,
    pub y_end: Vec<f64>,
    pub k: [Vec<f64>; 7],
    pub evals: [usize; 7],
}

impl StepRecord {
    /// Continuous extension at `t`; returns the stored endpoint states
    /// bit-for-bit when `t` hits either end of the step.
    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        if t == self.t {
            out.copy_from_slice(&self.y);
            return;
        }
        if t == self.t_end {
            out.copy_from_slice(&self.y_end);
            return;
        }
        let s = (t - self.t) / self.h;
        let s1 = 1.0 - s;
        let h = self.h;
        for (i, o) in out.iter_mut().enumerate() {
            let ydiff = self.y_end[i] - self.y[i];
            let bspl = h * self.k[0][i] - ydiff;
            let r4 = ydiff - h * self.k[6][i] - bspl;
            let r5 = h * (0..7).map(|j| D[j] * self.k[j][i]).sum::<f64>();
            *o = self.y[i] + s * (ydiff + s1 * (bspl + s * (r4 + s1 * r5)));
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum StepMode {
    Adaptive,
    Fixed(usize),
}

const PI_ALPHA: f64 = 0.7 / 5.0;
const PI_BETA: f64 = 0.4 / 5.0;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 10.0;

struct Counter<'f, F> {
    rhs: &'f mut F,
    nfe: usize,
}

impl<F> Counter<'_, F>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), RhsError>,
{
    fn call(&mut self, t: f64, y: &[f64], out: &mut [f64]) -> Result<usize, OdeError> {
        (self.rhs)(t, y, out).map_err(|source| OdeError::Rhs { t, source })?;
        self.nfe += 1;
        Ok(self.nfe - 1)
    }
}

fn scaled_rms(v: &[f64], y: &[f64], y_new: &[f64], cfg: &SolverConfig) -> f64 {
    let n = v.len().max(1) as f64;
    let sum: f64 = v
        .iter()
        .zip(y.iter().zip(y_new))
        .map(|(e, (a, b))| {
            let sc = cfg.atol + cfg.rtol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (sum / n).sqrt()
}

/// Initial step guess from two derivative samples. When both the derivative
/// and its change vanish the step is limited only by `h_max`.
fn initial_step<F>(
    counter: &mut Counter<'_, F>,
    t0: f64,
    y0: &[f64],
    f0: &[f64],
    dir: f64,
    h_max: f64,
    cfg: &SolverConfig,
) -> Result<f64, OdeError>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), RhsError>,
{
    let n = y0.len().max(1) as f64;
    let sk: Vec<f64> = y0.iter().map(|y| cfg.atol + cfg.rtol * y.abs()).collect();
    let rms = |v: &[f64]| (v.iter().zip(&sk).map(|(x, s)| (x / s).powi(2)).sum::<f64>() / n).sqrt();
    let dnf = rms(f0);
    let dny = rms(y0);
    let mut h = if dnf <= 1e-10 || dny <= 1e-10 {
        1e-6
    } else {
        0.01 * (dny / dnf).sqrt()
    };
    h = h.min(h_max);
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, f)| y + dir * h * f).collect();
    let mut f1 = vec![0.0; y0.len()];
    counter.call(t0 + dir * h, &y1, &mut f1)?;
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let der2 = rms(&diff) / h;
    let der12 = der2.abs().max(dnf.sqrt());
    let h1 = if der12 <= 1e-15 {
        if dnf <= 1e-10 {
            return Ok(dir * h_max);
        }
        (h * 1e-3).max(1e-6)
    } else {
        (0.01 / der12).powf(1.0 / 5.0)
    };
    Ok(dir * (100.0 * h).min(h1).min(h_max))
}

/// Core integration loop shared by every public entry point. Accepted steps
/// are handed to `sink` in order.
pub(crate) fn integrate<F, S>(
    rhs: &mut F,
    z0: &[f64],
    (t0, t1): (f64, f64),
    cfg: &SolverConfig,
    mode: StepMode,
    mut sink: S,
) -> Result<(Vec<f64>, SolveStats), OdeError>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), RhsError>,
    S: FnMut(StepRecord),
{
    cfg.validate()?;
    if !(t0.is_finite() && t1.is_finite()) || t0 == t1 {
        return Err(OdeError::EmptySpan { t0, t1 });
    }
    if z0.iter().any(|v| !v.is_finite()) {
        return Err(OdeError::NonFiniteInitial);
    }
    let dim = z0.len();
    let dir = (t1 - t0).signum();
    let span = (t1 - t0).abs();
    let h_max = cfg.h_max.map_or(span, |h| h.abs().min(span));

    let mut counter = Counter { rhs, nfe: 0 };
    let mut stats = SolveStats::default();
    let mut k: [Vec<f64>; 7] = std::array::from_fn(|_| vec![0.0; dim]);
    let mut ids = [0usize; 7];
    let mut y = z0.to_vec();
    let mut t = t0;
    ids[0] = counter.call(t, &y, &mut k[0])?;

    let (mut h, fixed_steps) = match mode {
        StepMode::Fixed(n) => {
            if n == 0 {
                return Err(OdeError::InvalidConfig("fixed step count must be positive".into()));
            }
            ((t1 - t0) / n as f64, Some(n))
        }
        StepMode::Adaptive => match cfg.h_init {
            Some(h) => (dir * h.abs().min(h_max), None),
            None => {
                let h = initial_step(&mut counter, t, &y, &k[0], dir, h_max, cfg)?;
                stats.init_evals = 1;
                (h, None)
            }
        },
    };

    let mut stage_y = vec![0.0; dim];
    let mut y_new = vec![0.0; dim];
    let mut err_vec = vec![0.0; dim];
    let mut err_old: f64 = 1e-4;
    let mut last_rejected = false;

    loop {
        let attempts = stats.accepted + stats.rejected;
        if fixed_steps.is_none() && attempts >= cfg.max_steps {
            return Err(OdeError::MaxSteps {
                max_steps: cfg.max_steps,
                t,
                partial: None,
            });
        }
        if h.abs() <= t.abs().max(span) * f64::EPSILON * 4.0 {
            return Err(OdeError::StepSizeTooSmall { t, h });
        }
        let last = match fixed_steps {
            Some(n) => attempts + 1 == n,
            None => (t + 1.01 * h - t1) * dir >= 0.0,
        };
        if last && fixed_steps.is_none() {
            h = t1 - t;
        }

        for s in 1..7 {
            for (i, sy) in stage_y.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate().take(s) {
                    acc += A[s][j] * kj[i];
                }
                *sy = y[i] + h * acc;
            }
            if stage_y.iter().any(|v| !v.is_finite()) {
                return Err(OdeError::NonFinite { step: attempts, t });
            }
            if s == 6 {
                y_new.copy_from_slice(&stage_y);
            }
            ids[s] = counter.call(t + C[s] * h, &stage_y, &mut k[s])?;
        }
        for (i, e) in err_vec.iter_mut().enumerate() {
            *e = h * (0..7).map(|j| E[j] * k[j][i]).sum::<f64>();
        }
        let err = match fixed_steps {
            Some(_) => 0.0,
            None => scaled_rms(&err_vec, &y, &y_new, cfg),
        };
        if !err.is_finite() || y_new.iter().any(|v| !v.is_finite()) {
            return Err(OdeError::NonFinite { step: attempts, t });
        }

        if err <= 1.0 {
            let t_end = if last { t1 } else { t + h };
            sink(StepRecord {
                t,
                t_end,
                h,
                y: y.clone(),
                y_end: y_new.clone(),
                k: k.clone(),
                evals: ids,
            });
            stats.accepted += 1;
            std::mem::swap(&mut y, &mut y_new);
            k.swap(0, 6);
            ids[0] = ids[6];
            t = t_end;
            if last {
                break;
            }
            if fixed_steps.is_none() {
                let fac = (cfg.safety * err.powf(-PI_ALPHA) * err_old.powf(PI_BETA))
                    .clamp(MIN_FACTOR, MAX_FACTOR);
                let mut h_new = h * fac;
                if last_rejected {
                    h_new = dir * h_new.abs().min(h.abs());
                }
                h = dir * h_new.abs().min(h_max);
                err_old = err.max(1e-4);
                last_rejected = false;
            }
        } else {
            stats.rejected += 1;
            let fac = (cfg.safety * err.powf(-PI_ALPHA)).max(MIN_FACTOR);
            h *= fac;
            last_rejected = true;
        }
    }
    stats.nfe = counter.nfe;
    Ok((y, stats))
}
