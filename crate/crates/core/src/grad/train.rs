use std::io::Write;
use std::time::Instant;

use super::{backward, forward, Forward, GradError, GradStats, GradientResult, LossSeed, MethodConfig, OdeProblem};

/// Target states at increasing times within the problem span.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    times: Vec<f64>,
    targets: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn new(times: Vec<f64>, targets: Vec<Vec<f64>>) -> Result<Self, GradError> {
        if times.is_empty() || times.len() != targets.len() {
            return Err(GradError::Problem(format!(
                "dataset needs matching non-empty times and targets ({} vs {})",
                times.len(),
                targets.len()
            )));
        }
        if times.windows(2).any(|w| w[1] < w[0]) || times.iter().any(|t| !t.is_finite()) {
            return Err(GradError::Problem("dataset times must be finite and sorted".into()));
        }
        if targets.iter().flatten().any(|v| !v.is_finite()) {
            return Err(GradError::Problem("dataset targets must be finite".into()));
        }
        Ok(Self { times, targets })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn targets(&self) -> &[Vec<f64>] {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    fn check(&self, problem: &OdeProblem) -> Result<(), GradError> {
        let (t0, t1) = problem.span;
        if self.times[0] < t0 || *self.times.last().expect("non-empty") > t1 {
            return Err(GradError::Problem("dataset times leave the problem span".into()));
        }
        if self.targets.iter().any(|y| y.len() != problem.state_dim()) {
            return Err(GradError::Problem("target dimension differs from the state dimension".into()));
        }
        Ok(())
    }
}

/// Mean squared error `sum_i |z(t_i) - y_i|^2 / (M d)` and its gradient.
///
/// The span is cut at the sample times. Each piece is solved forward with
/// `method`; the backward passes run right to left, adding each sample's
/// `dL/dz(t_i)` to the adjoint carried across the cut.
pub fn mse_loss_grad(
    problem: &OdeProblem,
    method: &MethodConfig,
    data: &Dataset,
) -> Result<(f64, GradientResult), GradError> {
    problem.validate()?;
    data.check(problem)?;
    let start = Instant::now();
    let d = problem.state_dim();
    let scale = 1.0 / (data.len() * d) as f64;
    let mut piece = problem.clone();

    // Span, start state and forward pass of each piece.
    #[allow(clippy::type_complexity)]
    let mut pieces: Vec<Option<((f64, f64), Vec<f64>, Forward)>> = Vec::with_capacity(data.len());
    let mut residuals = Vec::with_capacity(data.len());
    let mut z = problem.z0.clone();
    let mut prev = problem.span.0;
    let mut loss = 0.0;
    for (&t, y) in data.times.iter().zip(&data.targets) {
        if t > prev {
            piece.z0.clone_from(&z);
            piece.span = (prev, t);
            let fwd = forward(&piece, method)?;
            let z_start = std::mem::replace(&mut z, fwd.z1.clone());
            pieces.push(Some(((prev, t), z_start, fwd)));
            prev = t;
        } else {
            pieces.push(None);
        }
        let r: Vec<f64> = z.iter().zip(y).map(|(a, b)| a - b).collect();
        loss += scale * r.iter().map(|v| v * v).sum::<f64>();
        residuals.push(r);
    }

    let mut a = vec![0.0; d];
    let mut theta = vec![0.0; problem.param_dim()];
    let mut stats = GradStats::default();
    for (entry, r) in pieces.iter().zip(&residuals).rev() {
        for (ai, ri) in a.iter_mut().zip(r) {
            *ai += 2.0 * scale * ri;
        }
        if let Some((span, z_start, fwd)) = entry {
            piece.z0.clone_from(z_start);
            piece.span = *span;
            let g = backward(&piece, method, fwd, &LossSeed::new(std::mem::take(&mut a)))?;
            a = g.dl_dz0;
            for (acc, v) in theta.iter_mut().zip(g.dl_dtheta.as_slice()) {
                *acc += v;
            }
            stats.forward_nfe += g.stats.forward_nfe;
            stats.backward_nfe += g.stats.backward_nfe;
            stats.backward_vjps += g.stats.backward_vjps;
            stats.forward_steps += g.stats.forward_steps;
            stats.backward_steps += g.stats.backward_steps;
            stats.peak_stored_states += g.stats.peak_stored_states;
            stats.backward_dim = g.stats.backward_dim;
        }
    }
    stats.wall_time = start.elapsed();
    Ok((
        loss,
        GradientResult {
            dl_dtheta: problem.field.params().with_values(theta)?,
            dl_dz0: a,
            stats,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Sgd { lr: f64, momentum: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn sgd(lr: f64) -> Self {
        Optimizer::Sgd { lr, momentum: 0.0 }
    }

    pub fn adam(lr: f64) -> Self {
        Optimizer::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

struct OptState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl OptState {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn apply(&mut self, opt: &Optimizer, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        match *opt {
            Optimizer::Sgd { lr, momentum } => {
                for ((p, m), g) in params.iter_mut().zip(&mut self.m).zip(grad) {
                    *m = momentum * *m + g;
                    *p -= lr * *m;
                }
            }
            Optimizer::Adam { lr, beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.step);
                let c2 = 1.0 - beta2.powi(self.step);
                for (((p, m), v), g) in params.iter_mut().zip(&mut self.m).zip(&mut self.v).zip(grad) {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
        }
    }
}

/// Loss before the epoch's update, with running NFE totals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub forward_nfe: usize,
    pub backward_nfe: usize,
    pub cumulative_wall_ms: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainTrace {
    pub records: Vec<EpochRecord>,
    /// Why training ended early, if it did.
    pub stopped: Option<String>,
}

impl TrainTrace {
    pub fn final_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.loss)
    }

    pub fn total_nfe(&self) -> usize {
        self.records.last().map_or(0, |r| r.forward_nfe + r.backward_nfe)
    }

    /// Columns `epoch, loss, forward_nfe, backward_nfe, cumulative_wall_ms`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["epoch", "loss", "forward_nfe", "backward_nfe", "cumulative_wall_ms"])?;
        for r in &self.records {
            wr.write_record([
                r.epoch.to_string(),
                format!("{:.16e}", r.loss),
                r.forward_nfe.to_string(),
                r.backward_nfe.to_string(),
                format!("{:.3}", r.cumulative_wall_ms),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Full-batch training of `problem.field` on `data`. Solver failures and
/// non-finite losses end training early and are noted in the trace.
pub fn train(
    problem: &mut OdeProblem,
    method: &MethodConfig,
    data: &Dataset,
    optimizer: Optimizer,
    epochs: usize,
) -> Result<TrainTrace, GradError> {
    problem.validate()?;
    method.validate()?;
    data.check(problem)?;
    let start = Instant::now();
    let mut trace = TrainTrace::default();
    let mut state = OptState::new(problem.param_dim());
    let (mut fwd_nfe, mut bwd_nfe) = (0, 0);
    let mut params = problem.field.params().as_slice().to_vec();
    for epoch in 0..epochs {
        let (loss, g) = match mse_loss_grad(problem, method, data) {
            Ok(v) => v,
            Err(e) => {
                trace.stopped = Some(format!("epoch {epoch}: {e}"));
                break;
            }
        };
        if !loss.is_finite() || g.dl_dtheta.as_slice().iter().any(|v| !v.is_finite()) {
            trace.stopped = Some(format!("epoch {epoch}: non-finite loss or gradient"));
            break;
        }
        fwd_nfe += g.stats.forward_nfe;
        bwd_nfe += g.stats.backward_nfe;
        trace.records.push(EpochRecord {
            epoch,
            loss,
            forward_nfe: fwd_nfe,
            backward_nfe: bwd_nfe,
            cumulative_wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        state.apply(&optimizer, &mut params, g.dl_dtheta.as_slice());
        problem.field.set_params(&params)?;
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Architecture, VectorField};
    use crate::ode::SolverConfig;

    fn scalar_problem(theta: f64) -> OdeProblem {
        let field = VectorField::with_params(Architecture::linear(1), &[theta]).unwrap();
        OdeProblem::new(field, vec![1.0], (0.0, 1.0), SolverConfig::with_tol(1e-8)).unwrap()
    }

    #[test]
    fn zero_epochs_leave_params() {
        let mut p = scalar_problem(0.3);
        let data = Dataset::new(vec![1.0], vec![vec![2.0]]).unwrap();
        let trace = train(&mut p, &MethodConfig::irdm(8), &data, Optimizer::adam(0.05), 0).unwrap();
        assert!(trace.records.is_empty());
        assert_eq!(p.field.params().as_slice(), &[0.3]);
    }

    #[test]
    fn adam_finds_log_two() {
        let mut p = scalar_problem(0.0);
        let data = Dataset::new(vec![1.0], vec![vec![2.0]]).unwrap();
        let trace = train(&mut p, &MethodConfig::irdm(8), &data, Optimizer::adam(0.05), 500).unwrap();
        assert!(trace.stopped.is_none());
        let theta = p.field.params().as_slice()[0];
        assert!((theta - 2f64.ln()).abs() <= 1e-3, "theta = {theta}");
        let r = &trace.records;
        assert!(r.windows(2).all(|w| w[1].forward_nfe > w[0].forward_nfe));
    }

    #[test]
    fn segmented_loss_matches_finite_differences() {
        let field = VectorField::new(Architecture::tanh_mlp(2, 5), 3);
        let problem = OdeProblem::new(field, vec![0.5, -0.4], (0.0, 1.0), SolverConfig::with_tol(1e-10)).unwrap();
        let times = vec![0.0, 0.25, 0.5, 0.5, 1.0];
        let targets = times.iter().map(|t| vec![t * 0.3, 1.0 - t]).collect();
        let data = Dataset::new(times, targets).unwrap();
        let (_, g) = mse_loss_grad(&problem, &MethodConfig::direct(), &data).unwrap();
        let loss_at = |params: &[f64], z0: &[f64]| {
            let mut p = problem.clone();
            p.field.set_params(params).unwrap();
            p.z0 = z0.to_vec();
            mse_loss_grad(&p, &MethodConfig::direct(), &data).unwrap().0
        };
        let theta = problem.field.params().as_slice().to_vec();
        let h = 1e-5;
        for i in 0..theta.len() {
            let (mut up, mut dn) = (theta.clone(), theta.clone());
            up[i] += h;
            dn[i] -= h;
            let fd = (loss_at(&up, &problem.z0) - loss_at(&dn, &problem.z0)) / (2.0 * h);
            let an = g.dl_dtheta.as_slice()[i];
            assert!((fd - an).abs() <= 1e-6 * (1.0 + an.abs()), "param {i}: {fd} vs {an}");
        }
        for i in 0..2 {
            let (mut up, mut dn) = (problem.z0.clone(), problem.z0.clone());
            up[i] += h;
            dn[i] -= h;
            let fd = (loss_at(&theta, &up) - loss_at(&theta, &dn)) / (2.0 * h);
            assert!((fd - g.dl_dz0[i]).abs() <= 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(vec![0.5, 0.2], vec![vec![0.0]; 2]).is_err());
        assert!(Dataset::new(vec![], vec![]).is_err());
        let p = scalar_problem(0.0);
        let data = Dataset::new(vec![1.5], vec![vec![0.0]]).unwrap();
        assert!(mse_loss_grad(&p, &MethodConfig::direct(), &data).is_err());
    }

    #[test]
    fn trace_csv_columns() {
        let mut p = scalar_problem(0.0);
        let data = Dataset::new(vec![1.0], vec![vec![2.0]]).unwrap();
        let trace = train(&mut p, &MethodConfig::rdm(), &data, Optimizer::sgd(0.1), 3).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("epoch,loss,forward_nfe,backward_nfe,cumulative_wall_ms"));
        assert_eq!(text.lines().count(), 4);
    }
}
