use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Architecture, FieldError, Layer, ParamVector};

static NEXT_FIELD_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_FIELD_ID.fetch_add(1, Ordering::Relaxed)
}

/// Activations recorded by one [`VectorField::eval`] call.
///
/// `acts[0]` is the input state and `acts[i + 1]` the output of layer `i`.
/// A tape is tied to the field (and parameter version) that produced it.
#[derive(Debug, Clone)]
pub struct Tape {
    field_id: u64,
    version: u64,
    t: f64,
    acts: Vec<Vec<f64>>,
}

impl Tape {
    pub fn state(&self) -> &[f64] {
        &self.acts[0]
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("tape holds at least the input")
    }
}

/// Parametric right-hand side `f(z, t, theta)` built from [`Layer`]s.
#[derive(Debug)]
pub struct VectorField {
    arch: Architecture,
    params: ParamVector,
    layer_params: Vec<Vec<Range<usize>>>,
    id: u64,
    version: u64,
}

impl Clone for VectorField {
    fn clone(&self) -> Self {
        Self {
            arch: self.arch.clone(),
            params: self.params.clone(),
            layer_params: self.layer_params.clone(),
            id: fresh_id(),
            version: 0,
        }
    }
}

impl VectorField {
    /// Field with every parameter drawn uniformly from `[-s, s]`,
    /// `s = 1/sqrt(fan_in)`, from a ChaCha8 stream seeded with `seed`.
    pub fn new(arch: Architecture, seed: u64) -> Self {
        let mut field = Self::zeros(arch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fan_ins = Vec::with_capacity(field.params.len());
        for layer in field.arch.layers() {
            for (_, shape, fan_in) in layer.segments() {
                let size: usize = shape.iter().product();
                fan_ins.extend(std::iter::repeat_n(fan_in, size));
            }
        }
        for (v, fan_in) in field.params.as_mut_slice().iter_mut().zip(fan_ins) {
            let s = 1.0 / (fan_in as f64).sqrt();
            *v = rng.random_range(-s..=s);
        }
        field
    }

    pub fn zeros(arch: Architecture) -> Self {
        let mut segments = Vec::new();
        let mut layer_params = Vec::with_capacity(arch.layers().len());
        let mut offset = 0;
        for (i, layer) in arch.layers().iter().enumerate() {
            let mut ranges = Vec::new();
            for (suffix, shape, _) in layer.segments() {
                let size: usize = shape.iter().product();
                ranges.push(offset..offset + size);
                offset += size;
                segments.push((format!("{i}.{suffix}"), shape));
            }
            layer_params.push(ranges);
        }
        let params = ParamVector::zeros(&segments).expect("layer-indexed names are unique");
        Self {
            arch,
            params,
            layer_params,
            id: fresh_id(),
            version: 0,
        }
    }

    pub fn with_params(arch: Architecture, values: &[f64]) -> Result<Self, FieldError> {
        let mut field = Self::zeros(arch);
        field.set_params(values)?;
        Ok(field)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn state_dim(&self) -> usize {
        self.arch.state_dim()
    }

    pub fn param_dim(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    /// Replaces the parameters. Tapes recorded before the call become stale.
    pub fn set_params(&mut self, values: &[f64]) -> Result<(), FieldError> {
        if values.len() != self.params.len() {
            return Err(FieldError::DimensionMismatch {
                what: "parameters",
                expected: self.params.len(),
                got: values.len(),
            });
        }
        self.params.as_mut_slice().copy_from_slice(values);
        self.version += 1;
        Ok(())
    }

    /// Evaluates `f(z, t)` and records the activations needed for VJPs.
    pub fn eval(&self, z: &[f64], t: f64) -> Result<(Vec<f64>, Tape), FieldError> {
        self.check_len("state", z.len())?;
        if !t.is_finite() {
            return Err(FieldError::NonFinite("time"));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(FieldError::NonFinite("state"));
        }
        let p = self.params.as_slice();
        let mut acts = Vec::with_capacity(self.arch.layers().len() + 1);
        acts.push(z.to_vec());
        for (layer, ranges) in self.arch.layers().iter().zip(&self.layer_params) {
            let x = acts.last().unwrap();
            let y = match *layer {
                Layer::Affine { inputs, outputs } => {
                    let mut y = p[ranges[1].clone()].to_vec();
                    matvec_add(&p[ranges[0].clone()], outputs, inputs, x, &mut y);
                    y
                }
                Layer::Linear { inputs, outputs } => {
                    let mut y = vec![0.0; outputs];
                    matvec_add(&p[ranges[0].clone()], outputs, inputs, x, &mut y);
                    y
                }
                Layer::ConcatSquash { inputs, outputs } => {
                    let mut u = p[ranges[1].clone()].to_vec();
                    matvec_add(&p[ranges[0].clone()], outputs, inputs, x, &mut u);
                    let c = &p[ranges[2].clone()];
                    let b2 = &p[ranges[3].clone()];
                    let b3 = &p[ranges[4].clone()];
                    (0..outputs)
                        .map(|o| u[o] * sigmoid(t * c[o] + b2[o]) + t * b3[o])
                        .collect()
                }
                Layer::Constant { .. } => p[ranges[0].clone()].to_vec(),
                Layer::Tanh => x.iter().map(|v| v.tanh()).collect(),
                Layer::Softplus => x.iter().map(|&v| softplus(v)).collect(),
                Layer::Cube => x.iter().map(|v| v * v * v).collect(),
            };
            acts.push(y);
        }
        let out = acts.last().unwrap().clone();
        Ok((
            out,
            Tape {
                field_id: self.id,
                version: self.version,
                t,
                acts,
            },
        ))
    }

    /// `a^T df/dz` at the tape's point.
    pub fn vjp_state(&self, tape: &Tape, a: &[f64]) -> Result<Vec<f64>, FieldError> {
        let mut out = vec![0.0; self.state_dim()];
        self.vjp_backward(tape, a, &mut out, None)?;
        Ok(out)
    }

    /// `a^T df/dtheta` at the tape's point, shaped like the parameters.
    pub fn vjp_params(&self, tape: &Tape, a: &[f64]) -> Result<ParamVector, FieldError> {
        let mut state = vec![0.0; self.state_dim()];
        let mut grad = self.params.zeros_like();
        self.vjp_backward(tape, a, &mut state, Some(grad.as_mut_slice()))?;
        Ok(grad)
    }

    /// Both cotangents from one reverse sweep: writes `a^T df/dz` into
    /// `state_out` and adds `a^T df/dtheta` into `param_acc`.
    pub fn vjp_accumulate(
        &self,
        tape: &Tape,
        a: &[f64],
        state_out: &mut [f64],
        param_acc: &mut [f64],
    ) -> Result<(), FieldError> {
        if param_acc.len() != self.params.len() {
            return Err(FieldError::DimensionMismatch {
                what: "parameter accumulator",
                expected: self.params.len(),
                got: param_acc.len(),
            });
        }
        self.vjp_backward(tape, a, state_out, Some(param_acc))
    }

    /// Square Jacobian `df/dz`, row `i` built from the VJP with `e_i`.
    pub fn jacobian_state(&self, z: &[f64], t: f64) -> Result<DMatrix<f64>, FieldError> {
        let d = self.state_dim();
        let (_, tape) = self.eval(z, t)?;
        let mut jac = DMatrix::zeros(d, d);
        let mut e = vec![0.0; d];
        let mut row = vec![0.0; d];
        for i in 0..d {
            e[i] = 1.0;
            self.vjp_backward(&tape, &e, &mut row, None)?;
            e[i] = 0.0;
            for (j, v) in row.iter().enumerate() {
                jac[(i, j)] = *v;
            }
        }
        Ok(jac)
    }

    /// `df/dtheta` as a `state_dim x param_dim` matrix.
    pub fn jacobian_params(&self, z: &[f64], t: f64) -> Result<DMatrix<f64>, FieldError> {
        let d = self.state_dim();
        let (_, tape) = self.eval(z, t)?;
        let mut jac = DMatrix::zeros(d, self.param_dim());
        let mut e = vec![0.0; d];
        let mut scratch = vec![0.0; d];
        let mut row = vec![0.0; self.param_dim()];
        for i in 0..d {
            e[i] = 1.0;
            row.fill(0.0);
            self.vjp_backward(&tape, &e, &mut scratch, Some(&mut row))?;
            e[i] = 0.0;
            for (j, v) in row.iter().enumerate() {
                jac[(i, j)] = *v;
            }
        }
        Ok(jac)
    }

    fn check_len(&self, what: &'static str, got: usize) -> Result<(), FieldError> {
        if got == self.state_dim() {
            Ok(())
        } else {
            Err(FieldError::DimensionMismatch {
                what,
                expected: self.state_dim(),
                got,
            })
        }
    }

    fn vjp_backward(
        &self,
        tape: &Tape,
        a: &[f64],
        state_out: &mut [f64],
        mut param_acc: Option<&mut [f64]>,
    ) -> Result<(), FieldError> {
        if tape.field_id != self.id || tape.version != self.version {
            return Err(FieldError::StaleTape);
        }
        self.check_len("cotangent", a.len())?;
        self.check_len("state cotangent output", state_out.len())?;
        let p = self.params.as_slice();
        let t = tape.t;
        let mut g = a.to_vec();
        for (i, (layer, ranges)) in self
            .arch
            .layers()
            .iter()
            .zip(&self.layer_params)
            .enumerate()
            .rev()
        {
            let x = &tape.acts[i];
            let y = &tape.acts[i + 1];
            g = match *layer {
                Layer::Affine { inputs, outputs } | Layer::Linear { inputs, outputs } => {
                    let w = &p[ranges[0].clone()];
                    if let Some(acc) = param_acc.as_deref_mut() {
                        let gw = &mut acc[ranges[0].clone()];
                        for o in 0..outputs {
                            for j in 0..inputs {
                                gw[o * inputs + j] += g[o] * x[j];
                            }
                        }
                        if let Layer::Affine { .. } = layer {
                            for (gb, go) in acc[ranges[1].clone()].iter_mut().zip(&g) {
                                *gb += go;
                            }
                        }
                    }
                    matvec_t(w, outputs, inputs, &g)
                }
                Layer::ConcatSquash { inputs, outputs } => {
                    let w = &p[ranges[0].clone()];
                    let c = &p[ranges[2].clone()];
                    let b2 = &p[ranges[3].clone()];
                    let mut u = p[ranges[1].clone()].to_vec();
                    matvec_add(w, outputs, inputs, x, &mut u);
                    let s: Vec<f64> = (0..outputs).map(|o| sigmoid(t * c[o] + b2[o])).collect();
                    let gu: Vec<f64> = g.iter().zip(&s).map(|(g, s)| g * s).collect();
                    if let Some(acc) = param_acc.as_deref_mut() {
                        for o in 0..outputs {
                            for j in 0..inputs {
                                acc[ranges[0].start + o * inputs + j] += gu[o] * x[j];
                            }
                            acc[ranges[1].start + o] += gu[o];
                            let gpre = g[o] * u[o] * s[o] * (1.0 - s[o]);
                            acc[ranges[2].start + o] += t * gpre;
                            acc[ranges[3].start + o] += gpre;
                            acc[ranges[4].start + o] += t * g[o];
                        }
                    }
                    matvec_t(w, outputs, inputs, &gu)
                }
                Layer::Constant { inputs, .. } => {
                    if let Some(acc) = param_acc.as_deref_mut() {
                        for (gb, go) in acc[ranges[0].clone()].iter_mut().zip(&g) {
                            *gb += go;
                        }
                    }
                    vec![0.0; inputs]
                }
                Layer::Tanh => g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect(),
                Layer::Softplus => g.iter().zip(x).map(|(g, &x)| g * sigmoid(x)).collect(),
                Layer::Cube => g.iter().zip(x).map(|(g, x)| 3.0 * g * x * x).collect(),
            };
        }
        state_out.copy_from_slice(&g);
        Ok(())
    }
}

fn matvec_add(w: &[f64], rows: usize, cols: usize, x: &[f64], y: &mut [f64]) {
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        y[r] += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

fn matvec_t(w: &[f64], rows: usize, cols: usize, g: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        for (o, wv) in out.iter_mut().zip(row) {
            *o += wv * g[r];
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}
