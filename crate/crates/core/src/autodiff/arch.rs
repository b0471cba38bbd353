use std::fmt;
use std::str::FromStr;

use super::FieldError;

/// One primitive of a vector field.
///
/// Every variant is analytic in its inputs, so a field built from them has
/// analytic solutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    /// `W z + b`.
    Affine { inputs: usize, outputs: usize },
    /// `W z`, no bias.
    Linear { inputs: usize, outputs: usize },
    /// `(W z + b1) * sigmoid(t c + b2) + t b3`.
    ConcatSquash { inputs: usize, outputs: usize },
    /// Input-independent output `b`.
    Constant { inputs: usize, outputs: usize },
    Tanh,
    Softplus,
    /// Componentwise `z^3`.
    Cube,
}

impl Layer {
    /// Output width given the input width, or `None` when they do not chain.
    pub(crate) fn output_width(&self, input: usize) -> Option<usize> {
        match *self {
            Layer::Affine { inputs, outputs }
            | Layer::Linear { inputs, outputs }
            | Layer::ConcatSquash { inputs, outputs }
            | Layer::Constant { inputs, outputs } => (inputs == input).then_some(outputs),
            Layer::Tanh | Layer::Softplus | Layer::Cube => Some(input),
        }
    }

    fn keyword(&self) -> &'static str {
        match self {
            Layer::Affine { .. } => "affine",
            Layer::Linear { .. } => "linear",
            Layer::ConcatSquash { .. } => "concatsquash",
            Layer::Constant { .. } => "constant",
            Layer::Tanh => "tanh",
            Layer::Softplus => "softplus",
            Layer::Cube => "cube",
        }
    }

    /// Parameter segments as `(suffix, shape, fan_in)`.
    pub(crate) fn segments(&self) -> Vec<(&'static str, Vec<usize>, usize)> {
        match *self {
            Layer::Affine { inputs, outputs } => vec![
                ("weight", vec![outputs, inputs], inputs),
                ("bias", vec![outputs], inputs),
            ],
            Layer::Linear { inputs, outputs } => vec![("weight", vec![outputs, inputs], inputs)],
            Layer::ConcatSquash { inputs, outputs } => vec![
                ("weight", vec![outputs, inputs], inputs),
                ("bias", vec![outputs], inputs),
                ("gate_weight", vec![outputs], 1),
                ("gate_bias", vec![outputs], 1),
                ("time_bias", vec![outputs], 1),
            ],
            Layer::Constant { outputs, .. } => vec![("bias", vec![outputs], 1)],
            Layer::Tanh | Layer::Softplus | Layer::Cube => Vec::new(),
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Layer::Affine { inputs, outputs }
            | Layer::Linear { inputs, outputs }
            | Layer::ConcatSquash { inputs, outputs }
            | Layer::Constant { inputs, outputs } => {
                write!(f, "{} {} {}", self.keyword(), inputs, outputs)
            }
            _ => f.write_str(self.keyword()),
        }
    }
}

impl FromStr for Layer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split_whitespace();
        let kind = parts.next().ok_or("empty layer")?;
        let dims: Vec<usize> = parts
            .map(|p| p.parse().map_err(|_| format!("bad width `{p}`")))
            .collect::<Result<_, _>>()?;
        let pair = |dims: &[usize]| match dims {
            [i, o] if *i > 0 && *o > 0 => Ok((*i, *o)),
            _ => Err(format!("`{kind}` needs two positive widths")),
        };
        let bare = |dims: &[usize], layer: Layer| {
            if dims.is_empty() {
                Ok(layer)
            } else {
                Err(format!("`{kind}` takes no widths"))
            }
        };
        match kind {
            "affine" => pair(&dims).map(|(inputs, outputs)| Layer::Affine { inputs, outputs }),
            "linear" => pair(&dims).map(|(inputs, outputs)| Layer::Linear { inputs, outputs }),
            "concatsquash" => {
                pair(&dims).map(|(inputs, outputs)| Layer::ConcatSquash { inputs, outputs })
            }
            "constant" => pair(&dims).map(|(inputs, outputs)| Layer::Constant { inputs, outputs }),
            "tanh" => bare(&dims, Layer::Tanh),
            "softplus" => bare(&dims, Layer::Softplus),
            "cube" => bare(&dims, Layer::Cube),
            other => Err(format!("unknown layer kind `{other}`")),
        }
    }
}

/// Layer list plus state dimension, validated to map `R^d -> R^d`.
///
/// The text form is one `key = value` pair per line:
///
/// ```text
/// state_dim = 2
/// layer = affine 2 16
/// layer = tanh
/// layer = affine 16 2
/// ```
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    state_dim: usize,
    layers: Vec<Layer>,
}

impl Architecture {
    pub fn new(state_dim: usize, layers: Vec<Layer>) -> Result<Self, FieldError> {
        if state_dim == 0 {
            return Err(FieldError::Architecture("state_dim must be positive".into()));
        }
        if layers.is_empty() {
            return Err(FieldError::Architecture("no layers".into()));
        }
        let mut width = state_dim;
        for (i, layer) in layers.iter().enumerate() {
            width = layer.output_width(width).ok_or_else(|| {
                FieldError::Architecture(format!("layer {i} ({layer}) expects a different input width than {width}"))
            })?;
        }
        if width != state_dim {
            return Err(FieldError::Architecture(format!(
                "output width {width} differs from state_dim {state_dim}"
            )));
        }
        Ok(Self { state_dim, layers })
    }

    /// `tanh` MLP: `affine d h, tanh, affine h d`.
    pub fn tanh_mlp(state_dim: usize, hidden: usize) -> Self {
        Self::new(
            state_dim,
            vec![
                Layer::Affine { inputs: state_dim, outputs: hidden },
                Layer::Tanh,
                Layer::Affine { inputs: hidden, outputs: state_dim },
            ],
        )
        .expect("widths chain by construction")
    }

    /// `f(z) = W z`.
    pub fn linear(state_dim: usize) -> Self {
        Self::new(
            state_dim,
            vec![Layer::Linear { inputs: state_dim, outputs: state_dim }],
        )
        .expect("widths chain by construction")
    }

    /// `f(z) = W z^3` with a componentwise cube.
    pub fn cubic(state_dim: usize) -> Self {
        Self::new(
            state_dim,
            vec![Layer::Cube, Layer::Linear { inputs: state_dim, outputs: state_dim }],
        )
        .expect("widths chain by construction")
    }

    /// `f(z) = b`, independent of state and time.
    pub fn constant(state_dim: usize) -> Self {
        Self::new(
            state_dim,
            vec![Layer::Constant { inputs: state_dim, outputs: state_dim }],
        )
        .expect("widths chain by construction")
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "state_dim = {}", self.state_dim)?;
        for layer in &self.layers {
            writeln!(f, "layer = {layer}")?;
        }
        Ok(())
    }
}

impl FromStr for Architecture {
    type Err = FieldError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut state_dim = None;
        let mut layers = Vec::new();
        for (lineno, raw) in s.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |msg: String| FieldError::Parse { line: lineno + 1, msg };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err("expected `key = value`".into()))?;
            match key.trim() {
                "state_dim" => {
                    let d = value
                        .trim()
                        .parse()
                        .map_err(|_| parse_err(format!("bad state_dim `{}`", value.trim())))?;
                    state_dim = Some(d);
                }
                "layer" => layers.push(value.trim().parse::<Layer>().map_err(parse_err)?),
                other => return Err(parse_err(format!("unknown key `{other}`"))),
            }
        }
        let state_dim = state_dim.ok_or(FieldError::Parse {
            line: 0,
            msg: "missing state_dim".into(),
        })?;
        Architecture::new(state_dim, layers)
    }
}
