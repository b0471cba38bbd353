//! Problem instances shared by the experiments.

use odegrad::autodiff::{Architecture, VectorField};
use odegrad::grad::{GradError, OdeProblem};
use odegrad::ode::SolverConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::System;

/// Row-major `A` of the cubic sweep system `dz/dt = A z^3`.
pub const CUBIC_A: [f64; 4] = [-0.1, 2.0, -2.0, -0.1];

/// Random stream for cell `cell` of a run seeded with `seed`. Streams are
/// independent of thread scheduling.
pub fn cell_rng(seed: u64, cell: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(cell);
    rng
}

impl System {
    /// Initial state and time span before jitter.
    pub fn base(&self) -> ([f64; 2], (f64, f64)) {
        match self {
            System::Collapse => ([2.0, 1.0], (0.0, 5.0)),
            System::Cubic | System::Mlp | System::Zero => ([0.5, 0.0], (0.0, 1.0)),
        }
    }

    /// The field of this system. Only [`System::Mlp`] draws from `rng`.
    pub fn field(&self, hidden: usize, rng: &mut ChaCha8Rng) -> Result<VectorField, GradError> {
        let field = match self {
            System::Cubic => VectorField::with_params(Architecture::cubic(2), &CUBIC_A)?,
            System::Collapse => VectorField::with_params(Architecture::cubic(2), &[-1.0, 0.0, 0.0, -1.0])?,
            System::Zero => VectorField::zeros(Architecture::linear(2)),
            System::Mlp => VectorField::new(Architecture::tanh_mlp(2, hidden), rng.random()),
        };
        Ok(field)
    }

    /// A problem instance with every initial component shifted by
    /// `U(-jitter, jitter)`.
    pub fn problem(&self, hidden: usize, jitter: f64, tol: f64, rng: &mut ChaCha8Rng) -> Result<OdeProblem, GradError> {
        let field = self.field(hidden, rng)?;
        let (z0, span) = self.base();
        let z0 = jittered(&z0, jitter, rng);
        OdeProblem::new(field, z0, span, SolverConfig::with_tol(tol))
    }
}

pub(crate) fn jittered(z0: &[f64], jitter: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    z0.iter()
        .map(|&z| {
            let u: f64 = rng.random_range(-1.0..=1.0);
            z + jitter * u
        })
        .collect()
}
