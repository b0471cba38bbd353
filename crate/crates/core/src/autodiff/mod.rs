//! Reverse-mode differentiation for small parametric vector fields.
//!
//! A [`VectorField`] is a stack of [`Layer`]s mapping a state `z` (and time
//! `t`) back into the state space. [`VectorField::eval`] returns `f(z, t)`
//! together with a [`Tape`] of the intermediate activations; the tape then
//! answers any number of vector-Jacobian products `a^T df/dz` and
//! `a^T df/dtheta`. Full Jacobians are assembled from `state_dim` such
//! products, which is all the diagnostics need.
//!
//! ```
//! use odegrad::autodiff::{Architecture, VectorField};
//!
//! // f(z) = theta * z with theta = 2
//! let field = VectorField::with_params(Architecture::linear(1), &[2.0]).unwrap();
//! let (dz, tape) = field.eval(&[3.0], 0.0).unwrap();
//! assert_eq!(dz, vec![6.0]);
//! assert_eq!(field.vjp_state(&tape, &[1.0]).unwrap(), vec![2.0]);
//! assert_eq!(field.vjp_params(&tape, &[1.0]).unwrap().as_slice(), &[3.0]);
//! ```

mod arch;
mod field;
mod params;

pub use arch::{Architecture, Layer};
pub use field::{Tape, VectorField};
pub use params::{decode_blob, ParamVector, Segment};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("{what}: expected length {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("tape was recorded by a different field or parameter version")]
    StaleTape,
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("parameter blob: {0}")]
    Blob(String),
    #[error("duplicate parameter segment `{0}`")]
    DuplicateSegment(String),
}
