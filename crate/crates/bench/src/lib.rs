//! Experiments that measure gradient accuracy and right-hand side cost of
//! the `odegrad` gradient methods, written as CSV.

pub mod config;
pub mod experiments;
pub mod output;
pub mod systems;

pub use config::{ConfigError, ExperimentConfig, ExperimentId, System};
pub use experiments::{run, BenchError, CellStatus, Report};

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/benchmarks.md")]
mod book_benchmarks {}
