//! Numerical laboratory for chordal and radial SLE.
//!
//! Layers, bottom up: closed-form exponents ([`params`]), conformal maps
//! ([`conformal`]), the Loewner engine ([`loewner`]), stochastic drivers and
//! estimators ([`drivers`]), Brownian measures ([`brownian`]), lattice models
//! ([`lattice`]), the declarative runner ([`experiment`]) and the acceptance
//! suite ([`acceptance`]).

// `!(x > 0.0)` guards are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod brownian;
pub mod conformal;
pub mod drivers;
pub mod error;
pub mod experiment;
pub mod lattice;
pub mod loewner;
pub mod params;
pub mod quad;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
pub use num_complex::Complex64;

pub use conformal::{HalfPlanePoint, HullSpec, PowerSeries};
pub use drivers::{DiffusionState, DriverSpec};
pub use experiment::{ExperimentConfig, ResultRecord};
pub use lattice::{TriangularColoring, WalkPath};
pub use loewner::{DrivingPath, SlitMapChain, Trace, TrackedPoint};
pub use params::{ExponentValue, ModelRow, SleParams};
pub use rng::RngStream;

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");
