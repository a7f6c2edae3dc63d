//! Simulation and verification toolkit for McKean–Vlasov equations with
//! irregular, path-dependent or measure-nonlinear drifts.

pub mod chaos;
pub mod drift;
pub mod error;
pub mod metrics;
pub mod noise;
pub mod path;
pub mod rng;
pub mod sde;
pub mod spde;
pub mod verify;

pub use error::{Error, Result};
pub use path::{EmpiricalMeasure, Ensemble, Path, PathView, TimeGrid, WeightedCloud};
pub use rng::StreamKey;
