//! Rectified-flow transport between field laws, curvature-aware ODE sampling, and
//! ensemble-level evaluation on periodic grids.

pub mod baseline;
pub mod data;
pub mod error;
pub mod field;
pub mod gaussian;
pub mod io;
pub mod metrics;
pub mod rng;
pub mod sampler;
pub mod spectral;
pub mod transport;
pub mod verify;

pub use error::{ErrorClass, ReflowError, Result};
pub use field::{Ensemble, Field, Grid};
pub use rng::Rng;
