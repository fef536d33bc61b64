pub mod benchmark;
pub mod error;
pub mod estimator;
pub mod eval;
pub mod exec;
pub mod gaussian;
pub mod linalg;
pub mod manifold;
pub mod model;
pub mod ot;
pub mod simplex;
pub mod synth;

pub use error::{Error, Result};
pub use exec::Parallelism;
pub use gaussian::{GaussianParams, SimplexWeights};
