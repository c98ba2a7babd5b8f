//! Composite-likelihood estimation by stochastic gradient descent with
//! randomised sub-likelihood selection, trajectory averaging, and
//! finite-sample uncertainty quantification.

pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod frailty;
pub mod gd;
pub mod inference;
pub mod ising;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod sampling;
pub mod sgd;

pub use data::{DataKind, Dataset};
pub use error::{Error, Result};
pub use model::{CompositeModel, ComponentIndex, ParamVector, SparseGrad};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
