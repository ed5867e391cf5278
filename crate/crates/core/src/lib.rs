//! Covariate balancing by characteristic-function distance.

pub mod balance;
pub mod cfd;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod kernels;
pub mod qp;
pub mod sim;

pub use error::{Error, Result};
