//! Learning continuous-time Koopman operators from data.
//!
//! The pieces fit together as a pipeline: `dynamics` generates or loads
//! trajectory and derivative datasets, `model` holds the autoencoder with a
//! stable-by-construction generator, `train` fits it by maximum a posteriori
//! estimation, `vi` upgrades the fit to a mean-field variational posterior,
//! and `uncertainty` propagates parameter and process noise into predictive
//! ensembles. `linalg` and `autodiff` carry the numerical weight.

pub mod autodiff;
pub mod data;
pub mod dynamics;
pub mod error;
pub mod linalg;
pub mod model;
pub mod train;
pub mod uncertainty;
pub mod vi;

pub use error::{CoreError, Result};
