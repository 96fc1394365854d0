//! Multiple imputation of partially observed covariates by fully
//! conditional specification (FCS), including the substantive-model
//! compatible variant (SMC-FCS), together with a simulation laboratory for
//! comparing the two.

pub mod covariate;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod fitters;
pub mod formula;
pub mod linalg;
pub mod parallel;
pub mod pooling;
pub mod rng;
pub mod simlab;
pub mod substantive;

pub use error::{Error, FitError, Result};
