//! Longitudinal item-response mixed models for ordinal questionnaire data.
//!
//! A model is the quadruplet (ratio family, cumulative distribution
//! function, item design, random-effect design). The crate evaluates
//! category probabilities, fits models by marginal maximum likelihood,
//! compares them by BIC, fits the linear mixed model on summary scores and
//! runs seeded simulation studies.

pub mod config;
pub mod data;
pub mod error;
pub mod estimate;
pub mod family;
pub mod link;
pub mod lmm;
pub mod model;
pub mod optim;
pub mod quadrature;
pub mod rng;
pub mod score;
pub mod simulate;

pub use error::{Error, Result};
