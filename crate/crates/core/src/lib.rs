//! Bayesian joint model for mixed continuous, binary and ordinal longitudinal
//! outcomes driven by a latent trait, linked to a proportional-hazards event
//! time model.
//!
//! The usual flow is [`sim::generate_dataset`] or [`io::read_dataset`], then
//! [`inference::fit`] to get a [`PosteriorArchive`], then [`predict::predict`]
//! for new subjects and [`evaluation::evaluate`] on held-out predictions.

pub mod error;
pub mod evaluation;
pub mod inference;
pub mod io;
pub mod model;
pub mod predict;
pub mod rng;
pub mod sim;
pub mod stats;
pub mod survival;

pub use error::{Error, Result};
pub use evaluation::{EvalConfig, EvalRecord, Evaluation};
pub use inference::{fit, ChainConfig, Diagnostics, PosteriorArchive, PriorSpec};
pub use model::*;
pub use predict::{predict, Prediction, PredictionRequest, VisitInput};
pub use survival::{cumulative_hazard, log_hazard, segmentize, survival_loglik, HazardSegment};
