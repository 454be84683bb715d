//! Command-line orchestration and the HTTP prediction service.

pub mod cli;
pub mod commands;
pub mod service;

use jointrait_core::Prediction;
use serde::{Deserialize, Serialize};

/// A prediction tagged with the archive it came from. The CLI and the service
/// both emit this shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionResponse {
    pub model_id: String,
    #[serde(flatten)]
    pub prediction: Prediction,
}
