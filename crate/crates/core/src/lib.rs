//! Scoring engine for dermoscopic lesion analysis challenges: segmentation,
//! attribute detection and disease classification, plus cross-submission
//! ranking analysis and a deterministic synthetic data generator.

pub mod classification_metrics;
pub mod dataset_io;
pub mod error;
pub mod exact;
pub mod mask_metrics;
pub mod model;
pub mod ranking_analysis;
pub mod synth;

pub use error::{MetricError, ModelError};
pub use model::*;
