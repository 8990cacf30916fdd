use thiserror::Error;

use crate::model::{DiagnosisClass, Task};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("mask must be at least 1x1, got {width}x{height}")]
    EmptyMask { width: usize, height: usize },
    #[error("mask {width}x{height} needs {} bits, got {len}", width * height)]
    MaskLength {
        width: usize,
        height: usize,
        len: usize,
    },
    #[error("unknown {kind} code {value:?}")]
    UnknownCode { kind: &'static str, value: String },
    #[error(
        "image {image_id}: probability for {class} is {value}, expected a finite value in [0, 1]"
    )]
    InvalidProbability {
        image_id: String,
        class: DiagnosisClass,
        value: f64,
    },
    #[error("duplicate image id {0:?}")]
    DuplicateImageId(String),
    #[error("duplicate attribute name {0:?}")]
    DuplicateAttribute(String),
    #[error("attributes manifest must name at least one attribute")]
    NoAttributes,
    #[error("entry {image_id:?} does not carry the fields a {task} manifest requires")]
    EntryShape { task: Task, image_id: String },
}

impl ModelError {
    pub fn code(&self) -> &'static str {
        match self {
            ModelError::EmptyMask { .. } | ModelError::MaskLength { .. } => "invalid_mask",
            ModelError::UnknownCode { .. } => "unknown_code",
            ModelError::InvalidProbability { .. } => "invalid_probability",
            ModelError::DuplicateImageId(_) => "duplicate_image_id",
            ModelError::DuplicateAttribute(_) => "duplicate_attribute",
            ModelError::NoAttributes => "no_attributes",
            ModelError::EntryShape { .. } => "missing_field",
        }
    }
}

/// Errors raised by the scoring and analysis modules.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("{}mask dimensions differ: prediction {pred:?}, ground truth {truth:?}", .image_id.as_deref().map(|i| format!("image {i}: ")).unwrap_or_default())]
    DimensionMismatch {
        image_id: Option<String>,
        pred: (usize, usize),
        truth: (usize, usize),
    },
    #[error("{what} = {value} is outside its domain {domain}")]
    Domain {
        what: &'static str,
        value: f64,
        domain: &'static str,
    },
    #[error("need at least {needed} values, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("missing predictions for {} image(s): {}", .0.len(), .0.join(", "))]
    MissingPrediction(Vec<String>),
    #[error("missing ground truth for {} image(s): {}", .0.len(), .0.join(", "))]
    MissingTruth(Vec<String>),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("ROC undefined with {positives} positive and {negatives} negative examples")]
    DegenerateLabels { positives: usize, negatives: usize },
    #[error("score {0} is not a finite number")]
    InvalidScore(f64),
    #[error("submission {submission:?} has no metric {metric:?}")]
    UnknownMetric { metric: String, submission: String },
    #[error("submission {submission:?}: metric {metric:?} is not finite")]
    NonFiniteMetric { metric: String, submission: String },
    #[error("least-squares fit undefined: all {n} x values are equal")]
    DegenerateFit { n: usize },
    #[error("submission {submission:?} lacks INTERNAL/EXTERNAL values for {metric:?}")]
    MissingPartitionScores { metric: String, submission: String },
}

impl MetricError {
    pub fn code(&self) -> &'static str {
        match self {
            MetricError::DimensionMismatch { .. } => "dimension_mismatch",
            MetricError::Domain { .. } => "domain_error",
            MetricError::InsufficientData { .. } => "insufficient_data",
            MetricError::MissingPrediction(_) => "missing_prediction",
            MetricError::MissingTruth(_) => "missing_truth",
            MetricError::Model(e) => e.code(),
            MetricError::EmptyMatrix => "empty_matrix",
            MetricError::DegenerateLabels { .. } => "degenerate_labels",
            MetricError::InvalidScore(_) => "invalid_score",
            MetricError::UnknownMetric { .. } => "unknown_metric",
            MetricError::NonFiniteMetric { .. } => "non_finite_metric",
            MetricError::DegenerateFit { .. } => "degenerate_fit",
            MetricError::MissingPartitionScores { .. } => "missing_partition_scores",
        }
    }
}
