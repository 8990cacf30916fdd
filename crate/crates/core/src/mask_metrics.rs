//! Jaccard-family scoring for lesion segmentation and attribute masks.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::MetricError;
use crate::exact::{self, Exact};
use crate::model::{BinaryMask, DatasetManifest, Flag, PixelCounts, SegStratum, SubmissionScore};

/// `(image_id, attribute)` key of an attribute mask.
pub type AttributeKey = (String, String);

// ---------------------------------------------------------------------------
// Per-image primitives
// ---------------------------------------------------------------------------

pub fn confusion_counts(pred: &BinaryMask, gt: &BinaryMask) -> Result<PixelCounts, MetricError> {
    if pred.dims() != gt.dims() {
        return Err(MetricError::DimensionMismatch {
            image_id: None,
            pred: pred.dims(),
            truth: gt.dims(),
        });
    }
    let mut c = PixelCounts::default();
    for (&p, &g) in pred.bits().iter().zip(gt.bits()) {
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// `tp / (tp + fp + fn)`. Two empty masks agree perfectly and score 1.0;
/// callers that care should check [`PixelCounts::is_both_empty`] and flag it.
pub fn jaccard(counts: &PixelCounts) -> f64 {
    let union = counts.union();
    if union == 0 {
        1.0
    } else {
        counts.tp as f64 / union as f64
    }
}

/// Zeroes a Jaccard value that falls below `threshold`. A value equal to the
/// threshold is kept.
pub fn thresholded_jaccard(j: f64, threshold: f64) -> Result<f64, MetricError> {
    check_threshold(threshold)?;
    if !(0.0..=1.0).contains(&j) {
        return Err(MetricError::Domain {
            what: "jaccard",
            value: j,
            domain: "[0, 1]",
        });
    }
    Ok(if j < threshold { 0.0 } else { j })
}

pub fn check_threshold(threshold: f64) -> Result<(), MetricError> {
    if threshold > 0.0 && threshold < 1.0 {
        Ok(())
    } else {
        Err(MetricError::Domain {
            what: "threshold",
            value: threshold,
            domain: "(0, 1)",
        })
    }
}

// ---------------------------------------------------------------------------
// Threshold derivation
// ---------------------------------------------------------------------------

/// Failure threshold derived from interobserver agreement values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdDerivation {
    pub threshold: f64,
    pub mean: f64,
    pub range: f64,
    pub min: f64,
    pub max: f64,
    pub rounded_min: f64,
    pub rounded_range: f64,
}

/// `round_0.05(min) - round_0.05(max - min)`, ties rounded away from zero.
///
/// Inputs are taken as the decimals they print as and the arithmetic is exact,
/// so `{0.743, 0.754, 0.861}` yields exactly `0.65`, mean `0.786` and range
/// `0.118` rather than their binary neighbours.
pub fn derive_threshold(interobserver: &[f64]) -> Result<ThresholdDerivation, MetricError> {
    if interobserver.len() < 2 {
        return Err(MetricError::InsufficientData {
            needed: 2,
            got: interobserver.len(),
        });
    }
    let mut values = Vec::with_capacity(interobserver.len());
    for &v in interobserver {
        if !(0.0..=1.0).contains(&v) {
            return Err(MetricError::Domain {
                what: "interobserver jaccard",
                value: v,
                domain: "[0, 1]",
            });
        }
        values.push(exact::from_decimal_repr(v).expect("finite"));
    }
    let min = values.iter().min().expect("non-empty").clone();
    let max = values.iter().max().expect("non-empty").clone();
    let range = &max - &min;
    let mean = exact::mean(&values).expect("non-empty");

    let twenty = exact::integer(20);
    let to_grid = |r: &Exact| Exact::from_integer(exact::round_half_away(&(r * &twenty))) / &twenty;
    let rounded_min = to_grid(&min);
    let rounded_range = to_grid(&range);
    let threshold = &rounded_min - &rounded_range;

    Ok(ThresholdDerivation {
        threshold: exact::to_f64(&threshold),
        mean: exact::to_f64(&mean),
        range: exact::to_f64(&range),
        min: exact::to_f64(&min),
        max: exact::to_f64(&max),
        rounded_min: exact::to_f64(&rounded_min),
        rounded_range: exact::to_f64(&rounded_range),
    })
}

// ---------------------------------------------------------------------------
// Segmentation scoring
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegImageScore {
    pub image_id: String,
    pub stratum: SegStratum,
    pub counts: PixelCounts,
    pub jaccard: f64,
    pub thresholded_jaccard: f64,
    pub failed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StratumSummary {
    pub n: usize,
    pub failure_rate: f64,
    pub mean_thresholded_jaccard: f64,
    pub mean_jaccard: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegReport {
    pub threshold: f64,
    pub n_images: usize,
    pub mean_thresholded_jaccard: f64,
    pub mean_jaccard: f64,
    pub failure_rate: f64,
    pub per_stratum: BTreeMap<SegStratum, StratumSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegScoring {
    pub report: SegReport,
    /// Ascending image id order.
    pub images: Vec<SegImageScore>,
    pub flags: Vec<Flag>,
}

/// Means over `images` in the order given. Callers pass id-sorted slices.
fn summarize<'a>(images: impl Iterator<Item = &'a SegImageScore>) -> StratumSummary {
    let mut n = 0usize;
    let mut failed = 0usize;
    let mut sum_j = 0.0;
    let mut sum_tj = 0.0;
    for s in images {
        n += 1;
        failed += usize::from(s.failed);
        sum_j += s.jaccard;
        sum_tj += s.thresholded_jaccard;
    }
    let denom = n as f64;
    StratumSummary {
        n,
        failure_rate: failed as f64 / denom,
        mean_thresholded_jaccard: sum_tj / denom,
        mean_jaccard: sum_j / denom,
    }
}

/// Scores every manifest image against its prediction.
///
/// Per-image work runs in parallel; the aggregation walks images in ascending
/// id order so the means do not depend on scheduling or map iteration order.
pub fn score_segmentation(
    manifest: &DatasetManifest,
    truth: &BTreeMap<String, BinaryMask>,
    predictions: &BTreeMap<String, BinaryMask>,
    threshold: f64,
) -> Result<SegScoring, MetricError> {
    check_threshold(threshold)?;
    let mut entries: Vec<_> = manifest.entries.iter().collect();
    entries.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    if entries.is_empty() {
        return Err(MetricError::InsufficientData { needed: 1, got: 0 });
    }

    let missing: Vec<String> = entries
        .iter()
        .filter(|e| !predictions.contains_key(&e.image_id))
        .map(|e| e.image_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(MetricError::MissingPrediction(missing));
    }
    let no_truth: Vec<String> = entries
        .iter()
        .filter(|e| !truth.contains_key(&e.image_id))
        .map(|e| e.image_id.clone())
        .collect();
    if !no_truth.is_empty() {
        return Err(MetricError::MissingTruth(no_truth));
    }

    let images: Vec<SegImageScore> = entries
        .par_iter()
        .map(|e| {
            let id = &e.image_id;
            let pred = &predictions[id];
            let gt = &truth[id];
            let counts =
                confusion_counts(pred, gt).map_err(|_| MetricError::DimensionMismatch {
                    image_id: Some(id.clone()),
                    pred: pred.dims(),
                    truth: gt.dims(),
                })?;
            let j = jaccard(&counts);
            let tj = thresholded_jaccard(j, threshold)?;
            Ok(SegImageScore {
                image_id: id.clone(),
                stratum: e.stratum.unwrap_or(SegStratum::Other),
                counts,
                jaccard: j,
                thresholded_jaccard: tj,
                failed: j < threshold,
            })
        })
        .collect::<Result<_, MetricError>>()?;

    let flags = images
        .iter()
        .filter(|s| s.counts.is_both_empty())
        .map(|s| Flag::BothEmpty {
            image_id: s.image_id.clone(),
        })
        .collect();

    let overall = summarize(images.iter());
    let mut per_stratum = BTreeMap::new();
    for &stratum in SegStratum::ALL {
        let summary = summarize(images.iter().filter(|s| s.stratum == stratum));
        if summary.n > 0 {
            per_stratum.insert(stratum, summary);
        }
    }

    Ok(SegScoring {
        report: SegReport {
            threshold,
            n_images: overall.n,
            mean_thresholded_jaccard: overall.mean_thresholded_jaccard,
            mean_jaccard: overall.mean_jaccard,
            failure_rate: overall.failure_rate,
            per_stratum,
        },
        images,
        flags,
    })
}

impl SegScoring {
    pub fn to_submission_score(&self, submission_id: &str) -> SubmissionScore {
        let per_image = self
            .images
            .iter()
            .map(|s| {
                let m = BTreeMap::from([
                    ("failed".to_string(), if s.failed { 1.0 } else { 0.0 }),
                    ("jaccard".to_string(), s.jaccard),
                    ("thresholded_jaccard".to_string(), s.thresholded_jaccard),
                ]);
                (s.image_id.clone(), m)
            })
            .collect();
        let summary_map = |s: &StratumSummary| {
            BTreeMap::from([
                ("failure_rate".to_string(), s.failure_rate),
                ("jaccard".to_string(), s.mean_jaccard),
                ("n".to_string(), s.n as f64),
                (
                    "thresholded_jaccard".to_string(),
                    s.mean_thresholded_jaccard,
                ),
            ])
        };
        let r = &self.report;
        SubmissionScore {
            submission_id: submission_id.to_string(),
            per_image,
            aggregates: summary_map(&StratumSummary {
                n: r.n_images,
                failure_rate: r.failure_rate,
                mean_thresholded_jaccard: r.mean_thresholded_jaccard,
                mean_jaccard: r.mean_jaccard,
            }),
            per_stratum: r
                .per_stratum
                .iter()
                .map(|(k, v)| (k.code().to_string(), summary_map(v)))
                .collect(),
            per_partition: BTreeMap::new(),
            flags: self.flags.clone(),
        }
    }
}

// ---------------------------------------------------------------------------
// Attribute scoring
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeScore {
    pub attribute: String,
    pub counts: PixelCounts,
    pub jaccard: f64,
    pub absent_everywhere: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributeReport {
    /// Manifest attribute order.
    pub attributes: Vec<AttributeScore>,
    pub mean_jaccard: f64,
    /// Per image, counts in manifest attribute order.
    pub per_image: BTreeMap<String, Vec<PixelCounts>>,
    pub flags: Vec<Flag>,
}

/// Per-attribute Jaccard from TP/FP/FN summed over the whole dataset, and
/// their unweighted mean.
pub fn aggregate_attribute_jaccard(
    manifest: &DatasetManifest,
    truth: &BTreeMap<AttributeKey, BinaryMask>,
    predictions: &BTreeMap<AttributeKey, BinaryMask>,
) -> Result<AttributeReport, MetricError> {
    if manifest.attribute_names.is_empty() {
        return Err(MetricError::InsufficientData { needed: 1, got: 0 });
    }
    let ids: Vec<&str> = manifest.sorted_ids();
    let keys: Vec<AttributeKey> = ids
        .iter()
        .flat_map(|id| {
            manifest
                .attribute_names
                .iter()
                .map(move |a| (id.to_string(), a.clone()))
        })
        .collect();
    let label = |k: &AttributeKey| format!("{}/{}", k.0, k.1);
    let missing: Vec<String> = keys
        .iter()
        .filter(|k| !predictions.contains_key(*k))
        .map(label)
        .collect();
    if !missing.is_empty() {
        return Err(MetricError::MissingPrediction(missing));
    }
    let no_truth: Vec<String> = keys
        .iter()
        .filter(|k| !truth.contains_key(*k))
        .map(label)
        .collect();
    if !no_truth.is_empty() {
        return Err(MetricError::MissingTruth(no_truth));
    }

    let counts: Vec<PixelCounts> = keys
        .par_iter()
        .map(|k| {
            let (pred, gt) = (&predictions[k], &truth[k]);
            confusion_counts(pred, gt).map_err(|_| MetricError::DimensionMismatch {
                image_id: Some(label(k)),
                pred: pred.dims(),
                truth: gt.dims(),
            })
        })
        .collect::<Result<_, _>>()?;

    let n_attr = manifest.attribute_names.len();
    let mut per_image = BTreeMap::new();
    for (i, id) in ids.iter().enumerate() {
        per_image.insert(
            id.to_string(),
            counts[i * n_attr..(i + 1) * n_attr].to_vec(),
        );
    }

    let mut attributes = Vec::with_capacity(n_attr);
    let mut flags = Vec::new();
    for (a, name) in manifest.attribute_names.iter().enumerate() {
        let total: PixelCounts = per_image.values().map(|v| v[a]).sum();
        let absent = total.is_both_empty();
        if absent {
            flags.push(Flag::AttributeAbsentEverywhere {
                attribute: name.clone(),
            });
        }
        attributes.push(AttributeScore {
            attribute: name.clone(),
            counts: total,
            jaccard: jaccard(&total),
            absent_everywhere: absent,
        });
    }
    let mean_jaccard = attributes.iter().map(|a| a.jaccard).sum::<f64>() / n_attr as f64;

    Ok(AttributeReport {
        attributes,
        mean_jaccard,
        per_image,
        flags,
    })
}

impl AttributeReport {
    pub fn to_submission_score(&self, submission_id: &str) -> SubmissionScore {
        let names: Vec<&str> = self
            .attributes
            .iter()
            .map(|a| a.attribute.as_str())
            .collect();
        let per_image = self
            .per_image
            .iter()
            .map(|(id, counts)| {
                let mut m = BTreeMap::new();
                for (name, c) in names.iter().zip(counts) {
                    m.insert(format!("{name}.fn"), c.fn_ as f64);
                    m.insert(format!("{name}.fp"), c.fp as f64);
                    m.insert(format!("{name}.tp"), c.tp as f64);
                }
                (id.clone(), m)
            })
            .collect();
        let mut aggregates: BTreeMap<String, f64> = self
            .attributes
            .iter()
            .map(|a| (format!("jaccard.{}", a.attribute), a.jaccard))
            .collect();
        aggregates.insert("mean_attribute_jaccard".to_string(), self.mean_jaccard);
        SubmissionScore {
            submission_id: submission_id.to_string(),
            per_image,
            aggregates,
            per_stratum: BTreeMap::new(),
            per_partition: BTreeMap::new(),
            flags: self.flags.clone(),
        }
    }
}
