//! Deterministic synthetic challenge data.
//!
//! All randomness comes from SplitMix64 (Steele, Lea and Flood 2014; the
//! variant published by Vigna), seeded per item from `(seed, tag, index…)` so
//! any single image or record can be regenerated without replaying the rest.
//! Floating-point draws use the top 53 bits: `(x >> 11) * 2^-53`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset_io::{self, DatasetError};
use crate::mask_metrics::{self, AttributeKey};
use crate::model::{
    BinaryMask, DatasetManifest, DiagnosisClass, GroundTruth, ManifestEntry, Partition,
    PredictionRecord, SegStratum, Task, DEFAULT_ATTRIBUTE_NAMES, DEFAULT_THRESHOLD, N_CLASSES,
};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    /// Generator for one item: the seed is folded with each key through the
    /// output mixer, `s = mix64(s ^ key)`.
    pub fn derive(seed: u64, keys: &[u64]) -> Self {
        let s = keys
            .iter()
            .fold(mix64(seed), |s, &k| mix64(s ^ k.wrapping_mul(GOLDEN_GAMMA)));
        SplitMix64::new(s)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform in `0..n` by rejection, so every value is equally likely.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let zone = u64::MAX - u64::MAX % n;
        loop {
            let x = self.next_u64();
            if x < zone {
                return x % n;
            }
        }
    }

    /// Index drawn with probability proportional to `weights`.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let u = self.next_f64() * total;
        let mut acc = 0.0;
        for (i, w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
    }
}

// stream tags
const TAG_SEG_TRUTH: u64 = 1;
const TAG_PERTURB: u64 = 2;
const TAG_FAILURE: u64 = 3;
const TAG_LABEL: u64 = 4;
const TAG_SUBMISSION: u64 = 5;
const TAG_RECORD: u64 = 6;
const TAG_ATTR_TRUTH: u64 = 7;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {field}: {message}")]
    InvalidConfig {
        field: &'static str,
        message: String,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

impl SynthError {
    pub fn code(&self) -> &'static str {
        match self {
            SynthError::InvalidConfig { .. } => "invalid_config",
            SynthError::Dataset(e) => e.code(),
        }
    }
}

fn invalid(field: &'static str, message: impl Into<String>) -> SynthError {
    SynthError::InvalidConfig {
        field,
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    DilateRadius(u32),
    ErodeRadius(u32),
    /// Maximum boundary displacement in pixels.
    BoundaryNoiseAmplitude(f64),
}

impl Perturbation {
    fn magnitude(self) -> f64 {
        match self {
            Perturbation::DilateRadius(r) | Perturbation::ErodeRadius(r) => r as f64,
            Perturbation::BoundaryNoiseAmplitude(a) => a,
        }
    }

    fn with_magnitude(self, m: f64) -> Self {
        match self {
            Perturbation::DilateRadius(_) => Perturbation::DilateRadius(m.round() as u32),
            Perturbation::ErodeRadius(_) => Perturbation::ErodeRadius(m.round() as u32),
            Perturbation::BoundaryNoiseAmplitude(_) => Perturbation::BoundaryNoiseAmplitude(m),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_images: usize,
    /// Side length of the square masks.
    pub image_size: usize,
    pub perturbation: Perturbation,
    pub class_priors: [f64; N_CLASSES],
    pub accuracy_knob: f64,
    pub external_fraction: f64,
    pub external_gap_knob: f64,
    pub n_submissions: usize,
    /// Spread of per-submission accuracy: `a_s = accuracy_knob^(1 + spread * u)`.
    pub accuracy_spread: f64,
    /// Fraction of classification submissions whose wrong guesses follow the
    /// class priors instead of the uniform distribution.
    pub prior_guessing_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            n_images: 100,
            image_size: 64,
            perturbation: Perturbation::DilateRadius(2),
            class_priors: [1.0 / N_CLASSES as f64; N_CLASSES],
            accuracy_knob: 0.8,
            external_fraction: 0.2,
            external_gap_knob: 0.2,
            n_submissions: 8,
            accuracy_spread: 0.5,
            prior_guessing_fraction: 0.0,
        }
    }
}

pub const MIN_IMAGE_SIZE: usize = 16;
pub const FOREGROUND_RANGE: (f64, f64) = (0.05, 0.6);

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let unit = |field: &'static str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(invalid(field, format!("{v} is outside [0, 1]")))
            }
        };
        if self.image_size < MIN_IMAGE_SIZE || self.image_size > 4096 {
            return Err(invalid(
                "image_size",
                format!("{} is outside [{MIN_IMAGE_SIZE}, 4096]", self.image_size),
            ));
        }
        match self.perturbation {
            Perturbation::DilateRadius(r) | Perturbation::ErodeRadius(r)
                if r as usize > self.image_size =>
            {
                return Err(invalid(
                    "perturbation",
                    format!("radius {r} exceeds image_size"),
                ))
            }
            Perturbation::BoundaryNoiseAmplitude(a)
                if !(a.is_finite() && a >= 0.0 && a <= self.image_size as f64) =>
            {
                return Err(invalid(
                    "perturbation",
                    format!("amplitude {a} is outside [0, image_size]"),
                ))
            }
            _ => {}
        }
        if self
            .class_priors
            .iter()
            .any(|p| !(p.is_finite() && *p >= 0.0))
        {
            return Err(invalid(
                "class_priors",
                "priors must be finite and non-negative",
            ));
        }
        let sum: f64 = self.class_priors.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(invalid(
                "class_priors",
                format!("priors sum to {sum}, expected 1"),
            ));
        }
        unit("accuracy_knob", self.accuracy_knob)?;
        unit("external_fraction", self.external_fraction)?;
        unit("prior_guessing_fraction", self.prior_guessing_fraction)?;
        if !(-1.0..=1.0).contains(&self.external_gap_knob) {
            return Err(invalid(
                "external_gap_knob",
                format!("{} is outside [-1, 1]", self.external_gap_knob),
            ));
        }
        if !(self.accuracy_spread.is_finite() && self.accuracy_spread >= 0.0) {
            return Err(invalid(
                "accuracy_spread",
                "must be finite and non-negative",
            ));
        }
        Ok(())
    }
}

fn image_id(i: usize) -> String {
    format!("synth_{i:05}")
}

fn submission_id(s: usize) -> String {
    format!("sub_{s:03}")
}

// ---------------------------------------------------------------------------
// Masks
// ---------------------------------------------------------------------------

/// Star-shaped region `r(t) = r0 (1 + sum a_k cos(k t + phi_k))` around a
/// random center, sampled at pixel centers.
fn blob(rng: &mut SplitMix64, size: usize, fraction: f64) -> BinaryMask {
    let s = size as f64;
    let cx = rng.uniform(0.35, 0.65) * s;
    let cy = rng.uniform(0.35, 0.65) * s;
    let r0 = (fraction * s * s / PI).sqrt();
    let harmonics: Vec<(f64, f64, f64)> = (2..=4)
        .map(|k| (k as f64, rng.uniform(0.0, 0.12), rng.uniform(0.0, 2.0 * PI)))
        .collect();
    BinaryMask::from_fn(size, size, |x, y| {
        let dx = x as f64 + 0.5 - cx;
        let dy = y as f64 + 0.5 - cy;
        let t = dy.atan2(dx);
        let r = r0
            * (1.0
                + harmonics
                    .iter()
                    .map(|&(k, a, p)| a * (k * t + p).cos())
                    .sum::<f64>());
        dx * dx + dy * dy <= r * r
    })
    .expect("size >= 1")
}

fn disk(size: usize, fraction: f64) -> BinaryMask {
    let c = size as f64 / 2.0;
    let r2 = fraction * (size * size) as f64 / PI;
    BinaryMask::from_fn(size, size, |x, y| {
        let dx = x as f64 + 0.5 - c;
        let dy = y as f64 + 0.5 - c;
        dx * dx + dy * dy <= r2
    })
    .expect("size >= 1")
}

fn blob_in_range(rng: &mut SplitMix64, size: usize, range: (f64, f64)) -> BinaryMask {
    for _ in 0..64 {
        let f = rng.uniform(range.0 + 0.03, range.1 - 0.1);
        let m = blob(rng, size, f);
        let got = m.foreground_fraction();
        if got >= range.0 && got <= range.1 {
            return m;
        }
    }
    disk(size, (range.0 + range.1) / 2.0)
}

const STRATUM_WEIGHTS: [f64; 4] = [0.2, 0.15, 0.5, 0.15];

#[derive(Debug, Clone, PartialEq)]
pub struct SegTruthSet {
    /// Truth paths are `truth/<id>.png`, relative to wherever the set is written.
    pub manifest: DatasetManifest,
    pub masks: BTreeMap<String, BinaryMask>,
}

pub fn gen_segmentation_truth(config: &SynthConfig) -> Result<SegTruthSet, SynthError> {
    config.validate()?;
    let mut entries = Vec::with_capacity(config.n_images);
    let mut masks = BTreeMap::new();
    for i in 0..config.n_images {
        let mut rng = SplitMix64::derive(config.seed, &[TAG_SEG_TRUTH, i as u64]);
        let stratum = SegStratum::ALL[rng.categorical(&STRATUM_WEIGHTS)];
        let id = image_id(i);
        masks.insert(
            id.clone(),
            blob_in_range(&mut rng, config.image_size, FOREGROUND_RANGE),
        );
        entries.push(ManifestEntry {
            image_id: id.clone(),
            truth: GroundTruth::Mask(format!("truth/{id}.png")),
            stratum: Some(stratum),
            partition: None,
        });
    }
    let manifest = DatasetManifest::new(Task::Segmentation, entries, vec![])
        .map_err(|e| invalid("n_images", e.to_string()))?;
    Ok(SegTruthSet { manifest, masks })
}

/// Set of pixel offsets within Euclidean distance `r`.
fn disk_offsets(r: u32) -> Vec<(isize, isize)> {
    let r = r as isize;
    let mut v = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                v.push((dx, dy));
            }
        }
    }
    v
}

/// Value of `mask` at (x+dx, y+dy), with `outside` beyond the border.
fn at(mask: &BinaryMask, x: usize, y: usize, (dx, dy): (isize, isize), outside: bool) -> bool {
    let nx = x as isize + dx;
    let ny = y as isize + dy;
    if nx < 0 || ny < 0 || nx >= mask.width() as isize || ny >= mask.height() as isize {
        outside
    } else {
        mask.get(nx as usize, ny as usize)
    }
}

/// Morphological dilation by a disk of radius `r`.
pub fn dilate(mask: &BinaryMask, r: u32) -> BinaryMask {
    let offs = disk_offsets(r);
    BinaryMask::from_fn(mask.width(), mask.height(), |x, y| {
        offs.iter().any(|&o| at(mask, x, y, o, false))
    })
    .expect("same dims")
}

/// Morphological erosion by a disk of radius `r`; the border counts as background.
pub fn erode(mask: &BinaryMask, r: u32) -> BinaryMask {
    let offs = disk_offsets(r);
    BinaryMask::from_fn(mask.width(), mask.height(), |x, y| {
        offs.iter().all(|&o| at(mask, x, y, o, false))
    })
    .expect("same dims")
}

/// Displaces the boundary by a smooth field with values in
/// `[-amplitude, amplitude]`: positive regions are locally dilated and
/// negative regions eroded, each by the rounded field value.
fn boundary_noise(mask: &BinaryMask, amplitude: f64, rng: &mut SplitMix64) -> BinaryMask {
    let (w, h) = mask.dims();
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            let theta = rng.uniform(0.0, 2.0 * PI);
            let freq = rng.uniform(1.0, 4.0) * 2.0 * PI / w.max(h) as f64;
            (
                freq * theta.cos(),
                freq * theta.sin(),
                rng.uniform(0.0, 2.0 * PI),
            )
        })
        .collect();
    let max_r = amplitude.round() as u32;
    let shells: Vec<Vec<(isize, isize)>> = (0..=max_r).map(disk_offsets).collect();
    BinaryMask::from_fn(w, h, |x, y| {
        let field = waves
            .iter()
            .map(|&(fx, fy, p)| (fx * x as f64 + fy * y as f64 + p).sin())
            .sum::<f64>()
            / 3.0;
        let k = (amplitude * field).round() as i64;
        let offs = &shells[k.unsigned_abs().min(max_r as u64) as usize];
        if k >= 0 {
            offs.iter().any(|&o| at(mask, x, y, o, false))
        } else {
            offs.iter().all(|&o| at(mask, x, y, o, false))
        }
    })
    .expect("same dims")
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedSubmission {
    pub masks: BTreeMap<String, BinaryMask>,
    /// Achieved Jaccard per image.
    pub jaccard: BTreeMap<String, f64>,
}

impl PerturbedSubmission {
    pub fn mean_jaccard(&self) -> f64 {
        if self.jaccard.is_empty() {
            return 1.0;
        }
        self.jaccard.values().sum::<f64>() / self.jaccard.len() as f64
    }
}

/// Applies `perturbation` to every truth mask. `seed` only matters for
/// boundary noise.
pub fn perturb_submission(
    truth: &BTreeMap<String, BinaryMask>,
    perturbation: Perturbation,
    seed: u64,
) -> Result<PerturbedSubmission, SynthError> {
    if let Perturbation::BoundaryNoiseAmplitude(a) = perturbation {
        if !(a.is_finite() && a >= 0.0) {
            return Err(invalid(
                "perturbation",
                format!("amplitude {a} must be finite and non-negative"),
            ));
        }
    }
    let mut masks = BTreeMap::new();
    let mut jaccard = BTreeMap::new();
    for (i, (id, t)) in truth.iter().enumerate() {
        let p = match perturbation {
            Perturbation::DilateRadius(r) => dilate(t, r),
            Perturbation::ErodeRadius(r) => erode(t, r),
            Perturbation::BoundaryNoiseAmplitude(a) => {
                let mut rng = SplitMix64::derive(seed, &[TAG_PERTURB, i as u64]);
                boundary_noise(t, a, &mut rng)
            }
        };
        let counts = mask_metrics::confusion_counts(&p, t).expect("same dims");
        jaccard.insert(id.clone(), mask_metrics::jaccard(&counts));
        masks.insert(id.clone(), p);
    }
    Ok(PerturbedSubmission { masks, jaccard })
}

/// Magnitude used for segmentation submission `s` of `n`: spans 0 to twice
/// the configured magnitude so the population mean matches the config.
pub fn submission_perturbation(base: Perturbation, s: usize, n: usize) -> Perturbation {
    if n <= 1 {
        return base;
    }
    base.with_magnitude(base.magnitude() * 2.0 * s as f64 / (n - 1) as f64)
}

// ---------------------------------------------------------------------------
// Failure-rate populations
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureMode {
    /// Failed images score J just under the threshold (about 0.6), passing
    /// images score J in [0.8, 1].
    NearMiss,
    /// Failed images score J = 0, passing images J = 1.
    Binary,
}

/// First `k` foreground pixels of `truth` in row-major order; J = k / |truth|.
pub fn truncated(truth: &BinaryMask, k: usize) -> BinaryMask {
    let mut left = k;
    let bits = truth
        .bits()
        .iter()
        .map(|&b| {
            if b && left > 0 {
                left -= 1;
                true
            } else {
                false
            }
        })
        .collect();
    BinaryMask::new(truth.width(), truth.height(), bits).expect("same dims")
}

/// Largest k with k / n in [lo, hi), falling back to the nearest feasible k.
fn k_for(n: usize, target: f64, below: Option<f64>) -> usize {
    let mut k = ((target * n as f64).floor() as usize).min(n);
    if let Some(t) = below {
        while k > 0 && k as f64 / n as f64 >= t {
            k -= 1;
        }
    }
    k
}

#[derive(Debug, Clone, PartialEq)]
pub struct FailurePopulation {
    pub truth: SegTruthSet,
    /// `(submission id, failure probability, masks)`.
    pub submissions: Vec<(String, f64, BTreeMap<String, BinaryMask>)>,
}

/// `n_submissions` segmentation submissions whose per-image failure
/// probability is spread uniformly over [0, 0.5].
pub fn gen_failure_population(
    config: &SynthConfig,
    mode: FailureMode,
    threshold: f64,
) -> Result<FailurePopulation, SynthError> {
    mask_metrics::check_threshold(threshold).map_err(|e| invalid("threshold", e.to_string()))?;
    let truth = gen_segmentation_truth(config)?;
    let mut submissions = Vec::with_capacity(config.n_submissions);
    for s in 0..config.n_submissions {
        let mut rng = SplitMix64::derive(config.seed, &[TAG_FAILURE, s as u64]);
        let p_fail = rng.uniform(0.0, 0.5);
        let mut masks = BTreeMap::new();
        for (id, t) in &truth.masks {
            let n = t.foreground_count();
            let fail = rng.next_f64() < p_fail;
            let k = match (mode, fail) {
                (FailureMode::Binary, true) => 0,
                (FailureMode::Binary, false) => n,
                (FailureMode::NearMiss, true) => {
                    k_for(n, rng.uniform(0.55, threshold), Some(threshold))
                }
                (FailureMode::NearMiss, false) => {
                    let k = k_for(n, rng.uniform(0.8, 1.0), None);
                    k.max((threshold * n as f64).ceil() as usize).min(n)
                }
            };
            masks.insert(id.clone(), truncated(t, k));
        }
        submissions.push((submission_id(s), p_fail, masks));
    }
    Ok(FailurePopulation { truth, submissions })
}

// ---------------------------------------------------------------------------
// Attributes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct AttributeTruthSet {
    /// Truth paths are `truth/<id>_<attribute>.png`.
    pub manifest: DatasetManifest,
    pub masks: BTreeMap<AttributeKey, BinaryMask>,
}

/// Each attribute is present in an image with probability 1/2 as a small blob.
pub fn gen_attribute_truth(config: &SynthConfig) -> Result<AttributeTruthSet, SynthError> {
    config.validate()?;
    let names: Vec<String> = DEFAULT_ATTRIBUTE_NAMES
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut entries = Vec::with_capacity(config.n_images);
    let mut masks = BTreeMap::new();
    for i in 0..config.n_images {
        let id = image_id(i);
        let mut paths = Vec::with_capacity(names.len());
        for (a, name) in names.iter().enumerate() {
            let mut rng = SplitMix64::derive(config.seed, &[TAG_ATTR_TRUTH, i as u64, a as u64]);
            let m = if rng.next_f64() < 0.5 {
                blob_in_range(&mut rng, config.image_size, (0.02, 0.2))
            } else {
                BinaryMask::empty(config.image_size, config.image_size).expect("size >= 1")
            };
            masks.insert((id.clone(), name.clone()), m);
            paths.push(format!("truth/{id}_{name}.png"));
        }
        entries.push(ManifestEntry {
            image_id: id,
            truth: GroundTruth::AttributeMasks(paths),
            stratum: None,
            partition: None,
        });
    }
    let manifest = DatasetManifest::new(Task::Attributes, entries, names)
        .map_err(|e| invalid("n_images", e.to_string()))?;
    Ok(AttributeTruthSet { manifest, masks })
}

// ---------------------------------------------------------------------------
// Classification
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct ClsPopulation {
    pub manifest: DatasetManifest,
    /// `(submission id, records in manifest order)`.
    pub submissions: Vec<(String, Vec<PredictionRecord>)>,
}

/// The first `n - round(n * external_fraction)` images are INTERNAL.
pub fn gen_classification_manifest(config: &SynthConfig) -> Result<DatasetManifest, SynthError> {
    config.validate()?;
    let n = config.n_images;
    let n_external = (n as f64 * config.external_fraction).round() as usize;
    let entries = (0..n)
        .map(|i| {
            let mut rng = SplitMix64::derive(config.seed, &[TAG_LABEL, i as u64]);
            let label = DiagnosisClass::ALL[rng.categorical(&config.class_priors)];
            ManifestEntry {
                image_id: image_id(i),
                truth: GroundTruth::Class(label),
                stratum: None,
                partition: Some(if i + n_external >= n {
                    Partition::External
                } else {
                    Partition::Internal
                }),
            }
        })
        .collect();
    DatasetManifest::new(Task::Classification, entries, vec![])
        .map_err(|e| invalid("n_images", e.to_string()))
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Internal and external accuracy of submission `s`.
fn submission_accuracy(config: &SynthConfig, rng: &mut SplitMix64) -> (f64, f64) {
    let a = config
        .accuracy_knob
        .powf(1.0 + config.accuracy_spread * rng.next_f64());
    let g = config.external_gap_knob * (0.5 + rng.next_f64());
    let a_ext = if g >= 0.0 {
        a * (1.0 - g)
    } else {
        a + (1.0 - a) * -g
    };
    (a, a_ext.clamp(0.0, 1.0))
}

/// Each record targets the true class with the submission's accuracy for
/// its partition and a guessed class otherwise; probabilities are
/// `0.6 * onehot(target) + 0.4 * u` with `u` uniform, rounded to 6 decimals,
/// so the target is always the strict argmax.
pub fn gen_classification_population(config: &SynthConfig) -> Result<ClsPopulation, SynthError> {
    let manifest = gen_classification_manifest(config)?;
    let uniform = [1.0; N_CLASSES];
    let n_guessers =
        (config.n_submissions as f64 * config.prior_guessing_fraction).round() as usize;
    let mut submissions = Vec::with_capacity(config.n_submissions);
    for s in 0..config.n_submissions {
        let mut rng = SplitMix64::derive(config.seed, &[TAG_SUBMISSION, s as u64]);
        let (a_int, a_ext) = submission_accuracy(config, &mut rng);
        let guess_weights: &[f64] = if s + n_guessers >= config.n_submissions && n_guessers > 0 {
            &config.class_priors
        } else {
            &uniform
        };
        let records = manifest
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let mut rng = SplitMix64::derive(config.seed, &[TAG_RECORD, s as u64, i as u64]);
                let truth = e.label().expect("classification entry");
                let a = if e.partition == Some(Partition::External) {
                    a_ext
                } else {
                    a_int
                };
                let target = if rng.next_f64() < a {
                    truth
                } else {
                    DiagnosisClass::ALL[rng.categorical(guess_weights)]
                };
                let mut probs = [0.0; N_CLASSES];
                for (k, p) in probs.iter_mut().enumerate() {
                    let hot = if k == target.index() { 0.6 } else { 0.0 };
                    *p = round6(hot + 0.4 * rng.next_f64());
                }
                PredictionRecord {
                    image_id: e.image_id.clone(),
                    probs,
                }
            })
            .collect();
        submissions.push((submission_id(s), records));
    }
    Ok(ClsPopulation {
        manifest,
        submissions,
    })
}

// ---------------------------------------------------------------------------
// Writing
// ---------------------------------------------------------------------------

fn mkdir(path: &Path) -> Result<(), SynthError> {
    fs::create_dir_all(path).map_err(|source| {
        SynthError::Dataset(DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })
    })
}

/// Writes the three datasets under `out_dir`:
///
/// ```text
/// segmentation/   manifest.csv manifest.json truth/ submissions/sub_NNN/
/// attributes/     manifest.csv manifest.json truth/ submissions/sub_NNN/
/// classification/ manifest.csv manifest.json submissions/sub_NNN.csv
/// ```
pub fn write_synth_datasets(config: &SynthConfig, out_dir: &Path) -> Result<(), SynthError> {
    config.validate()?;
    let n_sub = config.n_submissions;

    let seg_dir = out_dir.join("segmentation");
    let seg = gen_segmentation_truth(config)?;
    mkdir(&seg_dir.join("truth"))?;
    let mut manifest = seg.manifest.clone();
    manifest.threshold = Some(DEFAULT_THRESHOLD);
    dataset_io::write_manifest(&manifest, &seg_dir.join("manifest.csv"))?;
    for (id, m) in &seg.masks {
        dataset_io::write_mask(m, &seg_dir.join("truth").join(format!("{id}.png")))?;
    }
    for s in 0..n_sub {
        let dir = seg_dir.join("submissions").join(submission_id(s));
        mkdir(&dir)?;
        let p = submission_perturbation(config.perturbation, s, n_sub);
        let sub = perturb_submission(&seg.masks, p, config.seed ^ s as u64)?;
        for (id, m) in &sub.masks {
            dataset_io::write_mask(m, &dir.join(manifest.naming.segmentation_file(id)))?;
        }
    }

    let attr_dir = out_dir.join("attributes");
    let attr = gen_attribute_truth(config)?;
    mkdir(&attr_dir.join("truth"))?;
    dataset_io::write_manifest(&attr.manifest, &attr_dir.join("manifest.csv"))?;
    for ((id, a), m) in &attr.masks {
        dataset_io::write_mask(m, &attr_dir.join("truth").join(format!("{id}_{a}.png")))?;
    }
    for s in 0..n_sub {
        let dir = attr_dir.join("submissions").join(submission_id(s));
        mkdir(&dir)?;
        let p = submission_perturbation(config.perturbation, s, n_sub);
        for (a_idx, a) in attr.manifest.attribute_names.iter().enumerate() {
            let truth: BTreeMap<String, BinaryMask> = attr
                .masks
                .iter()
                .filter(|((_, name), _)| name == a)
                .map(|((id, _), m)| (id.clone(), m.clone()))
                .collect();
            let sub =
                perturb_submission(&truth, p, config.seed ^ ((s as u64) << 8) ^ a_idx as u64)?;
            for (id, m) in &sub.masks {
                dataset_io::write_mask(m, &dir.join(attr.manifest.naming.attribute_file(id, a)))?;
            }
        }
    }

    let cls_dir = out_dir.join("classification");
    let cls = gen_classification_population(config)?;
    mkdir(&cls_dir.join("submissions"))?;
    dataset_io::write_manifest(&cls.manifest, &cls_dir.join("manifest.csv"))?;
    for (id, records) in &cls.submissions {
        dataset_io::write_classification_csv(
            records,
            &cls_dir.join("submissions").join(format!("{id}.csv")),
        )?;
    }
    Ok(())
}
