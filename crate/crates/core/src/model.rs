//! Domain types shared by the scoring and analysis modules.
//!
//! Class, stratum and partition orderings are frozen here. CSV columns,
//! confusion-matrix axes and report rows all derive from these arrays.

use std::collections::BTreeMap;
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

// ---------------------------------------------------------------------------
// Masks and pixel counts
// ---------------------------------------------------------------------------

/// Rasterized binary region, row-major, `true` = foreground.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self, ModelError> {
        if width == 0 || height == 0 {
            return Err(ModelError::EmptyMask { width, height });
        }
        if bits.len() != width * height {
            return Err(ModelError::MaskLength {
                width,
                height,
                len: bits.len(),
            });
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    /// All-background mask.
    pub fn empty(width: usize, height: usize) -> Result<Self, ModelError> {
        Self::new(width, height, vec![false; width * height])
    }

    /// Builds a mask by evaluating `f(x, y)` for every pixel.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Result<Self, ModelError> {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self::new(width, height, bits)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn pixel_count(&self) -> usize {
        self.bits.len()
    }

    pub fn foreground_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.foreground_count() as f64 / self.pixel_count() as f64
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Embeds the mask in a larger background canvas, `pad` pixels on every side.
    pub fn padded(&self, pad: usize) -> Self {
        let w = self.width + 2 * pad;
        let h = self.height + 2 * pad;
        let mut bits = vec![false; w * h];
        for y in 0..self.height {
            for x in 0..self.width {
                bits[(y + pad) * w + x + pad] = self.get(x, y);
            }
        }
        Self {
            width: w,
            height: h,
            bits,
        }
    }
}

/// Pixel confusion counts of a prediction against ground truth.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelCounts {
    pub tp: u64,
    pub fp: u64,
    /// False negatives.
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl PixelCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `|pred ∪ gt|`, the Jaccard denominator.
    pub fn union(&self) -> u64 {
        self.tp + self.fp + self.fn_
    }

    /// Neither mask has any foreground.
    pub fn is_both_empty(&self) -> bool {
        self.union() == 0
    }
}

impl Add for PixelCounts {
    type Output = PixelCounts;

    fn add(self, rhs: PixelCounts) -> PixelCounts {
        PixelCounts {
            tp: self.tp + rhs.tp,
            fp: self.fp + rhs.fp,
            fn_: self.fn_ + rhs.fn_,
            tn: self.tn + rhs.tn,
        }
    }
}

impl AddAssign for PixelCounts {
    fn add_assign(&mut self, rhs: PixelCounts) {
        *self = *self + rhs;
    }
}

impl Sum for PixelCounts {
    fn sum<I: Iterator<Item = PixelCounts>>(iter: I) -> Self {
        iter.fold(PixelCounts::default(), Add::add)
    }
}

impl<'a> Sum<&'a PixelCounts> for PixelCounts {
    fn sum<I: Iterator<Item = &'a PixelCounts>>(iter: I) -> Self {
        iter.copied().sum()
    }
}

// ---------------------------------------------------------------------------
// Enumerations
// ---------------------------------------------------------------------------

macro_rules! code_enum {
    (
        $(#[$meta:meta])*
        $name:ident { $($variant:ident => $code:literal),+ $(,)? }
    ) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(
                #[serde(rename = $code)]
                $variant,
            )+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn code(self) -> &'static str {
                match self {
                    $($name::$variant => $code,)+
                }
            }

            /// Position in the frozen ordering.
            pub fn index(self) -> usize {
                self as usize
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.code())
            }
        }

        impl FromStr for $name {
            type Err = ModelError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($code => Ok($name::$variant),)+
                    other => Err(ModelError::UnknownCode {
                        kind: stringify!($name),
                        value: other.to_string(),
                    }),
                }
            }
        }
    };
}

code_enum! {
    /// The seven diagnosis classes, in submission-CSV column order.
    DiagnosisClass {
        Mel => "MEL",
        Nv => "NV",
        Bcc => "BCC",
        Akiec => "AKIEC",
        Bkl => "BKL",
        Df => "DF",
        Vasc => "VASC",
    }
}

pub const N_CLASSES: usize = 7;

impl DiagnosisClass {
    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

code_enum! {
    /// Disease stratum of a segmentation image. `Other` absorbs everything else.
    SegStratum {
        Mel => "MEL",
        Sebk => "SEBK",
        Nevi => "NEVI",
        Other => "OTHER",
    }
}

code_enum! {
    /// Test-set partition of a classification image.
    Partition {
        Internal => "INTERNAL",
        External => "EXTERNAL",
    }
}

code_enum! {
    /// Subset a classification report is computed over.
    Scope {
        All => "ALL",
        Internal => "INTERNAL",
        External => "EXTERNAL",
    }
}

impl Scope {
    pub fn contains(self, partition: Partition) -> bool {
        match self {
            Scope::All => true,
            Scope::Internal => partition == Partition::Internal,
            Scope::External => partition == Partition::External,
        }
    }
}

code_enum! {
    Task {
        Segmentation => "SEGMENTATION",
        Attributes => "ATTRIBUTES",
        Classification => "CLASSIFICATION",
    }
}

// ---------------------------------------------------------------------------
// Predictions
// ---------------------------------------------------------------------------

/// One row of a classification submission.
///
/// Probabilities are not required to sum to one; decisions use argmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub image_id: String,
    pub probs: [f64; N_CLASSES],
}

impl PredictionRecord {
    pub fn new(image_id: impl Into<String>, probs: [f64; N_CLASSES]) -> Result<Self, ModelError> {
        let record = Self {
            image_id: image_id.into(),
            probs,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (k, &p) in self.probs.iter().enumerate() {
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(ModelError::InvalidProbability {
                    image_id: self.image_id.clone(),
                    class: DiagnosisClass::ALL[k],
                    value: p,
                });
            }
        }
        Ok(())
    }

    pub fn prob(&self, class: DiagnosisClass) -> f64 {
        self.probs[class.index()]
    }
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

/// Attribute identifiers used when a manifest does not name its own. Taken
/// from the public challenge's attribute file naming, not from the scoring
/// protocol, which only fixes their number at five.
pub const DEFAULT_ATTRIBUTE_NAMES: [&str; 5] = [
    "globules",
    "milia_like_cyst",
    "negative_network",
    "pigment_network",
    "streaks",
];

pub const DEFAULT_THRESHOLD: f64 = 0.65;

/// File naming templates for submitted masks. `{image}` and `{attribute}`
/// are substituted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamingConvention {
    #[serde(default = "NamingConvention::default_segmentation")]
    pub segmentation: String,
    #[serde(default = "NamingConvention::default_attribute")]
    pub attribute: String,
}

impl NamingConvention {
    fn default_segmentation() -> String {
        "{image}_segmentation.png".to_string()
    }

    fn default_attribute() -> String {
        "{image}_attribute_{attribute}.png".to_string()
    }

    pub fn segmentation_file(&self, image_id: &str) -> String {
        self.segmentation.replace("{image}", image_id)
    }

    pub fn attribute_file(&self, image_id: &str, attribute: &str) -> String {
        self.attribute
            .replace("{image}", image_id)
            .replace("{attribute}", attribute)
    }
}

impl Default for NamingConvention {
    fn default() -> Self {
        Self {
            segmentation: Self::default_segmentation(),
            attribute: Self::default_attribute(),
        }
    }
}

/// Ground-truth reference carried by a manifest entry. Paths are stored as
/// written in the manifest, relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroundTruth {
    Mask(String),
    /// One mask path per attribute, in manifest attribute order.
    AttributeMasks(Vec<String>),
    Class(DiagnosisClass),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_id: String,
    pub truth: GroundTruth,
    pub stratum: Option<SegStratum>,
    pub partition: Option<Partition>,
}

impl ManifestEntry {
    pub fn label(&self) -> Option<DiagnosisClass> {
        match self.truth {
            GroundTruth::Class(c) => Some(c),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub task: Task,
    pub entries: Vec<ManifestEntry>,
    /// Attributes task only; empty otherwise.
    pub attribute_names: Vec<String>,
    /// Threshold recorded in the sidecar, if any.
    pub threshold: Option<f64>,
    pub naming: NamingConvention,
    /// Directory relative truth paths resolve against.
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    /// Validates invariants that do not depend on file contents.
    pub fn new(
        task: Task,
        entries: Vec<ManifestEntry>,
        attribute_names: Vec<String>,
    ) -> Result<Self, ModelError> {
        let manifest = Self {
            task,
            entries,
            attribute_names,
            threshold: None,
            naming: NamingConvention::default(),
            base_dir: PathBuf::from("."),
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let mut seen = std::collections::BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(e.image_id.as_str()) {
                return Err(ModelError::DuplicateImageId(e.image_id.clone()));
            }
            let ok = match (self.task, &e.truth) {
                (Task::Segmentation, GroundTruth::Mask(_)) => {
                    e.stratum.is_some() && e.partition.is_none()
                }
                (Task::Attributes, GroundTruth::AttributeMasks(paths)) => {
                    paths.len() == self.attribute_names.len()
                        && e.stratum.is_none()
                        && e.partition.is_none()
                }
                (Task::Classification, GroundTruth::Class(_)) => {
                    e.partition.is_some() && e.stratum.is_none()
                }
                _ => false,
            };
            if !ok {
                return Err(ModelError::EntryShape {
                    task: self.task,
                    image_id: e.image_id.clone(),
                });
            }
        }
        if self.task == Task::Attributes {
            if self.attribute_names.is_empty() {
                return Err(ModelError::NoAttributes);
            }
            let mut names = std::collections::BTreeSet::new();
            for a in &self.attribute_names {
                if !names.insert(a.as_str()) {
                    return Err(ModelError::DuplicateAttribute(a.clone()));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        let p = Path::new(relative);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn entry(&self, image_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.image_id == image_id)
    }

    /// Image ids in ascending byte order.
    pub fn sorted_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.entries.iter().map(|e| e.image_id.as_str()).collect();
        ids.sort_unstable();
        ids
    }

    pub fn partition_counts(&self) -> BTreeMap<Partition, usize> {
        let mut counts = BTreeMap::new();
        for p in self.entries.iter().filter_map(|e| e.partition) {
            *counts.entry(p).or_insert(0) += 1;
        }
        counts
    }

    pub fn stratum_counts(&self) -> BTreeMap<SegStratum, usize> {
        let mut counts = BTreeMap::new();
        for s in self.entries.iter().filter_map(|e| e.stratum) {
            *counts.entry(s).or_insert(0) += 1;
        }
        counts
    }
}

// ---------------------------------------------------------------------------
// Diagnostics and submission scores
// ---------------------------------------------------------------------------

/// Diagnostic attached to a score when a degenerate or tie case was resolved
/// by rule instead of by data.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "code", rename_all = "snake_case")]
pub enum Flag {
    BothEmpty { image_id: String },
    AttributeAbsentEverywhere { attribute: String },
    TieBroken { image_id: String },
    ZeroSupport { scope: Scope, class: DiagnosisClass },
    DegenerateLabels { scope: Scope, class: DiagnosisClass },
    EmptyScope { scope: Scope },
}

impl Flag {
    pub fn code(&self) -> &'static str {
        match self {
            Flag::BothEmpty { .. } => "both_empty",
            Flag::AttributeAbsentEverywhere { .. } => "attribute_absent_everywhere",
            Flag::TieBroken { .. } => "tie_broken",
            Flag::ZeroSupport { .. } => "zero_support",
            Flag::DegenerateLabels { .. } => "degenerate_labels",
            Flag::EmptyScope { .. } => "empty_scope",
        }
    }
}

/// One submission's metric bundle, the unit every ranking consumes.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SubmissionScore {
    pub submission_id: String,
    pub per_image: BTreeMap<String, BTreeMap<String, f64>>,
    pub aggregates: BTreeMap<String, f64>,
    /// Segmentation strata.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_stratum: BTreeMap<String, BTreeMap<String, f64>>,
    /// Classification partitions.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_partition: BTreeMap<String, BTreeMap<String, f64>>,
    #[serde(default)]
    pub flags: Vec<Flag>,
}

impl SubmissionScore {
    pub fn aggregate(&self, metric: &str) -> Option<f64> {
        self.aggregates.get(metric).copied()
    }

    pub fn partition_value(&self, partition: Partition, metric: &str) -> Option<f64> {
        self.per_partition
            .get(partition.code())
            .and_then(|m| m.get(metric))
            .copied()
    }
}
