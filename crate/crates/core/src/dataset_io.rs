//! Manifest, mask and submission file formats.
//!
//! A manifest is a CSV file plus a JSON sidecar with the same stem
//! (`test.csv` + `test.json`). CSV headers by task:
//!
//! | task           | header                               |
//! |----------------|--------------------------------------|
//! | SEGMENTATION   | `image,mask,stratum`                 |
//! | ATTRIBUTES     | `image,<attribute 1>,<attribute 2>…` |
//! | CLASSIFICATION | `image,label,partition`              |
//!
//! Mask paths are relative to the manifest's directory. Masks are 8-bit PNG;
//! a gray level of 128 or more is foreground.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{ColorType, GrayImage, ImageFormat};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ModelError;
use crate::mask_metrics::AttributeKey;
use crate::model::{
    BinaryMask, DatasetManifest, DiagnosisClass, GroundTruth, ManifestEntry, NamingConvention,
    Partition, PredictionRecord, SegStratum, Task, N_CLASSES,
};

pub const SIDECAR_SCHEMA_VERSION: u32 = 1;
pub const FOREGROUND_LEVEL: u8 = 128;
pub const CLASSIFICATION_HEADER: &str = "image,MEL,NV,BCC,AKIEC,BKL,DF,VASC";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}{}: {message}", .path.display(), .field.as_deref().map(|f| format!(" field {f}")).unwrap_or_default())]
    Parse {
        path: PathBuf,
        line: u64,
        field: Option<String>,
        message: String,
    },
    #[error("{}:{line}: duplicate image id {image_id:?}", .path.display())]
    DuplicateImageId {
        path: PathBuf,
        line: u64,
        image_id: String,
    },
    #[error("{}:{line}: missing field {field}", .path.display())]
    MissingField {
        path: PathBuf,
        line: u64,
        field: String,
    },
    #[error("{}: sidecar: {message}", .path.display())]
    Sidecar { path: PathBuf, message: String },
    #[error("{}: {source}", .path.display())]
    Invalid {
        path: PathBuf,
        #[source]
        source: ModelError,
    },
    #[error("{}: cannot decode image: {message}", .path.display())]
    Decode { path: PathBuf, message: String },
    #[error("{}: unsupported format: {message}", .path.display())]
    UnsupportedFormat { path: PathBuf, message: String },
    #[error("{}: header must be {expected:?}, found {found:?}", .path.display())]
    HeaderMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("{}:{row} column {column}: value {value:?} is outside [0, 1]", .path.display())]
    ValueOutOfRange {
        path: PathBuf,
        row: u64,
        column: String,
        value: String,
    },
    #[error("{}: no rows for {} image(s): {}", .path.display(), .ids.len(), .ids.join(", "))]
    MissingRows { path: PathBuf, ids: Vec<String> },
    #[error("{}: rows for {} image(s) not in the manifest: {}", .path.display(), .ids.len(), .ids.join(", "))]
    ExtraRows { path: PathBuf, ids: Vec<String> },
    #[error("{}: missing prediction for {} image(s): {}", .path.display(), .ids.len(), .ids.join(", "))]
    MissingPrediction { path: PathBuf, ids: Vec<String> },
}

impl DatasetError {
    pub fn code(&self) -> &'static str {
        match self {
            DatasetError::Io { .. } => "io_error",
            DatasetError::Parse { .. } => "parse_error",
            DatasetError::DuplicateImageId { .. } => "duplicate_image_id",
            DatasetError::MissingField { .. } => "missing_field",
            DatasetError::Sidecar { .. } => "sidecar_error",
            DatasetError::Invalid { source, .. } => source.code(),
            DatasetError::Decode { .. } => "decode_error",
            DatasetError::UnsupportedFormat { .. } => "unsupported_format",
            DatasetError::HeaderMismatch { .. } => "header_mismatch",
            DatasetError::ValueOutOfRange { .. } => "value_out_of_range",
            DatasetError::MissingRows { .. } => "missing_rows",
            DatasetError::ExtraRows { .. } => "extra_rows",
            DatasetError::MissingPrediction { .. } => "missing_prediction",
        }
    }
}

/// Non-fatal finding while loading a submission.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LoadWarning {
    UnexpectedFile(PathBuf),
}

impl LoadWarning {
    pub fn code(&self) -> &'static str {
        match self {
            LoadWarning::UnexpectedFile(_) => "unexpected_file",
        }
    }
}

impl fmt::Display for LoadWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LoadWarning::UnexpectedFile(p) => {
                write!(f, "{}: file is not part of the submission", p.display())
            }
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    schema_version: u32,
    task: Task,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    attribute_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    threshold: Option<f64>,
    #[serde(default)]
    naming: NamingConvention,
}

/// `<stem>.json` next to the manifest CSV.
pub fn sidecar_path(manifest_csv: &Path) -> PathBuf {
    manifest_csv.with_extension("json")
}

fn load_sidecar(path: &Path) -> Result<Sidecar, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| DatasetError::Sidecar {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if sidecar.schema_version != SIDECAR_SCHEMA_VERSION {
        return Err(DatasetError::Sidecar {
            path: path.to_path_buf(),
            message: format!(
                "unsupported schema_version {} (expected {SIDECAR_SCHEMA_VERSION})",
                sidecar.schema_version
            ),
        });
    }
    if let Some(t) = sidecar.threshold {
        if !(t > 0.0 && t < 1.0) {
            return Err(DatasetError::Sidecar {
                path: path.to_path_buf(),
                message: format!("threshold {t} is outside (0, 1)"),
            });
        }
    }
    Ok(sidecar)
}

fn manifest_header(task: Task, attribute_names: &[String]) -> Vec<String> {
    let mut h = vec!["image".to_string()];
    match task {
        Task::Segmentation => h.extend(["mask".to_string(), "stratum".to_string()]),
        Task::Attributes => h.extend(attribute_names.iter().cloned()),
        Task::Classification => h.extend(["label".to_string(), "partition".to_string()]),
    }
    h
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes())
}

/// Reads and validates a manifest CSV and its JSON sidecar.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, DatasetError> {
    let sidecar = load_sidecar(&sidecar_path(path))?;
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let parse_err = |line: u64, field: Option<&str>, message: String| DatasetError::Parse {
        path: path.to_path_buf(),
        line,
        field: field.map(str::to_string),
        message,
    };

    let expected = manifest_header(sidecar.task, &sidecar.attribute_names);
    let mut reader = csv_reader(&text);
    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| parse_err(1, None, e.to_string()))?,
        None => csv::StringRecord::new(),
    };
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(DatasetError::HeaderMismatch {
            path: path.to_path_buf(),
            expected: expected.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }

    let mut entries = Vec::new();
    let mut seen = BTreeSet::new();
    for record in records {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, None, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| -> Result<&str, DatasetError> {
            match record.get(i) {
                Some(v) if !v.is_empty() => Ok(v),
                _ => Err(DatasetError::MissingField {
                    path: path.to_path_buf(),
                    line,
                    field: expected[i].clone(),
                }),
            }
        };
        if record.len() > expected.len() {
            return Err(parse_err(
                line,
                None,
                format!("expected {} fields, found {}", expected.len(), record.len()),
            ));
        }
        let image_id = field(0)?.to_string();
        let parse_code = |i: usize| -> Result<_, DatasetError> {
            let v = field(i)?;
            Ok((v, i))
        };
        let entry = match sidecar.task {
            Task::Segmentation => {
                let mask = field(1)?.to_string();
                let (s, i) = parse_code(2)?;
                let stratum: SegStratum = s
                    .parse()
                    .map_err(|e: ModelError| parse_err(line, Some(&expected[i]), e.to_string()))?;
                ManifestEntry {
                    image_id: image_id.clone(),
                    truth: GroundTruth::Mask(mask),
                    stratum: Some(stratum),
                    partition: None,
                }
            }
            Task::Attributes => {
                let paths = (1..expected.len())
                    .map(|i| field(i).map(str::to_string))
                    .collect::<Result<Vec<_>, _>>()?;
                ManifestEntry {
                    image_id: image_id.clone(),
                    truth: GroundTruth::AttributeMasks(paths),
                    stratum: None,
                    partition: None,
                }
            }
            Task::Classification => {
                let (l, li) = parse_code(1)?;
                let label: DiagnosisClass = l
                    .parse()
                    .map_err(|e: ModelError| parse_err(line, Some(&expected[li]), e.to_string()))?;
                let (p, pi) = parse_code(2)?;
                let partition: Partition = p
                    .parse()
                    .map_err(|e: ModelError| parse_err(line, Some(&expected[pi]), e.to_string()))?;
                ManifestEntry {
                    image_id: image_id.clone(),
                    truth: GroundTruth::Class(label),
                    stratum: None,
                    partition: Some(partition),
                }
            }
        };
        if !seen.insert(image_id.clone()) {
            return Err(DatasetError::DuplicateImageId {
                path: path.to_path_buf(),
                line,
                image_id,
            });
        }
        entries.push(entry);
    }

    let mut manifest = DatasetManifest {
        task: sidecar.task,
        entries,
        attribute_names: sidecar.attribute_names,
        threshold: sidecar.threshold,
        naming: sidecar.naming,
        base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    manifest
        .validate()
        .map_err(|source| DatasetError::Invalid {
            path: path.to_path_buf(),
            source,
        })?;
    if manifest.base_dir.as_os_str().is_empty() {
        manifest.base_dir = PathBuf::from(".");
    }
    Ok(manifest)
}

/// Manifest CSV text, entries in stored order.
pub fn format_manifest_csv(manifest: &DatasetManifest) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(manifest_header(manifest.task, &manifest.attribute_names))
        .expect("in-memory write");
    for e in &manifest.entries {
        let mut row = vec![e.image_id.clone()];
        match &e.truth {
            GroundTruth::Mask(p) => {
                row.push(p.clone());
                row.push(e.stratum.unwrap_or(SegStratum::Other).code().to_string());
            }
            GroundTruth::AttributeMasks(paths) => row.extend(paths.iter().cloned()),
            GroundTruth::Class(c) => {
                row.push(c.code().to_string());
                row.push(
                    e.partition
                        .unwrap_or(Partition::Internal)
                        .code()
                        .to_string(),
                );
            }
        }
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}

fn format_sidecar(manifest: &DatasetManifest) -> String {
    let sidecar = Sidecar {
        schema_version: SIDECAR_SCHEMA_VERSION,
        task: manifest.task,
        attribute_names: manifest.attribute_names.clone(),
        threshold: manifest.threshold,
        naming: manifest.naming.clone(),
    };
    let mut s = serde_json::to_string_pretty(&sidecar).expect("serializable");
    s.push('\n');
    s
}

/// Writes the manifest CSV to `path` and its sidecar next to it.
pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<(), DatasetError> {
    fs::write(path, format_manifest_csv(manifest)).map_err(io_err(path))?;
    let side = sidecar_path(path);
    fs::write(&side, format_sidecar(manifest)).map_err(io_err(&side))
}

// ---------------------------------------------------------------------------
// Masks
// ---------------------------------------------------------------------------

/// Decodes an 8-bit PNG and binarizes it at [`FOREGROUND_LEVEL`].
pub fn decode_mask(bytes: &[u8], path: &Path) -> Result<BinaryMask, DatasetError> {
    match image::guess_format(bytes) {
        Ok(ImageFormat::Png) => {}
        Ok(other) => {
            return Err(DatasetError::UnsupportedFormat {
                path: path.to_path_buf(),
                message: format!("{other:?} images are not accepted, masks must be PNG"),
            })
        }
        Err(_) => {
            return Err(DatasetError::Decode {
                path: path.to_path_buf(),
                message: "not a recognizable image".to_string(),
            })
        }
    }
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(|e| {
        DatasetError::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    })?;
    match img.color() {
        ColorType::L8 | ColorType::La8 | ColorType::Rgb8 | ColorType::Rgba8 => {}
        other => {
            return Err(DatasetError::UnsupportedFormat {
                path: path.to_path_buf(),
                message: format!("{other:?} pixels, expected 8-bit gray or color"),
            })
        }
    }
    let gray = img.to_luma8();
    let (w, h) = gray.dimensions();
    let bits = gray
        .as_raw()
        .iter()
        .map(|&v| v >= FOREGROUND_LEVEL)
        .collect();
    BinaryMask::new(w as usize, h as usize, bits).map_err(|source| DatasetError::Invalid {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_mask(path: &Path) -> Result<BinaryMask, DatasetError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_mask(&bytes, path)
}

/// 8-bit grayscale PNG with foreground 255 and background 0.
pub fn encode_mask(mask: &BinaryMask) -> Vec<u8> {
    let raw: Vec<u8> = mask
        .bits()
        .iter()
        .map(|&b| if b { 255 } else { 0 })
        .collect();
    let img =
        GrayImage::from_raw(mask.width() as u32, mask.height() as u32, raw).expect("sized buffer");
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .expect("in-memory png encode");
    out.into_inner()
}

pub fn write_mask(mask: &BinaryMask, path: &Path) -> Result<(), DatasetError> {
    fs::write(path, encode_mask(mask)).map_err(io_err(path))
}

/// Decodes `jobs` in parallel. On failure the error of the first job in
/// input order is returned, independent of scheduling.
fn load_masks<K: Send + Clone + Ord>(
    jobs: Vec<(K, PathBuf)>,
) -> Result<BTreeMap<K, BinaryMask>, DatasetError> {
    let loaded: Vec<Result<(K, BinaryMask), DatasetError>> = jobs
        .into_par_iter()
        .map(|(k, p)| load_mask(&p).map(|m| (k, m)))
        .collect();
    loaded.into_iter().collect()
}

pub fn load_segmentation_truth(
    manifest: &DatasetManifest,
) -> Result<BTreeMap<String, BinaryMask>, DatasetError> {
    let jobs = manifest
        .entries
        .iter()
        .filter_map(|e| match &e.truth {
            GroundTruth::Mask(p) => Some((e.image_id.clone(), manifest.resolve(p))),
            _ => None,
        })
        .collect();
    load_masks(jobs)
}

pub fn load_attribute_truth(
    manifest: &DatasetManifest,
) -> Result<BTreeMap<AttributeKey, BinaryMask>, DatasetError> {
    let mut jobs = Vec::new();
    for e in &manifest.entries {
        if let GroundTruth::AttributeMasks(paths) = &e.truth {
            for (name, p) in manifest.attribute_names.iter().zip(paths) {
                jobs.push(((e.image_id.clone(), name.clone()), manifest.resolve(p)));
            }
        }
    }
    load_masks(jobs)
}

// ---------------------------------------------------------------------------
// Classification submissions
// ---------------------------------------------------------------------------

fn format_prob(p: f64) -> String {
    // shortest round-trip digits; integers print without a fraction
    format!("{p}")
}

pub fn format_classification_csv(records: &[PredictionRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CLASSIFICATION_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.image_id);
        for p in r.probs {
            out.push(',');
            out.push_str(&format_prob(p));
        }
        out.push('\n');
    }
    out
}

pub fn write_classification_csv(
    records: &[PredictionRecord],
    path: &Path,
) -> Result<(), DatasetError> {
    fs::write(path, format_classification_csv(records)).map_err(io_err(path))
}

fn parse_decimal(s: &str) -> Option<f64> {
    // plain or scientific notation only: no "inf", "nan", locale commas or spaces
    let ok = !s.is_empty()
        && s.bytes()
            .all(|b| b.is_ascii_digit() || matches!(b, b'.' | b'e' | b'E' | b'+' | b'-'))
        && s.bytes().any(|b| b.is_ascii_digit());
    if !ok {
        return None;
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Parses submission CSV text. `path` is used for diagnostics only.
pub fn parse_classification_str(
    text: &str,
    path: &Path,
    manifest: &DatasetManifest,
) -> Result<Vec<PredictionRecord>, DatasetError> {
    let first_line = text.split('\n').next().unwrap_or("");
    let first_line = first_line.strip_suffix('\r').unwrap_or(first_line);
    if first_line != CLASSIFICATION_HEADER {
        return Err(DatasetError::HeaderMismatch {
            path: path.to_path_buf(),
            expected: CLASSIFICATION_HEADER.to_string(),
            found: first_line.to_string(),
        });
    }
    let columns: Vec<&str> = CLASSIFICATION_HEADER.split(',').collect();
    let expected_ids: BTreeSet<&str> = manifest
        .entries
        .iter()
        .map(|e| e.image_id.as_str())
        .collect();

    let mut reader = csv_reader(text);
    let mut by_id: BTreeMap<String, PredictionRecord> = BTreeMap::new();
    let mut extra = Vec::new();
    for record in reader.records().skip(1) {
        let record = record.map_err(|e| DatasetError::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            field: None,
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        if record.len() != columns.len() {
            return Err(DatasetError::Parse {
                path: path.to_path_buf(),
                line,
                field: None,
                message: format!("expected {} fields, found {}", columns.len(), record.len()),
            });
        }
        let image_id = record[0].to_string();
        if image_id.is_empty() {
            return Err(DatasetError::MissingField {
                path: path.to_path_buf(),
                line,
                field: "image".to_string(),
            });
        }
        let mut probs = [0.0; N_CLASSES];
        for (k, prob) in probs.iter_mut().enumerate() {
            let raw = &record[k + 1];
            let v = parse_decimal(raw).ok_or_else(|| DatasetError::Parse {
                path: path.to_path_buf(),
                line,
                field: Some(columns[k + 1].to_string()),
                message: format!("{raw:?} is not a decimal number"),
            })?;
            if !(0.0..=1.0).contains(&v) {
                return Err(DatasetError::ValueOutOfRange {
                    path: path.to_path_buf(),
                    row: line,
                    column: columns[k + 1].to_string(),
                    value: raw.to_string(),
                });
            }
            *prob = v;
        }
        if by_id.contains_key(&image_id) {
            return Err(DatasetError::DuplicateImageId {
                path: path.to_path_buf(),
                line,
                image_id,
            });
        }
        if !expected_ids.contains(image_id.as_str()) {
            extra.push(image_id.clone());
        }
        by_id.insert(image_id.clone(), PredictionRecord { image_id, probs });
    }
    if !extra.is_empty() {
        extra.sort();
        return Err(DatasetError::ExtraRows {
            path: path.to_path_buf(),
            ids: extra,
        });
    }
    let missing: Vec<String> = manifest
        .sorted_ids()
        .into_iter()
        .filter(|id| !by_id.contains_key(*id))
        .map(str::to_string)
        .collect();
    if !missing.is_empty() {
        return Err(DatasetError::MissingRows {
            path: path.to_path_buf(),
            ids: missing,
        });
    }
    // manifest order
    Ok(manifest
        .entries
        .iter()
        .map(|e| by_id.remove(&e.image_id).expect("checked above"))
        .collect())
}

pub fn parse_classification_csv(
    path: &Path,
    manifest: &DatasetManifest,
) -> Result<Vec<PredictionRecord>, DatasetError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let text = String::from_utf8(bytes).map_err(|e| DatasetError::Parse {
        path: path.to_path_buf(),
        line: 0,
        field: None,
        message: format!("not UTF-8: {e}"),
    })?;
    parse_classification_str(&text, path, manifest)
}

// ---------------------------------------------------------------------------
// Mask submissions
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum SubmissionPayload {
    Segmentation(BTreeMap<String, BinaryMask>),
    Attributes(BTreeMap<AttributeKey, BinaryMask>),
    Classification(Vec<PredictionRecord>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubmissionBundle {
    pub submission_id: String,
    pub task: Task,
    pub payload: SubmissionPayload,
    pub warnings: Vec<LoadWarning>,
}

fn list_files(dir: &Path) -> Result<BTreeSet<String>, DatasetError> {
    let mut names = BTreeSet::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        if entry.file_type().map_err(io_err(dir))?.is_file() {
            names.insert(entry.file_name().to_string_lossy().into_owned());
        }
    }
    Ok(names)
}

fn dir_name(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "submission".to_string())
}

/// Loads a directory of predicted masks named per the manifest's naming
/// convention. Files the manifest does not expect produce warnings.
pub fn load_segmentation_submission(
    dir: &Path,
    manifest: &DatasetManifest,
) -> Result<SubmissionBundle, DatasetError> {
    let present = list_files(dir)?;
    let mut ids: Vec<&str> = manifest.sorted_ids();
    ids.dedup();

    let (expected, payload) = match manifest.task {
        Task::Segmentation => {
            let files: Vec<(String, String)> = ids
                .iter()
                .map(|id| (id.to_string(), manifest.naming.segmentation_file(id)))
                .collect();
            let missing: Vec<String> = files
                .iter()
                .filter(|(_, f)| !present.contains(f))
                .map(|(id, _)| id.clone())
                .collect();
            if !missing.is_empty() {
                return Err(DatasetError::MissingPrediction {
                    path: dir.to_path_buf(),
                    ids: missing,
                });
            }
            let expected: BTreeSet<String> = files.iter().map(|(_, f)| f.clone()).collect();
            let masks = load_masks(files.into_iter().map(|(id, f)| (id, dir.join(f))).collect())?;
            (expected, SubmissionPayload::Segmentation(masks))
        }
        Task::Attributes => {
            let mut files = Vec::new();
            for id in &ids {
                for a in &manifest.attribute_names {
                    files.push((
                        (id.to_string(), a.clone()),
                        manifest.naming.attribute_file(id, a),
                    ));
                }
            }
            let missing: Vec<String> = files
                .iter()
                .filter(|(_, f)| !present.contains(f))
                .map(|((id, a), _)| format!("{id}/{a}"))
                .collect();
            if !missing.is_empty() {
                return Err(DatasetError::MissingPrediction {
                    path: dir.to_path_buf(),
                    ids: missing,
                });
            }
            let expected: BTreeSet<String> = files.iter().map(|(_, f)| f.clone()).collect();
            let masks = load_masks(files.into_iter().map(|(k, f)| (k, dir.join(f))).collect())?;
            (expected, SubmissionPayload::Attributes(masks))
        }
        Task::Classification => {
            return Err(DatasetError::Invalid {
                path: dir.to_path_buf(),
                source: ModelError::EntryShape {
                    task: Task::Classification,
                    image_id: String::new(),
                },
            })
        }
    };

    let warnings = present
        .difference(&expected)
        .map(|f| LoadWarning::UnexpectedFile(dir.join(f)))
        .collect();
    Ok(SubmissionBundle {
        submission_id: dir_name(dir),
        task: manifest.task,
        payload,
        warnings,
    })
}

/// Loads a classification CSV into a bundle named after the file stem.
pub fn load_classification_submission(
    path: &Path,
    manifest: &DatasetManifest,
) -> Result<SubmissionBundle, DatasetError> {
    let records = parse_classification_csv(path, manifest)?;
    Ok(SubmissionBundle {
        submission_id: path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "submission".to_string()),
        task: Task::Classification,
        payload: SubmissionPayload::Classification(records),
        warnings: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use tempfile::TempDir;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    fn sidecar(task: &str, extra: &str) -> String {
        format!(r#"{{"schema_version": 1, "task": "{task}"{extra}}}"#)
    }

    fn gray_png(w: u32, h: u32, values: &[u8]) -> Vec<u8> {
        let img = GrayImage::from_raw(w, h, values.to_vec()).unwrap();
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png).unwrap();
        out.into_inner()
    }

    fn cls_manifest(dir: &Path, rows: &str) -> DatasetManifest {
        write(dir, "m.json", &sidecar("CLASSIFICATION", ""));
        let p = write(dir, "m.csv", &format!("image,label,partition\n{rows}"));
        load_manifest(&p).unwrap()
    }

    #[test]
    fn classification_manifest_loads_with_partition_counts() {
        let d = TempDir::new().unwrap();
        let m = cls_manifest(d.path(), "a,MEL,INTERNAL\nb,NV,INTERNAL\nc,VASC,EXTERNAL\n");
        assert_eq!(m.len(), 3);
        let counts = m.partition_counts();
        assert_eq!(counts[&Partition::Internal], 2);
        assert_eq!(counts[&Partition::External], 1);
        assert_eq!(m.entries[2].label(), Some(DiagnosisClass::Vasc));
    }

    #[test]
    fn manifest_validation_errors() {
        let d = TempDir::new().unwrap();
        write(d.path(), "m.json", &sidecar("CLASSIFICATION", ""));
        let p = write(
            d.path(),
            "m.csv",
            "image,label,partition\na,MEL,INTERNAL\na,NV,EXTERNAL\n",
        );
        match load_manifest(&p).unwrap_err() {
            DatasetError::DuplicateImageId { image_id, line, .. } => {
                assert_eq!(image_id, "a");
                assert_eq!(line, 3);
            }
            e => panic!("unexpected {e}"),
        }
        write(d.path(), "m.csv", "image,label,partition\na,MEL\n");
        assert!(
            matches!(load_manifest(&p).unwrap_err(), DatasetError::MissingField { field, .. } if field == "partition")
        );
        write(
            d.path(),
            "m.csv",
            "image,label,partition\na,MELANOMA,INTERNAL\n",
        );
        assert!(matches!(
            load_manifest(&p).unwrap_err(),
            DatasetError::Parse { line: 2, .. }
        ));
        write(d.path(), "m.csv", "image,partition,label\n");
        assert!(matches!(
            load_manifest(&p).unwrap_err(),
            DatasetError::HeaderMismatch { .. }
        ));
        write(
            d.path(),
            "m.json",
            r#"{"schema_version": 2, "task": "CLASSIFICATION"}"#,
        );
        assert!(matches!(
            load_manifest(&p).unwrap_err(),
            DatasetError::Sidecar { .. }
        ));
        fs::remove_file(d.path().join("m.json")).unwrap();
        assert!(matches!(
            load_manifest(&p).unwrap_err(),
            DatasetError::Io { .. }
        ));
    }

    #[test]
    fn attributes_manifest_needs_names() {
        let d = TempDir::new().unwrap();
        write(d.path(), "m.json", &sidecar("ATTRIBUTES", ""));
        let p = write(d.path(), "m.csv", "image\n");
        assert!(matches!(
            load_manifest(&p).unwrap_err(),
            DatasetError::Invalid { .. }
        ));
        write(
            d.path(),
            "m.json",
            &sidecar(
                "ATTRIBUTES",
                r#", "attribute_names": ["streaks", "globules"]"#,
            ),
        );
        write(
            d.path(),
            "m.csv",
            "image,streaks,globules\nx,x_s.png,x_g.png\n",
        );
        let m = load_manifest(&p).unwrap();
        assert_eq!(m.attribute_names, ["streaks", "globules"]);
        assert_eq!(
            m.entries[0].truth,
            GroundTruth::AttributeMasks(vec!["x_s.png".into(), "x_g.png".into()])
        );
    }

    #[test]
    fn manifest_write_read_round_trip() {
        let d = TempDir::new().unwrap();
        let mut m = DatasetManifest::new(
            Task::Segmentation,
            vec![ManifestEntry {
                image_id: "ISIC_1".into(),
                truth: GroundTruth::Mask("truth/ISIC_1.png".into()),
                stratum: Some(SegStratum::Sebk),
                partition: None,
            }],
            vec![],
        )
        .unwrap();
        m.threshold = Some(0.7);
        let p = d.path().join("seg.csv");
        write_manifest(&m, &p).unwrap();
        let back = load_manifest(&p).unwrap();
        m.base_dir = d.path().to_path_buf();
        assert_eq!(back, m);
    }

    #[test]
    fn mask_threshold_rule() {
        let d = TempDir::new().unwrap();
        let p = d.path().join("m.png");
        fs::write(&p, gray_png(2, 2, &[0, 255, 127, 128])).unwrap();
        let m = load_mask(&p).unwrap();
        assert_eq!(m.bits(), &[false, true, false, true]);
        fs::write(&p, gray_png(3, 2, &[0; 6])).unwrap();
        let m = load_mask(&p).unwrap();
        assert!(m.is_empty());
        assert_eq!(m.dims(), (3, 2));
    }

    #[test]
    fn mask_format_errors() {
        let p = Path::new("x.png");
        assert!(matches!(
            decode_mask(b"hello", p),
            Err(DatasetError::Decode { .. })
        ));
        // a BMP header is recognized but refused
        assert!(matches!(
            decode_mask(b"BM\0\0\0\0\0\0\0\0", p),
            Err(DatasetError::UnsupportedFormat { .. })
        ));
        let img =
            image::ImageBuffer::<image::Luma<u16>, _>::from_raw(1, 1, vec![65535u16]).unwrap();
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png).unwrap();
        assert!(matches!(
            decode_mask(out.get_ref(), p),
            Err(DatasetError::UnsupportedFormat { .. })
        ));
    }

    #[test]
    fn rgb_masks_are_gray_converted() {
        let img = image::RgbImage::from_raw(2, 1, vec![255, 255, 255, 10, 10, 10]).unwrap();
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png).unwrap();
        let m = decode_mask(out.get_ref(), Path::new("rgb.png")).unwrap();
        assert_eq!(m.bits(), &[true, false]);
    }

    #[test]
    fn classification_csv_examples() {
        let d = TempDir::new().unwrap();
        let m = cls_manifest(d.path(), "img1,MEL,INTERNAL\n");
        let p = write(
            d.path(),
            "s.csv",
            "image,MEL,NV,BCC,AKIEC,BKL,DF,VASC\nimg1,1,0,0,0,0,0,0\n",
        );
        let recs = parse_classification_csv(&p, &m).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].probs, [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let d2 = crate::classification_metrics::argmax_decision(&recs[0]).unwrap();
        assert_eq!(d2.class, DiagnosisClass::Mel);

        write(
            d.path(),
            "s.csv",
            "image,MEL,NV,BCC,AKIEC,BKL,DF,VASC\nimg1,1.2,0,0,0,0,0,0\n",
        );
        match parse_classification_csv(&p, &m).unwrap_err() {
            DatasetError::ValueOutOfRange {
                row, column, value, ..
            } => {
                assert_eq!((row, column.as_str(), value.as_str()), (2, "MEL", "1.2"));
            }
            e => panic!("unexpected {e}"),
        }

        write(
            d.path(),
            "s.csv",
            "image,NV,MEL,BCC,AKIEC,BKL,DF,VASC\nimg1,1,0,0,0,0,0,0\n",
        );
        assert!(matches!(
            parse_classification_csv(&p, &m).unwrap_err(),
            DatasetError::HeaderMismatch { .. }
        ));
    }

    #[test]
    fn classification_csv_row_set_errors() {
        let d = TempDir::new().unwrap();
        let m = cls_manifest(d.path(), "a,MEL,INTERNAL\nb,NV,INTERNAL\nc,NV,EXTERNAL\n");
        let h = CLASSIFICATION_HEADER;
        let p = write(d.path(), "s.csv", &format!("{h}\na,1,0,0,0,0,0,0\n"));
        assert!(matches!(parse_classification_csv(&p, &m).unwrap_err(),
            DatasetError::MissingRows { ids, .. } if ids == ["b", "c"]));
        write(
            d.path(),
            "s.csv",
            &format!("{h}\na,1,0,0,0,0,0,0\nb,1,0,0,0,0,0,0\nc,1,0,0,0,0,0,0\nz,0,0,0,0,0,0,1\n"),
        );
        assert!(matches!(parse_classification_csv(&p, &m).unwrap_err(),
            DatasetError::ExtraRows { ids, .. } if ids == ["z"]));
        write(
            d.path(),
            "s.csv",
            &format!("{h}\na,1,0,0,0,0,0,0\na,1,0,0,0,0,0,0\n"),
        );
        assert!(matches!(
            parse_classification_csv(&p, &m).unwrap_err(),
            DatasetError::DuplicateImageId { line: 3, .. }
        ));
        write(d.path(), "s.csv", &format!("{h}\na,\"0,5\",0,0,0,0,0,0\n"));
        assert!(matches!(parse_classification_csv(&p, &m).unwrap_err(),
            DatasetError::Parse { field: Some(f), .. } if f == "MEL"));
        write(d.path(), "s.csv", &format!("{h}\na,NaN,0,0,0,0,0,0\n"));
        assert!(matches!(
            parse_classification_csv(&p, &m).unwrap_err(),
            DatasetError::Parse { .. }
        ));
        write(
            d.path(),
            "s.csv",
            &format!("{h}\r\na,1e-3,0,0,0,0,0,0\r\nb,0,1,0,0,0,0,0\r\nc,0,1,0,0,0,0,0\r\n"),
        );
        let recs = parse_classification_csv(&p, &m).unwrap();
        assert_eq!(recs[0].probs[0], 0.001);
        write(
            d.path(),
            "s.csv",
            &format!("\u{feff}{h}\na,1,0,0,0,0,0,0\n"),
        );
        assert!(matches!(
            parse_classification_csv(&p, &m).unwrap_err(),
            DatasetError::HeaderMismatch { .. }
        ));
    }

    #[test]
    fn segmentation_submission_directory() {
        let d = TempDir::new().unwrap();
        let root = d.path();
        fs::create_dir(root.join("truth")).unwrap();
        fs::create_dir(root.join("team")).unwrap();
        let mask = BinaryMask::from_fn(4, 4, |x, y| x + y < 3).unwrap();
        for id in ["a", "b"] {
            write_mask(&mask, &root.join("truth").join(format!("{id}.png"))).unwrap();
            write_mask(
                &mask,
                &root.join("team").join(format!("{id}_segmentation.png")),
            )
            .unwrap();
        }
        write(root, "m.json", &sidecar("SEGMENTATION", ""));
        let mp = write(
            root,
            "m.csv",
            "image,mask,stratum\na,truth/a.png,MEL\nb,truth/b.png,OTHER\n",
        );
        let m = load_manifest(&mp).unwrap();
        let truth = load_segmentation_truth(&m).unwrap();
        assert_eq!(truth["a"], mask);

        let b = load_segmentation_submission(&root.join("team"), &m).unwrap();
        assert_eq!(b.submission_id, "team");
        assert!(b.warnings.is_empty());
        match &b.payload {
            SubmissionPayload::Segmentation(p) => assert_eq!(p.len(), 2),
            _ => panic!(),
        }

        write(&root.join("team"), "notes.txt", "hi");
        let b = load_segmentation_submission(&root.join("team"), &m).unwrap();
        assert_eq!(
            b.warnings,
            vec![LoadWarning::UnexpectedFile(
                root.join("team").join("notes.txt")
            )]
        );

        fs::remove_file(root.join("team").join("b_segmentation.png")).unwrap();
        assert!(matches!(
            load_segmentation_submission(&root.join("team"), &m).unwrap_err(),
            DatasetError::MissingPrediction { ids, .. } if ids == ["b"]
        ));
    }

    #[test]
    fn attribute_submission_naming() {
        let d = TempDir::new().unwrap();
        let root = d.path();
        let mask = BinaryMask::empty(2, 2).unwrap();
        for a in ["streaks", "globules"] {
            write_mask(&mask, &root.join(format!("t_{a}.png"))).unwrap();
            write_mask(&mask, &root.join(format!("x_attribute_{a}.png"))).unwrap();
        }
        write(
            root,
            "m.json",
            &sidecar(
                "ATTRIBUTES",
                r#", "attribute_names": ["streaks", "globules"]"#,
            ),
        );
        let mp = write(
            root,
            "m.csv",
            "image,streaks,globules\nx,t_streaks.png,t_globules.png\n",
        );
        let m = load_manifest(&mp).unwrap();
        assert_eq!(load_attribute_truth(&m).unwrap().len(), 2);
        let b = load_segmentation_submission(root, &m).unwrap();
        match b.payload {
            SubmissionPayload::Attributes(p) => {
                assert!(p.contains_key(&("x".to_string(), "globules".to_string())));
            }
            _ => panic!(),
        }
        // the truth masks and manifest files are unexpected in a submission dir
        assert_eq!(b.warnings.len(), 4);
    }

    proptest! {
        #[test]
        fn mask_png_round_trip(w in 1usize..20, h in 1usize..20, seed in any::<u64>()) {
            let mut s = seed | 1;
            let m = BinaryMask::from_fn(w, h, |_, _| { s ^= s << 13; s ^= s >> 7; s ^= s << 17; s & 1 == 1 }).unwrap();
            let back = decode_mask(&encode_mask(&m), Path::new("m.png")).unwrap();
            prop_assert_eq!(back, m);
        }

        #[test]
        fn classification_csv_round_trip(values in prop::collection::vec(prop::array::uniform7(0.0f64..=1.0), 1..20)) {
            let d = TempDir::new().unwrap();
            let rows: String = (0..values.len()).map(|i| format!("r{i},NV,INTERNAL\n")).collect();
            let m = cls_manifest(d.path(), &rows);
            let recs: Vec<_> = values.iter().enumerate()
                .map(|(i, p)| PredictionRecord::new(format!("r{i}"), *p).unwrap())
                .collect();
            let text = format_classification_csv(&recs);
            let back = parse_classification_str(&text, Path::new("s.csv"), &m).unwrap();
            prop_assert_eq!(back, recs);
        }
    }
}
