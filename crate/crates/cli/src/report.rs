//! Report documents and their canonical serialization.
//!
//! Canonical form: struct fields in declaration order, maps in key order,
//! floats in shortest round-trip notation, two-space indentation and a
//! trailing newline.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use lesion_bench_core::dataset_io::{sidecar_path, DatasetError};
use lesion_bench_core::{Flag, SubmissionScore, Task};

use crate::CliError;

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Parameters {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

/// Report written by the `score-*` commands. `R` is the task-specific
/// results tree.
#[derive(Debug, Clone, Serialize)]
pub struct ReportDocument<R: Serialize> {
    pub schema_version: u32,
    pub tool_version: String,
    pub task: Task,
    pub submission_id: String,
    pub manifest_digest: String,
    pub parameters: Parameters,
    pub results: R,
    pub score: SubmissionScore,
    pub flags: Vec<Flag>,
}

/// The task-independent part of a report, as read back by `rank`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ReportHeader {
    pub schema_version: u32,
    pub task: Task,
    pub submission_id: String,
    pub manifest_digest: String,
    pub score: SubmissionScore,
}

pub fn to_canonical_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

/// `sha256:` followed by the hex digest of the manifest CSV bytes and then
/// the sidecar bytes.
pub fn manifest_digest(manifest_csv: &Path) -> Result<String, CliError> {
    let mut hasher = Sha256::new();
    for p in [manifest_csv.to_path_buf(), sidecar_path(manifest_csv)] {
        let bytes = fs::read(&p).map_err(|source| DatasetError::Io {
            path: p.clone(),
            source,
        })?;
        hasher.update(&bytes);
    }
    Ok(format!("sha256:{}", hex::encode(hasher.finalize())))
}

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Output {
        path: dir.to_path_buf(),
        source,
    })
}

pub fn write_file(path: PathBuf, contents: &[u8]) -> Result<(), CliError> {
    fs::write(&path, contents).map_err(|source| CliError::Output { path, source })
}

pub fn read_header(path: &Path) -> Result<ReportHeader, CliError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let header: ReportHeader = serde_json::from_str(&text)
        .map_err(|e| CliError::input("invalid_report", format!("{}: {e}", path.display())))?;
    if header.schema_version != REPORT_SCHEMA_VERSION {
        return Err(CliError::input(
            "invalid_report",
            format!(
                "{}: schema_version {} is not supported (expected {REPORT_SCHEMA_VERSION})",
                path.display(),
                header.schema_version
            ),
        ));
    }
    Ok(header)
}
