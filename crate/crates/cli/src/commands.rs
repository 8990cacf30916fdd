use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use lesion_bench_core::classification_metrics::{score_classification, ClsGaps, ClsReport};
use lesion_bench_core::dataset_io::{self, DatasetError, LoadWarning, SubmissionPayload};
use lesion_bench_core::mask_metrics::{
    aggregate_attribute_jaccard, check_threshold, derive_threshold as derive, score_segmentation,
    AttributeScore, SegReport,
};
use lesion_bench_core::ranking_analysis::{
    build_leaderboard, failure_slope, gap_histogram, rank_divergence, GapHistogram, Leaderboard,
    RankDivergence, SlopeFit,
};
use lesion_bench_core::synth::{write_synth_datasets, SynthConfig};
use lesion_bench_core::{DatasetManifest, Task, DEFAULT_THRESHOLD};

use crate::report::{
    create_dir, manifest_digest, read_header, to_canonical_json, write_file, Parameters,
    ReportDocument, ReportHeader, REPORT_SCHEMA_VERSION, TOOL_VERSION,
};
use crate::svg::gap_histogram_svg;
use crate::{CliError, Diagnostic, Level};

pub const REPORT_FILE: &str = "report.json";
pub const PER_IMAGE_FILE: &str = "per_image.csv";

fn load_manifest(path: &Path, task: Task) -> Result<DatasetManifest, CliError> {
    let manifest = dataset_io::load_manifest(path)?;
    if manifest.task != task {
        return Err(CliError::input(
            "wrong_task",
            format!(
                "{}: manifest is for {}, expected {task}",
                path.display(),
                manifest.task
            ),
        ));
    }
    Ok(manifest)
}

fn warnings(w: &[LoadWarning]) -> Vec<Diagnostic> {
    w.iter()
        .map(|w| Diagnostic::new(Level::Warning, w.code(), w.to_string()))
        .collect()
}

fn csv_text(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

fn write_outputs<R: Serialize>(
    out: &Path,
    doc: &ReportDocument<R>,
    per_image: String,
) -> Result<(), CliError> {
    create_dir(out)?;
    write_file(out.join(REPORT_FILE), to_canonical_json(doc).as_bytes())?;
    write_file(out.join(PER_IMAGE_FILE), per_image.as_bytes())
}

pub fn score_seg(
    manifest_path: &Path,
    submission_dir: &Path,
    threshold: Option<f64>,
    out: &Path,
    submission_id: Option<&str>,
) -> Result<Vec<Diagnostic>, CliError> {
    if let Some(t) = threshold {
        check_threshold(t)?;
    }
    let manifest = load_manifest(manifest_path, Task::Segmentation)?;
    let threshold = threshold
        .or(manifest.threshold)
        .unwrap_or(DEFAULT_THRESHOLD);
    let digest = manifest_digest(manifest_path)?;
    let truth = dataset_io::load_segmentation_truth(&manifest)?;
    let bundle = dataset_io::load_segmentation_submission(submission_dir, &manifest)?;
    let SubmissionPayload::Segmentation(predictions) = &bundle.payload else {
        unreachable!("segmentation manifest yields segmentation payload")
    };
    let scoring = score_segmentation(&manifest, &truth, predictions, threshold)?;
    let id = submission_id.unwrap_or(&bundle.submission_id);

    let per_image = csv_text(
        &[
            "image_id",
            "jaccard",
            "thresholded_jaccard",
            "failed",
            "stratum",
        ],
        scoring.images.iter().map(|s| {
            vec![
                s.image_id.clone(),
                s.jaccard.to_string(),
                s.thresholded_jaccard.to_string(),
                u8::from(s.failed).to_string(),
                s.stratum.code().to_string(),
            ]
        }),
    );
    let doc: ReportDocument<&SegReport> = ReportDocument {
        schema_version: REPORT_SCHEMA_VERSION,
        tool_version: TOOL_VERSION.to_string(),
        task: Task::Segmentation,
        submission_id: id.to_string(),
        manifest_digest: digest,
        parameters: Parameters {
            threshold: Some(threshold),
        },
        results: &scoring.report,
        score: scoring.to_submission_score(id),
        flags: scoring.flags.clone(),
    };
    write_outputs(out, &doc, per_image)?;
    Ok(warnings(&bundle.warnings))
}

#[derive(Serialize)]
struct AttributeResults<'a> {
    mean_jaccard: f64,
    attributes: &'a [AttributeScore],
}

pub fn score_attr(
    manifest_path: &Path,
    submission_dir: &Path,
    out: &Path,
    submission_id: Option<&str>,
) -> Result<Vec<Diagnostic>, CliError> {
    let manifest = load_manifest(manifest_path, Task::Attributes)?;
    let digest = manifest_digest(manifest_path)?;
    let truth = dataset_io::load_attribute_truth(&manifest)?;
    let bundle = dataset_io::load_segmentation_submission(submission_dir, &manifest)?;
    let SubmissionPayload::Attributes(predictions) = &bundle.payload else {
        unreachable!("attributes manifest yields attribute payload")
    };
    let report = aggregate_attribute_jaccard(&manifest, &truth, predictions)?;
    let id = submission_id.unwrap_or(&bundle.submission_id);

    let names = &manifest.attribute_names;
    let per_image = csv_text(
        &["image_id", "attribute", "tp", "fp", "fn"],
        report.per_image.iter().flat_map(|(image, counts)| {
            names.iter().zip(counts).map(move |(a, c)| {
                vec![
                    image.clone(),
                    a.clone(),
                    c.tp.to_string(),
                    c.fp.to_string(),
                    c.fn_.to_string(),
                ]
            })
        }),
    );
    let doc = ReportDocument {
        schema_version: REPORT_SCHEMA_VERSION,
        tool_version: TOOL_VERSION.to_string(),
        task: Task::Attributes,
        submission_id: id.to_string(),
        manifest_digest: digest,
        parameters: Parameters::default(),
        results: AttributeResults {
            mean_jaccard: report.mean_jaccard,
            attributes: &report.attributes,
        },
        score: report.to_submission_score(id),
        flags: report.flags.clone(),
    };
    write_outputs(out, &doc, per_image)?;
    Ok(warnings(&bundle.warnings))
}

/// Scope blocks are always present; a partition without images is `null`.
#[derive(Serialize)]
struct ClassificationResults<'a> {
    #[serde(rename = "ALL")]
    all: &'a ClsReport,
    #[serde(rename = "INTERNAL")]
    internal: Option<&'a ClsReport>,
    #[serde(rename = "EXTERNAL")]
    external: Option<&'a ClsReport>,
    gaps: Option<&'a ClsGaps>,
}

pub fn score_cls(
    manifest_path: &Path,
    csv_path: &Path,
    out: &Path,
    submission_id: Option<&str>,
) -> Result<Vec<Diagnostic>, CliError> {
    let manifest = load_manifest(manifest_path, Task::Classification)?;
    let digest = manifest_digest(manifest_path)?;
    let bundle = dataset_io::load_classification_submission(csv_path, &manifest)?;
    let SubmissionPayload::Classification(records) = &bundle.payload else {
        unreachable!("classification loader yields records")
    };
    let scoring = score_classification(&manifest, records)?;
    let id = submission_id.unwrap_or(&bundle.submission_id);

    let per_image = csv_text(
        &[
            "image_id",
            "partition",
            "truth",
            "decision",
            "correct",
            "tie_broken",
        ],
        scoring.decisions.iter().map(|d| {
            vec![
                d.image_id.clone(),
                d.partition.code().to_string(),
                d.truth.code().to_string(),
                d.decision.code().to_string(),
                u8::from(d.truth == d.decision).to_string(),
                u8::from(d.tie_broken).to_string(),
            ]
        }),
    );
    let doc = ReportDocument {
        schema_version: REPORT_SCHEMA_VERSION,
        tool_version: TOOL_VERSION.to_string(),
        task: Task::Classification,
        submission_id: id.to_string(),
        manifest_digest: digest,
        parameters: Parameters::default(),
        results: ClassificationResults {
            all: &scoring.all,
            internal: scoring.internal.as_ref(),
            external: scoring.external.as_ref(),
            gaps: scoring.gaps.as_ref(),
        },
        score: scoring.to_submission_score(id),
        flags: scoring.flags.clone(),
    };
    write_outputs(out, &doc, per_image)?;
    Ok(warnings(&bundle.warnings))
}

// ---------------------------------------------------------------------------
// rank
// ---------------------------------------------------------------------------

pub const LEADERBOARD_FILE: &str = "leaderboard.json";
pub const DIVERGENCE_FILE: &str = "divergence.json";
pub const HISTOGRAM_FILE: &str = "gap_histogram.json";
pub const HISTOGRAM_SVG_FILE: &str = "gap_histogram.svg";
pub const SLOPE_FILE: &str = "failure_slope.json";

/// Default `(metric, compare_metric)` per task.
pub fn default_metrics(task: Task) -> (&'static str, &'static str) {
    match task {
        Task::Segmentation => ("thresholded_jaccard", "jaccard"),
        Task::Attributes => ("mean_attribute_jaccard", "mean_attribute_jaccard"),
        Task::Classification => ("bacc", "acc"),
    }
}

#[derive(Serialize)]
struct RankDocument<'a, T: Serialize> {
    schema_version: u32,
    tool_version: &'static str,
    task: Task,
    manifest_digest: &'a str,
    submissions: Vec<&'a str>,
    results: T,
}

fn write_rank_file<T: Serialize>(
    out: &Path,
    name: &str,
    headers: &[ReportHeader],
    results: &T,
) -> Result<(), CliError> {
    let doc = RankDocument {
        schema_version: REPORT_SCHEMA_VERSION,
        tool_version: TOOL_VERSION,
        task: headers[0].task,
        manifest_digest: &headers[0].manifest_digest,
        submissions: headers.iter().map(|h| h.submission_id.as_str()).collect(),
        results,
    };
    write_file(out.join(name), to_canonical_json(&doc).as_bytes())
}

#[derive(Serialize)]
struct Leaderboards {
    primary: Leaderboard,
    compare: Leaderboard,
}

fn expand(patterns: &[String]) -> Result<Vec<PathBuf>, CliError> {
    let mut paths = BTreeSet::new();
    for p in patterns {
        if p.contains(['*', '?', '[']) {
            let entries = glob::glob(p)
                .map_err(|e| CliError::input("invalid_glob", format!("{p:?}: {e}")))?;
            let before = paths.len();
            for e in entries {
                let path = e.map_err(|e| CliError::input("invalid_glob", e.to_string()))?;
                if path.is_file() {
                    paths.insert(path);
                }
            }
            if paths.len() == before {
                return Err(CliError::input(
                    "no_reports",
                    format!("{p:?} matches no report files"),
                ));
            }
        } else {
            paths.insert(PathBuf::from(p));
        }
    }
    Ok(paths.into_iter().collect())
}

fn load_reports(patterns: &[String]) -> Result<Vec<ReportHeader>, CliError> {
    let mut headers = Vec::new();
    for p in expand(patterns)? {
        headers.push(read_header(&p)?);
    }
    headers.sort_by(|a, b| a.submission_id.cmp(&b.submission_id));
    for w in headers.windows(2) {
        if w[0].submission_id == w[1].submission_id {
            return Err(CliError::input(
                "duplicate_submission",
                format!(
                    "submission {:?} appears in more than one report",
                    w[0].submission_id
                ),
            ));
        }
    }
    let first = &headers[0];
    for h in &headers[1..] {
        if h.task != first.task {
            return Err(CliError::input(
                "mixed_tasks",
                format!(
                    "{} is a {} report, {} is a {} report",
                    first.submission_id, first.task, h.submission_id, h.task
                ),
            ));
        }
        if h.manifest_digest != first.manifest_digest {
            return Err(CliError::input(
                "manifest_mismatch",
                format!(
                    "{} and {} were scored against different manifests",
                    first.submission_id, h.submission_id
                ),
            ));
        }
    }
    Ok(headers)
}

pub fn rank(
    patterns: &[String],
    metric: Option<&str>,
    compare_metric: Option<&str>,
    bin_width: f64,
    out: &Path,
) -> Result<Vec<Diagnostic>, CliError> {
    let headers = load_reports(patterns)?;
    let task = headers[0].task;
    let (default_metric, default_compare) = default_metrics(task);
    let metric = metric.unwrap_or(default_metric);
    let compare = compare_metric.unwrap_or(default_compare);
    let scores: Vec<_> = headers.iter().map(|h| h.score.clone()).collect();

    let leaderboards = Leaderboards {
        primary: build_leaderboard(&scores, metric)?,
        compare: build_leaderboard(&scores, compare)?,
    };
    let divergence: RankDivergence = rank_divergence(&scores, metric, compare)?;
    let histogram: Option<GapHistogram> = if task == Task::Classification {
        Some(gap_histogram(&scores, metric, bin_width)?)
    } else {
        None
    };
    let mut diagnostics = Vec::new();
    let slopes: Option<Vec<SlopeFit>> = if task == Task::Segmentation {
        match failure_slope(&scores) {
            Ok(s) => Some(s),
            Err(e) => {
                diagnostics.push(Diagnostic::new(
                    Level::Warning,
                    e.code(),
                    format!("failure-rate regression skipped: {e}"),
                ));
                None
            }
        }
    } else {
        None
    };

    create_dir(out)?;
    write_rank_file(out, LEADERBOARD_FILE, &headers, &leaderboards)?;
    write_rank_file(out, DIVERGENCE_FILE, &headers, &divergence)?;
    if let Some(h) = &histogram {
        write_rank_file(out, HISTOGRAM_FILE, &headers, h)?;
        write_file(
            out.join(HISTOGRAM_SVG_FILE),
            gap_histogram_svg(h).as_bytes(),
        )?;
    }
    if let Some(s) = &slopes {
        write_rank_file(out, SLOPE_FILE, &headers, s)?;
    }
    Ok(diagnostics)
}

// ---------------------------------------------------------------------------
// synth, derive-threshold
// ---------------------------------------------------------------------------

pub fn synth(config_path: &Path, out_dir: &Path) -> Result<Vec<Diagnostic>, CliError> {
    let text = fs::read_to_string(config_path).map_err(|source| DatasetError::Io {
        path: config_path.to_path_buf(),
        source,
    })?;
    let config: SynthConfig = serde_json::from_str(&text).map_err(|e| {
        CliError::input("invalid_config", format!("{}: {e}", config_path.display()))
    })?;
    config.validate()?;
    create_dir(out_dir)?;
    write_synth_datasets(&config, out_dir)?;
    Ok(Vec::new())
}

pub fn derive_threshold(values: &[f64]) -> Result<Vec<Diagnostic>, CliError> {
    let d = derive(values)?;
    print!("{}", to_canonical_json(&d));
    Ok(Vec::new())
}
