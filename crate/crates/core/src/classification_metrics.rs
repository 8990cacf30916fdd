//! Disease classification scoring: argmax decisions, confusion matrices,
//! accuracy, balanced accuracy and one-vs-rest ROC/AUC, per test partition.
//!
//! Every metric here is a ratio of counts. They are evaluated exactly and
//! rounded once, so internal-minus-external gaps are the nearest doubles to
//! the true differences.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Add;

use num_bigint::BigInt;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MetricError, ModelError};
use crate::exact::{self, Exact};
use crate::model::{
    DatasetManifest, DiagnosisClass, Flag, Partition, PredictionRecord, Scope, SubmissionScore,
    N_CLASSES,
};

// ---------------------------------------------------------------------------
// Decisions
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    pub class: DiagnosisClass,
    /// More than one class shared the maximal probability.
    pub tie_broken: bool,
}

/// Mutually exclusive decision: the most probable class, earliest class in
/// the fixed order on exact ties.
pub fn argmax_decision(record: &PredictionRecord) -> Result<Decision, MetricError> {
    record.validate()?;
    let mut best = 0;
    let mut tie = false;
    for k in 1..N_CLASSES {
        let p = record.probs[k];
        if p > record.probs[best] {
            best = k;
            tie = false;
        } else if p == record.probs[best] {
            tie = true;
        }
    }
    Ok(Decision {
        class: DiagnosisClass::ALL[best],
        tie_broken: tie,
    })
}

// ---------------------------------------------------------------------------
// Confusion matrix
// ---------------------------------------------------------------------------

/// Rows are true classes, columns decided classes, both in class order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; N_CLASSES]; N_CLASSES],
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; N_CLASSES]; N_CLASSES]) -> Self {
        Self { counts }
    }

    pub fn record(&mut self, truth: DiagnosisClass, decided: DiagnosisClass) {
        self.counts[truth.index()][decided.index()] += 1;
    }

    pub fn get(&self, truth: DiagnosisClass, decided: DiagnosisClass) -> u64 {
        self.counts[truth.index()][decided.index()]
    }

    pub fn support(&self, class: DiagnosisClass) -> u64 {
        self.counts[class.index()].iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..N_CLASSES).map(|k| self.counts[k][k]).sum()
    }
}

impl Add for ConfusionMatrix {
    type Output = ConfusionMatrix;

    fn add(mut self, rhs: ConfusionMatrix) -> ConfusionMatrix {
        for t in 0..N_CLASSES {
            for d in 0..N_CLASSES {
                self.counts[t][d] += rhs.counts[t][d];
            }
        }
        self
    }
}

/// Tallies decisions for the manifest images in `scope`.
pub fn confusion_matrix(
    decisions: &BTreeMap<String, DiagnosisClass>,
    manifest: &DatasetManifest,
    scope: Scope,
) -> Result<ConfusionMatrix, MetricError> {
    let mut cm = ConfusionMatrix::default();
    let mut missing = Vec::new();
    for e in &manifest.entries {
        if !e.partition.is_none_or(|p| scope.contains(p)) {
            continue;
        }
        let Some(truth) = e.label() else {
            return Err(ModelError::EntryShape {
                task: manifest.task,
                image_id: e.image_id.clone(),
            }
            .into());
        };
        match decisions.get(&e.image_id) {
            Some(&d) => cm.record(truth, d),
            None => missing.push(e.image_id.clone()),
        }
    }
    if !missing.is_empty() {
        missing.sort();
        return Err(MetricError::MissingPrediction(missing));
    }
    Ok(cm)
}

// ---------------------------------------------------------------------------
// Accuracy metrics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct BalancedAccuracy {
    pub value: f64,
    /// Classes with no support, left out of the mean.
    pub excluded: Vec<DiagnosisClass>,
    exact: Exact,
}

/// Mean per-class recall over classes with nonzero support.
pub fn balanced_accuracy(cm: &ConfusionMatrix) -> Result<BalancedAccuracy, MetricError> {
    let mut recalls = Vec::with_capacity(N_CLASSES);
    let mut excluded = Vec::new();
    for &class in DiagnosisClass::ALL {
        let support = cm.support(class);
        if support == 0 {
            excluded.push(class);
        } else {
            recalls.push(exact::ratio(cm.get(class, class), support));
        }
    }
    let exact = exact::mean(&recalls).ok_or(MetricError::EmptyMatrix)?;
    Ok(BalancedAccuracy {
        value: exact::to_f64(&exact),
        excluded,
        exact,
    })
}

fn accuracy_exact(cm: &ConfusionMatrix) -> Result<Exact, MetricError> {
    match cm.total() {
        0 => Err(MetricError::EmptyMatrix),
        total => Ok(exact::ratio(cm.trace(), total)),
    }
}

/// `trace / total`.
pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64, MetricError> {
    accuracy_exact(cm).map(|a| exact::to_f64(&a))
}

// ---------------------------------------------------------------------------
// ROC / AUC
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(false positive rate, true positive rate)`, from `(0, 0)` to `(1, 1)`.
    pub points: Vec<[f64; 2]>,
    pub auc: f64,
}

struct ExactRoc {
    curve: RocCurve,
    auc: Exact,
}

fn roc_exact(scores: &[(f64, bool)]) -> Result<ExactRoc, MetricError> {
    if let Some(&(s, _)) = scores.iter().find(|(s, _)| !s.is_finite()) {
        return Err(MetricError::InvalidScore(s));
    }
    let positives = scores.iter().filter(|(_, y)| *y).count();
    let negatives = scores.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricError::DegenerateLabels {
            positives,
            negatives,
        });
    }

    let mut order: Vec<&(f64, bool)> = scores.iter().collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0));

    let (p, n) = (positives as u64, negatives as u64);
    let mut points = vec![[0.0, 0.0]];
    let (mut tp, mut fp) = (0u64, 0u64);
    // Twice the trapezoid area in count units; equals 2U of Mann-Whitney.
    let mut twice_area: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let threshold = order[i].0;
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && order[i].0 == threshold {
            if order[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        twice_area += u128::from(fp - fp0) * u128::from(tp + tp0);
        points.push([fp as f64 / n as f64, tp as f64 / p as f64]);
    }

    let auc = Exact::new(
        BigInt::from(twice_area),
        BigInt::from(2u128 * u128::from(p) * u128::from(n)),
    );
    Ok(ExactRoc {
        curve: RocCurve {
            points,
            auc: exact::to_f64(&auc),
        },
        auc,
    })
}

/// ROC from a threshold sweep over distinct scores, ties forming one step.
/// The area equals the Mann-Whitney statistic with ties credited one half.
pub fn roc_auc(scores: &[(f64, bool)]) -> Result<RocCurve, MetricError> {
    roc_exact(scores).map(|r| r.curve)
}

// ---------------------------------------------------------------------------
// Per-scope reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClsReport {
    pub scope: Scope,
    pub bacc: f64,
    pub acc: f64,
    pub mean_auc: Option<f64>,
    /// Classes whose AUC is defined in this scope.
    pub per_class_auc: BTreeMap<DiagnosisClass, f64>,
    pub n_images: u64,
    pub confusion: ConfusionMatrix,
    pub roc: BTreeMap<DiagnosisClass, RocCurve>,
    pub flags: Vec<Flag>,
}

/// Internal minus external value of each metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClsGaps {
    pub bacc: f64,
    pub acc: f64,
    pub mean_auc: Option<f64>,
    pub per_class_auc: BTreeMap<DiagnosisClass, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageDecision {
    pub image_id: String,
    pub truth: DiagnosisClass,
    pub decision: DiagnosisClass,
    pub tie_broken: bool,
    pub partition: Partition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClsScoring {
    pub all: ClsReport,
    pub internal: Option<ClsReport>,
    pub external: Option<ClsReport>,
    pub gaps: Option<ClsGaps>,
    /// Ascending image id order.
    pub decisions: Vec<ImageDecision>,
    pub flags: Vec<Flag>,
}

struct ScopeEval {
    report: ClsReport,
    bacc: Exact,
    acc: Exact,
    aucs: BTreeMap<DiagnosisClass, Exact>,
    mean_auc: Option<Exact>,
}

fn evaluate_scope(
    scope: Scope,
    decisions: &[ImageDecision],
    records: &BTreeMap<&str, &PredictionRecord>,
) -> Result<Option<ScopeEval>, MetricError> {
    let members: Vec<&ImageDecision> = decisions
        .iter()
        .filter(|d| scope.contains(d.partition))
        .collect();
    if members.is_empty() {
        return Ok(None);
    }
    let mut cm = ConfusionMatrix::default();
    for d in &members {
        cm.record(d.truth, d.decision);
    }
    let bacc = balanced_accuracy(&cm)?;
    let acc = accuracy_exact(&cm)?;
    let mut flags: Vec<Flag> = bacc
        .excluded
        .iter()
        .map(|&class| Flag::ZeroSupport { scope, class })
        .collect();

    let per_class: Vec<(DiagnosisClass, Result<ExactRoc, MetricError>)> = DiagnosisClass::ALL
        .par_iter()
        .map(|&class| {
            let scores: Vec<(f64, bool)> = members
                .iter()
                .map(|d| (records[d.image_id.as_str()].prob(class), d.truth == class))
                .collect();
            (class, roc_exact(&scores))
        })
        .collect();

    let mut roc = BTreeMap::new();
    let mut aucs = BTreeMap::new();
    for (class, result) in per_class {
        match result {
            Ok(r) => {
                aucs.insert(class, r.auc);
                roc.insert(class, r.curve);
            }
            Err(MetricError::DegenerateLabels { .. }) => {
                flags.push(Flag::DegenerateLabels { scope, class });
            }
            Err(e) => return Err(e),
        }
    }
    let auc_values: Vec<Exact> = aucs.values().cloned().collect();
    let mean_auc = exact::mean(&auc_values);

    let report = ClsReport {
        scope,
        bacc: bacc.value,
        acc: exact::to_f64(&acc),
        mean_auc: mean_auc.as_ref().map(exact::to_f64),
        per_class_auc: aucs.iter().map(|(c, a)| (*c, exact::to_f64(a))).collect(),
        n_images: cm.total(),
        confusion: cm,
        roc,
        flags,
    };
    Ok(Some(ScopeEval {
        report,
        bacc: bacc.exact,
        acc,
        aucs,
        mean_auc,
    }))
}

fn gaps(internal: &ScopeEval, external: &ScopeEval) -> ClsGaps {
    let diff = |a: &Exact, b: &Exact| exact::to_f64(&(a - b));
    ClsGaps {
        bacc: diff(&internal.bacc, &external.bacc),
        acc: diff(&internal.acc, &external.acc),
        mean_auc: match (&internal.mean_auc, &external.mean_auc) {
            (Some(a), Some(b)) => Some(diff(a, b)),
            _ => None,
        },
        per_class_auc: internal
            .aucs
            .iter()
            .filter_map(|(c, a)| external.aucs.get(c).map(|b| (*c, diff(a, b))))
            .collect(),
    }
}

/// Scores a classification submission on the whole test set and on each
/// partition. Records for ids outside the manifest are ignored.
pub fn score_classification(
    manifest: &DatasetManifest,
    predictions: &[PredictionRecord],
) -> Result<ClsScoring, MetricError> {
    let mut records: BTreeMap<&str, &PredictionRecord> = BTreeMap::new();
    for r in predictions {
        if records.insert(r.image_id.as_str(), r).is_some() {
            return Err(ModelError::DuplicateImageId(r.image_id.clone()).into());
        }
    }

    let mut entries: Vec<_> = manifest.entries.iter().collect();
    entries.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let missing: Vec<String> = entries
        .iter()
        .filter(|e| !records.contains_key(e.image_id.as_str()))
        .map(|e| e.image_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(MetricError::MissingPrediction(missing));
    }

    let decisions: Vec<ImageDecision> = entries
        .par_iter()
        .map(|e| {
            let shape_err = || ModelError::EntryShape {
                task: manifest.task,
                image_id: e.image_id.clone(),
            };
            let truth = e.label().ok_or_else(shape_err)?;
            let partition = e.partition.ok_or_else(shape_err)?;
            let d = argmax_decision(records[e.image_id.as_str()])?;
            Ok(ImageDecision {
                image_id: e.image_id.clone(),
                truth,
                decision: d.class,
                tie_broken: d.tie_broken,
                partition,
            })
        })
        .collect::<Result<_, MetricError>>()?;

    let all = evaluate_scope(Scope::All, &decisions, &records)?.ok_or(MetricError::EmptyMatrix)?;
    let internal = evaluate_scope(Scope::Internal, &decisions, &records)?;
    let external = evaluate_scope(Scope::External, &decisions, &records)?;

    let mut flags: BTreeSet<Flag> = decisions
        .iter()
        .filter(|d| d.tie_broken)
        .map(|d| Flag::TieBroken {
            image_id: d.image_id.clone(),
        })
        .collect();
    for (scope, eval) in [
        (Scope::All, Some(&all)),
        (Scope::Internal, internal.as_ref()),
        (Scope::External, external.as_ref()),
    ] {
        match eval {
            Some(e) => flags.extend(e.report.flags.iter().cloned()),
            None => {
                flags.insert(Flag::EmptyScope { scope });
            }
        }
    }

    let gaps = match (&internal, &external) {
        (Some(i), Some(e)) => Some(gaps(i, e)),
        _ => None,
    };

    Ok(ClsScoring {
        all: all.report,
        internal: internal.map(|e| e.report),
        external: external.map(|e| e.report),
        gaps,
        decisions,
        flags: flags.into_iter().collect(),
    })
}

fn metric_map(report: &ClsReport) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::from([
        ("acc".to_string(), report.acc),
        ("bacc".to_string(), report.bacc),
        ("n_images".to_string(), report.n_images as f64),
    ]);
    if let Some(v) = report.mean_auc {
        m.insert("mean_auc".to_string(), v);
    }
    for (c, v) in &report.per_class_auc {
        m.insert(format!("auc.{c}"), *v);
    }
    m
}

impl ClsScoring {
    pub fn to_submission_score(&self, submission_id: &str) -> SubmissionScore {
        let per_image = self
            .decisions
            .iter()
            .map(|d| {
                let m = BTreeMap::from([
                    (
                        "correct".to_string(),
                        if d.truth == d.decision { 1.0 } else { 0.0 },
                    ),
                    ("decision".to_string(), d.decision.index() as f64),
                ]);
                (d.image_id.clone(), m)
            })
            .collect();
        let mut aggregates = metric_map(&self.all);
        if let Some(g) = &self.gaps {
            aggregates.insert("gap.acc".to_string(), g.acc);
            aggregates.insert("gap.bacc".to_string(), g.bacc);
            if let Some(v) = g.mean_auc {
                aggregates.insert("gap.mean_auc".to_string(), v);
            }
        }
        let mut per_partition = BTreeMap::new();
        for r in [&self.internal, &self.external].into_iter().flatten() {
            per_partition.insert(r.scope.code().to_string(), metric_map(r));
        }
        SubmissionScore {
            submission_id: submission_id.to_string(),
            per_image,
            aggregates,
            per_stratum: BTreeMap::new(),
            per_partition,
            flags: self.flags.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GroundTruth, ManifestEntry, Task};
    use proptest::prelude::*;

    use DiagnosisClass::*;

    fn cls_manifest(rows: &[(&str, DiagnosisClass, Partition)]) -> DatasetManifest {
        DatasetManifest::new(
            Task::Classification,
            rows.iter()
                .map(|(id, c, p)| ManifestEntry {
                    image_id: id.to_string(),
                    truth: GroundTruth::Class(*c),
                    stratum: None,
                    partition: Some(*p),
                })
                .collect(),
            vec![],
        )
        .unwrap()
    }

    fn one_hot(id: &str, c: DiagnosisClass) -> PredictionRecord {
        let mut p = [0.0; N_CLASSES];
        p[c.index()] = 1.0;
        PredictionRecord::new(id, p).unwrap()
    }

    /// Pairwise Mann-Whitney count with half credit for ties.
    fn mann_whitney_oracle(scores: &[(f64, bool)]) -> f64 {
        let pos: Vec<f64> = scores.iter().filter(|s| s.1).map(|s| s.0).collect();
        let neg: Vec<f64> = scores.iter().filter(|s| !s.1).map(|s| s.0).collect();
        let mut twice = 0u64;
        for &a in &pos {
            for &b in &neg {
                twice += if a > b {
                    2
                } else if a == b {
                    1
                } else {
                    0
                };
            }
        }
        twice as f64 / (2 * pos.len() * neg.len()) as f64
    }

    fn trapezoid(points: &[[f64; 2]]) -> f64 {
        points
            .windows(2)
            .map(|w| (w[1][0] - w[0][0]) * (w[1][1] + w[0][1]) / 2.0)
            .sum()
    }

    #[test]
    fn argmax_examples() {
        let r = PredictionRecord::new("a", [0.9, 0.02, 0.02, 0.02, 0.02, 0.01, 0.01]).unwrap();
        assert_eq!(
            argmax_decision(&r).unwrap(),
            Decision {
                class: Mel,
                tie_broken: false
            }
        );
        let r = PredictionRecord::new("b", [1.0 / 7.0; 7]).unwrap();
        assert_eq!(
            argmax_decision(&r).unwrap(),
            Decision {
                class: Mel,
                tie_broken: true
            }
        );
        let r = PredictionRecord::new("c", [0.1, 0.5, 0.2, 0.5, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(
            argmax_decision(&r).unwrap(),
            Decision {
                class: Nv,
                tie_broken: true
            }
        );
        // a tie below the maximum is not a tie
        let r = PredictionRecord::new("d", [0.1, 0.1, 0.9, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(
            argmax_decision(&r).unwrap(),
            Decision {
                class: Bcc,
                tie_broken: false
            }
        );
        let bad = PredictionRecord {
            image_id: "e".into(),
            probs: [f64::NAN; 7],
        };
        assert!(matches!(
            argmax_decision(&bad),
            Err(MetricError::Model(ModelError::InvalidProbability { .. }))
        ));
    }

    #[test]
    fn argmax_matches_linear_scan() {
        let mut s = 42u64;
        let mut next = || {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            // coarse grid to provoke ties
            ((s >> 40) % 8) as f64 / 8.0
        };
        for i in 0..1000 {
            let probs: [f64; 7] = std::array::from_fn(|_| next());
            let r = PredictionRecord::new(format!("r{i}"), probs).unwrap();
            let max = probs.iter().cloned().fold(f64::MIN, f64::max);
            let first = probs.iter().position(|&p| p == max).unwrap();
            let n_max = probs.iter().filter(|&&p| p == max).count();
            let d = argmax_decision(&r).unwrap();
            assert_eq!(d.class.index(), first);
            assert_eq!(d.tie_broken, n_max > 1);
        }
    }

    #[test]
    fn confusion_matrix_examples() {
        let m = cls_manifest(&[
            ("a", Mel, Partition::Internal),
            ("b", Nv, Partition::Internal),
            ("c", Nv, Partition::External),
        ]);
        let correct: BTreeMap<_, _> = [("a", Mel), ("b", Nv), ("c", Nv)]
            .iter()
            .map(|(i, c)| (i.to_string(), *c))
            .collect();
        let cm = confusion_matrix(&correct, &m, Scope::All).unwrap();
        assert_eq!(cm.trace(), 3);
        assert_eq!(cm.support(Nv), 2);
        assert_eq!(
            confusion_matrix(&correct, &m, Scope::External)
                .unwrap()
                .total(),
            1
        );

        let single = cls_manifest(&[("x", Nv, Partition::Internal)]);
        let d = BTreeMap::from([("x".to_string(), Mel)]);
        let cm = confusion_matrix(&d, &single, Scope::All).unwrap();
        assert_eq!(cm.get(Nv, Mel), 1);
        assert_eq!(cm.total(), 1);

        let partial = BTreeMap::from([("a".to_string(), Mel)]);
        assert_eq!(
            confusion_matrix(&partial, &m, Scope::All).unwrap_err(),
            MetricError::MissingPrediction(vec!["b".into(), "c".into()])
        );
    }

    #[test]
    fn hand_tallied_matrix() {
        let rows = [
            ("i1", Mel, Mel),
            ("i2", Mel, Nv),
            ("i3", Nv, Nv),
            ("i4", Nv, Nv),
            ("i5", Bcc, Mel),
            ("i6", Df, Df),
        ];
        let m = cls_manifest(
            &rows
                .iter()
                .map(|(i, t, _)| (*i, *t, Partition::Internal))
                .collect::<Vec<_>>(),
        );
        let d: BTreeMap<_, _> = rows.iter().map(|(i, _, p)| (i.to_string(), *p)).collect();
        let cm = confusion_matrix(&d, &m, Scope::All).unwrap();
        let mut expected = [[0u64; 7]; 7];
        expected[0][0] = 1;
        expected[0][1] = 1;
        expected[1][1] = 2;
        expected[2][0] = 1;
        expected[5][5] = 1;
        assert_eq!(cm.counts, expected);
    }

    fn two_class(a: [u64; 2], b: [u64; 2]) -> ConfusionMatrix {
        let mut c = [[0u64; 7]; 7];
        c[0][0] = a[0];
        c[0][1] = a[1];
        c[1][0] = b[0];
        c[1][1] = b[1];
        ConfusionMatrix::from_counts(c)
    }

    #[test]
    fn accuracy_examples() {
        let cm = two_class([3, 1], [2, 4]);
        let b = balanced_accuracy(&cm).unwrap();
        // exact 17/24, one ulp above the naive (0.75 + 4/6) / 2
        assert!(b.value > (0.75 + 4.0 / 6.0) / 2.0);
        assert_eq!(b.value, 17.0 / 24.0);
        assert_eq!(b.excluded, vec![Bcc, Akiec, Bkl, Df, Vasc]);
        assert_eq!(accuracy(&cm).unwrap(), 0.7);
        assert_eq!(accuracy(&two_class([4, 0], [0, 6])).unwrap(), 1.0);
        assert_eq!(
            balanced_accuracy(&two_class([4, 0], [0, 6])).unwrap().value,
            1.0
        );
        assert_eq!(accuracy(&two_class([0, 2], [3, 0])).unwrap(), 0.0);
        assert_eq!(
            accuracy(&ConfusionMatrix::default()),
            Err(MetricError::EmptyMatrix)
        );
        assert_eq!(
            balanced_accuracy(&ConfusionMatrix::default()).unwrap_err(),
            MetricError::EmptyMatrix
        );
    }

    #[test]
    fn roc_examples() {
        let sep = [(0.9, true), (0.8, true), (0.3, false), (0.1, false)];
        let r = roc_auc(&sep).unwrap();
        assert_eq!(r.auc, 1.0);
        assert_eq!(r.points.first(), Some(&[0.0, 0.0]));
        assert_eq!(r.points.last(), Some(&[1.0, 1.0]));

        let flat = [
            (0.5, true),
            (0.5, false),
            (0.5, false),
            (0.5, true),
            (0.5, true),
        ];
        let r = roc_auc(&flat).unwrap();
        assert_eq!(r.auc, 0.5);
        assert_eq!(r.points, vec![[0.0, 0.0], [1.0, 1.0]]);

        assert_eq!(
            roc_auc(&[(0.1, true), (0.2, true)]).unwrap_err(),
            MetricError::DegenerateLabels {
                positives: 2,
                negatives: 0
            }
        );
        assert!(matches!(
            roc_auc(&[(f64::NAN, true), (0.2, false)]),
            Err(MetricError::InvalidScore(_))
        ));
    }

    #[test]
    fn roc_matches_mann_whitney_oracle() {
        let mut s = 7u64;
        let mut next = || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            s
        };
        for _ in 0..200 {
            let n = 2 + (next() % 199) as usize;
            let mut scores: Vec<(f64, bool)> = (0..n)
                .map(|_| (((next() >> 11) % 50) as f64 / 50.0, next() % 3 == 0))
                .collect();
            scores[0].1 = true;
            scores[1].1 = false;
            let r = roc_auc(&scores).unwrap();
            assert!((r.auc - mann_whitney_oracle(&scores)).abs() < 1e-12);
            assert!((r.auc - trapezoid(&r.points)).abs() < 1e-12);
        }
    }

    #[test]
    fn all_correct_classification() {
        let m = cls_manifest(&[
            ("a", Mel, Partition::Internal),
            ("b", Nv, Partition::Internal),
            ("c", Mel, Partition::External),
            ("d", Nv, Partition::External),
        ]);
        let preds: Vec<_> = m
            .entries
            .iter()
            .map(|e| one_hot(&e.image_id, e.label().unwrap()))
            .collect();
        let s = score_classification(&m, &preds).unwrap();
        for r in [
            &s.all,
            s.internal.as_ref().unwrap(),
            s.external.as_ref().unwrap(),
        ] {
            assert_eq!((r.bacc, r.acc), (1.0, 1.0));
            assert_eq!(r.per_class_auc[&Mel], 1.0);
            assert!(!r.per_class_auc.contains_key(&Bcc));
        }
        let g = s.gaps.unwrap();
        assert_eq!((g.bacc, g.acc, g.mean_auc), (0.0, 0.0, Some(0.0)));
        assert!(s.flags.contains(&Flag::ZeroSupport {
            scope: Scope::All,
            class: Vasc
        }));
        assert!(s.flags.contains(&Flag::DegenerateLabels {
            scope: Scope::External,
            class: Df
        }));
    }

    #[test]
    fn empty_partition_is_flagged() {
        let m = cls_manifest(&[
            ("a", Mel, Partition::Internal),
            ("b", Nv, Partition::Internal),
        ]);
        let preds: Vec<_> = m
            .entries
            .iter()
            .map(|e| one_hot(&e.image_id, e.label().unwrap()))
            .collect();
        let s = score_classification(&m, &preds).unwrap();
        assert!(s.external.is_none());
        assert!(s.gaps.is_none());
        assert!(s.flags.contains(&Flag::EmptyScope {
            scope: Scope::External
        }));
    }

    #[test]
    fn classification_errors() {
        let m = cls_manifest(&[
            ("a", Mel, Partition::Internal),
            ("b", Nv, Partition::External),
        ]);
        assert_eq!(
            score_classification(&m, &[one_hot("a", Mel)]).unwrap_err(),
            MetricError::MissingPrediction(vec!["b".into()])
        );
        assert!(matches!(
            score_classification(
                &m,
                &[one_hot("a", Mel), one_hot("a", Mel), one_hot("b", Nv)]
            ),
            Err(MetricError::Model(ModelError::DuplicateImageId(_)))
        ));
    }

    /// Seven classes, `per_class[k]` images of class k, of which `correct[k]`
    /// are decided correctly and the rest go to the next class.
    fn fixture(
        prefix: &str,
        partition: Partition,
        per_class: [usize; 7],
        correct: [usize; 7],
    ) -> (
        Vec<(String, DiagnosisClass, Partition)>,
        Vec<PredictionRecord>,
    ) {
        let mut rows = Vec::new();
        let mut preds = Vec::new();
        for (k, &class) in DiagnosisClass::ALL.iter().enumerate() {
            for i in 0..per_class[k] {
                let id = format!("{prefix}_{k}_{i:04}");
                let decided = if i < correct[k] {
                    class
                } else {
                    DiagnosisClass::ALL[(k + 1) % 7]
                };
                preds.push(one_hot(&id, decided));
                rows.push((id, class, partition));
            }
        }
        (rows, preds)
    }

    #[test]
    fn rank_one_partition_gap() {
        // INTERNAL recalls sum to 7 * 0.875, EXTERNAL to 7 * 0.925.
        let (mut rows, mut preds) = fixture(
            "int",
            Partition::Internal,
            [8, 8, 8, 8, 8, 8, 8],
            [7, 7, 7, 7, 7, 7, 7],
        );
        let (r2, p2) = fixture(
            "ext",
            Partition::External,
            [40; 7],
            [37, 37, 37, 37, 37, 37, 37],
        );
        rows.extend(r2);
        preds.extend(p2);
        let m = cls_manifest(
            &rows
                .iter()
                .map(|(i, c, p)| (i.as_str(), *c, *p))
                .collect::<Vec<_>>(),
        );
        let s = score_classification(&m, &preds).unwrap();
        assert_eq!(s.internal.as_ref().unwrap().bacc, 0.875);
        assert_eq!(s.external.as_ref().unwrap().bacc, 0.925);
        assert_eq!(s.gaps.as_ref().unwrap().bacc, -0.05);
    }

    #[test]
    fn shuffled_external_labels_drop_to_chance() {
        let n = 700;
        let mut rows = Vec::new();
        let mut preds = Vec::new();
        for i in 0..n {
            let class = DiagnosisClass::ALL[i % 7];
            let id = format!("int{i:04}");
            preds.push(one_hot(&id, class));
            rows.push((id, class, Partition::Internal));
        }
        // External decisions follow a cyclic shift of the truth within blocks
        // of 49, so each true class is decided uniformly over all classes.
        for i in 0..n {
            let class = DiagnosisClass::ALL[i % 7];
            let decided = DiagnosisClass::ALL[(i % 7 + (i / 7) % 7) % 7];
            let id = format!("ext{i:04}");
            preds.push(one_hot(&id, decided));
            rows.push((id, class, Partition::External));
        }
        let m = cls_manifest(
            &rows
                .iter()
                .map(|(i, c, p)| (i.as_str(), *c, *p))
                .collect::<Vec<_>>(),
        );
        let s = score_classification(&m, &preds).unwrap();
        assert_eq!(s.internal.as_ref().unwrap().bacc, 1.0);
        let ext = s.external.as_ref().unwrap().bacc;
        assert!((ext - 1.0 / 7.0).abs() < 0.01, "{ext}");
        assert!((s.gaps.as_ref().unwrap().bacc - (1.0 - ext)).abs() < 1e-12);
    }

    #[test]
    fn bacc_ignores_prevalence_but_acc_does_not() {
        let (rows, preds) = fixture(
            "a",
            Partition::Internal,
            [10, 30, 5, 5, 5, 5, 5],
            [9, 27, 2, 3, 4, 5, 1],
        );
        let m = cls_manifest(
            &rows
                .iter()
                .map(|(i, c, p)| (i.as_str(), *c, *p))
                .collect::<Vec<_>>(),
        );
        let base = score_classification(&m, &preds).unwrap();

        // Five copies of every MEL image.
        let mut rows5 = rows.clone();
        let mut preds5 = preds.clone();
        for (row, pred) in rows.iter().zip(&preds).filter(|(r, _)| r.1 == Mel) {
            for copy in 1..5 {
                rows5.push((format!("{}_dup{copy}", row.0), row.1, row.2));
                let mut p = pred.clone();
                p.image_id = format!("{}_dup{copy}", row.0);
                preds5.push(p);
            }
        }
        let m5 = cls_manifest(
            &rows5
                .iter()
                .map(|(i, c, p)| (i.as_str(), *c, *p))
                .collect::<Vec<_>>(),
        );
        let dup = score_classification(&m5, &preds5).unwrap();
        assert_eq!(base.all.bacc.to_bits(), dup.all.bacc.to_bits());
        let cm = base.all.confusion;
        let predicted =
            (cm.trace() + 4 * cm.get(Mel, Mel)) as f64 / (cm.total() + 4 * cm.support(Mel)) as f64;
        assert_eq!(dup.all.acc, predicted);
        assert_ne!(dup.all.acc, base.all.acc);
    }

    #[test]
    fn all_scope_matrix_is_sum_of_partitions() {
        let (mut rows, mut preds) = fixture(
            "i",
            Partition::Internal,
            [3, 4, 5, 6, 7, 8, 9],
            [1, 2, 3, 4, 5, 6, 7],
        );
        let (r2, p2) = fixture(
            "e",
            Partition::External,
            [2, 2, 2, 2, 2, 2, 2],
            [0, 1, 2, 0, 1, 2, 0],
        );
        rows.extend(r2);
        preds.extend(p2);
        let m = cls_manifest(
            &rows
                .iter()
                .map(|(i, c, p)| (i.as_str(), *c, *p))
                .collect::<Vec<_>>(),
        );
        let s = score_classification(&m, &preds).unwrap();
        let merged = s.internal.unwrap().confusion + s.external.unwrap().confusion;
        assert_eq!(merged, s.all.confusion);
        let mean: f64 = s.all.per_class_auc.values().sum::<f64>() / 7.0;
        assert!((s.all.mean_auc.unwrap() - mean).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn argmax_invariant_under_monotone_transform(probs in prop::array::uniform7(0.0f64..=1.0)) {
            let r = PredictionRecord::new("x", probs).unwrap();
            let t = PredictionRecord::new("x", probs.map(|p| p * p * 0.5 + 0.25)).unwrap();
            prop_assert_eq!(argmax_decision(&r).unwrap().class, argmax_decision(&t).unwrap().class);
        }

        #[test]
        fn auc_invariant_under_monotone_transform(
            scores in prop::collection::vec((0u8..20, any::<bool>()), 2..60)
        ) {
            let mut s: Vec<(f64, bool)> = scores.iter().map(|&(v, y)| (v as f64 / 20.0, y)).collect();
            s[0].1 = true;
            s[1].1 = false;
            let t: Vec<(f64, bool)> = s.iter().map(|&(v, y)| ((3.0 * v).exp(), y)).collect();
            prop_assert_eq!(roc_auc(&s).unwrap().auc, roc_auc(&t).unwrap().auc);
        }

        #[test]
        fn roc_points_are_monotone(scores in prop::collection::vec((0u8..10, any::<bool>()), 2..60)) {
            let mut s: Vec<(f64, bool)> = scores.iter().map(|&(v, y)| (v as f64, y)).collect();
            s[0].1 = true;
            s[1].1 = false;
            let r = roc_auc(&s).unwrap();
            prop_assert_eq!(r.points[0], [0.0, 0.0]);
            prop_assert_eq!(*r.points.last().unwrap(), [1.0, 1.0]);
            for w in r.points.windows(2) {
                prop_assert!(w[1][0] >= w[0][0] && w[1][1] >= w[0][1]);
            }
        }
    }
}
