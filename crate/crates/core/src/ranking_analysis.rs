//! Cross-submission analysis: leaderboards, rank divergence between metrics,
//! failure-rate regressions and internal-minus-external gap histograms.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::MetricError;
use crate::model::{Partition, SubmissionScore};

pub const DEFAULT_BIN_WIDTH: f64 = 0.02;

// ---------------------------------------------------------------------------
// Leaderboards
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardRow {
    pub rank: usize,
    pub submission_id: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaderboard {
    pub metric: String,
    pub rows: Vec<LeaderboardRow>,
}

impl Leaderboard {
    pub fn rank_of(&self, submission_id: &str) -> Option<usize> {
        self.rows
            .iter()
            .find(|r| r.submission_id == submission_id)
            .map(|r| r.rank)
    }
}

fn metric_value(score: &SubmissionScore, metric: &str) -> Result<f64, MetricError> {
    let v = score
        .aggregate(metric)
        .ok_or_else(|| MetricError::UnknownMetric {
            metric: metric.to_string(),
            submission: score.submission_id.clone(),
        })?;
    if !v.is_finite() {
        return Err(MetricError::NonFiniteMetric {
            metric: metric.to_string(),
            submission: score.submission_id.clone(),
        });
    }
    Ok(v)
}

fn values(scores: &[SubmissionScore], metric: &str) -> Result<Vec<(String, f64)>, MetricError> {
    scores
        .iter()
        .map(|s| Ok((s.submission_id.clone(), metric_value(s, metric)?)))
        .collect()
}

/// Competition ranking (1, 2, 2, 4) by descending value; rows with equal
/// values are listed by ascending submission id.
pub fn build_leaderboard(
    scores: &[SubmissionScore],
    metric: &str,
) -> Result<Leaderboard, MetricError> {
    let mut vals = values(scores, metric)?;
    vals.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut rows: Vec<LeaderboardRow> = Vec::with_capacity(vals.len());
    for (i, (id, value)) in vals.into_iter().enumerate() {
        let rank = match rows.last() {
            Some(prev) if prev.value == value => prev.rank,
            _ => i + 1,
        };
        rows.push(LeaderboardRow {
            rank,
            submission_id: id,
            value,
        });
    }
    Ok(Leaderboard {
        metric: metric.to_string(),
        rows,
    })
}

// ---------------------------------------------------------------------------
// Rank divergence
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankPair {
    pub submission_id: String,
    pub rank_a: usize,
    pub rank_b: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankDivergence {
    pub metric_a: String,
    pub metric_b: String,
    /// Ascending submission id.
    pub pairs: Vec<RankPair>,
    /// Tie-corrected Spearman coefficient; `None` when either metric is
    /// constant across submissions.
    pub spearman_rho: Option<f64>,
}

/// Mid-ranks (average rank over ties), doubled so they stay integral.
fn doubled_mid_ranks(values: &[f64]) -> Vec<i128> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut ranks = vec![0i128; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i+1 ..= j share rank (i + 1 + j) / 2
        let doubled = (i + 1 + j) as i128;
        for &k in &order[i..j] {
            ranks[k] = doubled;
        }
        i = j;
    }
    ranks
}

fn isqrt(v: i128) -> i128 {
    if v < 2 {
        return v;
    }
    let mut x = (v as f64).sqrt() as i128;
    while x * x > v {
        x -= 1;
    }
    while (x + 1) * (x + 1) <= v {
        x += 1;
    }
    x
}

/// Pearson correlation of mid-ranks, which is Spearman's rho with the
/// standard tie correction. Sums are exact integers.
pub fn spearman_rho(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    let n = a.len() as i128;
    if n < 2 {
        return None;
    }
    let ra = doubled_mid_ranks(a);
    let rb = doubled_mid_ranks(b);
    // centred and scaled by n to stay integral: d = n * r - sum(r)
    let sa: i128 = ra.iter().sum();
    let sb: i128 = rb.iter().sum();
    let (mut sxy, mut sxx, mut syy) = (0i128, 0i128, 0i128);
    for (x, y) in ra.iter().zip(&rb) {
        let dx = n * x - sa;
        let dy = n * y - sb;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0 || syy == 0 {
        return None;
    }
    let prod = sxx.checked_mul(syy);
    let rho = match prod.map(|p| (p, isqrt(p))) {
        Some((p, r)) if r * r == p => sxy as f64 / r as f64,
        _ => sxy as f64 / ((sxx as f64).sqrt() * (syy as f64).sqrt()),
    };
    Some(rho.clamp(-1.0, 1.0))
}

pub fn rank_divergence(
    scores: &[SubmissionScore],
    metric_a: &str,
    metric_b: &str,
) -> Result<RankDivergence, MetricError> {
    let board_a = build_leaderboard(scores, metric_a)?;
    let board_b = build_leaderboard(scores, metric_b)?;
    let rank_b: BTreeMap<&str, usize> = board_b
        .rows
        .iter()
        .map(|r| (r.submission_id.as_str(), r.rank))
        .collect();
    let mut pairs: Vec<RankPair> = board_a
        .rows
        .iter()
        .map(|r| RankPair {
            submission_id: r.submission_id.clone(),
            rank_a: r.rank,
            rank_b: rank_b[r.submission_id.as_str()],
        })
        .collect();
    pairs.sort_by(|x, y| x.submission_id.cmp(&y.submission_id));

    // values in the same id order for the coefficient
    let va: BTreeMap<String, f64> = values(scores, metric_a)?.into_iter().collect();
    let vb: BTreeMap<String, f64> = values(scores, metric_b)?.into_iter().collect();
    let xs: Vec<f64> = va.values().copied().collect();
    let ys: Vec<f64> = va.keys().map(|k| vb[k]).collect();

    Ok(RankDivergence {
        metric_a: metric_a.to_string(),
        metric_b: metric_b.to_string(),
        pairs,
        spearman_rho: spearman_rho(&xs, &ys),
    })
}

// ---------------------------------------------------------------------------
// Failure-rate regression
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub metric: String,
    pub slope: f64,
    pub intercept: f64,
    pub n: usize,
    /// `(failure_rate, metric value)` per submission, ascending id.
    pub points: Vec<[f64; 2]>,
}

/// Ordinary least squares of `y` on `x`.
pub fn least_squares(points: &[[f64; 2]]) -> Result<(f64, f64), MetricError> {
    let n = points.len();
    if n < 2 {
        return Err(MetricError::InsufficientData { needed: 2, got: n });
    }
    let nf = n as f64;
    let mx = points.iter().map(|p| p[0]).sum::<f64>() / nf;
    let my = points.iter().map(|p| p[1]).sum::<f64>() / nf;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for p in points {
        let dx = p[0] - mx;
        sxx += dx * dx;
        sxy += dx * (p[1] - my);
    }
    if sxx == 0.0 {
        return Err(MetricError::DegenerateFit { n });
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

pub const FAILURE_METRICS: [&str; 2] = ["jaccard", "thresholded_jaccard"];

/// Least-squares fits of Jaccard and Thresholded Jaccard against failure
/// rate across submissions, in that order.
pub fn failure_slope(scores: &[SubmissionScore]) -> Result<Vec<SlopeFit>, MetricError> {
    let mut sorted: Vec<&SubmissionScore> = scores.iter().collect();
    sorted.sort_by(|a, b| a.submission_id.cmp(&b.submission_id));
    FAILURE_METRICS
        .iter()
        .map(|&metric| {
            let points: Vec<[f64; 2]> = sorted
                .iter()
                .map(|s| Ok([metric_value(s, "failure_rate")?, metric_value(s, metric)?]))
                .collect::<Result<_, MetricError>>()?;
            let (slope, intercept) = least_squares(&points)?;
            Ok(SlopeFit {
                metric: metric.to_string(),
                slope,
                intercept,
                n: points.len(),
                points,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Gap histograms
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    /// Bin covers `[lower, upper)`.
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapHistogram {
    pub metric: String,
    pub bin_width: f64,
    pub bins: Vec<HistogramBin>,
    pub mean: f64,
    /// Population standard deviation.
    pub sd: f64,
    /// `(submission_id, internal - external)`, ascending id.
    pub gaps: Vec<(String, f64)>,
}

/// Histogram of internal-minus-external differences of `metric`. Bin edges
/// sit at integer multiples of `bin_width` and the bins run contiguously from
/// the lowest to the highest occupied one. A `gap.<metric>` aggregate, when
/// the scorer recorded one, is used in place of the rounded difference.
pub fn gap_histogram(
    scores: &[SubmissionScore],
    metric: &str,
    bin_width: f64,
) -> Result<GapHistogram, MetricError> {
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return Err(MetricError::Domain {
            what: "bin_width",
            value: bin_width,
            domain: "(0, inf)",
        });
    }
    if scores.is_empty() {
        return Err(MetricError::InsufficientData { needed: 1, got: 0 });
    }
    let mut gaps = Vec::with_capacity(scores.len());
    for s in scores {
        let missing = || MetricError::MissingPartitionScores {
            metric: metric.to_string(),
            submission: s.submission_id.clone(),
        };
        let internal = s
            .partition_value(Partition::Internal, metric)
            .ok_or_else(missing)?;
        let external = s
            .partition_value(Partition::External, metric)
            .ok_or_else(missing)?;
        let gap = s
            .aggregate(&format!("gap.{metric}"))
            .unwrap_or(internal - external);
        gaps.push((s.submission_id.clone(), gap));
    }
    gaps.sort_by(|a, b| a.0.cmp(&b.0));

    let index = |g: f64| (g / bin_width).floor() as i64;
    let lo = gaps.iter().map(|g| index(g.1)).min().expect("non-empty");
    let hi = gaps.iter().map(|g| index(g.1)).max().expect("non-empty");
    let mut bins: Vec<HistogramBin> = (lo..=hi)
        .map(|k| HistogramBin {
            lower: k as f64 * bin_width,
            upper: (k + 1) as f64 * bin_width,
            count: 0,
        })
        .collect();
    for g in &gaps {
        bins[(index(g.1) - lo) as usize].count += 1;
    }

    let n = gaps.len() as f64;
    let mean = gaps.iter().map(|g| g.1).sum::<f64>() / n;
    let var = gaps.iter().map(|g| (g.1 - mean).powi(2)).sum::<f64>() / n;

    Ok(GapHistogram {
        metric: metric.to_string(),
        bin_width,
        bins,
        mean,
        sd: var.sqrt(),
        gaps,
    })
}
