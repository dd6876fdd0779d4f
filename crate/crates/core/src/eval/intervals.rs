use serde::{Deserialize, Serialize};

use super::metrics::ScoredExample;
use crate::corpus::{CodeFeatures, FeatureName};
use crate::error::{Error, Result};

/// Min-max normalisation; a constant vector maps to all zeros.
pub fn min_max_normalize(scores: &[f64]) -> Vec<f64> {
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; scores.len()];
    }
    scores.iter().map(|s| ((s - lo) / (hi - lo)).clamp(0.0, 1.0)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalRow {
    pub feature: FeatureName,
    pub interval_index: usize,
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// `None` for an empty interval.
    pub mean_normalized_score: Option<f64>,
}

/// Equal-width bin of `v` over `[lo, hi]`; the maximum falls in the last bin.
fn bin(v: f64, lo: f64, hi: f64, n: usize) -> usize {
    if hi <= lo {
        return 0;
    }
    (((v - lo) / (hi - lo) * n as f64).floor() as usize).min(n - 1)
}

/// Groups examples into `n_intervals` equal-width intervals of one feature and
/// reports each interval's size and mean min-max-normalised score.
pub fn interval_analysis(
    examples: &[ScoredExample],
    features: &[CodeFeatures],
    feature: FeatureName,
    n_intervals: usize,
) -> Result<Vec<IntervalRow>> {
    if n_intervals < 2 {
        return Err(Error::Config("interval analysis needs at least two intervals".into()));
    }
    if examples.len() != features.len() {
        return Err(Error::Config(format!("{} examples but {} feature rows", examples.len(), features.len())));
    }
    let values: Vec<f64> = features.iter().map(|f| f.get(feature)).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Metric(format!("non-finite {} value", feature.as_str())));
    }
    let scores: Vec<f64> = examples.iter().map(|e| e.score).collect();
    let norm = min_max_normalize(&scores);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if values.is_empty() { (0.0, 0.0) } else { (lo, hi) };
    let width = (hi - lo) / n_intervals as f64;
    let mut sums = vec![0.0f64; n_intervals];
    let mut counts = vec![0usize; n_intervals];
    for (v, s) in values.iter().zip(&norm) {
        let b = bin(*v, lo, hi, n_intervals);
        sums[b] += s;
        counts[b] += 1;
    }
    Ok((0..n_intervals)
        .map(|i| IntervalRow {
            feature,
            interval_index: i,
            lower: lo + width * i as f64,
            upper: if i + 1 == n_intervals { hi } else { lo + width * (i + 1) as f64 },
            count: counts[i],
            mean_normalized_score: (counts[i] > 0).then(|| sums[i] / counts[i] as f64),
        })
        .collect())
}
