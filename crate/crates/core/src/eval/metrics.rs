use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::corpus::{MembershipLabel, Setting};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredExample {
    pub id: String,
    /// Larger means more member-like.
    pub score: f64,
    pub label: MembershipLabel,
    pub predicted: Option<MembershipLabel>,
}

impl ScoredExample {
    pub fn new(id: impl Into<String>, score: f64, label: MembershipLabel) -> Self {
        Self { id: id.into(), score, label, predicted: None }
    }
}

fn check_finite(examples: &[ScoredExample]) -> Result<()> {
    match examples.iter().find(|e| !e.score.is_finite()) {
        Some(e) => Err(Error::Metric(format!("score of {} is not finite", e.id))),
        None => Ok(()),
    }
}

/// Probability that a random member outscores a random nonmember, ties
/// counting one half.
pub fn compute_auc(examples: &[ScoredExample]) -> Result<f64> {
    check_finite(examples)?;
    let n_m = examples.iter().filter(|e| e.label.is_member()).count();
    let n_n = examples.len() - n_m;
    if n_m == 0 || n_n == 0 {
        return Err(Error::Metric("AUC needs both members and nonmembers".into()));
    }
    let mut sorted: Vec<&ScoredExample> = examples.iter().collect();
    sorted.sort_by(|a, b| a.score.total_cmp(&b.score));
    // Walk tie groups in ascending order; `below` counts nonmembers strictly lower.
    let (mut wins, mut below) = (0.0f64, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].score == sorted[i].score {
            j += 1;
        }
        let group = &sorted[i..j];
        let m = group.iter().filter(|e| e.label.is_member()).count();
        let n = group.len() - m;
        wins += m as f64 * below as f64 + 0.5 * (m * n) as f64;
        below += n;
        i = j;
    }
    Ok(wins / (n_m as f64 * n_n as f64))
}

/// 1-based rank `⌈fraction · n⌉`, clamped to `[1, n]`; a tiny slack keeps
/// products like `0.6 · 5` from rounding up past the exact integer.
pub fn threshold_rank(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64 - 1e-9).ceil().max(1.0) as usize).min(n)
}

/// Fractions of the validation set used to pick θ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdParams {
    /// Rank fraction over member validation scores (white and gray box).
    pub k: f64,
    /// Rank fraction over nonmember validation scores (black box).
    pub g: f64,
}

impl Default for ThresholdParams {
    fn default() -> Self {
        Self { k: 0.15, g: 0.6 }
    }
}

/// Sorts descending by score, ascending id among equal scores.
fn descending(scores: &mut [&ScoredExample]) {
    scores.sort_by(|a, b| match b.score.total_cmp(&a.score) {
        Ordering::Equal => a.id.cmp(&b.id),
        o => o,
    });
}

/// θ = the score at rank `⌈k·n⌉` among member validation scores (white and
/// gray box), or at rank `⌈g·n⌉` among nonmember validation scores (black box,
/// whose validation set must hold nonmembers only).
pub fn select_threshold(validation: &[ScoredExample], setting: Setting, params: ThresholdParams) -> Result<f64> {
    check_finite(validation)?;
    let (fraction, want_member) = match setting {
        Setting::Whitebox | Setting::Graybox => (params.k, true),
        Setting::Blackbox => {
            if validation.iter().any(|e| e.label.is_member()) {
                return Err(Error::Config("black-box threshold selection must see nonmember scores only".into()));
            }
            (params.g, false)
        }
    };
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("threshold fraction {fraction} outside (0, 1]")));
    }
    let mut relevant: Vec<&ScoredExample> = validation.iter().filter(|e| e.label.is_member() == want_member).collect();
    if relevant.is_empty() {
        return Err(Error::Config(format!(
            "no {} validation scores to pick a threshold from",
            if want_member { "member" } else { "nonmember" }
        )));
    }
    descending(&mut relevant);
    Ok(relevant[threshold_rank(fraction, relevant.len()) - 1].score)
}

/// Predicts member iff the score strictly exceeds θ.
pub fn apply_threshold(examples: &mut [ScoredExample], theta: f64) -> Result<()> {
    if !theta.is_finite() {
        return Err(Error::Metric("threshold is not finite".into()));
    }
    for e in examples {
        e.predicted = Some(MembershipLabel::from_bool(e.score > theta));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub true_member: usize,
    pub false_nonmember: usize,
    pub true_nonmember: usize,
    pub false_member: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Accuracies {
    pub acc: f64,
    /// `None` when there are no members.
    pub acc_member: Option<f64>,
    /// `None` when there are no nonmembers.
    pub acc_nonmember: Option<f64>,
    pub confusion: Confusion,
}

pub fn compute_accuracies(examples: &[ScoredExample]) -> Result<Accuracies> {
    if examples.is_empty() {
        return Err(Error::Metric("no examples".into()));
    }
    let mut c = Confusion::default();
    for e in examples {
        let p =
            e.predicted.ok_or_else(|| Error::State(format!("{} has no prediction; apply a threshold first", e.id)))?;
        match (e.label.is_member(), p.is_member()) {
            (true, true) => c.true_member += 1,
            (true, false) => c.false_nonmember += 1,
            (false, false) => c.true_nonmember += 1,
            (false, true) => c.false_member += 1,
        }
    }
    let ratio = |hit: usize, total: usize| (total > 0).then(|| hit as f64 / total as f64);
    Ok(Accuracies {
        acc: (c.true_member + c.true_nonmember) as f64 / examples.len() as f64,
        acc_member: ratio(c.true_member, c.true_member + c.false_nonmember),
        acc_nonmember: ratio(c.true_nonmember, c.true_nonmember + c.false_member),
        confusion: c,
    })
}

/// (FPR, TPR) points from the strictest to the loosest threshold, starting
/// at (0, 0) and ending at (1, 1); tied scores move both rates at once.
pub fn roc_points(examples: &[ScoredExample]) -> Result<Vec<(f64, f64)>> {
    check_finite(examples)?;
    let n_m = examples.iter().filter(|e| e.label.is_member()).count();
    let n_n = examples.len() - n_m;
    if n_m == 0 || n_n == 0 {
        return Err(Error::Metric("ROC needs both members and nonmembers".into()));
    }
    let mut sorted: Vec<&ScoredExample> = examples.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let s = sorted[i].score;
        while i < sorted.len() && sorted[i].score == s {
            if sorted[i].label.is_member() {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / n_n as f64, tp as f64 / n_m as f64));
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use MembershipLabel::{Member as M, Nonmember as N};

    fn ex(scores: &[(f64, MembershipLabel)]) -> Vec<ScoredExample> {
        scores.iter().enumerate().map(|(i, &(s, l))| ScoredExample::new(format!("e{i:03}"), s, l)).collect()
    }

    #[test]
    fn auc_fixtures() {
        assert_eq!(compute_auc(&ex(&[(0.9, M), (0.8, M), (0.3, N), (0.2, N)])).unwrap(), 1.0);
        assert_eq!(compute_auc(&ex(&[(0.9, N), (0.8, N), (0.3, M), (0.2, M)])).unwrap(), 0.0);
        assert_eq!(compute_auc(&ex(&[(0.9, M), (0.4, M), (0.6, N), (0.2, N)])).unwrap(), 0.75);
        assert_eq!(compute_auc(&ex(&[(0.5, M), (0.5, N)])).unwrap(), 0.5);
        assert!(matches!(compute_auc(&ex(&[(0.5, M)])), Err(Error::Metric(_))));
    }

    #[test]
    fn threshold_fixtures() {
        let members: Vec<(f64, MembershipLabel)> = (1..=10).rev().map(|i| (i as f64 / 10.0, M)).collect();
        let v = ex(&members);
        let p = ThresholdParams::default();
        assert_eq!(select_threshold(&v, Setting::Whitebox, p).unwrap(), 0.9);
        assert_eq!(select_threshold(&v, Setting::Graybox, ThresholdParams { k: 1.0, ..p }).unwrap(), 0.1);
        let non = ex(&[(0.5, N), (0.4, N), (0.3, N), (0.2, N), (0.1, N)]);
        assert_eq!(select_threshold(&non, Setting::Blackbox, p).unwrap(), 0.3);
        assert!(matches!(select_threshold(&v, Setting::Blackbox, p), Err(Error::Config(_))));
        assert!(matches!(select_threshold(&non, Setting::Whitebox, p), Err(Error::Config(_))));
    }

    #[test]
    fn strict_threshold_and_accuracies() {
        let mut v = ex(&[(0.5, M), (0.5 + 1e-9, M), (0.9, M), (0.1, M), (0.2, N), (0.3, N), (0.4, N), (0.0, N)]);
        apply_threshold(&mut v, 0.5).unwrap();
        assert_eq!(v[0].predicted, Some(N));
        assert_eq!(v[1].predicted, Some(M));
        let a = compute_accuracies(&v).unwrap();
        assert_eq!((a.acc, a.acc_member, a.acc_nonmember), (0.75, Some(0.5), Some(1.0)));

        let mut v = ex(&[(0.9, M), (0.8, M), (0.7, M), (0.1, M), (0.2, N), (0.3, N), (0.4, N), (0.0, N)]);
        apply_threshold(&mut v, 0.5).unwrap();
        let a = compute_accuracies(&v).unwrap();
        assert_eq!((a.acc, a.acc_member, a.acc_nonmember), (0.875, Some(0.75), Some(1.0)));

        let mut v = ex(&[(0.9, M), (0.1, N)]);
        apply_threshold(&mut v, -1.0).unwrap();
        let a = compute_accuracies(&v).unwrap();
        assert_eq!((a.acc, a.acc_member, a.acc_nonmember), (0.5, Some(1.0), Some(0.0)));
        assert!(matches!(compute_accuracies(&ex(&[(0.1, M)])), Err(Error::State(_))));
    }

    #[test]
    fn roc_runs_corner_to_corner() {
        let pts = roc_points(&ex(&[(0.9, M), (0.4, M), (0.6, N), (0.2, N)])).unwrap();
        assert_eq!(pts, vec![(0.0, 0.0), (0.0, 0.5), (0.5, 0.5), (0.5, 1.0), (1.0, 1.0)]);
    }

    #[test]
    fn rank_slack() {
        assert_eq!(threshold_rank(0.6, 5), 3);
        assert_eq!(threshold_rank(0.15, 10), 2);
        assert_eq!(threshold_rank(0.15, 20), 3);
        assert_eq!(threshold_rank(1e-6, 4), 1);
    }
}
