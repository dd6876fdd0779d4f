use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::intervals::{interval_analysis, IntervalRow};
use super::metrics::{
    apply_threshold, compute_accuracies, compute_auc, select_threshold, ScoredExample, ThresholdParams,
};
use crate::corpus::{CodeFeatures, FeatureName, Setting};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub attack_name: String,
    pub setting: Setting,
    pub auc: f64,
    pub acc: f64,
    pub acc_member: f64,
    pub acc_nonmember: f64,
    pub threshold: f64,
    pub n_test: usize,
    pub n_member: usize,
    pub n_nonmember: usize,
    pub interval_rows: Vec<IntervalRow>,
}

/// Picks θ on `validation`, thresholds `test` in place and summarises it.
/// `features` (aligned with `test`) adds per-feature interval rows.
pub fn evaluate_attack(
    attack_name: &str,
    setting: Setting,
    validation: &[ScoredExample],
    test: &mut [ScoredExample],
    params: ThresholdParams,
    features: Option<(&[CodeFeatures], usize)>,
) -> Result<AttackReport> {
    let threshold = select_threshold(validation, setting, params)?;
    let auc = compute_auc(test)?;
    apply_threshold(test, threshold)?;
    let acc = compute_accuracies(test)?;
    let missing = || Error::Metric("test set lacks one class".into());
    let mut interval_rows = Vec::new();
    if let Some((feats, n)) = features {
        for f in FeatureName::ALL {
            interval_rows.extend(interval_analysis(test, feats, f, n)?);
        }
    }
    let n_member = test.iter().filter(|e| e.label.is_member()).count();
    Ok(AttackReport {
        attack_name: attack_name.to_string(),
        setting,
        auc,
        acc: acc.acc,
        acc_member: acc.acc_member.ok_or_else(missing)?,
        acc_nonmember: acc.acc_nonmember.ok_or_else(missing)?,
        threshold,
        n_test: test.len(),
        n_member,
        n_nonmember: test.len() - n_member,
        interval_rows,
    })
}

impl AttackReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Fixed-width table of the headline metrics, one row per report.
pub fn render_table(reports: &[AttackReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<24} {:<9} {:>7} {:>7} {:>7} {:>7} {:>11} {:>6}",
        "attack", "setting", "AUC", "ACC", "ACCm", "ACCn", "threshold", "n"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<24} {:<9} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>11.5} {:>6}",
            r.attack_name,
            r.setting.as_str(),
            r.auc,
            r.acc,
            r.acc_member,
            r.acc_nonmember,
            r.threshold,
            r.n_test
        );
    }
    out
}

#[derive(Serialize)]
struct IntervalCsvRow<'a> {
    attack: &'a str,
    feature: &'a str,
    interval_index: usize,
    lower: f64,
    upper: f64,
    count: usize,
    mean_normalized_score: Option<f64>,
}

pub fn write_interval_csv(path: &Path, reports: &[AttackReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in reports {
        for row in &r.interval_rows {
            w.serialize(IntervalCsvRow {
                attack: &r.attack_name,
                feature: row.feature.as_str(),
                interval_index: row.interval_index,
                lower: row.lower,
                upper: row.upper,
                count: row.count,
                mean_normalized_score: row.mean_normalized_score,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct ScoreCsvRow<'a> {
    id: &'a str,
    label: u8,
    score: f64,
    predicted: Option<u8>,
}

/// `(id, label, score, predicted)` rows.
pub fn write_scores_csv(path: &Path, examples: &[ScoredExample]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for e in examples {
        w.serialize(ScoreCsvRow {
            id: &e.id,
            label: e.label.as_u8(),
            score: e.score,
            predicted: e.predicted.map(|p| p.as_u8()),
        })?;
    }
    w.flush()?;
    Ok(())
}
