//! Meta learners for stacking: L2-regularised logistic regression and
//! least-squares gradient boosting over shallow regression trees.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaKind {
    LogisticRegression,
    GradientBoost,
}

impl MetaKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetaKind::LogisticRegression => "logistic_regression",
            MetaKind::GradientBoost => "gradient_boost",
        }
    }
}

impl std::str::FromStr for MetaKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic_regression" | "lr" | "logistic" => Ok(MetaKind::LogisticRegression),
            "gradient_boost" | "gbr" => Ok(MetaKind::GradientBoost),
            other => Err(Error::Config(format!("unknown meta learner {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaConfig {
    pub kind: MetaKind,
    /// Coefficient of `½‖w‖²` added to the summed log-loss (intercept unpenalised).
    pub logistic_l2: f64,
    pub gbr_trees: usize,
    pub gbr_depth: usize,
    pub gbr_learning_rate: f64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self { kind: MetaKind::GradientBoost, logistic_l2: 1.0, gbr_trees: 50, gbr_depth: 2, gbr_learning_rate: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetaLearner {
    LogisticRegression { weights: Vec<f64>, intercept: f64 },
    GradientBoost { init: f64, learning_rate: f64, trees: Vec<Tree> },
}

/// Regression tree stored as a flat node list; node 0 is the root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum TreeNode {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { value: f64 },
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split { feature, threshold, left, right } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

fn validate(x: &[Vec<f64>], y: &[f64]) -> Result<usize> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::Config(format!("{} feature rows for {} labels", x.len(), y.len())));
    }
    let k = x[0].len();
    if k == 0 || x.iter().any(|r| r.len() != k) {
        return Err(Error::Config("feature rows must share a positive width".into()));
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Metric("non-finite meta-learner input".into()));
    }
    let first = y[0];
    if y.iter().all(|&v| v == first) {
        return Err(Error::Degenerate("meta learner needs both classes in its labels".into()));
    }
    Ok(k)
}

impl MetaLearner {
    /// Fits on rows `x` (one base score per column) against 0/1 labels `y`.
    pub fn fit(x: &[Vec<f64>], y: &[f64], cfg: &MetaConfig) -> Result<Self> {
        let k = validate(x, y)?;
        match cfg.kind {
            MetaKind::LogisticRegression => fit_logistic(x, y, k, cfg.logistic_l2),
            MetaKind::GradientBoost => {
                if cfg.gbr_trees == 0 || cfg.gbr_depth == 0 {
                    return Err(Error::Config("gradient boosting needs at least one tree of depth ≥ 1".into()));
                }
                Ok(fit_gbr(x, y, cfg))
            }
        }
    }

    /// Meta output clipped to `[0, 1]`.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let raw = match self {
            MetaLearner::LogisticRegression { weights, intercept } => {
                let z = intercept + weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
                if z >= 0.0 {
                    1.0 / (1.0 + (-z).exp())
                } else {
                    z.exp() / (1.0 + z.exp())
                }
            }
            MetaLearner::GradientBoost { init, learning_rate, trees } => {
                init + trees.iter().map(|t| learning_rate * t.predict(x)).sum::<f64>()
            }
        };
        raw.clamp(0.0, 1.0)
    }
}

/// Newton–Raphson on the penalised log-likelihood.
fn fit_logistic(x: &[Vec<f64>], y: &[f64], k: usize, l2: f64) -> Result<MetaLearner> {
    let dim = k + 1; // intercept last
    let mut beta = vec![0.0f64; dim];
    for _ in 0..100 {
        let mut grad = vec![0.0f64; dim];
        let mut hess = vec![vec![0.0f64; dim]; dim];
        for (row, &t) in x.iter().zip(y) {
            let z = beta[k] + row.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>();
            let p = 1.0 / (1.0 + (-z).exp());
            let w = (p * (1.0 - p)).max(1e-12);
            for i in 0..dim {
                let xi = if i == k { 1.0 } else { row[i] };
                grad[i] += (p - t) * xi;
                for j in 0..dim {
                    let xj = if j == k { 1.0 } else { row[j] };
                    hess[i][j] += w * xi * xj;
                }
            }
        }
        for i in 0..k {
            grad[i] += l2 * beta[i];
            hess[i][i] += l2;
        }
        let step = solve(hess, grad).ok_or_else(|| Error::Degenerate("singular logistic Hessian".into()))?;
        let mut change = 0.0f64;
        for (b, s) in beta.iter_mut().zip(&step) {
            *b -= s;
            change = change.max(s.abs());
        }
        if change < 1e-10 {
            break;
        }
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Degenerate("logistic regression did not converge".into()));
    }
    Ok(MetaLearner::LogisticRegression { intercept: beta[k], weights: beta[..k].to_vec() })
}

/// Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut out = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * out[c]).sum();
        out[r] = (b[r] - s) / a[r][r];
    }
    Some(out)
}

fn fit_gbr(x: &[Vec<f64>], y: &[f64], cfg: &MetaConfig) -> MetaLearner {
    let init = y.iter().sum::<f64>() / y.len() as f64;
    let mut pred = vec![init; y.len()];
    let mut trees = Vec::with_capacity(cfg.gbr_trees);
    let all: Vec<usize> = (0..y.len()).collect();
    for _ in 0..cfg.gbr_trees {
        let resid: Vec<f64> = y.iter().zip(&pred).map(|(t, p)| t - p).collect();
        let mut nodes = Vec::new();
        grow(x, &resid, &all, cfg.gbr_depth, &mut nodes);
        let tree = Tree { nodes };
        for (p, row) in pred.iter_mut().zip(x) {
            *p += cfg.gbr_learning_rate * tree.predict(row);
        }
        trees.push(tree);
    }
    MetaLearner::GradientBoost { init, learning_rate: cfg.gbr_learning_rate, trees }
}

fn mean(v: &[f64], idx: &[usize]) -> f64 {
    idx.iter().map(|&i| v[i]).sum::<f64>() / idx.len() as f64
}

/// Appends the subtree for `idx` to `nodes` and returns its index.
fn grow(x: &[Vec<f64>], r: &[f64], idx: &[usize], depth: usize, nodes: &mut Vec<TreeNode>) -> usize {
    let at = nodes.len();
    nodes.push(TreeNode::Leaf { value: mean(r, idx) });
    if depth == 0 || idx.len() < 2 {
        return at;
    }
    let Some((feature, threshold)) = best_split(x, r, idx) else { return at };
    let (l, rr): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| x[i][feature] <= threshold);
    let left = grow(x, r, &l, depth - 1, nodes);
    let right = grow(x, r, &rr, depth - 1, nodes);
    nodes[at] = TreeNode::Split { feature, threshold, left, right };
    at
}

/// Split minimising the summed squared error; thresholds are midpoints
/// between consecutive distinct values. Earliest feature/threshold wins ties.
fn best_split(x: &[Vec<f64>], r: &[f64], idx: &[usize]) -> Option<(usize, f64)> {
    let total: f64 = idx.iter().map(|&i| r[i]).sum();
    let n = idx.len() as f64;
    let base = total * total / n;
    let mut best: Option<(f64, usize, f64)> = None;
    for f in 0..x[idx[0]].len() {
        let mut order = idx.to_vec();
        order.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]).then(a.cmp(&b)));
        let mut left = 0.0;
        for (j, pair) in order.windows(2).enumerate() {
            left += r[pair[0]];
            let (a, b) = (x[pair[0]][f], x[pair[1]][f]);
            if a == b {
                continue;
            }
            let nl = (j + 1) as f64;
            let right = total - left;
            // Reduction in SSE relative to a single leaf.
            let gain = left * left / nl + right * right / (n - nl) - base;
            if best.is_none_or(|(g, _, _)| gain > g + 1e-12) {
                best = Some((gain, f, a + (b - a) / 2.0));
            }
        }
    }
    best.filter(|(g, _, _)| *g > 1e-15).map(|(_, f, t)| (f, t))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lr() -> MetaConfig {
        MetaConfig { kind: MetaKind::LogisticRegression, ..MetaConfig::default() }
    }

    #[test]
    fn logistic_matches_closed_form_single_feature() {
        // Symmetric data: the optimum has zero intercept.
        let x = vec![vec![-1.0], vec![-1.0], vec![1.0], vec![1.0], vec![-1.0], vec![1.0]];
        let y = vec![0.0, 0.0, 1.0, 1.0, 1.0, 0.0];
        let MetaLearner::LogisticRegression { weights, intercept } = MetaLearner::fit(&x, &y, &lr()).unwrap() else {
            panic!()
        };
        assert!(intercept.abs() < 1e-9);
        // Stationarity: 6·(σ(w) − 2/3) + w = 0.
        let w = weights[0];
        let s = 1.0 / (1.0 + (-w).exp());
        assert!((6.0 * (s - 2.0 / 3.0) + w).abs() < 1e-8);
    }

    #[test]
    fn gbr_depth_one_fits_a_step() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..10).map(|i| if i >= 5 { 1.0 } else { 0.0 }).collect();
        let cfg = MetaConfig { gbr_trees: 1, gbr_depth: 1, gbr_learning_rate: 1.0, ..MetaConfig::default() };
        let m = MetaLearner::fit(&x, &y, &cfg).unwrap();
        let MetaLearner::GradientBoost { trees, .. } = &m else { panic!() };
        assert_eq!(trees[0].nodes[0], TreeNode::Split { feature: 0, threshold: 4.5, left: 1, right: 2 });
        for (row, t) in x.iter().zip(&y) {
            assert!((m.predict(row) - t).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_labels_are_degenerate() {
        let x = vec![vec![0.1, 0.2], vec![0.3, 0.4]];
        for cfg in [lr(), MetaConfig::default()] {
            assert!(matches!(MetaLearner::fit(&x, &[1.0, 1.0], &cfg), Err(Error::Degenerate(_))));
        }
    }

    #[test]
    fn predictions_are_clipped() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, (i % 3) as f64]).collect();
        let y: Vec<f64> = (0..20).map(|i| (i % 2) as f64).collect();
        let m = MetaLearner::fit(&x, &y, &MetaConfig { gbr_learning_rate: 1.0, ..MetaConfig::default() }).unwrap();
        for row in &x {
            let p = m.predict(row);
            assert!((0.0..=1.0).contains(&p));
        }
    }
}
