//! Gray-box attacks: direct modelling on the target's last layer, attacks on
//! a distilled shadow's inner layers, and a stacking ensemble of both.

pub mod meta;
pub mod shadow;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use meta::{MetaConfig, MetaKind, MetaLearner};
pub use shadow::{distill_shadow, distill_student, evaluate_kd, kd_loss, DistillConfig, KdLoss, ShadowModel};

use crate::corpus::{CodeSnippet, LabeledSnippet, MembershipLabel, Setting, SplitBundle};
use crate::encoder::{AccessLevel, EncoderConfig, OracleHandle};
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::seeds::derive_seed;
use crate::whitebox::{layer_features, FeatureExample, InferenceConfig, InferenceModel, LayerSelection};

/// Where a base attack takes its token representations from.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BaseAttack {
    /// The target's last layer through the gray oracle.
    Direct,
    /// Selected layers of the shadow model.
    Shadow(LayerSelection),
}

impl fmt::Display for BaseAttack {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaseAttack::Direct => f.write_str("direct"),
            BaseAttack::Shadow(s) => write!(f, "shadow({s})"),
        }
    }
}

impl TryFrom<String> for BaseAttack {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<BaseAttack> for String {
    fn from(b: BaseAttack) -> Self {
        b.to_string()
    }
}

impl FromStr for BaseAttack {
    type Err = Error;

    /// `direct` or `shadow(2+4)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "direct" {
            return Ok(BaseAttack::Direct);
        }
        s.strip_prefix("shadow(")
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(|| Error::Config(format!("unknown base attack {s:?}")))?
            .parse()
            .map(BaseAttack::Shadow)
    }
}

/// Observation channels available to a gray-box adversary.
pub struct GrayContext<'a> {
    pub oracle: &'a OracleHandle,
    pub shadow: Option<&'a ShadowModel>,
}

impl GrayContext<'_> {
    fn features(&self, base: &BaseAttack, snippets: &[&CodeSnippet]) -> Result<Vec<Tensor>> {
        match base {
            BaseAttack::Direct => {
                require_gray(self.oracle)?;
                layer_features(self.oracle, snippets, &LayerSelection::last(self.oracle.num_layers()))
            }
            BaseAttack::Shadow(sel) => {
                let shadow = self.shadow.ok_or_else(|| Error::Config(format!("{base} needs a shadow model")))?;
                layer_features(&shadow.handle(), snippets, sel)
            }
        }
    }

    fn width(&self, base: &BaseAttack) -> Result<usize> {
        Ok(match base {
            BaseAttack::Direct => self.oracle.hidden_dim(),
            BaseAttack::Shadow(sel) => {
                let shadow = self.shadow.ok_or_else(|| Error::Config(format!("{base} needs a shadow model")))?;
                sel.check_against(shadow.encoder.num_layers())?;
                shadow.encoder.hidden_dim() * sel.len()
            }
        })
    }
}

fn require_gray(oracle: &OracleHandle) -> Result<()> {
    if oracle.level() != AccessLevel::Gray {
        return Err(Error::Access(format!("gray-box attacks take a gray handle, got {}", oracle.level())));
    }
    Ok(())
}

/// One trained base attack.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayboxAttack {
    pub base: BaseAttack,
    pub model: InferenceModel,
    pub loss_trace: Vec<f32>,
}

impl GrayboxAttack {
    pub fn score_snippets(&self, ctx: &GrayContext<'_>, snippets: &[&CodeSnippet]) -> Result<Vec<f64>> {
        let feats = ctx.features(&self.base, snippets)?;
        let refs: Vec<&Tensor> = feats.iter().collect();
        self.model.score_batch(&refs)
    }
}

fn check_bundle(bundle: &SplitBundle) -> Result<()> {
    if bundle.setting != Setting::Graybox {
        return Err(Error::Config(format!(
            "gray-box training needs a gray-box bundle, got {}",
            bundle.setting.as_str()
        )));
    }
    if bundle.train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    Ok(())
}

fn examples_for(set: &[LabeledSnippet], feats: Vec<Tensor>) -> Vec<FeatureExample> {
    set.iter()
        .zip(feats)
        .map(|(l, features)| FeatureExample { id: l.snippet.id.clone(), features, label: l.label })
        .collect()
}

fn train_base(
    ctx: &GrayContext<'_>,
    base: &BaseAttack,
    set: &[LabeledSnippet],
    cfg: &InferenceConfig,
) -> Result<GrayboxAttack> {
    let snippets: Vec<&CodeSnippet> = set.iter().map(|l| &l.snippet).collect();
    let examples = examples_for(set, ctx.features(base, &snippets)?);
    let mut model = InferenceModel::new(ctx.width(base)?, cfg.clone())?;
    let loss_trace = model.fit(&examples)?;
    Ok(GrayboxAttack { base: base.clone(), model, loss_trace })
}

/// Inference model on the target's last-layer outputs.
pub fn graybox_direct(bundle: &SplitBundle, oracle: &OracleHandle, config: &InferenceConfig) -> Result<GrayboxAttack> {
    check_bundle(bundle)?;
    require_gray(oracle)?;
    train_base(&GrayContext { oracle, shadow: None }, &BaseAttack::Direct, &bundle.train, config)
}

/// Inference model on the shadow's selected layers.
pub fn graybox_shadow(
    bundle: &SplitBundle,
    oracle: &OracleHandle,
    shadow: &ShadowModel,
    selection: &LayerSelection,
    config: &InferenceConfig,
) -> Result<GrayboxAttack> {
    check_bundle(bundle)?;
    let ctx = GrayContext { oracle, shadow: Some(shadow) };
    train_base(&ctx, &BaseAttack::Shadow(selection.clone()), &bundle.train, config)
}

/// Meta learner over base-attack scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub base_attacks: Vec<String>,
    pub meta: MetaLearner,
}

impl EnsembleModel {
    pub fn score(&self, base_scores: &[f64]) -> f64 {
        self.meta.predict(base_scores)
    }
}

/// Fits the meta learner on rows of base scores (ideally out-of-fold).
pub fn train_ensemble(
    base_scores: &[Vec<f64>],
    labels: &[MembershipLabel],
    base_attacks: Vec<String>,
    config: &MetaConfig,
) -> Result<EnsembleModel> {
    if base_attacks.len() < 2 {
        return Err(Error::Config("an ensemble needs at least two base attacks".into()));
    }
    if base_scores.iter().any(|r| r.len() != base_attacks.len()) {
        return Err(Error::Config("every score row needs one entry per base attack".into()));
    }
    let y: Vec<f64> = labels.iter().map(|l| l.as_u8() as f64).collect();
    Ok(EnsembleModel { base_attacks, meta: MetaLearner::fit(base_scores, &y, config)? })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackingConfig {
    pub bases: Vec<BaseAttack>,
    pub folds: usize,
    pub meta: MetaConfig,
}

impl StackingConfig {
    /// Direct modelling plus the shadow's last and middle+last layers.
    pub fn standard(num_layers: usize) -> Self {
        Self {
            bases: vec![
                BaseAttack::Direct,
                BaseAttack::Shadow(LayerSelection::last(num_layers)),
                BaseAttack::Shadow(LayerSelection::middle_and_last(num_layers)),
            ],
            folds: 2,
            meta: MetaConfig::default(),
        }
    }
}

/// Base attacks trained on the full training set plus a meta learner fitted
/// on their out-of-fold predictions.
#[derive(Clone, Debug, PartialEq)]
pub struct StackedEnsemble {
    pub bases: Vec<GrayboxAttack>,
    pub ensemble: EnsembleModel,
    /// Out-of-fold base scores the meta learner was fitted on, by training example.
    pub oof_scores: Vec<Vec<f64>>,
}

/// Scores of every base and of the ensemble for a list of snippets.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleScores {
    /// `per_base[b][i]` is base `b`'s score for snippet `i`.
    pub per_base: Vec<Vec<f64>>,
    pub ensemble: Vec<f64>,
}

/// Fold index per training example: classes are dealt round-robin in hash
/// order so every fold keeps the member/nonmember balance.
fn fold_assignment(set: &[LabeledSnippet], folds: usize, seed: u64) -> Vec<usize> {
    let mut out = vec![0; set.len()];
    for class in [MembershipLabel::Member, MembershipLabel::Nonmember] {
        let mut idx: Vec<(u64, &str, usize)> = set
            .iter()
            .enumerate()
            .filter(|(_, l)| l.label == class)
            .map(|(i, l)| (derive_seed(seed, &format!("fold/{}", l.snippet.id)), l.snippet.id.as_str(), i))
            .collect();
        idx.sort_unstable();
        for (rank, (_, _, i)) in idx.into_iter().enumerate() {
            out[i] = rank % folds;
        }
    }
    out
}

/// How the shadow was distilled, so stacking can re-distil it inside each
/// fold: a shadow that saw the held-out members would make its out-of-fold
/// scores look far better than its scores on unseen test members.
#[derive(Clone, Debug)]
pub struct ShadowRecipe<'a> {
    pub known_members: Vec<&'a CodeSnippet>,
    pub student: EncoderConfig,
    pub kind: KdLoss,
    pub distill: DistillConfig,
}

/// Fits every base on the full training set and a meta learner on their
/// out-of-fold scores. With a `recipe`, fold `k`'s shadow bases use a shadow
/// distilled without fold `k`'s members; otherwise `ctx.shadow` is used
/// throughout.
pub fn train_stacked_ensemble(
    bundle: &SplitBundle,
    ctx: &GrayContext<'_>,
    inference: &InferenceConfig,
    stacking: &StackingConfig,
    recipe: Option<&ShadowRecipe<'_>>,
) -> Result<StackedEnsemble> {
    check_bundle(bundle)?;
    require_gray(ctx.oracle)?;
    if stacking.folds < 2 {
        return Err(Error::Config("stacking needs at least two folds".into()));
    }
    let train = &bundle.train;
    let snippets: Vec<&CodeSnippet> = train.iter().map(|l| &l.snippet).collect();
    let folds = fold_assignment(train, stacking.folds, inference.seed);
    let full: Vec<Vec<FeatureExample>> =
        stacking.bases.iter().map(|b| Ok(examples_for(train, ctx.features(b, &snippets)?))).collect::<Result<_>>()?;
    let mut oof = vec![vec![0.0; stacking.bases.len()]; train.len()];
    for k in 0..stacking.folds {
        let fold_shadow = match recipe {
            Some(r) if stacking.bases.iter().any(|b| matches!(b, BaseAttack::Shadow(_))) => {
                let held: HashSet<&str> =
                    train.iter().zip(&folds).filter(|(_, &f)| f == k).map(|(l, _)| l.snippet.id.as_str()).collect();
                let known: Vec<&CodeSnippet> =
                    r.known_members.iter().copied().filter(|s| !held.contains(s.id.as_str())).collect();
                Some(distill_shadow(ctx.oracle, &known, r.student.clone(), r.kind, &r.distill)?)
            }
            _ => None,
        };
        let fold_ctx = GrayContext { oracle: ctx.oracle, shadow: fold_shadow.as_ref().or(ctx.shadow) };
        for (b, base) in stacking.bases.iter().enumerate() {
            let examples = match (base, &fold_shadow) {
                (BaseAttack::Shadow(_), Some(_)) => examples_for(train, fold_ctx.features(base, &snippets)?),
                _ => full[b].clone(),
            };
            let fit: Vec<FeatureExample> =
                examples.iter().zip(&folds).filter(|(_, &f)| f != k).map(|(e, _)| e.clone()).collect();
            let cfg = InferenceConfig { seed: derive_seed(inference.seed, &format!("fold{k}")), ..inference.clone() };
            let mut model = InferenceModel::new(fold_ctx.width(base)?, cfg)?;
            model.fit(&fit)?;
            let held: Vec<usize> = (0..train.len()).filter(|&i| folds[i] == k).collect();
            let feats: Vec<&Tensor> = held.iter().map(|&i| &examples[i].features).collect();
            for (&i, s) in held.iter().zip(model.score_batch(&feats)?) {
                oof[i][b] = s;
            }
        }
    }
    let mut bases = Vec::with_capacity(stacking.bases.len());
    for (base, examples) in stacking.bases.iter().zip(&full) {
        let mut model = InferenceModel::new(ctx.width(base)?, inference.clone())?;
        let loss_trace = model.fit(examples)?;
        bases.push(GrayboxAttack { base: base.clone(), model, loss_trace });
    }
    let labels: Vec<MembershipLabel> = train.iter().map(|l| l.label).collect();
    let names = stacking.bases.iter().map(ToString::to_string).collect();
    let ensemble = train_ensemble(&oof, &labels, names, &stacking.meta)?;
    Ok(StackedEnsemble { bases, ensemble, oof_scores: oof })
}

impl StackedEnsemble {
    pub fn score_snippets(&self, ctx: &GrayContext<'_>, snippets: &[&CodeSnippet]) -> Result<EnsembleScores> {
        let per_base = self.bases.iter().map(|b| b.score_snippets(ctx, snippets)).collect::<Result<Vec<_>>>()?;
        let ensemble = (0..snippets.len())
            .map(|i| {
                let row: Vec<f64> = per_base.iter().map(|s| s[i]).collect();
                self.ensemble.score(&row)
            })
            .collect();
        Ok(EnsembleScores { per_base, ensemble })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_attack_names_round_trip() {
        for s in ["direct", "shadow(4)", "shadow(2+4)"] {
            assert_eq!(s.parse::<BaseAttack>().unwrap().to_string(), s);
        }
        assert!("shadow".parse::<BaseAttack>().is_err());
    }

    #[test]
    fn ensemble_needs_two_bases() {
        let labels = [MembershipLabel::Member, MembershipLabel::Nonmember];
        let r = train_ensemble(&[vec![1.0], vec![0.0]], &labels, vec!["a".into()], &MetaConfig::default());
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn perfect_bases_give_perfect_ensemble() {
        let labels: Vec<MembershipLabel> = (0..20).map(|i| MembershipLabel::from_bool(i % 2 == 0)).collect();
        let rows: Vec<Vec<f64>> = labels.iter().map(|l| vec![l.as_u8() as f64; 2]).collect();
        for kind in [MetaKind::GradientBoost, MetaKind::LogisticRegression] {
            let cfg = MetaConfig { kind, ..MetaConfig::default() };
            let e = train_ensemble(&rows, &labels, vec!["a".into(), "b".into()], &cfg).unwrap();
            for (r, l) in rows.iter().zip(&labels) {
                assert_eq!(e.score(r) > 0.5, l.is_member());
            }
        }
    }
}
