//! White-box attack: a self-attention classifier over stacked middle and
//! last layer outputs of the target.

pub mod inference;
pub mod selection;

pub use inference::{confidence, FeatureExample, InferenceConfig, InferenceModel, Pooling};
pub use selection::{flatten_stack, stack_layer_outputs, LayerSelection};

use crate::corpus::{CodeSnippet, LabeledSnippet, Setting, SplitBundle};
use crate::encoder::{AccessLevel, OracleHandle};
use crate::error::{Error, Result};
use crate::nn::Tensor;

const FEATURE_CHUNK: usize = 64;

/// `L × k·d` inference-model inputs for each snippet (code-only layout).
///
/// A last-layer-only selection goes through the final-layer interface and so
/// works with any access level; anything else needs a white handle.
pub fn layer_features(
    oracle: &OracleHandle,
    snippets: &[&CodeSnippet],
    selection: &LayerSelection,
) -> Result<Vec<Tensor>> {
    selection.check_against(oracle.num_layers())?;
    let last_only = selection.indices() == [oracle.num_layers()];
    let mut out = Vec::with_capacity(snippets.len());
    for chunk in snippets.chunks(FEATURE_CHUNK) {
        let inputs: Vec<(&str, Option<&str>)> = chunk.iter().map(|s| (s.code.as_str(), None)).collect();
        if last_only {
            out.extend(oracle.last_layer_batch(&inputs)?);
        } else {
            for r in oracle.encode_full_batch(&inputs)? {
                out.push(flatten_stack(&stack_layer_outputs(&r, selection)?));
            }
        }
    }
    Ok(out)
}

pub fn labelled_features(
    oracle: &OracleHandle,
    set: &[LabeledSnippet],
    selection: &LayerSelection,
) -> Result<Vec<FeatureExample>> {
    let snippets: Vec<&CodeSnippet> = set.iter().map(|l| &l.snippet).collect();
    let feats = layer_features(oracle, &snippets, selection)?;
    Ok(set
        .iter()
        .zip(feats)
        .map(|(l, features)| FeatureExample { id: l.snippet.id.clone(), features, label: l.label })
        .collect())
}

/// A trained white-box attack.
#[derive(Clone, Debug, PartialEq)]
pub struct WhiteboxAttack {
    pub model: InferenceModel,
    pub selection: LayerSelection,
    pub loss_trace: Vec<f32>,
}

pub fn train_whitebox(
    bundle: &SplitBundle,
    oracle: &OracleHandle,
    selection: &LayerSelection,
    config: &InferenceConfig,
) -> Result<WhiteboxAttack> {
    if bundle.setting != Setting::Whitebox {
        return Err(Error::Config(format!(
            "white-box training needs a white-box bundle, got {}",
            bundle.setting.as_str()
        )));
    }
    if oracle.level() != AccessLevel::White {
        return Err(Error::Access(format!("white-box training needs a white handle, got {}", oracle.level())));
    }
    if bundle.train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let examples = labelled_features(oracle, &bundle.train, selection)?;
    let mut model = InferenceModel::new(oracle.hidden_dim() * selection.len(), config.clone())?;
    let loss_trace = model.fit(&examples)?;
    Ok(WhiteboxAttack { model, selection: selection.clone(), loss_trace })
}

/// Membership confidences in (0, 1) for each snippet.
pub fn score_snippets(
    model: &InferenceModel,
    oracle: &OracleHandle,
    snippets: &[&CodeSnippet],
    selection: &LayerSelection,
) -> Result<Vec<f64>> {
    let expected = oracle.hidden_dim() * selection.len();
    if model.input_dim != expected {
        return Err(Error::Config(format!(
            "model takes width {}, selection {selection} yields {expected}",
            model.input_dim
        )));
    }
    let feats = layer_features(oracle, snippets, selection)?;
    let refs: Vec<&Tensor> = feats.iter().collect();
    model.score_batch(&refs)
}

pub fn score_whitebox(
    model: &InferenceModel,
    oracle: &OracleHandle,
    snippet: &CodeSnippet,
    selection: &LayerSelection,
) -> Result<f64> {
    Ok(score_snippets(model, oracle, &[snippet], selection)?[0])
}
