//! Access-controlled views of a target encoder.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::model::{EncoderModel, EncodingResult};
use super::tokenizer::{encode_input, Tokenizer};
use crate::error::{Error, Result};
use crate::nn::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccessLevel {
    White,
    Gray,
    Black,
}

impl AccessLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            AccessLevel::White => "white",
            AccessLevel::Gray => "gray",
            AccessLevel::Black => "black",
        }
    }
}

impl fmt::Display for AccessLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A trained encoder together with the tokenizer it was trained with.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetEncoder {
    pub tokenizer: Tokenizer,
    pub model: EncoderModel,
}

const WEIGHTS_FILE: &str = "encoder.bin";

impl TargetEncoder {
    pub fn new(tokenizer: Tokenizer, model: EncoderModel) -> Result<Self> {
        if tokenizer.vocab_len() > model.config.vocab_size {
            return Err(Error::Config(format!(
                "tokenizer has {} ids but the model embeds only {}",
                tokenizer.vocab_len(),
                model.config.vocab_size
            )));
        }
        Ok(Self { tokenizer, model })
    }

    pub fn input_ids(&self, code: &str, nl: Option<&str>) -> Vec<u32> {
        encode_input(&self.tokenizer, code, nl, self.model.config.max_positions)
    }

    /// Writes `encoder.bin`, `vocab.txt` and `merges.txt` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.tokenizer.save(dir)?;
        self.model.save(&dir.join(WEIGHTS_FILE))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::new(Tokenizer::load(dir)?, EncoderModel::load(&dir.join(WEIGHTS_FILE))?)
    }

    pub fn into_handle(self, level: AccessLevel) -> OracleHandle {
        OracleHandle::new(Arc::new(self), level)
    }
}

/// Text input to an oracle: code plus an optional natural-language description.
pub type OracleInput<'a> = (&'a str, Option<&'a str>);

/// The only way attacks observe an encoder. White handles see every layer;
/// gray and black handles see only the final layer.
#[derive(Clone, Debug)]
pub struct OracleHandle {
    level: AccessLevel,
    target: Arc<TargetEncoder>,
}

impl OracleHandle {
    pub fn new(target: Arc<TargetEncoder>, level: AccessLevel) -> Self {
        Self { level, target }
    }

    pub fn level(&self) -> AccessLevel {
        self.level
    }

    /// A view of the same encoder at a lower (or equal) access level.
    pub fn restrict(&self, level: AccessLevel) -> Result<Self> {
        if level < self.level {
            return Err(Error::Access(format!("cannot raise a {} handle to {}", self.level, level)));
        }
        Ok(Self { level, target: Arc::clone(&self.target) })
    }

    pub fn num_layers(&self) -> usize {
        self.target.model.num_layers()
    }

    pub fn hidden_dim(&self) -> usize {
        self.target.model.hidden_dim()
    }

    pub fn max_positions(&self) -> usize {
        self.target.model.config.max_positions
    }

    /// The tokenizer is public knowledge at every access level.
    pub fn tokenizer(&self) -> &Tokenizer {
        &self.target.tokenizer
    }

    pub fn input_ids(&self, code: &str, nl: Option<&str>) -> Vec<u32> {
        self.target.input_ids(code, nl)
    }

    fn require(&self, level: AccessLevel, what: &str) -> Result<()> {
        if self.level > level {
            return Err(Error::Access(format!("{what} needs {level} access, handle is {}", self.level)));
        }
        Ok(())
    }

    fn run(&self, inputs: &[OracleInput<'_>]) -> Result<Vec<EncodingResult>> {
        if let Some((_, _)) = inputs.iter().find(|(c, _)| c.is_empty()) {
            return Err(Error::Input("code text must be non-empty".into()));
        }
        let seqs: Vec<Vec<u32>> = inputs.iter().map(|(c, nl)| self.input_ids(c, *nl)).collect();
        self.target.model.encode_batch(&seqs)
    }

    /// All layer outputs. White access only.
    pub fn encode_full(&self, code: &str, nl: Option<&str>) -> Result<EncodingResult> {
        Ok(self.encode_full_batch(&[(code, nl)])?.remove(0))
    }

    pub fn encode_full_batch(&self, inputs: &[OracleInput<'_>]) -> Result<Vec<EncodingResult>> {
        self.require(AccessLevel::White, "all-layer encoding")?;
        self.run(inputs)
    }

    /// Output of layer `layer` (1-based). Below white access only the last
    /// layer may be requested.
    pub fn encode_layer(&self, code: &str, nl: Option<&str>, layer: usize) -> Result<Tensor> {
        let n = self.num_layers();
        if layer == 0 || layer > n {
            return Err(Error::Access(format!("layer {layer} does not exist (encoder has {n})")));
        }
        if layer != n {
            self.require(AccessLevel::White, &format!("layer {layer}"))?;
        }
        let mut r = self.run(&[(code, nl)])?.remove(0);
        Ok(r.layer_outputs.swap_remove(layer - 1))
    }

    pub fn last_layer(&self, code: &str, nl: Option<&str>) -> Result<Tensor> {
        Ok(self.last_layer_batch(&[(code, nl)])?.remove(0))
    }

    pub fn last_layer_batch(&self, inputs: &[OracleInput<'_>]) -> Result<Vec<Tensor>> {
        Ok(self
            .run(inputs)?
            .into_iter()
            .map(|mut r| r.layer_outputs.pop().expect("encoder has at least one layer"))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::model::EncoderConfig;

    fn target() -> TargetEncoder {
        let cfg = EncoderConfig {
            vocab_size: 300,
            hidden_dim: 16,
            num_layers: 3,
            num_heads: 2,
            ffn_dim: 32,
            max_positions: 32,
            ..EncoderConfig::default()
        };
        TargetEncoder::new(Tokenizer::bytes_only(), EncoderModel::new(cfg, 9).unwrap()).unwrap()
    }

    #[test]
    fn white_sees_all_layers() {
        let h = target().into_handle(AccessLevel::White);
        let r = h.encode_full("abc", None).unwrap();
        assert_eq!(r.num_layers(), 3);
        assert_eq!(r.last().shape(), (5, 16));
    }

    #[test]
    fn gray_equals_white_last_layer() {
        let white = target().into_handle(AccessLevel::White);
        let gray = white.restrict(AccessLevel::Gray).unwrap();
        let full = white.encode_full("abc", Some("doc")).unwrap();
        let last = gray.last_layer("abc", Some("doc")).unwrap();
        assert_eq!(&last, full.layer(3).unwrap());
        assert_eq!(gray.encode_layer("abc", Some("doc"), 3).unwrap(), last);
    }

    #[test]
    fn inner_layers_are_denied_below_white() {
        let white = target().into_handle(AccessLevel::White);
        for level in [AccessLevel::Gray, AccessLevel::Black] {
            let h = white.restrict(level).unwrap();
            assert!(matches!(h.encode_layer("abc", None, 1), Err(Error::Access(_))));
            assert!(matches!(h.encode_full("abc", None), Err(Error::Access(_))));
        }
        let black = white.restrict(AccessLevel::Black).unwrap();
        assert!(matches!(black.restrict(AccessLevel::White), Err(Error::Access(_))));
    }

    #[test]
    fn save_and_load_directory() {
        let t = target();
        let dir = tempfile::tempdir().unwrap();
        t.save(dir.path()).unwrap();
        assert_eq!(TargetEncoder::load(dir.path()).unwrap(), t);
    }
}
