use std::path::Path;
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::nn::layers::{Block, Init, LayerNorm, Linear};
use crate::nn::params::init_normal;
use crate::nn::{ParamId, ParamSet, Segment, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub max_positions: usize,
    pub architecture_tag: String,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            vocab_size: 4096,
            hidden_dim: 64,
            num_layers: 4,
            num_heads: 4,
            ffn_dim: 256,
            max_positions: 128,
            architecture_tag: "post-ln-transformer-encoder".into(),
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("hidden_dim", self.hidden_dim),
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("ffn_dim", self.ffn_dim),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{k} must be positive")));
        }
        if self.hidden_dim % self.num_heads != 0 {
            return Err(Error::Config("hidden_dim must be divisible by num_heads".into()));
        }
        if self.max_positions < 3 {
            return Err(Error::Config("max_positions must leave room for special tokens".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    tok_emb: ParamId,
    pos_emb: ParamId,
    emb_ln: LayerNorm,
    blocks: Vec<Block>,
    mlm_dense: Linear,
    mlm_ln: LayerNorm,
    mlm_out: Linear,
}

/// Post-norm transformer encoder with a masked-language-model head.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderModel {
    pub config: EncoderConfig,
    pub params: ParamSet,
    layout: Layout,
}

/// Several token sequences packed row-wise into one matrix.
pub struct PackedBatch {
    pub ids: Vec<u32>,
    pub positions: Vec<u32>,
    pub segments: Rc<Vec<Segment>>,
}

impl PackedBatch {
    pub fn new(seqs: &[&[u32]]) -> Self {
        let total = seqs.iter().map(|s| s.len()).sum();
        let mut ids = Vec::with_capacity(total);
        let mut positions = Vec::with_capacity(total);
        let mut segments = Vec::with_capacity(seqs.len());
        for s in seqs {
            segments.push(Segment { start: ids.len(), len: s.len() });
            ids.extend_from_slice(s);
            positions.extend(0..s.len() as u32);
        }
        Self { ids, positions, segments: Rc::new(segments) }
    }
}

/// Per-layer token representations for one input.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodingResult {
    /// `layer_outputs[i]` is the `L × d` output of layer `i + 1`.
    pub layer_outputs: Vec<Tensor>,
    pub token_ids: Vec<u32>,
}

impl EncodingResult {
    pub fn num_layers(&self) -> usize {
        self.layer_outputs.len()
    }

    /// Output of layer `index` (1-based).
    pub fn layer(&self, index: usize) -> Option<&Tensor> {
        index.checked_sub(1).and_then(|i| self.layer_outputs.get(i))
    }

    pub fn last(&self) -> &Tensor {
        self.layer_outputs.last().expect("encoding has at least one layer")
    }
}

const INFERENCE_CHUNK: usize = 64;

impl EncoderModel {
    /// Freshly initialised weights; identical for identical `(config, seed)`.
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let d = config.hidden_dim;
        let tok_emb = ps.add("embeddings.token", init_normal(&mut rng, config.vocab_size, d, 0.02), true);
        let pos_emb = ps.add("embeddings.position", init_normal(&mut rng, config.max_positions, d, 0.02), true);
        let emb_ln = LayerNorm::new(&mut ps, "embeddings.ln", d);
        let blocks = (0..config.num_layers)
            .map(|i| {
                Block::new(
                    &mut ps,
                    &mut rng,
                    &format!("layer{}", i + 1),
                    d,
                    config.num_heads,
                    Some(config.ffn_dim),
                    Init::Normal002,
                )
            })
            .collect();
        let mlm_dense = Linear::new(&mut ps, &mut rng, "mlm.dense", d, d, Init::Normal002);
        let mlm_ln = LayerNorm::new(&mut ps, "mlm.ln", d);
        let mlm_out = Linear::new(&mut ps, &mut rng, "mlm.decoder", d, config.vocab_size, Init::Normal002);
        let layout = Layout { tok_emb, pos_emb, emb_ln, blocks, mlm_dense, mlm_ln, mlm_out };
        Ok(Self { config, params: ps, layout })
    }

    pub fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    pub fn num_layers(&self) -> usize {
        self.config.num_layers
    }

    /// Records a forward pass; returns one output per layer.
    pub fn forward(&self, tape: &mut Tape<'_>, batch: &PackedBatch) -> Vec<Var> {
        let tok = tape.embedding(self.layout.tok_emb, &batch.ids);
        let pos = tape.embedding(self.layout.pos_emb, &batch.positions);
        let x = tape.add(tok, pos);
        let mut x = self.layout.emb_ln.forward(tape, x);
        let mut outs = Vec::with_capacity(self.layout.blocks.len());
        for b in &self.layout.blocks {
            x = b.forward(tape, x, &batch.segments);
            outs.push(x);
        }
        outs
    }

    /// Vocabulary logits for the given rows of `hidden`.
    pub fn mlm_logits(&self, tape: &mut Tape<'_>, hidden: Var, rows: &[usize]) -> Var {
        let h = tape.gather_rows(hidden, rows);
        let h = self.layout.mlm_dense.forward(tape, h);
        let h = tape.gelu(h);
        let h = self.layout.mlm_ln.forward(tape, h);
        self.layout.mlm_out.forward(tape, h)
    }

    fn check_ids(&self, seq: &[u32]) -> Result<()> {
        if seq.is_empty() {
            return Err(Error::Input("empty token sequence".into()));
        }
        if seq.len() > self.config.max_positions {
            return Err(Error::Input(format!(
                "sequence of {} tokens exceeds max_positions {}",
                seq.len(),
                self.config.max_positions
            )));
        }
        if let Some(id) = seq.iter().find(|&&id| id as usize >= self.config.vocab_size) {
            return Err(Error::Input(format!("token id {id} outside the vocabulary")));
        }
        Ok(())
    }

    /// Inference-mode forward pass over many sequences.
    pub fn encode_batch(&self, seqs: &[Vec<u32>]) -> Result<Vec<EncodingResult>> {
        for s in seqs {
            self.check_ids(s)?;
        }
        let mut out = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(INFERENCE_CHUNK) {
            let refs: Vec<&[u32]> = chunk.iter().map(Vec::as_slice).collect();
            let batch = PackedBatch::new(&refs);
            let mut tape = Tape::new(&self.params);
            let layers = self.forward(&mut tape, &batch);
            let values: Vec<&Tensor> = layers.iter().map(|v| tape.value(*v)).collect();
            for (seg, seq) in batch.segments.iter().zip(chunk) {
                out.push(EncodingResult {
                    layer_outputs: values.iter().map(|t| t.slice_rows(seg.start, seg.len)).collect(),
                    token_ids: seq.clone(),
                });
            }
        }
        Ok(out)
    }

    pub fn encode(&self, seq: &[u32]) -> Result<EncodingResult> {
        Ok(self.encode_batch(&[seq.to_vec()])?.remove(0))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, "encoder", &self.config, &self.params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let archive = checkpoint::load(path, "encoder")?;
        let mut model = Self::new(archive.config()?, 0)?;
        archive.restore_into(&mut model.params)?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> EncoderConfig {
        EncoderConfig {
            vocab_size: 300,
            hidden_dim: 16,
            num_layers: 3,
            num_heads: 2,
            ffn_dim: 32,
            max_positions: 32,
            ..EncoderConfig::default()
        }
    }

    #[test]
    fn forward_yields_one_matrix_per_layer() {
        let m = EncoderModel::new(small(), 1).unwrap();
        let r = m.encode(&[1, 50, 60, 70, 3]).unwrap();
        assert_eq!(r.num_layers(), 3);
        for l in &r.layer_outputs {
            assert_eq!(l.shape(), (5, 16));
        }
        assert!(r.layer(0).is_none() && r.layer(4).is_none());
    }

    #[test]
    fn batching_does_not_change_outputs() {
        let m = EncoderModel::new(small(), 2).unwrap();
        let a = vec![1, 10, 20, 3];
        let b = vec![1, 30, 3];
        let together = m.encode_batch(&[a.clone(), b.clone()]).unwrap();
        let alone = m.encode(&b).unwrap();
        assert!(together[1].last().max_abs_diff(alone.last()) <= 1e-6);
        let again = m.encode_batch(&[a, b]).unwrap();
        assert_eq!(together, again);
    }

    #[test]
    fn rejects_out_of_range_input() {
        let m = EncoderModel::new(small(), 3).unwrap();
        assert!(m.encode(&[1, 400, 3]).is_err());
        assert!(m.encode(&vec![5; 33]).is_err());
        assert!(m.encode(&[]).is_err());
    }

    #[test]
    fn init_depends_only_on_seed() {
        assert_eq!(EncoderModel::new(small(), 4).unwrap(), EncoderModel::new(small(), 4).unwrap());
        assert_ne!(EncoderModel::new(small(), 4).unwrap(), EncoderModel::new(small(), 5).unwrap());
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = EncoderModel::new(small(), 6).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("enc.bin");
        m.save(&p).unwrap();
        assert_eq!(EncoderModel::load(&p).unwrap(), m);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let c = EncoderConfig { num_heads: 3, ..small() };
        assert!(matches!(EncoderModel::new(c, 0), Err(Error::Config(_))));
    }
}
