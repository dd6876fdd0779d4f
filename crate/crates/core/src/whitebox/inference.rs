//! Self-attention classifier mapping a token-representation matrix to a
//! membership confidence.

use std::path::Path;
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::corpus::MembershipLabel;
use crate::error::{Error, Result};
use crate::nn::layers::{Block, Init, Linear};
use crate::nn::{AdamW, AdamWConfig, ParamSet, Segment, Tape, Tensor, Var};
use crate::seeds::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Mean,
    Cls,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceConfig {
    pub attention_layers: usize,
    pub heads: usize,
    pub pooling: Pooling,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub weight_decay: f32,
    pub seed: u64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            attention_layers: 2,
            heads: 4,
            pooling: Pooling::Mean,
            epochs: 20,
            batch_size: 128,
            lr: 0.01,
            weight_decay: 0.01,
            seed: 0,
        }
    }
}

/// One training example: an `L × input_dim` matrix and its label.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExample {
    pub id: String,
    pub features: Tensor,
    pub label: MembershipLabel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    config: InferenceConfig,
    input_dim: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferenceModel {
    pub config: InferenceConfig,
    pub input_dim: usize,
    pub params: ParamSet,
    blocks: Vec<Block>,
    head: Linear,
}

impl InferenceModel {
    pub fn new(input_dim: usize, config: InferenceConfig) -> Result<Self> {
        if input_dim == 0 || config.heads == 0 || input_dim % config.heads != 0 {
            return Err(Error::Config(format!(
                "input width {input_dim} must be a positive multiple of {} heads",
                config.heads
            )));
        }
        if config.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "inference/init"));
        let mut ps = ParamSet::new();
        let blocks = (0..config.attention_layers)
            .map(|i| {
                Block::new(&mut ps, &mut rng, &format!("attn{}", i + 1), input_dim, config.heads, None, Init::Xavier)
            })
            .collect();
        let head = Linear::new(&mut ps, &mut rng, "head", input_dim, 1, Init::Xavier);
        Ok(Self { config, input_dim, params: ps, blocks, head })
    }

    fn logits(&self, tape: &mut Tape<'_>, batch: &[&Tensor]) -> Var {
        let mut segs = Vec::with_capacity(batch.len());
        let mut start = 0;
        for t in batch {
            segs.push(Segment { start, len: t.rows });
            start += t.rows;
        }
        let segs = Rc::new(segs);
        let mut x = tape.input(Tensor::concat_rows(batch));
        for b in &self.blocks {
            x = b.forward(tape, x, &segs);
        }
        let pooled = match self.config.pooling {
            Pooling::Mean => tape.mean_pool(x, segs),
            Pooling::Cls => {
                let starts: Vec<usize> = segs.iter().map(|s| s.start).collect();
                tape.gather_rows(x, &starts)
            }
        };
        self.head.forward(tape, pooled)
    }

    fn check_width(&self, t: &Tensor) -> Result<()> {
        if t.cols != self.input_dim || t.rows == 0 {
            return Err(Error::Config(format!(
                "inference model expects L × {} inputs, got {} × {}",
                self.input_dim, t.rows, t.cols
            )));
        }
        Ok(())
    }

    /// Trains on `examples` with binary cross-entropy; returns the per-step
    /// loss. Batch composition depends on example ids and the seed only, so
    /// reordering the input does not change the result.
    pub fn fit(&mut self, examples: &[FeatureExample]) -> Result<Vec<f32>> {
        if examples.is_empty() {
            return Err(Error::Config("training set is empty".into()));
        }
        for e in examples {
            self.check_width(&e.features)?;
        }
        let cfg = self.config.clone();
        let mut opt = AdamW::new(
            AdamWConfig { lr: cfg.lr, weight_decay: cfg.weight_decay, ..AdamWConfig::default() },
            &self.params,
        );
        let mut trace = Vec::new();
        let mut step = 0;
        for epoch in 0..cfg.epochs {
            let mut order: Vec<(u64, &str, usize)> = examples
                .iter()
                .enumerate()
                .map(|(i, e)| (derive_seed(cfg.seed, &format!("inference/epoch{epoch}/{}", e.id)), e.id.as_str(), i))
                .collect();
            order.sort_unstable();
            for chunk in order.chunks(cfg.batch_size) {
                let feats: Vec<&Tensor> = chunk.iter().map(|&(_, _, i)| &examples[i].features).collect();
                let labels: Vec<f32> = chunk.iter().map(|&(_, _, i)| examples[i].label.as_u8() as f32).collect();
                let (loss, grads) = {
                    let mut tape = Tape::new(&self.params);
                    let z = self.logits(&mut tape, &feats);
                    let loss = tape.bce_with_logits(z, &labels);
                    (tape.scalar(loss), tape.backward(loss))
                };
                if !loss.is_finite() {
                    return Err(Error::Diverged { step, loss });
                }
                opt.step(&mut self.params, &grads);
                trace.push(loss);
                step += 1;
            }
        }
        Ok(trace)
    }

    /// Raw logits, one per input.
    pub fn logit_batch(&self, inputs: &[&Tensor]) -> Result<Vec<f32>> {
        for t in inputs {
            self.check_width(t)?;
        }
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(self.config.batch_size.max(1)) {
            let mut tape = Tape::new(&self.params);
            let z = self.logits(&mut tape, chunk);
            out.extend_from_slice(&tape.value(z).data);
        }
        Ok(out)
    }

    /// Membership confidences in the open interval (0, 1).
    pub fn score_batch(&self, inputs: &[&Tensor]) -> Result<Vec<f64>> {
        Ok(self.logit_batch(inputs)?.into_iter().map(confidence).collect())
    }

    pub fn score(&self, input: &Tensor) -> Result<f64> {
        Ok(self.score_batch(&[input])?[0])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = Header { config: self.config.clone(), input_dim: self.input_dim };
        checkpoint::save(path, "inference", &header, &self.params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let archive = checkpoint::load(path, "inference")?;
        let header: Header = archive.config()?;
        let mut model = Self::new(header.input_dim, header.config)?;
        archive.restore_into(&mut model.params)?;
        Ok(model)
    }
}

/// Sigmoid kept strictly inside (0, 1).
pub fn confidence(logit: f32) -> f64 {
    let z = logit as f64;
    let s = if z >= 0.0 { 1.0 / (1.0 + (-z).exp()) } else { z.exp() / (1.0 + z.exp()) };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Members sit at +e1, nonmembers at -e1, plus small noise.
    fn separable(n: usize, seed: u64) -> Vec<FeatureExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let member = i % 2 == 0;
                let l = rng.gen_range(3..7);
                let mut t = Tensor::zeros(l, 8);
                for r in 0..l {
                    for c in 0..8 {
                        t.row_mut(r)[c] = rng.gen_range(-0.1..0.1);
                    }
                    t.row_mut(r)[0] += if member { 1.0 } else { -1.0 };
                }
                FeatureExample { id: format!("x{i:04}"), features: t, label: MembershipLabel::from_bool(member) }
            })
            .collect()
    }

    fn cfg() -> InferenceConfig {
        InferenceConfig { heads: 2, epochs: 15, batch_size: 16, ..InferenceConfig::default() }
    }

    fn train_auc(model: &InferenceModel, data: &[FeatureExample]) -> f64 {
        let feats: Vec<&Tensor> = data.iter().map(|e| &e.features).collect();
        let s = model.score_batch(&feats).unwrap();
        let (mut hits, mut pairs) = (0.0, 0.0);
        for (a, ea) in s.iter().zip(data) {
            for (b, eb) in s.iter().zip(data) {
                if ea.label.is_member() && !eb.label.is_member() {
                    pairs += 1.0;
                    hits += if a > b {
                        1.0
                    } else if a == b {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        hits / pairs
    }

    #[test]
    fn learns_separable_fixture() {
        let data = separable(64, 1);
        let mut m = InferenceModel::new(8, cfg()).unwrap();
        let trace = m.fit(&data).unwrap();
        assert!(trace.last().unwrap() < &trace[0]);
        assert_eq!(train_auc(&m, &data), 1.0);
        let member = data.iter().find(|e| e.label.is_member()).unwrap();
        assert!(m.score(&member.features).unwrap() > 0.5);
    }

    #[test]
    fn input_order_does_not_matter() {
        let data = separable(40, 2);
        let mut rev = data.clone();
        rev.reverse();
        let mut a = InferenceModel::new(8, cfg()).unwrap();
        let mut b = InferenceModel::new(8, cfg()).unwrap();
        assert_eq!(a.fit(&data).unwrap(), b.fit(&rev).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn untrained_and_invalid_inputs() {
        let data = separable(10, 3);
        let mut m = InferenceModel::new(8, InferenceConfig { epochs: 0, ..cfg() }).unwrap();
        assert!(m.fit(&data).unwrap().is_empty());
        assert!(matches!(m.score(&Tensor::zeros(3, 4)), Err(Error::Config(_))));
        assert!(matches!(m.fit(&[]), Err(Error::Config(_))));
        assert!(InferenceModel::new(6, InferenceConfig { heads: 4, ..cfg() }).is_err());
    }

    #[test]
    fn cls_pooling_and_checkpoint() {
        let data = separable(20, 4);
        let mut m = InferenceModel::new(8, InferenceConfig { pooling: Pooling::Cls, epochs: 2, ..cfg() }).unwrap();
        m.fit(&data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("inf.bin");
        m.save(&p).unwrap();
        let back = InferenceModel::load(&p).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.score(&data[0].features).unwrap(), m.score(&data[0].features).unwrap());
    }

    #[test]
    fn confidence_stays_open() {
        for z in [-1e4f32, -50.0, -1.0, 0.0, 1.0, 50.0, 1e4] {
            let s = confidence(z);
            assert!(s > 0.0 && s < 1.0, "{z} -> {s}");
        }
        assert_eq!(confidence(0.0), 0.5);
    }
}
