//! Masked-language-model training shared by the target encoder and the
//! black-box calibration encoders.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{EncoderConfig, EncoderModel, PackedBatch};
use super::tokenizer::{encode_input, Tokenizer, CLS, EOS, MASK, NUM_SPECIAL, PAD, SEP};
use crate::corpus::{CodeSnippet, MembershipLabel};
use crate::error::{Error, Result};
use crate::nn::{AdamW, AdamWConfig, Tape};
use crate::seeds::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub warmup_steps: usize,
    pub weight_decay: f32,
    pub mask_prob: f64,
    /// Share of examples fed in the `[CLS] nl [SEP] code [EOS]` layout when a
    /// description exists (mixed policy only).
    pub bimodal_fraction: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 1500,
            batch_size: 32,
            lr: 3e-4,
            warmup_steps: 100,
            weight_decay: 0.01,
            mask_prob: 0.15,
            bimodal_fraction: 0.5,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LayoutPolicy {
    /// Bimodal layout with probability `bimodal_fraction` when a description exists.
    Mixed,
    UnimodalOnly,
    /// Only snippets with a description are used.
    BimodalOnly,
}

#[derive(Clone, Debug)]
pub struct TrainedEncoder {
    pub model: EncoderModel,
    pub loss_trace: Vec<f32>,
}

struct Example {
    unimodal: Vec<u32>,
    bimodal: Option<Vec<u32>>,
}

/// Chooses `max(1, round(p·n))` maskable positions; of those 80% become
/// `[MASK]`, 10% a random learned token and 10% stay unchanged.
/// Returns (corrupted ids, masked positions, original ids at those positions).
pub fn mask_tokens<R: Rng>(ids: &[u32], vocab_len: usize, prob: f64, rng: &mut R) -> (Vec<u32>, Vec<usize>, Vec<u32>) {
    let mut cand: Vec<usize> = (0..ids.len()).filter(|&i| !matches!(ids[i], PAD | CLS | SEP | EOS | MASK)).collect();
    let mut input = ids.to_vec();
    if cand.is_empty() {
        return (input, Vec::new(), Vec::new());
    }
    let n = ((prob * cand.len() as f64).round() as usize).clamp(1, cand.len());
    cand.shuffle(rng);
    let mut chosen = cand[..n].to_vec();
    chosen.sort_unstable();
    let targets = chosen.iter().map(|&p| ids[p]).collect();
    for &p in &chosen {
        let r: f64 = rng.gen();
        if r < 0.8 {
            input[p] = MASK;
        } else if r < 0.9 {
            input[p] = rng.gen_range(NUM_SPECIAL..vocab_len as u32);
        }
    }
    (input, chosen, targets)
}

fn linear_warmup(step: usize, warmup: usize, lr: f32) -> f32 {
    if warmup == 0 || step >= warmup {
        lr
    } else {
        lr * (step + 1) as f32 / warmup as f32
    }
}

/// Trains `model` in place with the MLM objective; returns the per-step loss.
pub fn train_mlm(
    model: &mut EncoderModel,
    tok: &Tokenizer,
    snippets: &[&CodeSnippet],
    policy: LayoutPolicy,
    cfg: &PretrainConfig,
) -> Result<Vec<f32>> {
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let max_pos = model.config.max_positions;
    let examples: Vec<Example> = snippets
        .iter()
        .filter(|s| policy != LayoutPolicy::BimodalOnly || s.nl.is_some())
        .map(|s| Example {
            unimodal: encode_input(tok, &s.code, None, max_pos),
            bimodal: s.nl.as_deref().map(|nl| encode_input(tok, &s.code, Some(nl), max_pos)),
        })
        .collect();
    if examples.is_empty() {
        return Err(Error::Input("no usable training snippets".into()));
    }
    let vocab = model.config.vocab_size;
    let mut order_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "batching"));
    let mut mask_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "masking"));
    let mut opt =
        AdamW::new(AdamWConfig { lr: cfg.lr, weight_decay: cfg.weight_decay, ..AdamWConfig::default() }, &model.params);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut inputs = Vec::with_capacity(cfg.batch_size);
        let mut rows = Vec::new();
        let mut targets = Vec::new();
        let mut offset = 0;
        for _ in 0..cfg.batch_size {
            if cursor == order.len() {
                order = (0..examples.len()).collect();
                order.shuffle(&mut order_rng);
                cursor = 0;
            }
            let ex = &examples[order[cursor]];
            cursor += 1;
            let ids = match (policy, &ex.bimodal) {
                (LayoutPolicy::UnimodalOnly, _) | (LayoutPolicy::Mixed, None) => &ex.unimodal,
                (LayoutPolicy::BimodalOnly, b) => b.as_ref().expect("filtered to described snippets"),
                (LayoutPolicy::Mixed, Some(b)) => {
                    if mask_rng.gen_bool(cfg.bimodal_fraction) {
                        b
                    } else {
                        &ex.unimodal
                    }
                }
            };
            let (input, pos, tgt) = mask_tokens(ids, vocab, cfg.mask_prob, &mut mask_rng);
            rows.extend(pos.iter().map(|p| p + offset));
            targets.extend(tgt);
            offset += input.len();
            inputs.push(input);
        }
        let refs: Vec<&[u32]> = inputs.iter().map(Vec::as_slice).collect();
        let batch = PackedBatch::new(&refs);
        let (loss, grads) = {
            let mut tape = Tape::new(&model.params);
            let layers = model.forward(&mut tape, &batch);
            let logits = model.mlm_logits(&mut tape, *layers.last().expect("at least one layer"), &rows);
            let loss = tape.cross_entropy(logits, &targets);
            (tape.scalar(loss), tape.backward(loss))
        };
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        opt.set_lr(linear_warmup(step, cfg.warmup_steps, cfg.lr));
        opt.step(&mut model.params, &grads);
        trace.push(loss);
    }
    Ok(trace)
}

/// Pretrains a fresh encoder on member snippets only.
pub fn pretrain_encoder(
    corpus: &[CodeSnippet],
    tok: &Tokenizer,
    config: EncoderConfig,
    cfg: &PretrainConfig,
) -> Result<TrainedEncoder> {
    if corpus.is_empty() {
        return Err(Error::Input("pretraining corpus is empty".into()));
    }
    if let Some(s) = corpus.iter().find(|s| s.role != MembershipLabel::Member) {
        return Err(Error::Contamination(format!(
            "snippet {} is not member data; the target may only be pretrained on its member corpus",
            s.id
        )));
    }
    let config = EncoderConfig { vocab_size: tok.vocab_len(), ..config };
    let mut model = EncoderModel::new(config, derive_seed(cfg.seed, "init"))?;
    let refs: Vec<&CodeSnippet> = corpus.iter().collect();
    let loss_trace = train_mlm(&mut model, tok, &refs, LayoutPolicy::Mixed, cfg)?;
    Ok(TrainedEncoder { model, loss_trace })
}

/// Mean masked-token loss over `snippets` in the code-only layout, with
/// masking fixed by `seed` so models can be compared on identical corruption.
pub fn mlm_loss(model: &EncoderModel, tok: &Tokenizer, snippets: &[&CodeSnippet], mask_prob: f64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = model.config.vocab_size;
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in snippets.chunks(32) {
        let mut inputs = Vec::new();
        let mut rows = Vec::new();
        let mut targets = Vec::new();
        let mut offset = 0;
        for s in chunk {
            let ids = encode_input(tok, &s.code, None, model.config.max_positions);
            let (input, pos, tgt) = mask_tokens(&ids, vocab, mask_prob, &mut rng);
            rows.extend(pos.iter().map(|p| p + offset));
            targets.extend(tgt);
            offset += input.len();
            inputs.push(input);
        }
        let refs: Vec<&[u32]> = inputs.iter().map(Vec::as_slice).collect();
        let batch = PackedBatch::new(&refs);
        let mut tape = Tape::new(&model.params);
        let layers = model.forward(&mut tape, &batch);
        let logits = model.mlm_logits(&mut tape, *layers.last().expect("at least one layer"), &rows);
        let loss = tape.cross_entropy(logits, &targets);
        total += tape.scalar(loss) as f64 * targets.len() as f64;
        count += targets.len();
    }
    total / count.max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synth::{generate_corpus, SynthProfile};

    fn tiny_config() -> EncoderConfig {
        EncoderConfig {
            hidden_dim: 16,
            num_layers: 2,
            num_heads: 2,
            ffn_dim: 32,
            max_positions: 64,
            ..EncoderConfig::default()
        }
    }

    #[test]
    fn masking_respects_specials_and_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ids: Vec<u32> = std::iter::once(CLS).chain(100..120).chain(std::iter::once(EOS)).collect();
        let (input, pos, tgt) = mask_tokens(&ids, 300, 0.15, &mut rng);
        assert_eq!(pos.len(), 3); // round(0.15 * 20)
        assert!(pos.iter().all(|&p| p != 0 && p != ids.len() - 1));
        assert_eq!(tgt, pos.iter().map(|&p| ids[p]).collect::<Vec<_>>());
        assert_eq!(input[0], CLS);
    }

    #[test]
    fn zero_steps_returns_initialisation() {
        let corpus = generate_corpus(&SynthProfile::new("m"), 10, 1, "m", MembershipLabel::Member);
        let tok = Tokenizer::train(&corpus, 400).unwrap();
        let cfg = PretrainConfig { steps: 0, seed: 5, ..PretrainConfig::default() };
        let t = pretrain_encoder(&corpus, &tok, tiny_config(), &cfg).unwrap();
        let fresh =
            EncoderModel::new(EncoderConfig { vocab_size: tok.vocab_len(), ..tiny_config() }, derive_seed(5, "init"))
                .unwrap();
        assert_eq!(t.model, fresh);
        assert!(t.loss_trace.is_empty());
    }

    #[test]
    fn nonmember_corpus_is_contamination() {
        let corpus = generate_corpus(&SynthProfile::new("n"), 5, 1, "n", MembershipLabel::Nonmember);
        let tok = Tokenizer::train(&corpus, 300).unwrap();
        let r = pretrain_encoder(&corpus, &tok, tiny_config(), &PretrainConfig::default());
        assert!(matches!(r, Err(Error::Contamination(_))));
    }

    #[test]
    fn loss_decreases_and_run_is_deterministic() {
        let corpus = generate_corpus(&SynthProfile::new("m"), 60, 2, "m", MembershipLabel::Member);
        let tok = Tokenizer::train(&corpus, 400).unwrap();
        let cfg = PretrainConfig {
            steps: 60,
            batch_size: 8,
            lr: 2e-3,
            warmup_steps: 5,
            seed: 3,
            ..PretrainConfig::default()
        };
        let a = pretrain_encoder(&corpus, &tok, tiny_config(), &cfg).unwrap();
        let head: f32 = a.loss_trace[..10].iter().sum::<f32>() / 10.0;
        let tail: f32 = a.loss_trace[50..].iter().sum::<f32>() / 10.0;
        assert!(tail < head, "loss did not drop: {head} -> {tail}");
        let b = pretrain_encoder(&corpus, &tok, tiny_config(), &cfg).unwrap();
        assert_eq!(a.loss_trace, b.loss_trace);
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn divergence_reports_the_step() {
        let corpus = generate_corpus(&SynthProfile::new("m"), 10, 2, "m", MembershipLabel::Member);
        let tok = Tokenizer::train(&corpus, 300).unwrap();
        let cfg = PretrainConfig { steps: 3, lr: f32::NAN, warmup_steps: 0, ..PretrainConfig::default() };
        match pretrain_encoder(&corpus, &tok, tiny_config(), &cfg) {
            Err(Error::Diverged { step, .. }) => assert_eq!(step, 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
