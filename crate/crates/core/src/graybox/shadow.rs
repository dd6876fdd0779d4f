//! Shadow encoders distilled from the target's final-layer outputs.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::corpus::CodeSnippet;
use crate::encoder::{AccessLevel, EncoderConfig, EncoderModel, OracleHandle, PackedBatch, TargetEncoder, Tokenizer};
use crate::error::{Error, Result};
use crate::nn::{AdamW, AdamWConfig, Tape, Tensor};
use crate::seeds::derive_seed;

/// Response-based distillation objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KdLoss {
    /// Mean over tokens of the squared L2 difference.
    Mse,
    /// Mean over tokens of `1 - cos`.
    Cos,
}

impl KdLoss {
    pub fn as_str(self) -> &'static str {
        match self {
            KdLoss::Mse => "mse",
            KdLoss::Cos => "cos",
        }
    }
}

impl fmt::Display for KdLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KdLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(KdLoss::Mse),
            "cos" => Ok(KdLoss::Cos),
            other => Err(Error::Config(format!("unknown distillation loss {other:?} (expected mse or cos)"))),
        }
    }
}

/// Distillation loss between two `L × d` matrices.
pub fn kd_loss(teacher: &Tensor, student: &Tensor, kind: KdLoss) -> Result<f64> {
    if teacher.shape() != student.shape() {
        return Err(Error::Config(format!(
            "teacher output {:?} and student output {:?} differ in shape",
            teacher.shape(),
            student.shape()
        )));
    }
    if teacher.rows == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0f64;
    for r in 0..teacher.rows {
        let (t, s) = (teacher.row(r), student.row(r));
        total += match kind {
            KdLoss::Mse => t.iter().zip(s).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>(),
            KdLoss::Cos => {
                let dot: f64 = t.iter().zip(s).map(|(a, b)| *a as f64 * *b as f64).sum();
                let nt: f64 = t.iter().map(|a| (*a as f64).powi(2)).sum::<f64>().sqrt();
                let ns: f64 = s.iter().map(|a| (*a as f64).powi(2)).sum::<f64>().sqrt();
                (1.0 - dot / (nt.max(1e-8) * ns.max(1e-8))).max(0.0)
            }
        };
    }
    Ok(total / teacher.rows as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub warmup_steps: usize,
    /// Zero keeps a student that already matches its teacher exactly fixed.
    pub weight_decay: f32,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self { steps: 400, batch_size: 32, lr: 1e-3, warmup_steps: 20, weight_decay: 0.0, seed: 0 }
    }
}

/// An adversary-owned encoder trained to mimic the target's final layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ShadowModel {
    pub encoder: EncoderModel,
    pub tokenizer: Tokenizer,
    pub teacher_tag: String,
    pub kd_loss: KdLoss,
    pub distill_trace: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct ShadowHeader {
    config: EncoderConfig,
    teacher_tag: String,
    kd_loss: KdLoss,
    distill_trace: Vec<f32>,
}

const SHADOW_FILE: &str = "shadow.bin";

impl ShadowModel {
    /// Full white access to the shadow; the adversary owns it.
    pub fn handle(&self) -> OracleHandle {
        let target = TargetEncoder { tokenizer: self.tokenizer.clone(), model: self.encoder.clone() };
        OracleHandle::new(Arc::new(target), AccessLevel::White)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.tokenizer.save(dir)?;
        let header = ShadowHeader {
            config: self.encoder.config.clone(),
            teacher_tag: self.teacher_tag.clone(),
            kd_loss: self.kd_loss,
            distill_trace: self.distill_trace.clone(),
        };
        checkpoint::save(&dir.join(SHADOW_FILE), "shadow", &header, &self.encoder.params)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let archive = checkpoint::load(&dir.join(SHADOW_FILE), "shadow")?;
        let header: ShadowHeader = archive.config()?;
        let mut encoder = EncoderModel::new(header.config, 0)?;
        archive.restore_into(&mut encoder.params)?;
        Ok(Self {
            encoder,
            tokenizer: Tokenizer::load(dir)?,
            teacher_tag: header.teacher_tag,
            kd_loss: header.kd_loss,
            distill_trace: header.distill_trace,
        })
    }
}

fn require_gray(oracle: &OracleHandle) -> Result<()> {
    if oracle.level() != AccessLevel::Gray {
        return Err(Error::Access(format!(
            "gray-box attacks consume only final-layer outputs and take a gray handle, got {}",
            oracle.level()
        )));
    }
    Ok(())
}

/// Teacher supervision: final-layer outputs for each member, code-only layout.
fn teacher_targets(oracle: &OracleHandle, members: &[&CodeSnippet]) -> Result<Vec<(Vec<u32>, Tensor)>> {
    let inputs: Vec<(&str, Option<&str>)> = members.iter().map(|s| (s.code.as_str(), None)).collect();
    let outs = oracle.last_layer_batch(&inputs)?;
    Ok(members.iter().zip(outs).map(|(s, t)| (oracle.input_ids(&s.code, None), t)).collect())
}

/// Distils `student` towards the gray oracle's last layer on `members`.
pub fn distill_student(
    oracle: &OracleHandle,
    mut student: EncoderModel,
    members: &[&CodeSnippet],
    kind: KdLoss,
    config: &DistillConfig,
) -> Result<ShadowModel> {
    require_gray(oracle)?;
    if members.is_empty() {
        return Err(Error::Config("no known members to distil on".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    if student.hidden_dim() != oracle.hidden_dim() {
        return Err(Error::Config(format!(
            "student width {} differs from teacher output width {}",
            student.hidden_dim(),
            oracle.hidden_dim()
        )));
    }
    if student.config.max_positions < oracle.max_positions()
        || student.config.vocab_size < oracle.tokenizer().vocab_len()
    {
        return Err(Error::Config("student cannot embed every teacher input".into()));
    }
    let data = teacher_targets(oracle, members)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "distill/order"));
    let mut opt = AdamW::new(
        AdamWConfig { lr: config.lr, weight_decay: config.weight_decay, ..AdamWConfig::default() },
        &student.params,
    );
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut trace = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let mut picked = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size.min(data.len()) {
            if cursor == order.len() {
                order = (0..data.len()).collect();
                order.shuffle(&mut rng);
                cursor = 0;
            }
            picked.push(order[cursor]);
            cursor += 1;
        }
        let seqs: Vec<&[u32]> = picked.iter().map(|&i| data[i].0.as_slice()).collect();
        let targets: Vec<&Tensor> = picked.iter().map(|&i| &data[i].1).collect();
        let target = Tensor::concat_rows(&targets);
        let batch = PackedBatch::new(&seqs);
        let (loss, grads) = {
            let mut tape = Tape::new(&student.params);
            let layers = student.forward(&mut tape, &batch);
            let last = *layers.last().expect("at least one layer");
            let loss = match kind {
                KdLoss::Mse => tape.squared_error(last, target),
                KdLoss::Cos => tape.cosine_error(last, target),
            };
            (tape.scalar(loss), tape.backward(loss))
        };
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        let lr = if step < config.warmup_steps {
            config.lr * (step + 1) as f32 / config.warmup_steps as f32
        } else {
            config.lr
        };
        opt.set_lr(lr);
        opt.step(&mut student.params, &grads);
        trace.push(loss);
    }
    Ok(ShadowModel {
        encoder: student,
        tokenizer: oracle.tokenizer().clone(),
        teacher_tag: oracle_tag(oracle),
        kd_loss: kind,
        distill_trace: trace,
    })
}

fn oracle_tag(oracle: &OracleHandle) -> String {
    format!("{}-layer d={} encoder ({} access)", oracle.num_layers(), oracle.hidden_dim(), oracle.level())
}

/// Distils a freshly initialised student of `student_config` (its vocabulary
/// size follows the public tokenizer).
pub fn distill_shadow(
    oracle: &OracleHandle,
    known_members: &[&CodeSnippet],
    student_config: EncoderConfig,
    kind: KdLoss,
    config: &DistillConfig,
) -> Result<ShadowModel> {
    require_gray(oracle)?;
    let student_config = EncoderConfig { vocab_size: oracle.tokenizer().vocab_len(), ..student_config };
    let student = EncoderModel::new(student_config, derive_seed(config.seed, "distill/init"))?;
    distill_student(oracle, student, known_members, kind, config)
}

/// Mean per-snippet distillation loss of `student` against the gray oracle.
pub fn evaluate_kd(
    oracle: &OracleHandle,
    student: &EncoderModel,
    snippets: &[&CodeSnippet],
    kind: KdLoss,
) -> Result<f64> {
    require_gray(oracle)?;
    if snippets.is_empty() {
        return Ok(0.0);
    }
    let data = teacher_targets(oracle, snippets)?;
    let seqs: Vec<Vec<u32>> = data.iter().map(|(ids, _)| ids.clone()).collect();
    let outs = student.encode_batch(&seqs)?;
    let mut total = 0.0;
    for ((_, t), r) in data.iter().zip(&outs) {
        total += kd_loss(t, r.last(), kind)?;
    }
    Ok(total / data.len() as f64)
}
