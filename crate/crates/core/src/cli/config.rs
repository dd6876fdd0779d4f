//! Flat experiment configuration.
//!
//! Precedence, lowest first: built-in defaults, the TOML file, then each
//! `--set key=value` override in command-line order.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::blackbox::CalibrationMode;
use crate::corpus::splits::known_pool_size;
use crate::corpus::{Setting, SplitSizes};
use crate::encoder::{EncoderConfig, PretrainConfig};
use crate::error::{Error, Result};
use crate::eval::ThresholdParams;
use crate::graybox::{BaseAttack, DistillConfig, KdLoss, MetaConfig, MetaKind, StackingConfig};
use crate::seeds::derive_seed;
use crate::whitebox::{InferenceConfig, LayerSelection, Pooling};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Wb,
    GbDirect,
    GbShadow,
    GbEnsemble,
    BbUni,
    BbBi,
}

impl AttackKind {
    pub const ALL: [AttackKind; 6] = [
        AttackKind::Wb,
        AttackKind::GbDirect,
        AttackKind::GbShadow,
        AttackKind::GbEnsemble,
        AttackKind::BbUni,
        AttackKind::BbBi,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::Wb => "wb",
            AttackKind::GbDirect => "gb_direct",
            AttackKind::GbShadow => "gb_shadow",
            AttackKind::GbEnsemble => "gb_ensemble",
            AttackKind::BbUni => "bb_uni",
            AttackKind::BbBi => "bb_bi",
        }
    }

    pub fn setting(self) -> Setting {
        match self {
            AttackKind::Wb => Setting::Whitebox,
            AttackKind::GbDirect | AttackKind::GbShadow | AttackKind::GbEnsemble => Setting::Graybox,
            AttackKind::BbUni | AttackKind::BbBi => Setting::Blackbox,
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttackKind::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown attack {s:?}")))
    }
}

/// Every knob of one experiment. All keys are optional in the file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// JSONL member corpus (the target's pretraining data).
    pub member_corpus: PathBuf,
    /// JSONL nonmember corpus.
    pub nonmember_corpus: PathBuf,
    /// Nonmember corpus for calibration models; defaults to the nonmember
    /// corpus minus the snippets used in validation and test.
    pub calibration_corpus: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Target checkpoint directory; defaults to `<output_dir>/target`. A
    /// matching checkpoint found there is reused instead of retrained.
    pub target_dir: Option<PathBuf>,
    pub seed: u64,
    pub attack: AttackKind,
    /// Must agree with the attack when given.
    pub setting: Option<Setting>,
    /// Defaults to 0.70 (white), 0.05 (gray), 0 (black).
    pub known_fraction: Option<f64>,
    /// Divides the full-size 30000/10000/500 protocol; overrides the explicit sizes.
    pub scale: Option<usize>,
    /// Unset: 600 (white, black) or the known pool less its validation
    /// share (gray), so the gray-box default always fits the pool.
    pub train_size: Option<usize>,
    pub test_size: usize,
    /// Unset: 100 (white, black) or a fifth of the known pool (gray).
    pub validation_size: Option<usize>,

    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub max_positions: usize,
    pub pretrain_steps: usize,
    pub pretrain_batch_size: usize,
    pub pretrain_lr: f32,
    pub pretrain_warmup: usize,
    pub mask_prob: f64,
    pub bimodal_fraction: f64,

    /// Layers fed to the white-box model and the shadow attack, e.g. "2+4";
    /// defaults to the middle and last layer.
    pub layers: Option<LayerSelection>,
    pub inference_layers: usize,
    pub inference_heads: usize,
    pub pooling: Pooling,
    pub inference_epochs: usize,
    pub inference_batch_size: usize,
    pub inference_lr: f32,
    pub inference_weight_decay: f32,

    pub kd_loss: KdLoss,
    /// Shadow depth; defaults to the target's.
    pub shadow_layers: Option<usize>,
    pub distill_steps: usize,
    pub distill_batch_size: usize,
    pub distill_lr: f32,
    /// Base attacks of the ensemble, e.g. ["direct", "shadow(4)", "shadow(2+4)"];
    /// defaults to direct plus the shadow's last and middle+last layers.
    pub ensemble_bases: Option<Vec<BaseAttack>>,
    pub meta: MetaKind,
    pub folds: usize,
    pub gbr_trees: usize,
    pub gbr_depth: usize,
    pub gbr_learning_rate: f64,
    pub logistic_l2: f64,

    pub calibration_steps: usize,
    pub calibration_lr: f32,

    pub k: f64,
    pub g: f64,
    pub n_intervals: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let enc = EncoderConfig::default();
        let inf = InferenceConfig::default();
        let meta = MetaConfig::default();
        let thr = ThresholdParams::default();
        Self {
            member_corpus: PathBuf::from("members.jsonl"),
            nonmember_corpus: PathBuf::from("nonmembers.jsonl"),
            calibration_corpus: None,
            output_dir: PathBuf::from("out"),
            target_dir: None,
            seed: 0,
            attack: AttackKind::Wb,
            setting: None,
            known_fraction: None,
            scale: None,
            train_size: None,
            test_size: 300,
            validation_size: None,
            vocab_size: enc.vocab_size,
            hidden_dim: enc.hidden_dim,
            num_layers: enc.num_layers,
            num_heads: enc.num_heads,
            ffn_dim: enc.ffn_dim,
            max_positions: enc.max_positions,
            pretrain_steps: 1200,
            pretrain_batch_size: 32,
            pretrain_lr: 1e-3,
            pretrain_warmup: 100,
            mask_prob: 0.15,
            bimodal_fraction: 0.5,
            layers: None,
            inference_layers: inf.attention_layers,
            inference_heads: inf.heads,
            pooling: inf.pooling,
            inference_epochs: inf.epochs,
            inference_batch_size: inf.batch_size,
            inference_lr: inf.lr,
            inference_weight_decay: inf.weight_decay,
            kd_loss: KdLoss::Mse,
            shadow_layers: None,
            distill_steps: DistillConfig::default().steps,
            distill_batch_size: 32,
            distill_lr: DistillConfig::default().lr,
            ensemble_bases: None,
            meta: meta.kind,
            folds: 2,
            gbr_trees: meta.gbr_trees,
            gbr_depth: meta.gbr_depth,
            gbr_learning_rate: meta.gbr_learning_rate,
            logistic_l2: meta.logistic_l2,
            calibration_steps: 600,
            calibration_lr: 1e-3,
            k: thr.k,
            g: thr.g,
            n_intervals: 5,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a TOML file; relative corpus and output paths resolve against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text)?;
        let dir = std::path::absolute(path)?.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&dir);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.member_corpus);
        fix(&mut self.nonmember_corpus);
        fix(&mut self.output_dir);
        if let Some(p) = self.calibration_corpus.as_mut() {
            fix(p);
        }
        if let Some(p) = self.target_dir.as_mut() {
            fix(p);
        }
    }

    /// Applies one `key=value` override; the value is parsed as a TOML value,
    /// falling back to a plain string.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        let key = key.trim();
        let raw = raw.trim();
        let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        let mut table = toml::Table::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        if !table.contains_key(key) && !Self::optional_keys().contains(&key) {
            return Err(Error::Config(format!("unknown configuration key {key:?}")));
        }
        table.insert(key.to_string(), value);
        *self = table.try_into().map_err(|e: toml::de::Error| Error::Config(format!("{key}: {}", e.message())))?;
        Ok(())
    }

    fn optional_keys() -> &'static [&'static str] {
        &[
            "calibration_corpus",
            "target_dir",
            "setting",
            "known_fraction",
            "scale",
            "train_size",
            "validation_size",
            "layers",
            "shadow_layers",
            "ensemble_bases",
        ]
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn setting(&self) -> Setting {
        self.attack.setting()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(s) = self.setting {
            if s != self.attack.setting() {
                return Err(Error::Config(format!(
                    "attack {} belongs to the {} setting, config says {}",
                    self.attack,
                    self.attack.setting().as_str(),
                    s.as_str()
                )));
            }
        }
        self.encoder_config().validate()?;
        if self.n_intervals < 2 {
            return Err(Error::Config("n_intervals must be at least 2".into()));
        }
        for (name, v) in [("k", self.k), ("g", self.g)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1]")));
            }
        }
        if let Some(sel) = &self.layers {
            sel.check_against(self.num_layers)?;
        }
        Ok(())
    }

    /// Per-class set sizes for a member corpus of `n_members` snippets.
    pub fn split_sizes(&self, n_members: usize) -> Result<SplitSizes> {
        if let Some(s) = self.scale {
            return SplitSizes::scaled(s);
        }
        let setting = self.setting();
        let (train, validation) = if setting == Setting::Graybox {
            let fraction = self.known_fraction.unwrap_or(setting.default_known_fraction());
            let pool = known_pool_size(fraction, n_members);
            let validation = self.validation_size.unwrap_or((pool / 5).max(1));
            (self.train_size.unwrap_or(pool.saturating_sub(validation).max(1)), validation)
        } else {
            (self.train_size.unwrap_or(600), self.validation_size.unwrap_or(100))
        };
        Ok(SplitSizes { train, test: self.test_size, validation })
    }

    pub fn target_dir(&self) -> PathBuf {
        self.target_dir.clone().unwrap_or_else(|| self.output_dir.join("target"))
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            vocab_size: self.vocab_size,
            hidden_dim: self.hidden_dim,
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            ffn_dim: self.ffn_dim,
            max_positions: self.max_positions,
            ..EncoderConfig::default()
        }
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            steps: self.pretrain_steps,
            batch_size: self.pretrain_batch_size,
            lr: self.pretrain_lr,
            warmup_steps: self.pretrain_warmup,
            mask_prob: self.mask_prob,
            bimodal_fraction: self.bimodal_fraction,
            seed: self.sub_seed("pretrain"),
            ..PretrainConfig::default()
        }
    }

    pub fn selection(&self) -> LayerSelection {
        self.layers.clone().unwrap_or_else(|| LayerSelection::middle_and_last(self.num_layers))
    }

    pub fn inference_config(&self) -> InferenceConfig {
        InferenceConfig {
            attention_layers: self.inference_layers,
            heads: self.inference_heads,
            pooling: self.pooling,
            epochs: self.inference_epochs,
            batch_size: self.inference_batch_size,
            lr: self.inference_lr,
            weight_decay: self.inference_weight_decay,
            seed: self.sub_seed("inference"),
        }
    }

    pub fn shadow_config(&self) -> EncoderConfig {
        EncoderConfig { num_layers: self.shadow_layers.unwrap_or(self.num_layers), ..self.encoder_config() }
    }

    pub fn distill_config(&self) -> DistillConfig {
        DistillConfig {
            steps: self.distill_steps,
            batch_size: self.distill_batch_size,
            lr: self.distill_lr,
            seed: self.sub_seed("distill"),
            ..DistillConfig::default()
        }
    }

    pub fn stacking_config(&self) -> StackingConfig {
        let depth = self.shadow_layers.unwrap_or(self.num_layers);
        let mut s = StackingConfig::standard(depth);
        if let Some(b) = &self.ensemble_bases {
            s.bases = b.clone();
        }
        s.folds = self.folds;
        s.meta = MetaConfig {
            kind: self.meta,
            logistic_l2: self.logistic_l2,
            gbr_trees: self.gbr_trees,
            gbr_depth: self.gbr_depth,
            gbr_learning_rate: self.gbr_learning_rate,
        };
        s
    }

    pub fn calibration_training(&self, mode: CalibrationMode) -> PretrainConfig {
        PretrainConfig {
            steps: self.calibration_steps,
            lr: self.calibration_lr,
            seed: self.sub_seed(&format!("calibration/{}", mode.as_str())),
            ..self.pretrain_config()
        }
    }

    pub fn thresholds(&self) -> ThresholdParams {
        ThresholdParams { k: self.k, g: self.g }
    }

    pub fn sub_seed(&self, name: &str) -> u64 {
        derive_seed(self.seed, name)
    }

    /// Every named sub-seed the pipeline draws from.
    pub fn sub_seeds(&self) -> Vec<(&'static str, u64)> {
        ["split", "pretrain", "inference", "distill", "calibration/unimodal", "calibration/bimodal"]
            .into_iter()
            .map(|n| (n, self.sub_seed(n)))
            .collect()
    }
}
