//! Fixtures shared by the pipeline-level test targets.
#![allow(dead_code)]

use std::path::Path;

use codemi::cli::ExperimentConfig;
use codemi::corpus::synth::shifted_benchmark;
use codemi::corpus::write_corpus;

/// Writes a shifted member/nonmember corpus pair into `dir`.
pub fn write_benchmark(dir: &Path, members: usize, nonmembers: usize, seed: u64) {
    let (m, n) = shifted_benchmark(members, nonmembers, seed);
    write_corpus(&dir.join("members.jsonl"), &m).unwrap();
    write_corpus(&dir.join("nonmembers.jsonl"), &n).unwrap();
}

/// Seconds-scale model and split sizes (40/20/10 per class).
pub const TINY_TOML: &str = r#"
member_corpus = "members.jsonl"
nonmember_corpus = "nonmembers.jsonl"
train_size = 40
test_size = 20
validation_size = 10
vocab_size = 320
hidden_dim = 16
num_layers = 2
num_heads = 2
ffn_dim = 32
max_positions = 64
pretrain_steps = 12
pretrain_batch_size = 8
pretrain_warmup = 2
inference_layers = 1
inference_heads = 2
inference_epochs = 2
inference_batch_size = 16
distill_steps = 8
distill_batch_size = 8
calibration_steps = 8
gbr_trees = 10
"#;

/// Tiny corpora (1000 members so the 5% gray-box pool holds 50) plus a
/// config file pointing at them; returns the config path.
pub fn tiny_setup(dir: &Path) -> std::path::PathBuf {
    write_benchmark(dir, 1000, 200, 3);
    let path = dir.join("tiny.toml");
    std::fs::write(&path, TINY_TOML).unwrap();
    path
}

pub fn tiny_config(dir: &Path, attack: &str, out: &str) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::load(&tiny_setup_once(dir)).unwrap();
    cfg.set(&format!("attack={attack}")).unwrap();
    cfg.output_dir = dir.join(out);
    cfg
}

fn tiny_setup_once(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("tiny.toml");
    if !path.exists() {
        tiny_setup(dir);
    }
    path
}
