//! End-to-end experiment pipeline and parameter sweeps.
//!
//! Stages run in order (`load`, `split`, `target`, `attack`, `evaluate`,
//! `write`); a failure is reported with the stage it happened in and every
//! artifact written before it stays on disk.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{AttackKind, ExperimentConfig};
use crate::blackbox::{
    bimodal_scores, train_calibration, unimodal_scores, CalibratedScore, CalibrationConfig, CalibrationMode,
};
use crate::corpus::{
    build_splits, extract_features, load_corpus, reserved_words, CodeFeatures, CodeLexer, CodeSnippet, LabeledSnippet,
    MembershipLabel, SplitBundle, TfIdfModel,
};
use crate::encoder::{pretrain_encoder, AccessLevel, OracleHandle, TargetEncoder, Tokenizer};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate_attack, render_table, roc_points, write_interval_csv, write_scores_csv, AttackReport, ScoredExample,
};
use crate::graybox::{
    distill_shadow, graybox_direct, graybox_shadow, train_stacked_ensemble, GrayContext, KdLoss, ShadowModel,
    ShadowRecipe,
};
use crate::whitebox::{self, LayerSelection};

/// Everything a finished run produced.
#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub report: AttackReport,
    /// Per-base reports of a stacking ensemble (empty otherwise).
    pub base_reports: Vec<AttackReport>,
    /// Raw (un-negated) black-box scores of the test set, aligned with it.
    pub raw_scores: Vec<(String, MembershipLabel, CalibratedScore)>,
    /// Files under the output directory, relative, sorted.
    pub files: Vec<String>,
}

pub struct Corpora {
    pub members: Vec<CodeSnippet>,
    pub nonmembers: Vec<CodeSnippet>,
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

pub fn load_corpora(cfg: &ExperimentConfig) -> Result<Corpora> {
    Ok(Corpora {
        members: load_corpus(&cfg.member_corpus, MembershipLabel::Member)?,
        nonmembers: load_corpus(&cfg.nonmember_corpus, MembershipLabel::Nonmember)?,
    })
}

pub fn make_splits(cfg: &ExperimentConfig, corpora: &Corpora) -> Result<SplitBundle> {
    let bundle = build_splits(
        &corpora.members,
        &corpora.nonmembers,
        cfg.setting(),
        cfg.known_fraction,
        cfg.split_sizes(corpora.members.len())?,
        cfg.sub_seed("split"),
    )?;
    bundle.audit()?;
    Ok(bundle)
}

const TARGET_META: &str = "target.json";

#[derive(Serialize, Deserialize)]
struct TargetMeta {
    key: String,
    loss_trace: Vec<f32>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Identifies a target by its training data and every knob that shapes it.
fn target_key(cfg: &ExperimentConfig, members: &[CodeSnippet]) -> Result<String> {
    let mut h = Sha256::new();
    h.update(env!("CARGO_PKG_VERSION"));
    for s in members {
        h.update(serde_json::to_vec(&(&s.id, &s.code, &s.nl))?);
    }
    h.update(serde_json::to_vec(&cfg.encoder_config())?);
    h.update(serde_json::to_vec(&cfg.pretrain_config())?);
    Ok(hex::encode(h.finalize()))
}

/// Loads the target from `target_dir` when its key matches, otherwise trains
/// the tokenizer and the encoder on the member corpus and stores them there.
pub fn prepare_target(cfg: &ExperimentConfig, members: &[CodeSnippet]) -> Result<TargetEncoder> {
    let dir = cfg.target_dir();
    let key = target_key(cfg, members)?;
    if let Ok(text) = std::fs::read_to_string(dir.join(TARGET_META)) {
        if let Ok(meta) = serde_json::from_str::<TargetMeta>(&text) {
            if meta.key == key {
                info!("reusing target in {}", dir.display());
                return TargetEncoder::load(&dir);
            }
        }
    }
    info!("training tokenizer ({} ids) on {} members", cfg.vocab_size, members.len());
    let tok = Tokenizer::train(members, cfg.vocab_size)?;
    info!("pretraining target for {} steps", cfg.pretrain_steps);
    let trained = pretrain_encoder(members, &tok, cfg.encoder_config(), &cfg.pretrain_config())?;
    let target = TargetEncoder::new(tok, trained.model)?;
    target.save(&dir)?;
    let meta = TargetMeta { key, loss_trace: trained.loss_trace };
    std::fs::write(dir.join(TARGET_META), serde_json::to_string(&meta)?)?;
    Ok(target)
}

/// Fails before any training when the attack needs inputs the data lacks.
fn check_inputs(cfg: &ExperimentConfig, bundle: &SplitBundle, calibration: Option<&[CodeSnippet]>) -> Result<()> {
    if cfg.attack != AttackKind::BbBi {
        return Ok(());
    }
    for (set, items) in bundle.sets() {
        if let Some(l) = items.iter().find(|l| l.snippet.nl.is_none()) {
            return Err(Error::Input(format!(
                "bb_bi needs a description for every snippet; {} in {set:?} has none",
                l.snippet.id
            )));
        }
    }
    if let Some(c) = calibration {
        if c.iter().all(|s| s.nl.is_none()) {
            return Err(Error::Input("bb_bi calibration corpus has no described snippets".into()));
        }
    }
    Ok(())
}

/// Nonmembers the calibration model may see: an explicit corpus, or the
/// nonmember corpus minus everything used for validation and test.
fn calibration_corpus(cfg: &ExperimentConfig, corpora: &Corpora, bundle: &SplitBundle) -> Result<Vec<CodeSnippet>> {
    if let Some(path) = &cfg.calibration_corpus {
        return load_corpus(path, MembershipLabel::Nonmember);
    }
    let used: HashSet<&str> = bundle.validation.iter().chain(&bundle.test).map(|l| l.snippet.id.as_str()).collect();
    Ok(corpora.nonmembers.iter().filter(|s| !used.contains(s.id.as_str())).cloned().collect())
}

fn refs(set: &[LabeledSnippet]) -> Vec<&CodeSnippet> {
    set.iter().map(|l| &l.snippet).collect()
}

fn scored(set: &[LabeledSnippet], scores: &[f64]) -> Vec<ScoredExample> {
    set.iter().zip(scores).map(|(l, &s)| ScoredExample::new(l.snippet.id.clone(), s, l.label)).collect()
}

/// Registry of written files, relative to the output directory.
struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn file(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let path = self.file(name);
        std::fs::write(path, contents)?;
        Ok(())
    }

    /// Registers every file a model saver put under `sub`.
    fn directory(&mut self, sub: &str) -> Result<PathBuf> {
        let path = self.dir.join(sub);
        std::fs::create_dir_all(&path)?;
        Ok(path)
    }

    fn register_dir(&mut self, sub: &str) -> Result<()> {
        let mut names: Vec<String> = std::fs::read_dir(self.dir.join(sub))?
            .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
            .collect::<std::io::Result<_>>()?;
        names.sort();
        self.files.extend(names.into_iter().map(|n| format!("{sub}/{n}")));
        Ok(())
    }
}

#[derive(Serialize)]
struct ManifestEntry {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    crate_version: &'static str,
    attack: &'a str,
    seed: u64,
    sub_seeds: BTreeMap<&'static str, u64>,
    target_key: String,
    files: Vec<ManifestEntry>,
}

fn write_manifest(out: &Outputs, cfg: &ExperimentConfig, target_key: String) -> Result<()> {
    let mut files: Vec<String> = out.files.clone();
    files.sort();
    files.dedup();
    let files = files
        .into_iter()
        .map(|path| Ok(ManifestEntry { sha256: sha256_hex(&std::fs::read(out.dir.join(&path))?), path }))
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        crate_version: env!("CARGO_PKG_VERSION"),
        attack: cfg.attack.as_str(),
        seed: cfg.seed,
        sub_seeds: cfg.sub_seeds().into_iter().collect(),
        target_key,
        files,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(out.dir.join("manifest.json"), text)?;
    Ok(())
}

struct AttackScores {
    validation: Vec<ScoredExample>,
    test: Vec<ScoredExample>,
    /// `(name, validation, test)` per ensemble base.
    bases: Vec<(String, Vec<ScoredExample>, Vec<ScoredExample>)>,
    raw: Vec<CalibratedScore>,
    raw_validation: Vec<CalibratedScore>,
}

impl AttackScores {
    fn plain(bundle: &SplitBundle, validation: &[f64], test: &[f64]) -> Self {
        Self {
            validation: scored(&bundle.validation, validation),
            test: scored(&bundle.test, test),
            bases: Vec::new(),
            raw: Vec::new(),
            raw_validation: Vec::new(),
        }
    }
}

fn shadow_selection(cfg: &ExperimentConfig) -> LayerSelection {
    let depth = cfg.shadow_layers.unwrap_or(cfg.num_layers);
    cfg.layers.clone().unwrap_or_else(|| LayerSelection::middle_and_last(depth))
}

fn train_shadow(
    cfg: &ExperimentConfig,
    oracle: &OracleHandle,
    corpora: &Corpora,
    bundle: &SplitBundle,
    out: &mut Outputs,
) -> Result<ShadowModel> {
    let known = bundle.known_members(&corpora.members);
    info!("distilling a shadow on {} known members ({} loss)", known.len(), cfg.kd_loss);
    let shadow = distill_shadow(oracle, &known, cfg.shadow_config(), cfg.kd_loss, &cfg.distill_config())?;
    shadow.save(&out.directory("shadow")?)?;
    out.register_dir("shadow")?;
    Ok(shadow)
}

fn run_attack(
    cfg: &ExperimentConfig,
    target: TargetEncoder,
    corpora: &Corpora,
    bundle: &SplitBundle,
    calibration: Option<Vec<CodeSnippet>>,
    out: &mut Outputs,
) -> Result<AttackScores> {
    let inference = cfg.inference_config();
    let val = refs(&bundle.validation);
    let test = refs(&bundle.test);
    match cfg.attack {
        AttackKind::Wb => {
            let oracle = target.into_handle(AccessLevel::White);
            let sel = cfg.selection();
            info!("white-box attack on layers {sel}");
            let attack = whitebox::train_whitebox(bundle, &oracle, &sel, &inference)?;
            attack.model.save(&out.file("inference.bin"))?;
            let v = whitebox::score_snippets(&attack.model, &oracle, &val, &sel)?;
            let t = whitebox::score_snippets(&attack.model, &oracle, &test, &sel)?;
            Ok(AttackScores::plain(bundle, &v, &t))
        }
        AttackKind::GbDirect => {
            let oracle = target.into_handle(AccessLevel::Gray);
            let attack = graybox_direct(bundle, &oracle, &inference)?;
            attack.model.save(&out.file("inference.bin"))?;
            let ctx = GrayContext { oracle: &oracle, shadow: None };
            Ok(AttackScores::plain(bundle, &attack.score_snippets(&ctx, &val)?, &attack.score_snippets(&ctx, &test)?))
        }
        AttackKind::GbShadow => {
            let oracle = target.into_handle(AccessLevel::Gray);
            let shadow = train_shadow(cfg, &oracle, corpora, bundle, out)?;
            let sel = shadow_selection(cfg);
            info!("gray-box attack on shadow layers {sel}");
            let attack = graybox_shadow(bundle, &oracle, &shadow, &sel, &inference)?;
            attack.model.save(&out.file("inference.bin"))?;
            let ctx = GrayContext { oracle: &oracle, shadow: Some(&shadow) };
            Ok(AttackScores::plain(bundle, &attack.score_snippets(&ctx, &val)?, &attack.score_snippets(&ctx, &test)?))
        }
        AttackKind::GbEnsemble => {
            let oracle = target.into_handle(AccessLevel::Gray);
            let shadow = train_shadow(cfg, &oracle, corpora, bundle, out)?;
            let ctx = GrayContext { oracle: &oracle, shadow: Some(&shadow) };
            let stacking = cfg.stacking_config();
            info!("stacking {} base attacks", stacking.bases.len());
            let recipe = ShadowRecipe {
                known_members: bundle.known_members(&corpora.members),
                student: cfg.shadow_config(),
                kind: cfg.kd_loss,
                distill: cfg.distill_config(),
            };
            let stacked = train_stacked_ensemble(bundle, &ctx, &inference, &stacking, Some(&recipe))?;
            for (i, b) in stacked.bases.iter().enumerate() {
                b.model.save(&out.file(&format!("base{i}.bin")))?;
            }
            out.write("ensemble.json", serde_json::to_string_pretty(&stacked.ensemble)?)?;
            let v = stacked.score_snippets(&ctx, &val)?;
            let t = stacked.score_snippets(&ctx, &test)?;
            let mut scores = AttackScores::plain(bundle, &v.ensemble, &t.ensemble);
            scores.bases = stacked
                .bases
                .iter()
                .enumerate()
                .map(|(b, base)| {
                    (
                        base.base.to_string(),
                        scored(&bundle.validation, &v.per_base[b]),
                        scored(&bundle.test, &t.per_base[b]),
                    )
                })
                .collect();
            Ok(scores)
        }
        AttackKind::BbUni | AttackKind::BbBi => {
            let mode =
                if cfg.attack == AttackKind::BbUni { CalibrationMode::Unimodal } else { CalibrationMode::Bimodal };
            let nonmembers = calibration.ok_or_else(|| Error::State("calibration corpus missing".into()))?;
            let calib_cfg = CalibrationConfig::new(mode, cfg.encoder_config(), cfg.calibration_training(mode));
            info!("training {} calibration model on {} nonmembers", mode.as_str(), nonmembers.len());
            let tag = format!("{} nonmembers", nonmembers.len());
            let calib = train_calibration(&nonmembers, &target.tokenizer, &tag, &calib_cfg)?;
            calib.save(&out.directory("calibration")?)?;
            out.register_dir("calibration")?;
            let oracle = target.into_handle(AccessLevel::Black);
            let score = |s: &[&CodeSnippet]| match mode {
                CalibrationMode::Unimodal => unimodal_scores(&oracle, &calib, s),
                CalibrationMode::Bimodal => bimodal_scores(&oracle, &calib, s),
            };
            let raw_validation = score(&val)?;
            let raw = score(&test)?;
            let norm = |r: &[CalibratedScore]| r.iter().map(CalibratedScore::normalized).collect::<Vec<_>>();
            let mut scores = AttackScores::plain(bundle, &norm(&raw_validation), &norm(&raw));
            scores.raw = raw;
            scores.raw_validation = raw_validation;
            Ok(scores)
        }
    }
}

/// Interval features of the test snippets; TF-IDF is fitted on both corpora.
fn test_features(corpora: &Corpora, bundle: &SplitBundle) -> Result<Vec<CodeFeatures>> {
    let all: Vec<CodeSnippet> = corpora.members.iter().chain(&corpora.nonmembers).cloned().collect();
    let tfidf = TfIdfModel::fitted(&CodeLexer, &all);
    bundle
        .test
        .iter()
        .map(|l| extract_features(&l.snippet, &CodeLexer, &reserved_words(l.snippet.language), &tfidf))
        .collect()
}

#[derive(Serialize)]
struct RawScoreRow<'a> {
    id: &'a str,
    set: &'a str,
    label: u8,
    kind: &'a str,
    raw_value: f64,
    normalized_value: f64,
}

fn write_raw_scores(path: &Path, rows: &[(&str, &LabeledSnippet, &CalibratedScore)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (set, l, s) in rows {
        w.serialize(RawScoreRow {
            id: &l.snippet.id,
            set,
            label: l.label.as_u8(),
            kind: s.kind.as_str(),
            raw_value: s.value,
            normalized_value: s.normalized(),
        })?;
    }
    w.flush()?;
    Ok(())
}

fn write_roc(path: &Path, test: &[ScoredExample]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["fpr", "tpr"])?;
    for (fpr, tpr) in roc_points(test)? {
        w.write_record([fpr.to_string(), tpr.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Runs one configured attack end to end and writes its artifacts into
/// `output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    stage("load", cfg.validate())?;
    let corpora = stage("load", load_corpora(cfg))?;
    let mut out = stage("write", Outputs::new(&cfg.output_dir))?;
    stage("write", out.write("config.toml", cfg.to_toml()?))?;

    let bundle = stage("split", make_splits(cfg, &corpora))?;
    stage("split", bundle.write_manifest(&out.file("splits.jsonl")))?;
    let calibration = match cfg.attack.setting() {
        crate::corpus::Setting::Blackbox => Some(stage("split", calibration_corpus(cfg, &corpora, &bundle))?),
        _ => None,
    };
    stage("split", check_inputs(cfg, &bundle, calibration.as_deref()))?;

    let key = stage("target", target_key(cfg, &corpora.members))?;
    let target = stage("target", prepare_target(cfg, &corpora.members))?;

    let mut scores = stage("attack", run_attack(cfg, target, &corpora, &bundle, calibration, &mut out))?;

    let features = stage("evaluate", test_features(&corpora, &bundle))?;
    let params = cfg.thresholds();
    let setting = cfg.setting();
    let report = stage(
        "evaluate",
        evaluate_attack(
            cfg.attack.as_str(),
            setting,
            &scores.validation,
            &mut scores.test,
            params,
            Some((&features, cfg.n_intervals)),
        ),
    )?;
    let mut base_reports = Vec::new();
    for (name, v, t) in scores.bases.iter_mut() {
        let r = evaluate_attack(
            &format!("{}/{name}", cfg.attack),
            setting,
            v,
            t,
            params,
            Some((&features, cfg.n_intervals)),
        );
        base_reports.push(stage("evaluate", r)?);
    }

    stage(
        "write",
        (|| {
            out.write("report.json", report.to_json()?)?;
            let mut all = vec![report.clone()];
            all.extend(base_reports.iter().cloned());
            out.write("report.txt", render_table(&all))?;
            if !base_reports.is_empty() {
                let mut text = serde_json::to_string_pretty(&base_reports)?;
                text.push('\n');
                out.write("base_reports.json", text)?;
            }
            write_interval_csv(&out.file("intervals.csv"), &all)?;
            write_scores_csv(&out.file("scores.csv"), &scores.test)?;
            write_scores_csv(&out.file("validation_scores.csv"), &scores.validation)?;
            write_roc(&out.file("roc.csv"), &scores.test)?;
            if !scores.raw.is_empty() {
                let rows: Vec<(&str, &LabeledSnippet, &CalibratedScore)> = bundle
                    .validation
                    .iter()
                    .zip(&scores.raw_validation)
                    .map(|(l, s)| ("validation", l, s))
                    .chain(bundle.test.iter().zip(&scores.raw).map(|(l, s)| ("test", l, s)))
                    .collect();
                write_raw_scores(&out.file("raw_scores.csv"), &rows)?;
            }
            write_manifest(&out, cfg, key)
        })(),
    )?;

    let raw_scores = bundle.test.iter().zip(scores.raw).map(|(l, s)| (l.snippet.id.clone(), l.label, s)).collect();
    let mut files = out.files;
    files.push("manifest.json".into());
    files.sort();
    files.dedup();
    Ok(ExperimentOutcome { report, base_reports, raw_scores, files })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    KnownFraction,
    KdLoss,
    LayerSelection,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::KnownFraction => "known_fraction",
            SweepAxis::KdLoss => "kd_loss",
            SweepAxis::LayerSelection => "layer_selection",
        }
    }

    /// Configuration with this axis set to `value`.
    fn apply(self, base: &ExperimentConfig, value: &str) -> Result<ExperimentConfig> {
        let mut cfg = base.clone();
        match self {
            SweepAxis::KnownFraction => {
                if cfg.attack.setting() == crate::corpus::Setting::Blackbox {
                    return Err(Error::Config("black-box attacks have no known members to vary".into()));
                }
                let v: f64 =
                    value.trim().parse().map_err(|_| Error::Config(format!("bad known_fraction {value:?}")))?;
                cfg.known_fraction = Some(v);
            }
            SweepAxis::KdLoss => {
                if !matches!(cfg.attack, AttackKind::GbShadow | AttackKind::GbEnsemble) {
                    return Err(Error::Config(format!("kd_loss does not affect the {} attack", cfg.attack)));
                }
                cfg.kd_loss = value.parse::<KdLoss>()?;
            }
            SweepAxis::LayerSelection => {
                if !matches!(cfg.attack, AttackKind::Wb | AttackKind::GbShadow) {
                    return Err(Error::Config(format!("layer selection does not affect the {} attack", cfg.attack)));
                }
                cfg.layers = Some(value.parse::<LayerSelection>()?);
            }
        }
        Ok(cfg)
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [SweepAxis::KnownFraction, SweepAxis::KdLoss, SweepAxis::LayerSelection]
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown sweep axis {s:?}")))
    }
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    axis: &'a str,
    value: &'a str,
    attack: &'a str,
    auc: f64,
    acc: f64,
    acc_member: f64,
    acc_nonmember: f64,
    threshold: f64,
    n_test: usize,
}

fn dir_name(value: &str) -> String {
    value.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' }).collect()
}

/// One experiment per value, each in `<output_dir>/<axis>=<value>`, sharing
/// the target; writes `summary.csv` into `output_dir`.
pub fn run_sweep(base: &ExperimentConfig, axis: SweepAxis, values: &[String]) -> Result<Vec<AttackReport>> {
    if values.is_empty() {
        return Err(Error::Config("a sweep needs at least one value".into()));
    }
    let configs = values
        .iter()
        .map(|v| {
            let mut cfg = axis.apply(base, v)?;
            cfg.output_dir = base.output_dir.join(format!("{axis}={}", dir_name(v)));
            cfg.target_dir = Some(base.target_dir());
            cfg.validate()?;
            Ok(cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    std::fs::create_dir_all(&base.output_dir)?;
    let mut reports = Vec::with_capacity(configs.len());
    for (cfg, v) in configs.iter().zip(values) {
        info!("sweep {axis}={v}");
        reports.push(run_experiment(cfg)?.report);
    }
    let mut w = csv::Writer::from_path(base.output_dir.join("summary.csv"))?;
    for (r, v) in reports.iter().zip(values) {
        w.serialize(SummaryRow {
            axis: axis.as_str(),
            value: v,
            attack: &r.attack_name,
            auc: r.auc,
            acc: r.acc,
            acc_member: r.acc_member,
            acc_nonmember: r.acc_nonmember,
            threshold: r.threshold,
            n_test: r.n_test,
        })?;
    }
    w.flush()?;
    Ok(reports)
}
