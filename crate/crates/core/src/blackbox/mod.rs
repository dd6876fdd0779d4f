//! Black-box attacks: the target's [CLS] geometry calibrated against an
//! encoder trained only on nonmember data.
//!
//! * unimodal: distance between lower- and upper-cased variants of the code;
//!   memorised code is more robust to the perturbation in relative terms;
//! * bimodal: distance between the code and its description, encoded
//!   separately; memorised pairs sit closer together.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::corpus::{CodeSnippet, MembershipLabel};
use crate::encoder::{
    train_mlm, EncoderConfig, EncoderModel, LayoutPolicy, OracleHandle, PretrainConfig, TargetEncoder, Tokenizer,
};
use crate::error::{Error, Result};
use crate::seeds::derive_seed;

/// Full-string lower- and upper-case variants.
pub fn case_perturb(code: &str) -> (String, String) {
    (code.to_lowercase(), code.to_uppercase())
}

fn l2(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>().sqrt()
}

/// `‖h_lo − h_up‖ − ‖ĥ_lo − ĥ_up‖`: target gap minus calibration gap.
pub fn s_uni(h_lower: &[f32], h_upper: &[f32], c_lower: &[f32], c_upper: &[f32]) -> f64 {
    l2(h_lower, h_upper) - l2(c_lower, c_upper)
}

/// `‖h_pl − r_nl‖ − ‖ĥ_pl − r̂_nl‖`; small or negative means member-like.
pub fn s_bi(h_code: &[f32], r_nl: &[f32], c_code: &[f32], c_nl: &[f32]) -> f64 {
    l2(h_code, r_nl) - l2(c_code, c_nl)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationMode {
    Unimodal,
    Bimodal,
}

impl CalibrationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CalibrationMode::Unimodal => "unimodal",
            CalibrationMode::Bimodal => "bimodal",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScoreKind {
    #[serde(rename = "s_uni")]
    SUni,
    #[serde(rename = "s_bi")]
    SBi,
}

impl ScoreKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreKind::SUni => "s_uni",
            ScoreKind::SBi => "s_bi",
        }
    }
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A raw calibrated score; [`CalibratedScore::normalized`] orients it so that
/// larger always means more member-like.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibratedScore {
    pub value: f64,
    pub kind: ScoreKind,
}

impl CalibratedScore {
    pub fn normalized(&self) -> f64 {
        match self.kind {
            ScoreKind::SUni => self.value,
            ScoreKind::SBi => -self.value,
        }
    }
}

/// Anything that can produce final-layer [CLS] vectors for raw text, each
/// text encoded in the single-segment layout.
pub trait ClsEncoder {
    fn cls_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>>;
}

impl ClsEncoder for OracleHandle {
    fn cls_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>> {
        let inputs: Vec<(&str, Option<&str>)> = texts.iter().map(|t| (*t, None)).collect();
        Ok(self.last_layer_batch(&inputs)?.into_iter().map(|m| m.row(0).to_vec()).collect())
    }
}

impl ClsEncoder for TargetEncoder {
    fn cls_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>> {
        if texts.iter().any(|t| t.is_empty()) {
            return Err(Error::Input("cannot encode empty text".into()));
        }
        let seqs: Vec<Vec<u32>> = texts.iter().map(|t| self.input_ids(t, None)).collect();
        Ok(self.model.encode_batch(&seqs)?.into_iter().map(|r| r.last().row(0).to_vec()).collect())
    }
}

pub fn cls_vector(encoder: &impl ClsEncoder, text: &str) -> Result<Vec<f32>> {
    Ok(encoder.cls_batch(&[text])?.remove(0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    pub mode: CalibrationMode,
    /// Training layout; defaults to code-only for unimodal and description +
    /// code pairs for bimodal calibration.
    pub layout: Option<LayoutRequest>,
    pub encoder: EncoderConfig,
    pub training: PretrainConfig,
}

/// Serializable mirror of [`LayoutPolicy`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayoutRequest {
    Unimodal,
    Bimodal,
    Mixed,
}

impl CalibrationConfig {
    pub fn new(mode: CalibrationMode, encoder: EncoderConfig, training: PretrainConfig) -> Self {
        Self { mode, layout: None, encoder, training }
    }

    fn policy(&self) -> Result<LayoutPolicy> {
        match (self.mode, self.layout) {
            (CalibrationMode::Unimodal, None | Some(LayoutRequest::Unimodal)) => Ok(LayoutPolicy::UnimodalOnly),
            (CalibrationMode::Bimodal, None | Some(LayoutRequest::Bimodal)) => Ok(LayoutPolicy::BimodalOnly),
            (mode, Some(req)) => {
                Err(Error::Mode(format!("{} calibration cannot train on the {req:?} layout", mode.as_str())))
            }
        }
    }
}

/// Encoder trained only on nonmember data.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationModel {
    pub encoder: TargetEncoder,
    pub mode: CalibrationMode,
    pub corpus_tag: String,
    pub loss_trace: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct CalibrationHeader {
    config: EncoderConfig,
    mode: CalibrationMode,
    corpus_tag: String,
    loss_trace: Vec<f32>,
}

const CALIBRATION_FILE: &str = "calibration.bin";

pub fn train_calibration(
    nonmembers: &[CodeSnippet],
    tokenizer: &Tokenizer,
    corpus_tag: &str,
    config: &CalibrationConfig,
) -> Result<CalibrationModel> {
    let policy = config.policy()?;
    if nonmembers.is_empty() {
        return Err(Error::Input("calibration corpus is empty".into()));
    }
    if let Some(s) = nonmembers.iter().find(|s| s.role != MembershipLabel::Nonmember) {
        return Err(Error::Contamination(format!(
            "snippet {} is member data; calibration models see nonmembers only",
            s.id
        )));
    }
    let enc_cfg = EncoderConfig { vocab_size: tokenizer.vocab_len(), ..config.encoder.clone() };
    let seed = derive_seed(config.training.seed, &format!("calibration/{}", config.mode.as_str()));
    let mut model = EncoderModel::new(enc_cfg, derive_seed(seed, "init"))?;
    let refs: Vec<&CodeSnippet> = nonmembers.iter().collect();
    let training = PretrainConfig { seed, ..config.training.clone() };
    let loss_trace = train_mlm(&mut model, tokenizer, &refs, policy, &training)?;
    Ok(CalibrationModel {
        encoder: TargetEncoder::new(tokenizer.clone(), model)?,
        mode: config.mode,
        corpus_tag: corpus_tag.to_string(),
        loss_trace,
    })
}

impl CalibrationModel {
    fn require(&self, mode: CalibrationMode) -> Result<()> {
        if self.mode != mode {
            return Err(Error::Mode(format!(
                "a {} score needs a {} calibration model, got {}",
                if mode == CalibrationMode::Unimodal { "s_uni" } else { "s_bi" },
                mode.as_str(),
                self.mode.as_str()
            )));
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.encoder.tokenizer.save(dir)?;
        let header = CalibrationHeader {
            config: self.encoder.model.config.clone(),
            mode: self.mode,
            corpus_tag: self.corpus_tag.clone(),
            loss_trace: self.loss_trace.clone(),
        };
        checkpoint::save(&dir.join(CALIBRATION_FILE), "calibration", &header, &self.encoder.model.params)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let archive = checkpoint::load(&dir.join(CALIBRATION_FILE), "calibration")?;
        let header: CalibrationHeader = archive.config()?;
        let mut model = EncoderModel::new(header.config, 0)?;
        archive.restore_into(&mut model.params)?;
        Ok(Self {
            encoder: TargetEncoder::new(Tokenizer::load(dir)?, model)?,
            mode: header.mode,
            corpus_tag: header.corpus_tag,
            loss_trace: header.loss_trace,
        })
    }
}

pub fn unimodal_scores(
    target: &OracleHandle,
    calib: &CalibrationModel,
    snippets: &[&CodeSnippet],
) -> Result<Vec<CalibratedScore>> {
    calib.require(CalibrationMode::Unimodal)?;
    let variants: Vec<(String, String)> = snippets.iter().map(|s| case_perturb(&s.code)).collect();
    let texts: Vec<&str> = variants.iter().flat_map(|(lo, up)| [lo.as_str(), up.as_str()]).collect();
    let h = target.cls_batch(&texts)?;
    let c = calib.encoder.cls_batch(&texts)?;
    Ok((0..snippets.len())
        .map(|i| CalibratedScore {
            value: s_uni(&h[2 * i], &h[2 * i + 1], &c[2 * i], &c[2 * i + 1]),
            kind: ScoreKind::SUni,
        })
        .collect())
}

pub fn bimodal_scores(
    target: &OracleHandle,
    calib: &CalibrationModel,
    snippets: &[&CodeSnippet],
) -> Result<Vec<CalibratedScore>> {
    calib.require(CalibrationMode::Bimodal)?;
    let mut texts = Vec::with_capacity(2 * snippets.len());
    for s in snippets {
        let nl = s.nl.as_deref().ok_or_else(|| Error::Input(format!("snippet {} has no description", s.id)))?;
        texts.push(s.code.as_str());
        texts.push(nl);
    }
    let h = target.cls_batch(&texts)?;
    let c = calib.encoder.cls_batch(&texts)?;
    Ok((0..snippets.len())
        .map(|i| CalibratedScore {
            value: s_bi(&h[2 * i], &h[2 * i + 1], &c[2 * i], &c[2 * i + 1]),
            kind: ScoreKind::SBi,
        })
        .collect())
}

pub fn unimodal_score(
    target: &OracleHandle,
    calib: &CalibrationModel,
    snippet: &CodeSnippet,
) -> Result<CalibratedScore> {
    Ok(unimodal_scores(target, calib, &[snippet])?.remove(0))
}

pub fn bimodal_score(
    target: &OracleHandle,
    calib: &CalibrationModel,
    snippet: &CodeSnippet,
) -> Result<CalibratedScore> {
    Ok(bimodal_scores(target, calib, &[snippet])?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn case_perturbation() {
        assert_eq!(
            case_perturb("def Foo(x): return X"),
            ("def foo(x): return x".to_string(), "DEF FOO(X): RETURN X".to_string())
        );
        let (lo, up) = case_perturb("123 + _");
        assert_eq!(lo, up);
    }

    #[test]
    fn score_fixtures() {
        let (e1, e2) = ([1.0f32, 0.0], [0.0f32, 1.0]);
        assert!((s_uni(&e1, &e2, &e1, &e1) - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(s_uni(&e1, &e1, &e2, &e2), 0.0);
        let z = [0.0f32, 0.0];
        assert!((s_uni(&z, &[0.2, 0.0], &z, &[0.0, 0.5]) + 0.3).abs() < 1e-7);
        assert!((s_bi(&e1, &e1, &z, &[0.4, 0.0]) + 0.4).abs() < 1e-7);
        assert!((s_bi(&z, &[1.0, 0.0], &e2, &e2) - 1.0).abs() < 1e-12);
        let s = CalibratedScore { value: -0.4, kind: ScoreKind::SBi };
        assert_eq!(s.normalized(), 0.4);
    }

    #[test]
    fn layout_requests_are_checked() {
        let mut c =
            CalibrationConfig::new(CalibrationMode::Unimodal, EncoderConfig::default(), PretrainConfig::default());
        assert_eq!(c.policy().unwrap(), LayoutPolicy::UnimodalOnly);
        c.layout = Some(LayoutRequest::Bimodal);
        assert!(matches!(c.policy(), Err(Error::Mode(_))));
        c.mode = CalibrationMode::Bimodal;
        assert_eq!(c.policy().unwrap(), LayoutPolicy::BimodalOnly);
        c.layout = Some(LayoutRequest::Mixed);
        assert!(matches!(c.policy(), Err(Error::Mode(_))));
    }
}
