use std::ffi::{CStr, CString};
use std::ptr;

use codemi::blackbox::{cls_vector, train_calibration, unimodal_score, CalibrationConfig, CalibrationMode};
use codemi::corpus::{CodeSnippet, Language, MembershipLabel};
use codemi::encoder::{AccessLevel, EncoderConfig, EncoderModel, PretrainConfig, TargetEncoder, Tokenizer};
use codemi_ffi::*;

fn tiny_config(vocab: usize) -> EncoderConfig {
    EncoderConfig {
        vocab_size: vocab,
        hidden_dim: 16,
        num_layers: 2,
        num_heads: 2,
        ffn_dim: 32,
        max_positions: 32,
        ..Default::default()
    }
}

fn tiny_target() -> TargetEncoder {
    let tok = Tokenizer::bytes_only();
    let model = EncoderModel::new(tiny_config(tok.vocab_len()), 7).unwrap();
    TargetEncoder::new(tok, model).unwrap()
}

fn last_error() -> String {
    let p = codemi_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

#[test]
fn auc_and_threshold_through_the_abi() {
    let scores = [0.9, 0.8, 0.8, 0.1];
    let labels = [1u8, 1, 0, 0];
    let mut auc = 0.0;
    assert_eq!(unsafe { codemi_auc(scores.as_ptr(), labels.as_ptr(), 4, &mut auc) }, CodemiStatus::Ok);
    // pairs: (0.9>0.8) (0.9>0.1) (0.8=0.8 → ½) (0.8>0.1) → 3.5 / 4
    assert_eq!(auc, 0.875);

    let mut theta = 0.0;
    let st = unsafe {
        codemi_select_threshold(scores.as_ptr(), labels.as_ptr(), 4, CodemiSetting::Whitebox, 0.5, 0.6, &mut theta)
    };
    assert_eq!(st, CodemiStatus::Ok);
    // member scores sorted descending: 0.9, 0.8; rank ceil(0.5·2) = 1
    assert_eq!(theta, 0.9);

    let st = unsafe {
        codemi_select_threshold(scores.as_ptr(), labels.as_ptr(), 4, CodemiSetting::Blackbox, 0.15, 0.6, &mut theta)
    };
    assert_eq!(st, CodemiStatus::Config);
}

#[test]
fn bad_arguments_set_status_and_message() {
    let mut out = 0.0;
    assert_eq!(unsafe { codemi_auc(ptr::null(), ptr::null(), 3, &mut out) }, CodemiStatus::NullPointer);
    assert!(last_error().contains("null"));
    let labels = [1u8, 2];
    let scores = [0.1, 0.2];
    assert_eq!(unsafe { codemi_auc(scores.as_ptr(), labels.as_ptr(), 2, &mut out) }, CodemiStatus::InvalidArgument);
    let one_class = [1u8, 1];
    assert_eq!(unsafe { codemi_auc(scores.as_ptr(), one_class.as_ptr(), 2, &mut out) }, CodemiStatus::Metric);
    assert_eq!(
        unsafe { codemi_auc(scores.as_ptr(), one_class.as_ptr(), 2, ptr::null_mut()) },
        CodemiStatus::NullPointer
    );
}

#[test]
fn calibrated_distances_match_hand_values() {
    let zero = [0.0f32, 0.0];
    let (e1, e2) = ([1.0f32, 0.0], [0.0f32, 1.0]);
    let mut v = 0.0;
    // ‖e1 − e2‖ − ‖0 − 0‖ = √2
    assert_eq!(
        unsafe { codemi_s_uni(e1.as_ptr(), e2.as_ptr(), zero.as_ptr(), zero.as_ptr(), 2, &mut v) },
        CodemiStatus::Ok
    );
    assert!((v - 2f64.sqrt()).abs() < 1e-12);
    // ‖0 − 0‖ − ‖e1 − 0‖ = −1
    assert_eq!(
        unsafe { codemi_s_bi(zero.as_ptr(), zero.as_ptr(), e1.as_ptr(), zero.as_ptr(), 2, &mut v) },
        CodemiStatus::Ok
    );
    assert!((v + 1.0).abs() < 1e-12);
}

#[test]
fn oracle_handles_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let target = tiny_target();
    target.save(dir.path()).unwrap();
    let path = c(dir.path().to_str().unwrap());

    let mut oracle = ptr::null_mut();
    assert_eq!(unsafe { codemi_oracle_load(path.as_ptr(), CodemiAccess::Black, &mut oracle) }, CodemiStatus::Ok);
    assert_eq!(unsafe { codemi_oracle_hidden_dim(oracle) }, 16);
    assert_eq!(unsafe { codemi_oracle_num_layers(oracle) }, 2);

    let text = c("def f(x): return x");
    let mut buf = vec![0f32; 16];
    assert_eq!(unsafe { codemi_oracle_cls(oracle, text.as_ptr(), buf.as_mut_ptr(), 16) }, CodemiStatus::Ok);
    let expected = cls_vector(&target.clone().into_handle(AccessLevel::Black), "def f(x): return x").unwrap();
    assert_eq!(buf, expected);
    assert_eq!(unsafe { codemi_oracle_cls(oracle, text.as_ptr(), buf.as_mut_ptr(), 8) }, CodemiStatus::InvalidArgument);

    let mut raised = ptr::null_mut();
    assert_eq!(unsafe { codemi_oracle_restrict(oracle, CodemiAccess::White, &mut raised) }, CodemiStatus::Access);
    assert!(raised.is_null());

    let desc = unsafe { codemi_oracle_describe(oracle) };
    let json = unsafe { CStr::from_ptr(desc) }.to_str().unwrap().to_owned();
    unsafe { codemi_string_free(desc) };
    assert!(json.contains("\"level\":\"black\""), "{json}");
    unsafe { codemi_oracle_free(oracle) };

    let missing = c("/nonexistent/codemi");
    let mut none = ptr::null_mut();
    assert_eq!(unsafe { codemi_oracle_load(missing.as_ptr(), CodemiAccess::Gray, &mut none) }, CodemiStatus::Io);
}

#[test]
fn unimodal_score_matches_the_library() {
    let target = tiny_target();
    let nonmembers: Vec<CodeSnippet> = (0..8)
        .map(|i| {
            CodeSnippet::new(
                format!("n{i}"),
                format!("def g{i}(a): return a + {i}"),
                None,
                Language::Python,
                "t",
                MembershipLabel::Nonmember,
            )
            .unwrap()
        })
        .collect();
    let training = PretrainConfig { steps: 3, batch_size: 4, warmup_steps: 1, ..Default::default() };
    let cfg = CalibrationConfig::new(CalibrationMode::Unimodal, tiny_config(0), training);
    let calib = train_calibration(&nonmembers, &target.tokenizer, "test", &cfg).unwrap();

    let tdir = tempfile::tempdir().unwrap();
    let cdir = tempfile::tempdir().unwrap();
    target.save(tdir.path()).unwrap();
    calib.save(cdir.path()).unwrap();
    let (tp, cp) = (c(tdir.path().to_str().unwrap()), c(cdir.path().to_str().unwrap()));
    let mut oracle = ptr::null_mut();
    let mut cal = ptr::null_mut();
    assert_eq!(unsafe { codemi_oracle_load(tp.as_ptr(), CodemiAccess::Black, &mut oracle) }, CodemiStatus::Ok);
    assert_eq!(unsafe { codemi_calibration_load(cp.as_ptr(), &mut cal) }, CodemiStatus::Ok);

    let code = "def Probe(x): return X";
    let mut v = 0.0;
    let cc = c(code);
    assert_eq!(unsafe { codemi_unimodal_score(oracle, cal, cc.as_ptr(), &mut v) }, CodemiStatus::Ok);
    let probe = CodeSnippet::new("p", code, None, Language::Python, "t", MembershipLabel::Nonmember).unwrap();
    let expected = unimodal_score(&target.into_handle(AccessLevel::Black), &calib, &probe).unwrap().value;
    assert_eq!(v, expected);

    let nl = c("Return x.");
    assert_eq!(unsafe { codemi_bimodal_score(oracle, cal, cc.as_ptr(), nl.as_ptr(), &mut v) }, CodemiStatus::Mode);
    unsafe {
        codemi_calibration_free(cal);
        codemi_oracle_free(oracle);
    }
}

#[test]
fn version_is_static() {
    let v = unsafe { CStr::from_ptr(codemi_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
