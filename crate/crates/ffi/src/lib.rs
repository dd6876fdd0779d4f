//! C ABI over the codemi toolkit.
//!
//! Every fallible function returns a [`CodemiStatus`]; on failure the message
//! is available from [`codemi_last_error`] on the same thread. Objects are
//! opaque handles created by `*_load` functions and released with the
//! matching `*_free`. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use codemi::blackbox::{self, CalibrationModel};
use codemi::corpus::{CodeSnippet, Language, MembershipLabel, Setting};
use codemi::encoder::{AccessLevel, OracleHandle, TargetEncoder};
use codemi::eval::{compute_auc, select_threshold, ScoredExample, ThresholdParams};
use codemi::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CodemiStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Config = 5,
    Access = 6,
    Input = 7,
    Metric = 8,
    Mode = 9,
    Checkpoint = 10,
    Other = 11,
    Panic = 12,
}

/// Observation level of an oracle handle.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CodemiAccess {
    White = 0,
    Gray = 1,
    Black = 2,
}

/// Attack setting, which decides how the threshold is picked.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CodemiSetting {
    Whitebox = 0,
    Graybox = 1,
    Blackbox = 2,
}

/// Opaque encoder oracle.
pub struct CodemiOracle {
    inner: OracleHandle,
}

/// Opaque calibration model.
pub struct CodemiCalibration {
    inner: CalibrationModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> CodemiStatus {
    match e.root() {
        Error::Io(_) | Error::File { .. } | Error::Parse { .. } | Error::EmptyCorpus(_) => CodemiStatus::Io,
        Error::Config(_) => CodemiStatus::Config,
        Error::Access(_) => CodemiStatus::Access,
        Error::Input(_) => CodemiStatus::Input,
        Error::Metric(_) => CodemiStatus::Metric,
        Error::Mode(_) => CodemiStatus::Mode,
        Error::Checkpoint(_) => CodemiStatus::Checkpoint,
        _ => CodemiStatus::Other,
    }
}

/// Failure inside a guarded call.
struct Fail(CodemiStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CodemiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CodemiStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            CodemiStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(CodemiStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(CodemiStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

fn access(level: CodemiAccess) -> AccessLevel {
    match level {
        CodemiAccess::White => AccessLevel::White,
        CodemiAccess::Gray => AccessLevel::Gray,
        CodemiAccess::Black => AccessLevel::Black,
    }
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn codemi_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn codemi_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from a codemi function documented to return an owned string.
#[no_mangle]
pub unsafe extern "C" fn codemi_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a target checkpoint directory as an oracle at `level`.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn codemi_oracle_load(
    dir: *const c_char,
    level: CodemiAccess,
    out: *mut *mut CodemiOracle,
) -> CodemiStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let target = TargetEncoder::load(Path::new(str_arg(dir, "dir")?))?;
        *out = Box::into_raw(Box::new(CodemiOracle { inner: target.into_handle(access(level)) }));
        Ok(())
    })
}

/// A new handle on the same encoder at a lower or equal access level.
///
/// # Safety
/// `oracle` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn codemi_oracle_restrict(
    oracle: *const CodemiOracle,
    level: CodemiAccess,
    out: *mut *mut CodemiOracle,
) -> CodemiStatus {
    guard(|| {
        let o = oracle.as_ref().ok_or_else(|| null("oracle"))?;
        let out = out_arg(out, "out")?;
        let inner = o.inner.restrict(access(level))?;
        *out = Box::into_raw(Box::new(CodemiOracle { inner }));
        Ok(())
    })
}

/// # Safety
/// `oracle` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn codemi_oracle_free(oracle: *mut CodemiOracle) {
    if !oracle.is_null() {
        drop(Box::from_raw(oracle));
    }
}

/// Width of the oracle's output vectors, or 0 for a null handle.
///
/// # Safety
/// `oracle` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn codemi_oracle_hidden_dim(oracle: *const CodemiOracle) -> usize {
    oracle.as_ref().map_or(0, |o| o.inner.hidden_dim())
}

/// Number of encoder layers, or 0 for a null handle.
///
/// # Safety
/// `oracle` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn codemi_oracle_num_layers(oracle: *const CodemiOracle) -> usize {
    oracle.as_ref().map_or(0, |o| o.inner.num_layers())
}

/// Final-layer [CLS] vector of `text`; `out` must hold `len` floats and `len`
/// must equal the hidden width.
///
/// # Safety
/// `oracle` must be a live handle, `text` NUL-terminated, `out` writable for `len` floats.
#[no_mangle]
pub unsafe extern "C" fn codemi_oracle_cls(
    oracle: *const CodemiOracle,
    text: *const c_char,
    out: *mut f32,
    len: usize,
) -> CodemiStatus {
    guard(|| {
        let o = oracle.as_ref().ok_or_else(|| null("oracle"))?;
        let text = str_arg(text, "text")?;
        if len != o.inner.hidden_dim() {
            return Err(Fail(
                CodemiStatus::InvalidArgument,
                format!("buffer holds {len} floats, the oracle emits {}", o.inner.hidden_dim()),
            ));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let v = blackbox::cls_vector(&o.inner, text)?;
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(&v);
        Ok(())
    })
}

/// Loads a calibration model directory.
///
/// # Safety
/// `dir` must be NUL-terminated and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn codemi_calibration_load(dir: *const c_char, out: *mut *mut CodemiCalibration) -> CodemiStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let inner = CalibrationModel::load(Path::new(str_arg(dir, "dir")?))?;
        *out = Box::into_raw(Box::new(CodemiCalibration { inner }));
        Ok(())
    })
}

/// # Safety
/// `calib` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn codemi_calibration_free(calib: *mut CodemiCalibration) {
    if !calib.is_null() {
        drop(Box::from_raw(calib));
    }
}

fn snippet(code: &str, nl: Option<&str>) -> Result<CodeSnippet, Fail> {
    Ok(CodeSnippet::new("ffi", code, nl.map(str::to_owned), Language::Python, "ffi", MembershipLabel::Nonmember)?)
}

/// Raw unimodal score of `code` (larger is more member-like).
///
/// # Safety
/// Handles must be live, `code` NUL-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn codemi_unimodal_score(
    oracle: *const CodemiOracle,
    calib: *const CodemiCalibration,
    code: *const c_char,
    out: *mut f64,
) -> CodemiStatus {
    guard(|| {
        let o = oracle.as_ref().ok_or_else(|| null("oracle"))?;
        let c = calib.as_ref().ok_or_else(|| null("calibration"))?;
        let out = out_arg(out, "out")?;
        let s = snippet(str_arg(code, "code")?, None)?;
        *out = blackbox::unimodal_score(&o.inner, &c.inner, &s)?.value;
        Ok(())
    })
}

/// Raw bimodal score of a code/description pair (smaller is more member-like).
///
/// # Safety
/// Handles must be live, `code` and `nl` NUL-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn codemi_bimodal_score(
    oracle: *const CodemiOracle,
    calib: *const CodemiCalibration,
    code: *const c_char,
    nl: *const c_char,
    out: *mut f64,
) -> CodemiStatus {
    guard(|| {
        let o = oracle.as_ref().ok_or_else(|| null("oracle"))?;
        let c = calib.as_ref().ok_or_else(|| null("calibration"))?;
        let out = out_arg(out, "out")?;
        let s = snippet(str_arg(code, "code")?, Some(str_arg(nl, "nl")?))?;
        *out = blackbox::bimodal_score(&o.inner, &c.inner, &s)?.value;
        Ok(())
    })
}

unsafe fn vectors<'a>(ptrs: [*const f32; 4], dim: usize) -> Result<[&'a [f32]; 4], Fail> {
    let mut out: [&[f32]; 4] = [&[]; 4];
    for (o, p) in out.iter_mut().zip(ptrs) {
        *o = slice_arg(p, dim, "vector")?;
    }
    Ok(out)
}

/// Unimodal score from four precomputed `dim`-wide vectors.
///
/// # Safety
/// Every vector pointer must be readable for `dim` floats; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn codemi_s_uni(
    h_lower: *const f32,
    h_upper: *const f32,
    c_lower: *const f32,
    c_upper: *const f32,
    dim: usize,
    out: *mut f64,
) -> CodemiStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let [a, b, c, d] = vectors([h_lower, h_upper, c_lower, c_upper], dim)?;
        *out = blackbox::s_uni(a, b, c, d);
        Ok(())
    })
}

/// Bimodal score from four precomputed `dim`-wide vectors.
///
/// # Safety
/// Every vector pointer must be readable for `dim` floats; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn codemi_s_bi(
    h_code: *const f32,
    r_nl: *const f32,
    c_code: *const f32,
    c_nl: *const f32,
    dim: usize,
    out: *mut f64,
) -> CodemiStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let [a, b, c, d] = vectors([h_code, r_nl, c_code, c_nl], dim)?;
        *out = blackbox::s_bi(a, b, c, d);
        Ok(())
    })
}

unsafe fn examples(scores: *const f64, labels: *const u8, n: usize) -> Result<Vec<ScoredExample>, Fail> {
    let scores = slice_arg(scores, n, "scores")?;
    let labels = slice_arg(labels, n, "labels")?;
    scores
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (&s, &l))| match l {
            0 | 1 => Ok(ScoredExample::new(format!("{i:012}"), s, MembershipLabel::from_bool(l == 1))),
            _ => Err(Fail(CodemiStatus::InvalidArgument, format!("label {i} is {l}, expected 0 or 1"))),
        })
        .collect()
}

/// Ranking AUC of `n` scores with 0/1 labels (1 = member); ties count half.
///
/// # Safety
/// `scores` and `labels` must be readable for `n` elements; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn codemi_auc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> CodemiStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = compute_auc(&examples(scores, labels, n)?)?;
        Ok(())
    })
}

/// Validation-rank threshold: rank `ceil(k·n)` among member scores for the
/// white and gray settings, `ceil(g·n)` among nonmember scores for black box.
/// Ties among scores are broken by position.
///
/// # Safety
/// `scores` and `labels` must be readable for `n` elements; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn codemi_select_threshold(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    setting: CodemiSetting,
    k: f64,
    g: f64,
    out: *mut f64,
) -> CodemiStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let setting = match setting {
            CodemiSetting::Whitebox => Setting::Whitebox,
            CodemiSetting::Graybox => Setting::Graybox,
            CodemiSetting::Blackbox => Setting::Blackbox,
        };
        *out = select_threshold(&examples(scores, labels, n)?, setting, ThresholdParams { k, g })?;
        Ok(())
    })
}

/// JSON summary of an oracle (level, depth, width, vocabulary). Free the
/// result with [`codemi_string_free`]; null on failure.
///
/// # Safety
/// `oracle` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn codemi_oracle_describe(oracle: *const CodemiOracle) -> *mut c_char {
    let mut result = ptr::null_mut();
    let status = guard(|| {
        let o = oracle.as_ref().ok_or_else(|| null("oracle"))?;
        let json = format!(
            "{{\"level\":\"{}\",\"num_layers\":{},\"hidden_dim\":{},\"vocab\":{}}}",
            o.inner.level(),
            o.inner.num_layers(),
            o.inner.hidden_dim(),
            o.inner.tokenizer().vocab_len()
        );
        result = CString::new(json).map_err(|e| Fail(CodemiStatus::Other, e.to_string()))?.into_raw();
        Ok(())
    });
    if status == CodemiStatus::Ok {
        result
    } else {
        ptr::null_mut()
    }
}
