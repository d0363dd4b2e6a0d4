//! C interface to a trained detector.
//!
//! A model handle owns a checkpoint and, optionally, a calibrated policy.
//! Every function returns an [`M3vStatus`]; on failure the message is kept
//! per thread and read with [`m3v_last_error_message`]. Panics never cross
//! the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use m3v_core::data::{parse_pair, Label, UtterancePair};
use m3v_core::model::{M3VParams, ViewScores};
use m3v_core::policy::{Branch, Decision, PolicyArtifact};
use m3v_core::training::load_checkpoint;
use m3v_core::M3vError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum M3vStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Integrity = 5,
    InvalidInput = 6,
    NoPolicy = 7,
    Internal = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum M3vBranch {
    Text = 0,
    Audio = 1,
    Multi = 2,
    Fusion = 3,
}

/// The four per-utterance scores, each in `[0, 1]`.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct M3vScores {
    pub align: f64,
    pub audio: f64,
    pub text: f64,
    pub multi: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct M3vDecision {
    /// 1 for device-directed, 0 otherwise.
    pub directed: i32,
    pub branch: M3vBranch,
    /// SVM margin for the fusion policy; NaN for the branch policy.
    pub margin: f64,
}

/// Opaque model handle.
pub struct M3vModel {
    params: M3VParams,
    policy: Option<PolicyArtifact>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &M3vError) -> M3vStatus {
    match e {
        M3vError::Io { .. } => M3vStatus::Io,
        M3vError::Parse { .. } | M3vError::Serde(_) => M3vStatus::Parse,
        M3vError::Integrity(_) | M3vError::UnsupportedVersion { .. } => M3vStatus::Integrity,
        M3vError::State(_) | M3vError::NonFiniteLoss { .. } => M3vStatus::Internal,
        _ => M3vStatus::InvalidInput,
    }
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), (M3vStatus, String)>) -> M3vStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => M3vStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside m3v".into());
            M3vStatus::Panic
        }
    }
}

fn core_err(e: M3vError) -> (M3vStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (M3vStatus, String) {
    (M3vStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, (M3vStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (M3vStatus::InvalidUtf8, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn rows(data: *const f64, n: usize, dim: usize, what: &str) -> Result<Vec<Vec<f64>>, (M3vStatus, String)> {
    if data.is_null() {
        return Err(null(what));
    }
    let len = n
        .checked_mul(dim)
        .ok_or_else(|| (M3vStatus::InvalidInput, format!("{what} size overflows")))?;
    let flat = std::slice::from_raw_parts(data, len);
    Ok(flat.chunks(dim.max(1)).take(n).map(<[f64]>::to_vec).collect())
}

fn to_c_scores(s: &ViewScores) -> M3vScores {
    M3vScores {
        align: s.v_align,
        audio: s.v_audio,
        text: s.v_text,
        multi: s.v_multi,
    }
}

fn to_c_decision(d: &Decision) -> M3vDecision {
    M3vDecision {
        directed: d.verdict as i32,
        branch: match d.branch {
            Branch::Text => M3vBranch::Text,
            Branch::Audio => M3vBranch::Audio,
            Branch::Multi => M3vBranch::Multi,
            Branch::Fusion => M3vBranch::Fusion,
        },
        margin: d.margin.unwrap_or(f64::NAN),
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn m3v_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn m3v_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Loads a checkpoint and, when `policy_path` is not null, a policy artifact.
///
/// # Safety
/// Paths must be null or NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn m3v_model_load(
    checkpoint_path: *const c_char,
    policy_path: *const c_char,
    out: *mut *mut M3vModel,
) -> M3vStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let ckpt = load_checkpoint(path_arg(checkpoint_path, "checkpoint_path")?).map_err(core_err)?;
        let policy = if policy_path.is_null() {
            None
        } else {
            Some(PolicyArtifact::load(path_arg(policy_path, "policy_path")?).map_err(core_err)?)
        };
        *out = Box::into_raw(Box::new(M3vModel {
            params: ckpt.params,
            policy,
        }));
        Ok(())
    })
}

/// Releases a handle from [`m3v_model_load`]. Null is ignored.
///
/// # Safety
/// `model` must be null or a live handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn m3v_model_free(model: *mut M3vModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Scores one utterance given as row-major feature matrices.
///
/// # Safety
/// `audio` must hold `n_frames * audio_dim` values and `text` must hold
/// `n_tokens * text_dim`; `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn m3v_model_score(
    model: *const M3vModel,
    audio: *const f64,
    n_frames: usize,
    audio_dim: usize,
    text: *const f64,
    n_tokens: usize,
    text_dim: usize,
    out: *mut M3vScores,
) -> M3vStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let pair = UtterancePair {
            id: String::new(),
            audio_frames: rows(audio, n_frames, audio_dim, "audio")?,
            text_tokens: rows(text, n_tokens, text_dim, "text")?,
            label: Label::NonDeviceDirected,
            misaligned: false,
            transcript: None,
        };
        pair.validate().map_err(|m| (M3vStatus::InvalidInput, m))?;
        *out = to_c_scores(&model.params.score(&pair).map_err(core_err)?);
        Ok(())
    })
}

/// Scores one utterance given as a JSONL record.
///
/// # Safety
/// `json` must be a NUL-terminated string; `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn m3v_model_score_json(
    model: *const M3vModel,
    json: *const c_char,
    out: *mut M3vScores,
) -> M3vStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        if json.is_null() {
            return Err(null("json"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|_| (M3vStatus::InvalidUtf8, "json is not UTF-8".to_string()))?;
        let pair = parse_pair(text, 1).map_err(core_err)?;
        *out = to_c_scores(&model.params.score(&pair).map_err(core_err)?);
        Ok(())
    })
}

/// Applies both policies of the loaded artifact. Either output may be null.
///
/// # Safety
/// `model` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn m3v_model_decide(
    model: *const M3vModel,
    scores: *const M3vScores,
    out_policy1: *mut M3vDecision,
    out_policy2: *mut M3vDecision,
) -> M3vStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let s = scores.as_ref().ok_or_else(|| null("scores"))?;
        let policy = model
            .policy
            .as_ref()
            .ok_or_else(|| (M3vStatus::NoPolicy, "model was loaded without a policy".to_string()))?;
        let (d1, d2) = policy.decide(&ViewScores::from_array([s.align, s.audio, s.text, s.multi]));
        if let Some(o) = out_policy1.as_mut() {
            *o = to_c_decision(&d1);
        }
        if let Some(o) = out_policy2.as_mut() {
            *o = to_c_decision(&d2);
        }
        Ok(())
    })
}

/// Equal error rate of `n` scores against 0/1 labels (nonzero = positive).
///
/// # Safety
/// `scores` and `labels` must each hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn m3v_eer(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> M3vStatus {
    guard(|| {
        if scores.is_null() || labels.is_null() {
            return Err(null("scores or labels"));
        }
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let s = std::slice::from_raw_parts(scores, n);
        let l: Vec<bool> = std::slice::from_raw_parts(labels, n).iter().map(|&b| b != 0).collect();
        *out = m3v_core::metrics::eer(s, &l).map_err(core_err)?;
        Ok(())
    })
}
