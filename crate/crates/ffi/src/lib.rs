//! C interface to the edit compiler, the metrics and trained models.
//!
//! Every function returns a [`PieStatus`]. On failure the message is kept
//! per thread and read with [`pie_last_error`]. Strings handed out through
//! `out` pointers are owned by the caller and released with
//! [`pie_string_free`]; models with [`pie_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use pie_core::corpuskit::word_accuracy;
use pie_core::editspace::{
    apply_edits, modified_levenshtein_diff, seq2edits, DiffConfig, EditSequence, InsertDictionary, TokenMode,
    TokenSequence, TransformTable,
};
use pie_core::error::PieError;
use pie_core::inference::{refine_iteratively, InferenceConfig};
use pie_core::piemodel::PieModel;
use pie_core::training::load_checkpoint;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PieStatus {
    Ok = 0,
    /// A null pointer, bad UTF-8 or an out-of-range argument.
    InvalidArgument = 1,
    /// Input data or a file the library could not use.
    DataError = 2,
    /// Non-finite values during a numeric computation.
    Divergence = 3,
    /// A bug inside the library; the message has details.
    Internal = 4,
}

/// Token granularity: 0 for words, 1 for characters.
pub type PieMode = i32;

pub const PIE_MODE_WORD: PieMode = 0;
pub const PIE_MODE_CHAR: PieMode = 1;

/// A trained model loaded from a checkpoint.
pub struct PieModelHandle {
    model: PieModel<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Fail(PieStatus, String);

impl From<PieError> for Fail {
    fn from(e: PieError) -> Self {
        let status = match e.exit_code() {
            1 => PieStatus::InvalidArgument,
            3 => PieStatus::Divergence,
            _ => PieStatus::DataError,
        };
        Fail(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(PieStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PieStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            PieStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            PieStatus::Internal
        }
    }
}

unsafe fn arg_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(invalid(format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not UTF-8")))
}

fn mode_of(m: PieMode) -> Result<TokenMode, Fail> {
    match m {
        PIE_MODE_WORD => Ok(TokenMode::Word),
        PIE_MODE_CHAR => Ok(TokenMode::Char),
        other => Err(invalid(format!("unknown mode {other}"))),
    }
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Fail> {
    if out.is_null() {
        return Err(invalid("output pointer is null"));
    }
    let c = CString::new(s).map_err(|_| invalid("result contains a NUL byte"))?;
    *out = c.into_raw();
    Ok(())
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn pie_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn pie_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn pie_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Minimum alignment cost between two lines.
///
/// # Safety
/// `src` and `tgt` must be NUL-terminated; `out_cost` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pie_diff_cost(
    src: *const c_char,
    tgt: *const c_char,
    mode: PieMode,
    out_cost: *mut f64,
) -> PieStatus {
    guard(|| {
        let mode = mode_of(mode)?;
        let x = TokenSequence::from_line(arg_str(src, "src")?, mode)?;
        let y = TokenSequence::from_line(arg_str(tgt, "tgt")?, mode)?;
        if out_cost.is_null() {
            return Err(invalid("output pointer is null"));
        }
        *out_cost = modified_levenshtein_diff(&x, &y, &DiffConfig::default())?.cost;
        Ok(())
    })
}

/// Compiles a pair into edits, written as one JSON edit record.
/// `inserts_tsv` is the text of an insert dictionary file.
///
/// # Safety
/// All strings must be NUL-terminated; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pie_seq2edits(
    src: *const c_char,
    tgt: *const c_char,
    inserts_tsv: *const c_char,
    mode: PieMode,
    out_json: *mut *mut c_char,
) -> PieStatus {
    guard(|| {
        let mode = mode_of(mode)?;
        let x = TokenSequence::from_line(arg_str(src, "src")?, mode)?;
        let y = TokenSequence::from_line(arg_str(tgt, "tgt")?, mode)?;
        let dict = InsertDictionary::from_tsv(arg_str(inserts_tsv, "inserts_tsv")?, mode)?;
        let e = seq2edits(&x, &y, &dict, &TransformTable::default_table(), &DiffConfig::default())?;
        put_string(out_json, e.to_json_line())
    })
}

/// Applies a JSON edit record to a line and writes the result.
///
/// # Safety
/// All strings must be NUL-terminated; `out_line` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pie_apply_edits(
    src: *const c_char,
    edits_json: *const c_char,
    mode: PieMode,
    out_line: *mut *mut c_char,
) -> PieStatus {
    guard(|| {
        let x = TokenSequence::from_line(arg_str(src, "src")?, mode_of(mode)?)?;
        let e = EditSequence::from_json_line(arg_str(edits_json, "edits_json")?)?;
        let y = apply_edits(&x, &e, &TransformTable::default_table())?;
        put_string(out_line, y.detokenize())
    })
}

/// Fraction of `n` predictions equal to their references.
///
/// # Safety
/// `pred` and `gold` must each point to `n` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn pie_word_accuracy(
    pred: *const *const c_char,
    gold: *const *const c_char,
    n: usize,
    out_accuracy: *mut f64,
) -> PieStatus {
    guard(|| {
        if pred.is_null() || gold.is_null() || out_accuracy.is_null() {
            return Err(invalid("null pointer"));
        }
        let read = |arr: *const *const c_char, what: &str| -> Result<Vec<&str>, Fail> {
            (0..n).map(|i| arg_str(*arr.add(i), what)).collect()
        };
        *out_accuracy = word_accuracy(&read(pred, "pred")?, &read(gold, "gold")?)?;
        Ok(())
    })
}

/// Loads a checkpoint written by the trainer.
///
/// # Safety
/// `path` must be NUL-terminated; `out_model` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pie_model_load(path: *const c_char, out_model: *mut *mut PieModelHandle) -> PieStatus {
    guard(|| {
        if out_model.is_null() {
            return Err(invalid("output pointer is null"));
        }
        *out_model = ptr::null_mut();
        let ck = load_checkpoint::<f32>(Path::new(arg_str(path, "path")?))?;
        *out_model = Box::into_raw(Box::new(PieModelHandle { model: ck.model }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`pie_model_load`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn pie_model_free(model: *mut PieModelHandle) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Corrects one line with up to `max_iterations` refinement rounds.
///
/// # Safety
/// `model` must be a live handle, `line` NUL-terminated and `out_line` writable.
#[no_mangle]
pub unsafe extern "C" fn pie_model_predict(
    model: *const PieModelHandle,
    line: *const c_char,
    max_iterations: u32,
    out_line: *mut *mut c_char,
) -> PieStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| invalid("model is null"))?;
        let mode = m.model.config().token_mode;
        let x = TokenSequence::from_line(arg_str(line, "line")?, mode)?;
        let cfg = InferenceConfig {
            max_iterations: max_iterations as usize,
            batch_size: 1,
            record_rounds: false,
        };
        let (y, _) = refine_iteratively(&m.model, &x, &cfg)?;
        put_string(out_line, y.detokenize())
    })
}

/// Sentences encoded by this model so far.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn pie_model_forward_passes(model: *const PieModelHandle) -> u64 {
    model.as_ref().map_or(0, |m| m.model.forward_passes())
}
