//! C ABI surface over the fhrformer library: load a trained checkpoint
//! behind an opaque handle, then inpaint or forecast over raw f64
//! buffers. All signal values cross the boundary in bpm.
//!
//! Every fallible call returns a status code; `fhrformer_last_error`
//! retrieves a message for the most recent failure on this thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use fhrformer::model::{load_checkpoint, ModelWeights};
use fhrformer::signalio::{FHRSeries, MAX_BPM};
use fhrformer::tasks::{forecast, inpaint, ForecastConfig};
use fhrformer::Error;

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum FhrformerStatus {
    Ok = 0,
    /// Null pointer, zero length, or an otherwise unusable argument.
    InvalidArgument = 1,
    /// The input data violates a contract (length, range, format).
    DataError = 2,
    /// A numeric failure (non-finite values) inside the model.
    NumericError = 3,
}

/// Opaque handle to a loaded model.
pub struct FhrformerModel {
    weights: ModelWeights,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(sanitized).unwrap());
}

fn status_for(err: &Error) -> FhrformerStatus {
    match err {
        Error::Numeric(_) | Error::Diff(_) => FhrformerStatus::NumericError,
        _ => FhrformerStatus::DataError,
    }
}

/// Copy the last error message on this thread into `buf` (NUL
/// terminated, truncated to `cap` bytes). Returns the full message
/// length in bytes, excluding the terminator. `buf` may be null to
/// query the length.
#[no_mangle]
pub extern "C" fn fhrformer_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            unsafe {
                std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
                *buf.add(n) = 0;
            }
        }
        bytes.len()
    })
}

/// Load a checkpoint from a NUL-terminated path. Returns null on
/// failure (see `fhrformer_last_error`). Free with
/// `fhrformer_model_free`.
///
/// # Safety
/// `path` must point to a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fhrformer_model_load(path: *const c_char) -> *mut FhrformerModel {
    if path.is_null() {
        set_error("path is null");
        return std::ptr::null_mut();
    }
    let path = match CStr::from_ptr(path).to_str() {
        Ok(s) => s,
        Err(_) => {
            set_error("path is not valid UTF-8");
            return std::ptr::null_mut();
        }
    };
    match load_checkpoint(std::path::Path::new(path)) {
        Ok(weights) => Box::into_raw(Box::new(FhrformerModel { weights })),
        Err(e) => {
            set_error(&e.to_string());
            std::ptr::null_mut()
        }
    }
}

/// Release a model handle. Null is a no-op.
///
/// # Safety
/// `model` must have come from `fhrformer_model_load` and not have been
/// freed already.
#[no_mangle]
pub unsafe extern "C" fn fhrformer_model_free(model: *mut FhrformerModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Expected input length in samples for the loaded model.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fhrformer_model_input_len(model: *const FhrformerModel) -> usize {
    if model.is_null() {
        return 0;
    }
    (*model).weights.config.input_len
}

/// Patch size of the loaded model; buffer lengths passed to the task
/// calls must be multiples of it.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fhrformer_model_patch_size(model: *const FhrformerModel) -> usize {
    if model.is_null() {
        return 0;
    }
    (*model).weights.config.patch_size
}

unsafe fn slice_arg<'a, T>(ptr: *const T, len: usize) -> Option<&'a [T]> {
    if ptr.is_null() || len == 0 {
        None
    } else {
        Some(std::slice::from_raw_parts(ptr, len))
    }
}

/// Fill unobserved samples of a recording in place. `values_bpm` and
/// `observed` (nonzero = observed) have `len` samples; the completed
/// signal is written to `out_bpm` (also `len` samples). Observed
/// samples are copied through unchanged.
///
/// # Safety
/// All pointers must be valid for `len` elements; `out_bpm` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn fhrformer_inpaint(
    model: *const FhrformerModel,
    values_bpm: *const f64,
    observed: *const u8,
    len: usize,
    out_bpm: *mut f64,
) -> FhrformerStatus {
    if model.is_null() || out_bpm.is_null() {
        set_error("null model or output buffer");
        return FhrformerStatus::InvalidArgument;
    }
    let (values, obs) = match (slice_arg(values_bpm, len), slice_arg(observed, len)) {
        (Some(v), Some(o)) => (v, o),
        _ => {
            set_error("null or empty input buffer");
            return FhrformerStatus::InvalidArgument;
        }
    };
    let weights = &(*model).weights;
    let series = FHRSeries {
        episode_id: "ffi".into(),
        values: values.iter().map(|v| (v / MAX_BPM).clamp(0.0, 1.0)).collect(),
        observed_mask: obs.iter().map(|&o| o != 0).collect(),
    };
    let result = catch_unwind(AssertUnwindSafe(|| inpaint(weights, &series)));
    match result {
        Ok(Ok(r)) => {
            for (i, v) in r.values.iter().enumerate() {
                *out_bpm.add(i) = v * MAX_BPM;
            }
            FhrformerStatus::Ok
        }
        Ok(Err(e)) => {
            set_error(&e.to_string());
            status_for(&e)
        }
        Err(_) => {
            set_error("internal panic during inpainting");
            FhrformerStatus::NumericError
        }
    }
}

/// Recursive forecast: `history_bpm` holds `history_len` samples with
/// the most recent last; `horizon` predictions are written to
/// `out_bpm`. `context_len` and `step_len` must be multiples of the
/// model patch size and `history_len >= context_len`.
///
/// # Safety
/// `history_bpm` must be valid for `history_len` elements and `out_bpm`
/// writable for `horizon` elements.
#[no_mangle]
pub unsafe extern "C" fn fhrformer_forecast(
    model: *const FhrformerModel,
    history_bpm: *const f64,
    history_len: usize,
    context_len: usize,
    step_len: usize,
    horizon: usize,
    out_bpm: *mut f64,
) -> FhrformerStatus {
    if model.is_null() || out_bpm.is_null() {
        set_error("null model or output buffer");
        return FhrformerStatus::InvalidArgument;
    }
    let history = match slice_arg(history_bpm, history_len) {
        Some(h) => h,
        None => {
            set_error("null or empty history buffer");
            return FhrformerStatus::InvalidArgument;
        }
    };
    if horizon == 0 {
        set_error("horizon must be positive");
        return FhrformerStatus::InvalidArgument;
    }
    let weights = &(*model).weights;
    let normalized: Vec<f64> = history.iter().map(|v| (v / MAX_BPM).clamp(0.0, 1.0)).collect();
    let cfg = ForecastConfig {
        context_len,
        step_len,
        horizon,
    };
    let result = catch_unwind(AssertUnwindSafe(|| forecast(weights, &normalized, &cfg)));
    match result {
        Ok(Ok(r)) => {
            for (i, v) in r.predictions.iter().enumerate() {
                *out_bpm.add(i) = v * MAX_BPM;
            }
            FhrformerStatus::Ok
        }
        Ok(Err(e)) => {
            set_error(&e.to_string());
            status_for(&e)
        }
        Err(_) => {
            set_error("internal panic during forecasting");
            FhrformerStatus::NumericError
        }
    }
}
