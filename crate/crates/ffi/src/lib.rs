//! C ABI for the toolkit: opaque handles, integer error codes, and a
//! thread-local last-error message. The header is generated into
//! `include/sstune.h` at build time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::path::Path;
use std::ptr;

use sstune::acoustic::{self, AcousticModel};
use sstune::eval;
use sstune::lm::{self, NGramModel};

/// Error codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SstuneStatus {
    SstuneOk = 0,
    SstuneNullArgument = 1,
    SstuneInvalidUtf8 = 2,
    SstuneIoOrFormat = 3,
    SstuneInvalidInput = 4,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

/// Copy the last error message for this thread into `buf` (NUL-terminated,
/// truncated to `cap` bytes). Returns the full message length in bytes,
/// or 0 if there is no pending error. Safe to call with a null buffer to
/// query the length.
#[no_mangle]
pub extern "C" fn sstune_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            unsafe {
                ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
                *buf.add(n) = 0;
            }
        }
        msg.len()
    })
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, SstuneStatus> {
    if p.is_null() {
        set_error("null path argument");
        return Err(SstuneStatus::SstuneNullArgument);
    }
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => {
            set_error("path is not valid UTF-8");
            Err(SstuneStatus::SstuneInvalidUtf8)
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, SstuneStatus> {
    if p.is_null() {
        set_error("null string argument");
        return Err(SstuneStatus::SstuneNullArgument);
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error("string is not valid UTF-8");
        SstuneStatus::SstuneInvalidUtf8
    })
}

/// Opaque acoustic model handle.
pub struct SstuneModel(AcousticModel);

/// Opaque backoff language model handle.
pub struct SstuneLm(NGramModel);

/// Load an acoustic model from its binary file. Returns null on failure;
/// consult `sstune_last_error`.
///
/// # Safety
/// `path` must be a valid NUL-terminated string or null.
#[no_mangle]
pub unsafe extern "C" fn sstune_model_load(path: *const c_char) -> *mut SstuneModel {
    let Ok(path) = path_arg(path) else {
        return ptr::null_mut();
    };
    match acoustic::load_model(path) {
        Ok(m) => Box::into_raw(Box::new(SstuneModel(m))),
        Err(e) => {
            set_error(e.to_string());
            ptr::null_mut()
        }
    }
}

/// Release a model handle. Null is a no-op.
///
/// # Safety
/// `model` must have come from `sstune_model_load` and not been freed.
#[no_mangle]
pub unsafe extern "C" fn sstune_model_free(model: *mut SstuneModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of output labels, or -1 if the handle is null.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn sstune_model_num_labels(model: *const SstuneModel) -> i32 {
    match model.as_ref() {
        Some(m) => m.0.n_labels() as i32,
        None => {
            set_error("null model handle");
            -1
        }
    }
}

/// Load a trigram model from an ARPA file. Returns null on failure.
///
/// # Safety
/// `path` must be a valid NUL-terminated string or null.
#[no_mangle]
pub unsafe extern "C" fn sstune_lm_load_arpa(path: *const c_char) -> *mut SstuneLm {
    let Ok(path) = path_arg(path) else {
        return ptr::null_mut();
    };
    match lm::read_arpa(path) {
        Ok(m) => Box::into_raw(Box::new(SstuneLm(m))),
        Err(e) => {
            set_error(e.to_string());
            ptr::null_mut()
        }
    }
}

/// Release a language model handle. Null is a no-op.
///
/// # Safety
/// `model` must have come from `sstune_lm_load_arpa` and not been freed.
#[no_mangle]
pub unsafe extern "C" fn sstune_lm_free(model: *mut SstuneLm) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Perplexity of whitespace-tokenized text (sentences separated by
/// newlines) under a loaded language model.
///
/// # Safety
/// `model` must be a live handle; `text` a NUL-terminated string; `out`
/// a writable double.
#[no_mangle]
pub unsafe extern "C" fn sstune_lm_perplexity(
    model: *const SstuneLm,
    text: *const c_char,
    out: *mut f64,
) -> SstuneStatus {
    let Some(model) = model.as_ref() else {
        set_error("null model handle");
        return SstuneStatus::SstuneNullArgument;
    };
    if out.is_null() {
        set_error("null output pointer");
        return SstuneStatus::SstuneNullArgument;
    }
    let text = match str_arg(text) {
        Ok(t) => t,
        Err(code) => return code,
    };
    let sentences: Vec<Vec<String>> = text
        .lines()
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .filter(|s: &Vec<String>| !s.is_empty())
        .collect();
    match lm::perplexity(&model.0, &sentences) {
        Ok(ppl) => {
            *out = ppl;
            SstuneStatus::SstuneOk
        }
        Err(e) => {
            set_error(e.to_string());
            SstuneStatus::SstuneInvalidInput
        }
    }
}

/// Word error rate between two whitespace-tokenized strings, as a
/// percentage of the reference length.
///
/// # Safety
/// `reference` and `hypothesis` must be NUL-terminated strings; `out` a
/// writable double.
#[no_mangle]
pub unsafe extern "C" fn sstune_wer(
    reference: *const c_char,
    hypothesis: *const c_char,
    out: *mut f64,
) -> SstuneStatus {
    if out.is_null() {
        set_error("null output pointer");
        return SstuneStatus::SstuneNullArgument;
    }
    let reference = match str_arg(reference) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let hypothesis = match str_arg(hypothesis) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let r: Vec<&str> = reference.split_whitespace().collect();
    let h: Vec<&str> = hypothesis.split_whitespace().collect();
    let (result, _) = eval::align(&r, &h);
    *out = result.wer;
    SstuneStatus::SstuneOk
}

/// 100 * (baseline - system) / baseline. Fails on a non-positive baseline.
///
/// # Safety
/// `out` must be a writable double.
#[no_mangle]
pub unsafe extern "C" fn sstune_relative_improvement(
    baseline_wer: f64,
    system_wer: f64,
    out: *mut f64,
) -> SstuneStatus {
    if out.is_null() {
        set_error("null output pointer");
        return SstuneStatus::SstuneNullArgument;
    }
    match eval::relative_improvement(baseline_wer, system_wer) {
        Ok(ri) => {
            *out = ri;
            SstuneStatus::SstuneOk
        }
        Err(e) => {
            set_error(e.to_string());
            SstuneStatus::SstuneInvalidInput
        }
    }
}
