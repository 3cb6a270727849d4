//! C ABI over the `mrc` library: load a checkpoint, score the options of a
//! question, and compute highlight masks.
//!
//! Every function returns an [`MrcStatus`]. On failure the message for the
//! calling thread is available from [`mrc_last_error`] until the next call
//! on that thread. Strings returned to the caller are freed with
//! [`mrc_string_free`]; models with [`mrc_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use mrc::corpus::MrcInstance;
use mrc::model::Checkpoint;
use mrc::strategies::{compute_highlight_mask, Encoder};
use mrc::text::{tokenize, Tagger};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MrcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Invalid = 4,
    Checkpoint = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// A loaded checkpoint. Opaque to C.
pub struct MrcModel {
    checkpoint: Checkpoint,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: MrcStatus, msg: &str) -> MrcStatus {
    set_error(msg);
    status
}

fn status_of(err: &mrc::Error) -> MrcStatus {
    match err {
        mrc::Error::Io { .. } => MrcStatus::Io,
        mrc::Error::Checkpoint { .. } => MrcStatus::Checkpoint,
        _ => MrcStatus::Invalid,
    }
}

/// Runs `f`, turning errors and panics into a status plus message.
fn guarded(f: impl FnOnce() -> Result<(), (MrcStatus, String)>) -> MrcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            MrcStatus::Ok
        }
        Ok(Err((status, msg))) => fail(status, &msg),
        Err(_) => fail(MrcStatus::Panic, "internal panic"),
    }
}

fn lib_err(e: mrc::Error) -> (MrcStatus, String) {
    (status_of(&e), e.to_string())
}

/// # Safety
/// `p` is null or a NUL-terminated string valid for the duration of the call.
unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (MrcStatus, String)> {
    if p.is_null() {
        return Err((MrcStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (MrcStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

fn to_c_string(s: &str) -> *mut c_char {
    CString::new(s.replace('\0', " ")).unwrap_or_default().into_raw()
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn mrc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mrc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint file into `*out`.
///
/// # Safety
/// `path` is a NUL-terminated string and `out` points to writable storage.
#[no_mangle]
pub unsafe extern "C" fn mrc_model_load(path: *const c_char, out: *mut *mut MrcModel) -> MrcStatus {
    guarded(|| {
        if out.is_null() {
            return Err((MrcStatus::NullPointer, "out is null".into()));
        }
        *out = ptr::null_mut();
        let path = read_str(path, "path")?;
        let checkpoint = Checkpoint::load(Path::new(path)).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(MrcModel { checkpoint }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` is null or was returned by `mrc_model_load` and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mrc_model_free(model: *mut MrcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// The order scheme the model was trained with, e.g. `dq_o`. Free the
/// result with `mrc_string_free`.
///
/// # Safety
/// `model` is a live model and `out` points to writable storage.
#[no_mangle]
pub unsafe extern "C" fn mrc_model_scheme(model: *const MrcModel, out: *mut *mut c_char) -> MrcStatus {
    guarded(|| {
        if model.is_null() || out.is_null() {
            return Err((MrcStatus::NullPointer, "model or out is null".into()));
        }
        *out = to_c_string(&(*model).checkpoint.scheme.to_string());
        Ok(())
    })
}

/// Scores `n_options` options for one question under the model's own
/// scheme, writing one score per option to `scores`. Higher is better; for
/// sigmoid models a score of at least zero means "correct".
///
/// # Safety
/// All strings are NUL-terminated; `options` holds `n_options` strings and
/// `scores` has room for `n_options` doubles.
#[no_mangle]
pub unsafe extern "C" fn mrc_model_score(
    model: *const MrcModel,
    document: *const c_char,
    question: *const c_char,
    options: *const *const c_char,
    n_options: usize,
    scores: *mut f64,
) -> MrcStatus {
    guarded(|| {
        if model.is_null() || options.is_null() || scores.is_null() {
            return Err((MrcStatus::NullPointer, "model, options or scores is null".into()));
        }
        if n_options == 0 {
            return Err((MrcStatus::Invalid, "at least one option is required".into()));
        }
        let ck = &(*model).checkpoint;
        let opts = std::slice::from_raw_parts(options, n_options)
            .iter()
            .enumerate()
            .map(|(i, &p)| read_str(p, &format!("option {i}")).map(String::from))
            .collect::<Result<Vec<_>, _>>()?;
        let inst = MrcInstance {
            id: String::new(),
            document: read_str(document, "document")?.into(),
            question: read_str(question, "question")?.into(),
            options: opts,
            gold: vec![],
            tags: None,
            option_documents: None,
        };
        let encoder = Encoder::new(&ck.vocab, Tagger::bundled(), ck.scheme.clone(), ck.model.config.max_len);
        let inputs = encoder.encode(&inst).map_err(lib_err)?;
        let out = ck.model.forward_choice(&inputs).map_err(lib_err)?;
        std::slice::from_raw_parts_mut(scores, n_options).copy_from_slice(&out);
        Ok(())
    })
}

/// Highlight bits of the tokenized document for one question and option,
/// one byte (0 or 1) per document token, using the bundled tagger. The
/// token count is stored in `*len` even when `capacity` is too small.
///
/// # Safety
/// Strings are NUL-terminated; `bits` has room for `capacity` bytes (it may
/// be null when `capacity` is 0) and `len` points to writable storage.
#[no_mangle]
pub unsafe extern "C" fn mrc_highlight_mask(
    document: *const c_char,
    question: *const c_char,
    option: *const c_char,
    bits: *mut u8,
    capacity: usize,
    len: *mut usize,
) -> MrcStatus {
    guarded(|| {
        if len.is_null() {
            return Err((MrcStatus::NullPointer, "len is null".into()));
        }
        let doc = tokenize(read_str(document, "document")?);
        let q = tokenize(read_str(question, "question")?);
        let o = tokenize(read_str(option, "option")?);
        let mask = compute_highlight_mask(&doc, &Tagger::bundled().tag(&doc), &q, &o).map_err(lib_err)?;
        *len = mask.len();
        if mask.len() > capacity {
            return Err((
                MrcStatus::BufferTooSmall,
                format!("mask has {} entries but capacity is {capacity}", mask.len()),
            ));
        }
        if !mask.is_empty() {
            if bits.is_null() {
                return Err((MrcStatus::NullPointer, "bits is null".into()));
            }
            let dst = std::slice::from_raw_parts_mut(bits, mask.len());
            for (d, &b) in dst.iter_mut().zip(&mask.0) {
                *d = b as u8;
            }
        }
        Ok(())
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` is null or was returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mrc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
