//! C ABI for loading a vocabulary and checkpoint and running
//! verbalizer-constrained prediction.
//!
//! Every fallible function returns an [`MwStatus`]. On failure a message is
//! available from [`mw_last_error`] until the next call on the same thread.
//! Handles are owned by the caller and released with the matching `_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use maskwise::eval::predict;
use maskwise::model::ModelCheckpoint;
use maskwise::tokenizer::Vocabulary;
use maskwise::verbalizer::VerbalizerSet;
use maskwise::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MwStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Format = 4,
    Config = 5,
    Shape = 6,
    Prompt = 7,
    Numerics = 8,
    BufferTooSmall = 9,
    Panic = 10,
    Other = 11,
}

/// Opaque vocabulary handle.
pub struct MwVocab(Vocabulary);

/// Opaque model handle.
pub struct MwModel(ModelCheckpoint);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

fn status_of(e: &Error) -> MwStatus {
    match e {
        Error::Io { .. } => MwStatus::Io,
        Error::Format(_) | Error::Decode { .. } => MwStatus::Format,
        Error::Config(_) | Error::Build(_) => MwStatus::Config,
        Error::Shape(_) => MwStatus::Shape,
        Error::Prompt(_) | Error::Template(_) => MwStatus::Prompt,
        Error::Numerics(_) | Error::Diverged { .. } => MwStatus::Numerics,
        _ => MwStatus::Other,
    }
}

struct Fail(MwStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MwStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            MwStatus::Ok
        }
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            MwStatus::Panic
        }
    }
}

/// # Safety
/// `p` is null or a valid NUL-terminated string.
unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(MwStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(MwStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(Fail(MwStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

/// Message for the most recent failure on this thread, or an empty string.
/// The pointer stays valid until the next `mw_` call on this thread.
#[no_mangle]
pub extern "C" fn mw_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a vocabulary file into `*out`.
///
/// # Safety
/// `path` is a NUL-terminated string and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn mw_vocab_load(path: *const c_char, out: *mut *mut MwVocab) -> MwStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = str_arg(path, "path")?;
        let v = Vocabulary::load(Path::new(path))?;
        *out = Box::into_raw(Box::new(MwVocab(v)));
        Ok(())
    })
}

/// # Safety
/// `vocab` is null or came from `mw_vocab_load` and was not freed.
#[no_mangle]
pub unsafe extern "C" fn mw_vocab_free(vocab: *mut MwVocab) {
    if !vocab.is_null() {
        drop(Box::from_raw(vocab));
    }
}

/// Number of entries, or 0 for a null handle.
///
/// # Safety
/// `vocab` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mw_vocab_size(vocab: *const MwVocab) -> usize {
    vocab.as_ref().map_or(0, |v| v.0.len())
}

/// Encodes `text` (without BOS/EOS) into `ids`. `*out_len` receives the
/// token count; if it exceeds `capacity` nothing is written and the call
/// returns the buffer-too-small status. `ids` may be null when `capacity` is 0.
///
/// # Safety
/// `vocab` is live, `text` is NUL-terminated, `ids` has `capacity` slots.
#[no_mangle]
pub unsafe extern "C" fn mw_vocab_encode(
    vocab: *const MwVocab,
    text: *const c_char,
    ids: *mut u32,
    capacity: usize,
    out_len: *mut usize,
) -> MwStatus {
    guard(|| {
        non_null(vocab, "vocab")?;
        non_null(out_len, "out_len")?;
        let text = str_arg(text, "text")?;
        let enc = (*vocab).0.encode(text);
        *out_len = enc.len();
        if enc.len() > capacity {
            return Err(Fail(
                MwStatus::BufferTooSmall,
                format!("{} ids do not fit in {capacity}", enc.len()),
            ));
        }
        if !enc.is_empty() {
            non_null(ids, "ids")?;
            std::ptr::copy_nonoverlapping(enc.as_ptr(), ids, enc.len());
        }
        Ok(())
    })
}

/// Loads a checkpoint into `*out`.
///
/// # Safety
/// `path` is a NUL-terminated string and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn mw_model_load(path: *const c_char, out: *mut *mut MwModel) -> MwStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = str_arg(path, "path")?;
        let m = ModelCheckpoint::load(Path::new(path))?;
        *out = Box::into_raw(Box::new(MwModel(m)));
        Ok(())
    })
}

/// # Safety
/// `model` is null or came from `mw_model_load` and was not freed.
#[no_mangle]
pub unsafe extern "C" fn mw_model_free(model: *mut MwModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Scores `prompt` (one `[MASK]`) against `n_labels` single-token labels.
/// Writes the winning label index to `*out_index` and, when `out_probs` is
/// not null, the restricted softmax in label order.
///
/// # Safety
/// Handles are live, `prompt` and each `labels[i]` are NUL-terminated,
/// `labels` has `n_labels` entries and `out_probs` is null or has
/// `n_labels` slots.
#[no_mangle]
pub unsafe extern "C" fn mw_predict(
    model: *const MwModel,
    vocab: *const MwVocab,
    prompt: *const c_char,
    labels: *const *const c_char,
    n_labels: usize,
    out_index: *mut usize,
    out_probs: *mut f64,
) -> MwStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(vocab, "vocab")?;
        non_null(out_index, "out_index")?;
        non_null(labels, "labels")?;
        let prompt = str_arg(prompt, "prompt")?;
        let names = (0..n_labels)
            .map(|i| str_arg(*labels.add(i), "label"))
            .collect::<Result<Vec<_>, _>>()?;
        let vocab = &(*vocab).0;
        let vset = VerbalizerSet::direct(&names, vocab)?;
        let p = predict(&(*model).0, vocab, prompt, &vset)?;
        *out_index = names.iter().position(|&n| n == p.label).expect("label from the set");
        if !out_probs.is_null() {
            for (i, (_, prob)) in p.distribution.iter().enumerate() {
                *out_probs.add(i) = *prob;
            }
        }
        Ok(())
    })
}
