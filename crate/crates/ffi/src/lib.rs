//! C interface to the classifier. A [`MorphClassifier`] bundles the three
//! trained artifacts (model checkpoint, BPE vocabulary, label space) behind
//! an opaque handle; `morph_classifier_predict` runs the full inference
//! protocol: tokenize the lemma and its forms, score both tasks, pick the
//! part of speech, then pick the inflection class restricted to that part
//! of speech.
//!
//! Conventions:
//! - All strings are NUL-terminated UTF-8.
//! - Functions returning [`MorphStatus`] set a thread-local error message on
//!   failure, readable via [`morph_last_error`] until the next call on the
//!   same thread.
//! - Strings returned through out-parameters are owned by the caller and
//!   must be released with [`morph_string_free`].

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::path::Path;

use morphclass::augment::SEPARATOR;
use morphclass::bpe::BpeModel;
use morphclass::eval::{argmax, masked_argmax};
use morphclass::labels::LabelSpace;
use morphclass::model::{Checkpoint, TransformerClassifier};
use morphclass::Error;

/// Outcome of an interface call. Non-zero values match the CLI exit codes
/// for the same failure classes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MorphStatus {
    /// The call succeeded.
    Ok = 0,
    /// A pointer argument was null or an argument was out of range.
    InvalidArgument = 2,
    /// An artifact could not be read, parsed, or cross-validated.
    Data = 3,
    /// Inference produced a non-finite value.
    Numeric = 4,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> =
        RefCell::new(CString::new("").expect("empty string has no NUL"));
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', "?");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).expect("NULs replaced");
    });
}

fn status_of(e: &Error) -> MorphStatus {
    match e.exit_code() {
        2 => MorphStatus::InvalidArgument,
        4 => MorphStatus::Numeric,
        _ => MorphStatus::Data,
    }
}

fn fail(e: &Error) -> MorphStatus {
    set_error(&e.to_string());
    status_of(e)
}

fn invalid(message: &str) -> MorphStatus {
    set_error(message);
    MorphStatus::InvalidArgument
}

/// An opaque, immutable classifier handle. Safe to share across threads for
/// reads; create and destroy it from one thread at a time.
pub struct MorphClassifier {
    model: TransformerClassifier<f32>,
    bpe: BpeModel,
    labels: LabelSpace,
}

/// Borrow a C string argument as UTF-8, or record an error.
///
/// # Safety
/// `ptr` must be null or a valid NUL-terminated string.
unsafe fn utf8_arg<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, MorphStatus> {
    if ptr.is_null() {
        return Err(invalid(&format!("{what} is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| invalid(&format!("{what} is not valid UTF-8")))
}

/// Load a classifier from a model checkpoint, a BPE vocabulary, and a label
/// space, storing the handle in `out`. On failure `out` is untouched and
/// the status plus [`morph_last_error`] describe the problem.
///
/// # Safety
/// Path arguments must be valid NUL-terminated strings; `out` must be a
/// valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn morph_classifier_open(
    model_path: *const c_char,
    bpe_path: *const c_char,
    labels_path: *const c_char,
    out: *mut *mut MorphClassifier,
) -> MorphStatus {
    if out.is_null() {
        return invalid("out handle is null");
    }
    let model_path = match utf8_arg(model_path, "model path") {
        Ok(p) => p,
        Err(s) => return s,
    };
    let bpe_path = match utf8_arg(bpe_path, "vocabulary path") {
        Ok(p) => p,
        Err(s) => return s,
    };
    let labels_path = match utf8_arg(labels_path, "label-space path") {
        Ok(p) => p,
        Err(s) => return s,
    };

    let handle = (|| -> morphclass::Result<MorphClassifier> {
        let checkpoint = Checkpoint::load(Path::new(model_path))?;
        let (model, _) = TransformerClassifier::<f32>::from_checkpoint(&checkpoint)?;
        let bpe = BpeModel::load(Path::new(bpe_path))?;
        let labels = LabelSpace::load(Path::new(labels_path))?;
        if labels.n_pos() != model.config.n_pos || labels.n_contlex() != model.config.n_contlex {
            return Err(Error::Config(format!(
                "label space ({} POS / {} Contlex) does not fit the checkpoint \
                 ({} POS / {} Contlex)",
                labels.n_pos(),
                labels.n_contlex(),
                model.config.n_pos,
                model.config.n_contlex
            )));
        }
        if bpe.vocab_size() != model.config.vocab_size {
            return Err(Error::Config(format!(
                "vocabulary size {} does not fit the checkpoint ({})",
                bpe.vocab_size(),
                model.config.vocab_size
            )));
        }
        Ok(MorphClassifier { model, bpe, labels })
    })();
    match handle {
        Ok(h) => {
            *out = Box::into_raw(Box::new(h));
            MorphStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Release a handle created by [`morph_classifier_open`]. Null is a no-op.
///
/// # Safety
/// `handle` must be null or a pointer returned by `morph_classifier_open`
/// that has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn morph_classifier_free(handle: *mut MorphClassifier) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Number of part-of-speech labels the classifier distinguishes; 0 if the
/// handle is null.
///
/// # Safety
/// `handle` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn morph_classifier_n_pos(handle: *const MorphClassifier) -> usize {
    handle.as_ref().map_or(0, |h| h.labels.n_pos())
}

/// Number of inflection-class labels across all parts of speech; 0 if the
/// handle is null.
///
/// # Safety
/// `handle` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn morph_classifier_n_contlex(handle: *const MorphClassifier) -> usize {
    handle.as_ref().map_or(0, |h| h.labels.n_contlex())
}

/// Classify one lexeme from its lemma and `n_forms` inflected surface forms
/// (pass `forms = NULL, n_forms = 0` for the bare lemma). On success writes
/// two caller-owned strings: the part of speech and the inflection-class
/// label. The inflection class is chosen among the classes belonging to the
/// predicted part of speech.
///
/// # Safety
/// `handle` must be a live handle; `lemma` a valid string; `forms` either
/// null (with `n_forms == 0`) or an array of `n_forms` valid strings;
/// `pos_out` and `contlex_out` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn morph_classifier_predict(
    handle: *const MorphClassifier,
    lemma: *const c_char,
    forms: *const *const c_char,
    n_forms: usize,
    pos_out: *mut *mut c_char,
    contlex_out: *mut *mut c_char,
) -> MorphStatus {
    let Some(h) = handle.as_ref() else {
        return invalid("classifier handle is null");
    };
    if pos_out.is_null() || contlex_out.is_null() {
        return invalid("output pointer is null");
    }
    let lemma = match utf8_arg(lemma, "lemma") {
        Ok(s) => s,
        Err(status) => return status,
    };
    if lemma.is_empty() {
        return invalid("lemma is empty");
    }
    if forms.is_null() && n_forms > 0 {
        return invalid("forms is null but n_forms is nonzero");
    }

    let mut text = lemma.to_owned();
    if n_forms > 0 {
        for (i, &form) in std::slice::from_raw_parts(forms, n_forms).iter().enumerate() {
            let form = match utf8_arg(form, &format!("form {i}")) {
                Ok(s) => s,
                Err(status) => return status,
            };
            text.push(SEPARATOR);
            text.push_str(form);
        }
    }

    let result = (|| -> morphclass::Result<(CString, CString)> {
        let tokens = h.bpe.encode(&text);
        let (pos_scores, contlex_scores) = h.model.predict(&[tokens])?;
        let pos_id = argmax(&pos_scores[0]);
        let pos_name = h.labels.decode_pos(pos_id)?;
        let mask = h.labels.mask_for_pos(pos_name)?;
        let contlex_id = masked_argmax(&contlex_scores[0], &mask)?;
        let (_, contlex_name) = h.labels.decode_contlex(contlex_id)?;
        let pos = CString::new(pos_name)
            .map_err(|_| Error::Data("POS label contains a NUL byte".into()))?;
        let contlex = CString::new(contlex_name)
            .map_err(|_| Error::Data("Contlex label contains a NUL byte".into()))?;
        Ok((pos, contlex))
    })();
    match result {
        Ok((pos, contlex)) => {
            *pos_out = pos.into_raw();
            *contlex_out = contlex.into_raw();
            MorphStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Release a string returned by this library. Null is a no-op.
///
/// # Safety
/// `s` must be null or a string pointer produced by this library that has
/// not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn morph_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message describing the most recent failure on this thread. Never null;
/// empty before any failure. The pointer stays valid until the next call
/// into this library from the same thread.
#[no_mangle]
pub extern "C" fn morph_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn morph_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}
