//! C ABI over `ric-core`.
//!
//! A session holds a frozen classifier and a trained codec loaded from
//! checkpoint directories. Images cross the boundary as 8-bit CHW buffers of
//! `channels * height * width` bytes. Every function returns a [`RicStatus`];
//! on failure [`ric_last_error_message`] describes the most recent error on
//! the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use ric_core::attack::{AttackConfig, NaeCache};
use ric_core::checkpoint::{load_classifier, load_ric};
use ric_core::classifier::Classifier;
use ric_core::codec::{decrypt_pixels, encrypt, RicModel};
use ric_core::keystream::SecretKey;
use ric_core::security::{bound_probability, BoundMode};
use ric_core::{Error, Image8};

/// Status codes returned by every entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RicStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Io = 4,
    Checkpoint = 5,
    /// Adversarial crafting did not reach the margin for this key and label.
    CraftFailed = 6,
    NonFinite = 7,
    Panic = 8,
}

/// Opaque session handle.
pub struct RicSession {
    clf: Classifier,
    model: RicModel,
    attack: AttackConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RicStatus {
    match e {
        Error::Shape(_) => RicStatus::Shape,
        Error::Invalid(_) | Error::UnknownPurpose(_) | Error::Metadata(_) => RicStatus::InvalidArgument,
        Error::NaeFailed { .. } => RicStatus::CraftFailed,
        Error::NonFinite(_) => RicStatus::NonFinite,
        Error::Checkpoint(_) | Error::Json(_) => RicStatus::Checkpoint,
        Error::Io { .. } | Error::Data { .. } | Error::Png(_) => RicStatus::Io,
    }
}

struct Fail(RicStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(RicStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RicStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RicStatus::Ok,
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            RicStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| Fail(RicStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn session<'a>(s: *const RicSession) -> Result<&'a RicSession, Fail> {
    s.as_ref().ok_or_else(|| null("session"))
}

unsafe fn image_arg(s: &RicSession, p: *const u8, len: usize, what: &str) -> Result<Image8, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let (c, h, w) = s.clf.input;
    let bytes = std::slice::from_raw_parts(p, len);
    Ok(Image8::new(c, h, w, bytes.to_vec())?)
}

fn check_out(out: *mut u8, out_len: usize, need: usize) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output buffer"));
    }
    if out_len != need {
        return Err(Fail(RicStatus::Shape, format!("output buffer holds {out_len} bytes, need {need}")));
    }
    Ok(())
}

unsafe fn write_image(out: *mut u8, out_len: usize, img: &Image8) -> Result<(), Fail> {
    check_out(out, out_len, img.pixels.len())?;
    std::ptr::copy_nonoverlapping(img.pixels.as_ptr(), out, out_len);
    Ok(())
}

/// Message for the last failure on this thread, or null. Valid until the
/// next failing call on the same thread; do not free.
#[no_mangle]
pub extern "C" fn ric_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ric_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a classifier and a codec checkpoint. On success `*out` owns a
/// session to be released with [`ric_session_free`].
///
/// # Safety
/// Both paths must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ric_session_open(classifier_dir: *const c_char, codec_dir: *const c_char, out: *mut *mut RicSession) -> RicStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let clf = load_classifier(&path_arg(classifier_dir, "classifier_dir")?)?;
        let model = load_ric(&path_arg(codec_dir, "codec_dir")?)?;
        if clf.input != model.arch.input {
            return Err(Fail(
                RicStatus::Shape,
                format!("classifier input {:?} differs from codec input {:?}", clf.input, model.arch.input),
            ));
        }
        *out = Box::into_raw(Box::new(RicSession { clf, model, attack: AttackConfig::default() }));
        Ok(())
    })
}

/// Releases a session. Null is ignored.
///
/// # Safety
/// `s` must come from [`ric_session_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ric_session_free(s: *mut RicSession) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Image shape expected by the session.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ric_input_shape(s: *const RicSession, channels: *mut usize, height: *mut usize, width: *mut usize) -> RicStatus {
    guard(|| {
        let s = session(s)?;
        if channels.is_null() || height.is_null() || width.is_null() {
            return Err(null("shape output"));
        }
        let (c, h, w) = s.clf.input;
        *channels = c;
        *height = h;
        *width = w;
        Ok(())
    })
}

/// Encrypts `plain` under `key` into `out` (same length).
///
/// # Safety
/// `plain` must hold `len` readable bytes and `out` `out_len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ric_encrypt(
    s: *const RicSession,
    key: u64,
    plain: *const u8,
    len: usize,
    out: *mut u8,
    out_len: usize,
) -> RicStatus {
    guard(|| {
        let s = session(s)?;
        let img = image_arg(s, plain, len, "plaintext")?;
        check_out(out, out_len, img.pixels.len())?;
        let ct = encrypt(&s.model, &s.clf, SecretKey::new(key), &img.to_unit(), &s.attack)?;
        write_image(out, out_len, &ct.pixels)
    })
}

/// Recovers a plaintext from ciphertext pixels. Raw buffers carry no
/// metadata, so pairing the ciphertext with this session is the caller's job.
///
/// # Safety
/// As for [`ric_encrypt`].
#[no_mangle]
pub unsafe extern "C" fn ric_decrypt(
    s: *const RicSession,
    key: u64,
    cipher: *const u8,
    len: usize,
    out: *mut u8,
    out_len: usize,
) -> RicStatus {
    guard(|| {
        let s = session(s)?;
        let img = image_arg(s, cipher, len, "ciphertext")?;
        check_out(out, out_len, img.pixels.len())?;
        let rec = decrypt_pixels(&s.model, &s.clf, SecretKey::new(key), &img, &s.attack, &mut NaeCache::new())?;
        write_image(out, out_len, &Image8::from_unit(&rec)?)
    })
}

/// Predicted label of an image, plaintext or ciphertext.
///
/// # Safety
/// `pixels` must hold `len` bytes; `label` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ric_classify(s: *const RicSession, pixels: *const u8, len: usize, label: *mut u32) -> RicStatus {
    guard(|| {
        let s = session(s)?;
        if label.is_null() {
            return Err(null("label"));
        }
        let img = image_arg(s, pixels, len, "image")?;
        *label = s.clf.predict(&img.to_unit())? as u32;
        Ok(())
    })
}

/// PSNR in dB between two 8-bit buffers of equal length; identical inputs give +inf.
///
/// # Safety
/// `a` and `b` must hold `len` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ric_psnr_u8(a: *const u8, b: *const u8, len: usize, out: *mut f64) -> RicStatus {
    guard(|| {
        if a.is_null() || b.is_null() || out.is_null() {
            return Err(null("psnr argument"));
        }
        let a = Image8::new(1, 1, len, std::slice::from_raw_parts(a, len).to_vec())?;
        let b = Image8::new(1, 1, len, std::slice::from_raw_parts(b, len).to_vec())?;
        *out = ric_core::metrics::psnr(&a, &b)?;
        Ok(())
    })
}

/// `log10` of the brute-force success bound for tolerance `m` and `d` pixels.
/// `power_of_ten` rounds the per-pixel base to a power of ten.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ric_bound_log10(m: u32, d: u64, power_of_ten: bool, out: *mut f64) -> RicStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let mode = if power_of_ten { BoundMode::PowerOfTen } else { BoundMode::Exact };
        *out = bound_probability(m, d, mode)?;
        Ok(())
    })
}

/// Accuracy drop percentage from plaintext and ciphertext accuracies (percent).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ric_adp(acc_plain: f64, acc_encrypted: f64, out: *mut f64) -> RicStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ric_core::metrics::adp(acc_plain, acc_encrypted)?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_message_is_thread_local() {
        let st = unsafe { ric_adp(0.0, 1.0, std::ptr::null_mut()) };
        assert_eq!(st, RicStatus::NullPointer);
        assert!(!ric_last_error_message().is_null());
        std::thread::spawn(|| assert!(ric_last_error_message().is_null())).join().unwrap();
    }

    #[test]
    fn panics_become_status() {
        assert_eq!(guard(|| panic!("boom")), RicStatus::Panic);
        let msg = unsafe { CStr::from_ptr(ric_last_error_message()) }.to_str().unwrap();
        assert!(msg.contains("boom"));
    }
}
