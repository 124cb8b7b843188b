//! C ABI over seldkit. Handles are opaque and owned by the caller, who
//! releases them with the matching `*_free`. Every fallible call returns a
//! [`SeldkitStatus`]; the message of the last failure on the calling thread
//! is available from [`seldkit_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use seldkit::error::{Error, ErrorCategory};
use seldkit::eval::{e_seld, match_and_score, FrameEvents};
use seldkit::features::FeatureExtractor;
use seldkit::meta::{evaluate_batch, Batch, Clip};
use seldkit::model::{accdoa_decode, BnUse, SeldModel};
use seldkit::run::{load_model, RunInfo};

/// Result of a call. Config, data and numerical failures share their
/// values with the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeldkitStatus {
    Ok = 0,
    NullArgument = 1,
    Config = 2,
    Data = 3,
    Numerical = 4,
    Panic = 5,
}

/// Aggregate SELD scores; `le_cd` is in degrees.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SeldkitScores {
    pub er20: f64,
    pub f20: f64,
    pub le_cd: f64,
    pub lr_cd: f64,
    pub e_seld: f64,
}

/// Active `(class, direction)` events per 100 ms frame.
pub struct SeldkitEvents {
    inner: FrameEvents,
}

/// A loaded checkpoint with its feature extractor.
pub struct SeldkitModel {
    model: SeldModel,
    info: RunInfo,
    fe: FeatureExtractor,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SeldkitStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SeldkitStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null argument: {what}"));
            SeldkitStatus::NullArgument
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            match e.category() {
                ErrorCategory::Config => SeldkitStatus::Config,
                ErrorCategory::Data => SeldkitStatus::Data,
                ErrorCategory::Numerical => SeldkitStatus::Numerical,
            }
        }
        Err(_) => {
            set_error("internal panic".into());
            SeldkitStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn seldkit_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn seldkit_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Aggregate error from ER, F (fraction), LE (degrees) and LR (fraction).
///
/// # Safety
/// `out` must point to writable memory for one `double`.
#[no_mangle]
pub unsafe extern "C" fn seldkit_e_seld(er: f64, f: f64, le_deg: f64, lr: f64, out: *mut f64) -> SeldkitStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        *out = e_seld(er, f, le_deg, lr)?;
        Ok(())
    })
}

/// New empty event list of `n_frames` frames.
#[no_mangle]
pub extern "C" fn seldkit_events_new(n_frames: usize) -> *mut SeldkitEvents {
    Box::into_raw(Box::new(SeldkitEvents { inner: FrameEvents::new(n_frames) }))
}

/// # Safety
/// `events` must come from this library and not be used afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn seldkit_events_free(events: *mut SeldkitEvents) {
    if !events.is_null() {
        drop(Box::from_raw(events));
    }
}

/// Adds an event of class `class_idx` from direction `(x, y, z)` to a frame.
///
/// # Safety
/// `events` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn seldkit_events_add(
    events: *mut SeldkitEvents,
    frame: usize,
    class_idx: usize,
    x: f64,
    y: f64,
    z: f64,
) -> SeldkitStatus {
    guard(|| {
        let ev = deref_mut(events, "events")?;
        let n = ev.inner.n_frames();
        let slot = ev
            .inner
            .frames
            .get_mut(frame)
            .ok_or_else(|| Error::InvalidArgument(format!("frame {frame} outside {n} frames")))?;
        slot.push((class_idx, [x, y, z]));
        Ok(())
    })
}

/// Number of frames, 0 for NULL.
///
/// # Safety
/// `events` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn seldkit_events_n_frames(events: *const SeldkitEvents) -> usize {
    events.as_ref().map_or(0, |e| e.inner.n_frames())
}

/// Number of events in `frame`, 0 when out of range or NULL.
///
/// # Safety
/// `events` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn seldkit_events_count(events: *const SeldkitEvents, frame: usize) -> usize {
    events.as_ref().and_then(|e| e.inner.frames.get(frame)).map_or(0, |f| f.len())
}

/// Reads event `i` of `frame` into `class_out` and the 3-vector `doa_out`.
///
/// # Safety
/// `events` must be a live handle; `class_out` one writable `size_t`;
/// `doa_out` three writable doubles.
#[no_mangle]
pub unsafe extern "C" fn seldkit_events_get(
    events: *const SeldkitEvents,
    frame: usize,
    i: usize,
    class_out: *mut usize,
    doa_out: *mut f64,
) -> SeldkitStatus {
    guard(|| {
        let ev = deref(events, "events")?;
        let class_out = deref_mut(class_out, "class_out")?;
        if doa_out.is_null() {
            return Err(Failure::Null("doa_out"));
        }
        let (c, v) = ev
            .inner
            .frames
            .get(frame)
            .and_then(|f| f.get(i))
            .ok_or_else(|| Error::InvalidArgument(format!("no event {i} in frame {frame}")))?;
        *class_out = *c;
        std::slice::from_raw_parts_mut(doa_out, 3).copy_from_slice(v);
        Ok(())
    })
}

/// Scores predictions against references with one-second segments.
///
/// # Safety
/// `pred` and `reference` must be live handles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn seldkit_match_and_score(
    pred: *const SeldkitEvents,
    reference: *const SeldkitEvents,
    n_classes: usize,
    out: *mut SeldkitScores,
) -> SeldkitStatus {
    guard(|| {
        let p = deref(pred, "pred")?;
        let r = deref(reference, "reference")?;
        let out = deref_mut(out, "out")?;
        let s = match_and_score(&p.inner, &r.inner, n_classes)?;
        *out = SeldkitScores { er20: s.er20, f20: s.f20, le_cd: s.le_cd, lr_cd: s.lr_cd, e_seld: s.e_seld };
        Ok(())
    })
}

/// Loads a checkpoint written by the `seldkit` command line.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn seldkit_model_load(path: *const c_char, out: *mut *mut SeldkitModel) -> SeldkitStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        *out = std::ptr::null_mut();
        if path.is_null() {
            return Err(Failure::Null("path"));
        }
        let path = CStr::from_ptr(path).to_str().map_err(|_| Error::InvalidArgument("path is not UTF-8".into()))?;
        let (model, info) = load_model(Path::new(path))?;
        let fe = FeatureExtractor::new(info.features)?;
        *out = Box::into_raw(Box::new(SeldkitModel { model, info, fe }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`seldkit_model_load`] and not be used afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn seldkit_model_free(model: *mut SeldkitModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of sound classes, 0 for NULL.
///
/// # Safety
/// `model` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn seldkit_model_n_classes(model: *const SeldkitModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.config.backbone.n_classes)
}

/// Expected input sample rate in Hz, 0 for NULL.
///
/// # Safety
/// `model` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn seldkit_model_sample_rate(model: *const SeldkitModel) -> u32 {
    model.as_ref().map_or(0, |m| m.info.features.fs)
}

/// Detects and localizes events in one FOA clip. `audio` holds four planar
/// channels (W, Y, Z, X) of `n_samples` each. Batch normalization uses the
/// stored running statistics. The new event list is written to `out`.
///
/// # Safety
/// `model` must be a live handle; `audio` must hold `4 * n_samples` floats; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn seldkit_model_predict(
    model: *const SeldkitModel,
    audio: *const f32,
    n_samples: usize,
    threshold: f64,
    out: *mut *mut SeldkitEvents,
) -> SeldkitStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let out = deref_mut(out, "out")?;
        *out = std::ptr::null_mut();
        if audio.is_null() {
            return Err(Failure::Null("audio"));
        }
        let flat = std::slice::from_raw_parts(audio, 4 * n_samples);
        let channels: Vec<Vec<f64>> = flat.chunks_exact(n_samples.max(1)).map(|c| c.iter().map(|v| *v as f64).collect()).collect();
        let cfg = &m.model.config.backbone;
        let clip = Clip::new("input", m.fe.extract(&channels)?, &[], cfg)?;
        let batch = Batch::new(cfg, &[&clip])?;
        let (pred, _) = evaluate_batch(cfg, &m.model.theta, &batch, BnUse::Running(&m.model.running))?;
        let frames = accdoa_decode(&pred, cfg.n_classes, threshold)?;
        *out = Box::into_raw(Box::new(SeldkitEvents { inner: FrameEvents { frames } }));
        Ok(())
    })
}
