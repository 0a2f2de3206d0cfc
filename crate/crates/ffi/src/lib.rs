//! C ABI over `mccseg`.
//!
//! Every fallible function returns an [`MccsegStatus`]. On failure the message is
//! kept per thread and can be fetched with [`mccseg_last_error_message`].
//! Handles are opaque; free each with its matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use mccseg::error::Error;
use mccseg::eval::{confusion_counts, image_mean_iou, iou_per_class};
use mccseg::losses::{mcc_loss_pixels, PixelLogits, Regime};
use mccseg::model::{ArchitectureRegistry, Checkpoint};
use mccseg::orchestrate::{recommend_regime, Predictor};
use mccseg::pipeline::{load_manifest, DatasetDescriptor};
use ndarray::{Array2, ArrayView2, ArrayView3};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MccsegStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Inputs or configuration were rejected before any work started.
    Validation = 3,
    /// I/O, numeric or other failure while working.
    Runtime = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MccsegRegime {
    Supervised = 0,
    Combined = 1,
    MccSemi = 2,
    MccTransfer = 3,
}

impl From<Regime> for MccsegRegime {
    fn from(r: Regime) -> Self {
        match r {
            Regime::Supervised => MccsegRegime::Supervised,
            Regime::Combined => MccsegRegime::Combined,
            Regime::MccSemi => MccsegRegime::MccSemi,
            Regime::MccTransfer => MccsegRegime::MccTransfer,
        }
    }
}

/// Restored network ready for sliding-window inference.
pub struct MccsegPredictor {
    inner: Predictor,
    num_classes: usize,
}

/// Dataset manifest with every pair validated.
pub struct MccsegDataset {
    inner: DatasetDescriptor,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: MccsegStatus, message: impl Into<String>) -> MccsegStatus {
    set_error(message.into());
    status
}

fn from_error(e: Error) -> MccsegStatus {
    let status = if e.is_validation() {
        MccsegStatus::Validation
    } else {
        MccsegStatus::Runtime
    };
    fail(status, e.to_string())
}

/// Runs `f`, converting panics into `Panic` and recording the message.
fn guard(f: impl FnOnce() -> MccsegStatus) -> MccsegStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(MccsegStatus::Panic, msg)
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, MccsegStatus> {
    if p.is_null() {
        return Err(fail(MccsegStatus::NullPointer, "path is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| fail(MccsegStatus::InvalidArgument, "path is not valid UTF-8"))
}

fn checked_len(a: usize, b: usize) -> Result<usize, MccsegStatus> {
    a.checked_mul(b)
        .ok_or_else(|| fail(MccsegStatus::InvalidArgument, "buffer size overflows"))
}

/// Copy of the last error recorded on this thread, or null. Free with [`mccseg_string_free`].
#[no_mangle]
pub extern "C" fn mccseg_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null_mut(), |s| s.clone().into_raw()))
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn mccseg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Static, nul-terminated library version.
#[no_mangle]
pub extern "C" fn mccseg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Static, nul-terminated regime name such as `mcc_semi`.
#[no_mangle]
pub extern "C" fn mccseg_regime_name(regime: MccsegRegime) -> *const c_char {
    let s: &'static str = match regime {
        MccsegRegime::Supervised => "supervised\0",
        MccsegRegime::Combined => "combined\0",
        MccsegRegime::MccSemi => "mcc_semi\0",
        MccsegRegime::MccTransfer => "mcc_transfer\0",
    };
    s.as_ptr().cast()
}

/// Loads a checkpoint archive into a new predictor handle.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mccseg_predictor_load(path: *const c_char, out: *mut *mut MccsegPredictor) -> MccsegStatus {
    guard(|| {
        if out.is_null() {
            return fail(MccsegStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let result = Checkpoint::load(&path).and_then(|c| {
            let n = c.architecture.num_classes;
            Predictor::from_checkpoint(&c, &ArchitectureRegistry::default()).map(|p| (p, n))
        });
        match result {
            Ok((inner, num_classes)) => {
                *out = Box::into_raw(Box::new(MccsegPredictor { inner, num_classes }));
                MccsegStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Number of classes the predictor emits, or 0 for a null handle.
///
/// # Safety
/// `handle` must be null or a live predictor.
#[no_mangle]
pub unsafe extern "C" fn mccseg_predictor_num_classes(handle: *const MccsegPredictor) -> usize {
    handle.as_ref().map_or(0, |h| h.num_classes)
}

/// Labels an interleaved RGB image (`height * width * 3` bytes, row-major).
///
/// Writes `height * width` class indices into `out_labels`.
///
/// # Safety
/// Buffers must hold the stated number of bytes; `handle` must be live.
#[no_mangle]
pub unsafe extern "C" fn mccseg_predictor_predict(
    handle: *mut MccsegPredictor,
    rgb: *const u8,
    height: usize,
    width: usize,
    window: usize,
    stride: usize,
    out_labels: *mut u8,
) -> MccsegStatus {
    guard(|| {
        let Some(h) = handle.as_mut() else {
            return fail(MccsegStatus::NullPointer, "predictor is null");
        };
        if rgb.is_null() || out_labels.is_null() {
            return fail(MccsegStatus::NullPointer, "image or output buffer is null");
        }
        let pixels = match checked_len(height, width) {
            Ok(n) => n,
            Err(s) => return s,
        };
        if pixels == 0 {
            return fail(MccsegStatus::InvalidArgument, "image is empty");
        }
        let bytes = std::slice::from_raw_parts(rgb, pixels * 3);
        let image = ArrayView3::from_shape((height, width, 3), bytes).expect("length checked");
        if window > height || window > width {
            return from_error(Error::WindowExceedsImage { window, height, width });
        }
        match h.inner.predict(image, window, stride) {
            Ok(labels) => {
                let out = std::slice::from_raw_parts_mut(out_labels, pixels);
                for (o, v) in out.iter_mut().zip(labels.iter()) {
                    *o = *v;
                }
                MccsegStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `handle` must be null or a predictor not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mccseg_predictor_free(handle: *mut MccsegPredictor) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Loads and validates a dataset manifest.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mccseg_dataset_load(path: *const c_char, out: *mut *mut MccsegDataset) -> MccsegStatus {
    guard(|| {
        if out.is_null() {
            return fail(MccsegStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_manifest(&path) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(MccsegDataset { inner }));
                MccsegStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Declares a power-of-two downscale on `handle` in place (zoom drops one level per factor of two).
///
/// # Safety
/// `handle` must be a live dataset.
#[no_mangle]
pub unsafe extern "C" fn mccseg_dataset_downscale(handle: *mut MccsegDataset, factor: u32) -> MccsegStatus {
    guard(|| {
        let Some(d) = handle.as_mut() else {
            return fail(MccsegStatus::NullPointer, "dataset is null");
        };
        match d.inner.downscaled(factor) {
            Ok(next) => {
                d.inner = next;
                MccsegStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Zoom level after any declared downscale, or `i32::MIN` for a null handle.
///
/// # Safety
/// `handle` must be null or a live dataset.
#[no_mangle]
pub unsafe extern "C" fn mccseg_dataset_zoom_level(handle: *const MccsegDataset) -> i32 {
    handle.as_ref().map_or(i32::MIN, |d| d.inner.zoom_level)
}

/// # Safety
/// `handle` must be null or a dataset not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mccseg_dataset_free(handle: *mut MccsegDataset) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Recommends a regime; `source` may be null.
///
/// When `out_reasons` is non-null it receives newline-separated reasons to free
/// with [`mccseg_string_free`].
///
/// # Safety
/// Handles must be live or null (source only); outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn mccseg_recommend(
    target: *const MccsegDataset,
    source: *const MccsegDataset,
    out_regime: *mut MccsegRegime,
    out_reasons: *mut *mut c_char,
) -> MccsegStatus {
    guard(|| {
        let Some(t) = target.as_ref() else {
            return fail(MccsegStatus::NullPointer, "target is null");
        };
        if out_regime.is_null() {
            return fail(MccsegStatus::NullPointer, "out_regime is null");
        }
        let rec = recommend_regime(&t.inner, source.as_ref().map(|s| &s.inner));
        *out_regime = rec.regime.into();
        if !out_reasons.is_null() {
            *out_reasons = CString::new(rec.reasons.join("\n").replace('\0', " "))
                .expect("nul removed")
                .into_raw();
        }
        MccsegStatus::Ok
    })
}

/// MCC loss over `num_pixels` rows of `num_classes` logits (row-major).
///
/// Uses every row (no subsampling). `out_grad` may be null; otherwise it
/// receives `num_pixels * num_classes` partial derivatives.
///
/// # Safety
/// Buffers must hold the stated number of values.
#[no_mangle]
pub unsafe extern "C" fn mccseg_mcc_loss(
    logits: *const f64,
    num_pixels: usize,
    num_classes: usize,
    temperature: f64,
    out_loss: *mut f64,
    out_grad: *mut f64,
) -> MccsegStatus {
    guard(|| {
        if logits.is_null() || out_loss.is_null() {
            return fail(MccsegStatus::NullPointer, "logits or out_loss is null");
        }
        let n = match checked_len(num_pixels, num_classes) {
            Ok(n) => n,
            Err(s) => return s,
        };
        if n == 0 {
            return fail(MccsegStatus::InvalidArgument, "no logits");
        }
        let values = std::slice::from_raw_parts(logits, n).to_vec();
        let rows = Array2::from_shape_vec((num_pixels, num_classes), values).expect("length checked");
        let result = PixelLogits::new(rows).and_then(|p| mcc_loss_pixels(&p, temperature));
        match result {
            Ok((loss, grad)) => {
                *out_loss = loss;
                if !out_grad.is_null() {
                    let out = std::slice::from_raw_parts_mut(out_grad, n);
                    for (o, g) in out.iter_mut().zip(grad.iter()) {
                        *o = *g;
                    }
                }
                MccsegStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Per-class IoU of two `height * width` label maps; absent classes are written as NaN.
///
/// Also writes the image mean IoU over defined non-unknown classes to
/// `out_mean` when non-null (NaN when none is defined).
///
/// # Safety
/// `pred`/`gt` must hold `height * width` bytes, `out_iou` `num_classes` values.
#[no_mangle]
pub unsafe extern "C" fn mccseg_iou(
    pred: *const u8,
    gt: *const u8,
    height: usize,
    width: usize,
    num_classes: usize,
    unknown_index: u8,
    out_iou: *mut f64,
    out_mean: *mut f64,
) -> MccsegStatus {
    guard(|| {
        if pred.is_null() || gt.is_null() || out_iou.is_null() {
            return fail(MccsegStatus::NullPointer, "pred, gt or out_iou is null");
        }
        if num_classes == 0 || num_classes > 256 {
            return fail(MccsegStatus::InvalidArgument, "num_classes must be in 1..=256");
        }
        let n = match checked_len(height, width) {
            Ok(n) => n,
            Err(s) => return s,
        };
        let p = ArrayView2::from_shape((height, width), std::slice::from_raw_parts(pred, n)).expect("length checked");
        let g = ArrayView2::from_shape((height, width), std::slice::from_raw_parts(gt, n)).expect("length checked");
        match confusion_counts(p, g, num_classes, unknown_index) {
            Ok(counts) => {
                let iou = iou_per_class(&counts);
                let out = std::slice::from_raw_parts_mut(out_iou, num_classes);
                for (o, v) in out.iter_mut().zip(&iou) {
                    *o = v.unwrap_or(f64::NAN);
                }
                if !out_mean.is_null() {
                    *out_mean = image_mean_iou(&iou, unknown_index).unwrap_or(f64::NAN);
                }
                MccsegStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}
