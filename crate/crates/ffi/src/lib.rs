//! C ABI over the metric kernels and the trained translator.
//!
//! Conventions shared by every entry point:
//! - RGB buffers are planar f64: the R plane, then G, then B, each
//!   `width * height` values in row-major order, channel values in [0, 1].
//! - Label buffers are `width * height` bytes of class ids in row-major
//!   order.
//! - Functions return `dg_status`; anything other than `DG_OK` leaves a
//!   human-readable explanation in `dg_last_error_message()`. The message
//!   pointer is thread-local and stays valid until the next call from the
//!   same thread.
//! - Null pointers are rejected with `DG_ERR_NULL_ARGUMENT`, never
//!   dereferenced. Panics are caught at the boundary and reported as
//!   `DG_ERR_INTERNAL`.

#![allow(non_camel_case_types)]

use domaingap::error::Error;
use domaingap::gap;
use domaingap::imgproc::{ImageRgb, LabelMap};
use domaingap::segmetrics;
use domaingap::translator::{Direction, TranslatorPair};
use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

/// Result of every fallible call in this interface.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum dg_status {
    DG_OK = 0,
    /// A required pointer argument was null.
    DG_ERR_NULL_ARGUMENT = 1,
    /// Invalid parameter values (levels, direction, class id, sizes).
    DG_ERR_CONFIG = 2,
    /// The data itself cannot be processed (absent class, constant input,
    /// mismatched extents).
    DG_ERR_DATA = 3,
    /// Reading or parsing a file failed.
    DG_ERR_IO = 4,
    /// An internal invariant broke; report this as a bug.
    DG_ERR_INTERNAL = 5,
}

use dg_status::*;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn fail(status: dg_status, msg: &str) -> dg_status {
    set_error(msg);
    status
}

fn status_for(e: &Error) -> dg_status {
    match e {
        Error::Config(_) => DG_ERR_CONFIG,
        Error::Io { .. } | Error::Parse { .. } => DG_ERR_IO,
        Error::Internal(_) => DG_ERR_INTERNAL,
        _ => DG_ERR_DATA,
    }
}

fn fail_with(e: &Error) -> dg_status {
    fail(status_for(e), &e.to_string())
}

/// Runs `body` with panics translated to DG_ERR_INTERNAL.
fn guarded(body: impl FnOnce() -> dg_status) -> dg_status {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => fail(DG_ERR_INTERNAL, "panic caught at the C boundary"),
    }
}

/// Explanation of the most recent failure on this thread. Empty until an
/// error occurs; the pointer is invalidated by the next failing call.
#[no_mangle]
pub extern "C" fn dg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn dg_version() -> *const c_char {
    const VERSION: &CStr =
        match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
            Ok(v) => v,
            Err(_) => unreachable!(),
        };
    VERSION.as_ptr()
}

/// Number of bins written by dg_hue_histogram.
#[no_mangle]
pub extern "C" fn dg_hue_bins() -> usize {
    gap::HUE_BINS
}

/// Number of semantic classes the library models.
#[no_mangle]
pub extern "C" fn dg_num_classes() -> usize {
    domaingap::NUM_CLASSES
}

/// # Safety
/// `rgb` must point to `3 * width * height` doubles and `labels` to
/// `width * height` bytes.
unsafe fn image_from_raw(
    rgb: *const f64,
    labels: *const u8,
    width: usize,
    height: usize,
) -> Result<(ImageRgb, LabelMap), dg_status> {
    if rgb.is_null() || labels.is_null() {
        return Err(fail(DG_ERR_NULL_ARGUMENT, "rgb and labels must be non-null"));
    }
    let n = width
        .checked_mul(height)
        .filter(|&n| n > 0)
        .ok_or_else(|| fail(DG_ERR_CONFIG, "image extents must be positive and not overflow"))?;
    let data = std::slice::from_raw_parts(rgb, 3 * n).to_vec();
    let label_data = std::slice::from_raw_parts(labels, n).to_vec();
    Ok((
        ImageRgb { width, height, data },
        LabelMap { width, height, data: label_data },
    ))
}

/// Normalized hue histogram of one class. Writes `dg_hue_bins()` doubles to
/// `bins`; `pixel_count` and `excluded_count` are optional outputs for the
/// number of chromatic pixels binned and achromatic pixels skipped.
///
/// # Safety
/// `rgb` must point to `3 * width * height` doubles, `labels` to
/// `width * height` bytes, and `bins` to `dg_hue_bins()` doubles.
#[no_mangle]
pub unsafe extern "C" fn dg_hue_histogram(
    rgb: *const f64,
    labels: *const u8,
    width: usize,
    height: usize,
    class_id: u8,
    bins: *mut f64,
    pixel_count: *mut u64,
    excluded_count: *mut u64,
) -> dg_status {
    guarded(|| {
        if bins.is_null() {
            return fail(DG_ERR_NULL_ARGUMENT, "bins must be non-null");
        }
        let (img, label_map) = match image_from_raw(rgb, labels, width, height) {
            Ok(v) => v,
            Err(status) => return status,
        };
        match gap::hue_histogram(&img, &label_map, class_id) {
            Ok(h) => {
                std::slice::from_raw_parts_mut(bins, gap::HUE_BINS).copy_from_slice(&h.bins);
                if !pixel_count.is_null() {
                    *pixel_count = h.pixel_count;
                }
                if !excluded_count.is_null() {
                    *excluded_count = h.excluded_count;
                }
                DG_OK
            }
            Err(e) => fail_with(&e),
        }
    })
}

/// Texture statistics of one class: gray-level co-occurrence over
/// horizontally adjacent same-class pixels, reduced to four features
/// written to `features` in the order contrast, homogeneity, energy,
/// entropy.
///
/// # Safety
/// `rgb` must point to `3 * width * height` doubles, `labels` to
/// `width * height` bytes, and `features` to 4 doubles.
#[no_mangle]
pub unsafe extern "C" fn dg_haralick(
    rgb: *const f64,
    labels: *const u8,
    width: usize,
    height: usize,
    class_id: u8,
    levels: usize,
    features: *mut f64,
) -> dg_status {
    guarded(|| {
        if features.is_null() {
            return fail(DG_ERR_NULL_ARGUMENT, "features must be non-null");
        }
        let (img, label_map) = match image_from_raw(rgb, labels, width, height) {
            Ok(v) => v,
            Err(status) => return status,
        };
        match gap::glcm(&img, &label_map, class_id, levels) {
            Ok(m) => {
                let f = gap::haralick(&m).as_array();
                std::slice::from_raw_parts_mut(features, 4).copy_from_slice(&f);
                DG_OK
            }
            Err(e) => fail_with(&e),
        }
    })
}

/// Sample Pearson correlation of two length-`n` vectors. Constant input has
/// no defined correlation and yields DG_ERR_DATA.
///
/// # Safety
/// `a` and `b` must point to `n` doubles each; `out` to one double.
#[no_mangle]
pub unsafe extern "C" fn dg_pearson(
    a: *const f64,
    b: *const f64,
    n: usize,
    out: *mut f64,
) -> dg_status {
    guarded(|| {
        if a.is_null() || b.is_null() || out.is_null() {
            return fail(DG_ERR_NULL_ARGUMENT, "a, b, and out must be non-null");
        }
        let av = std::slice::from_raw_parts(a, n);
        let bv = std::slice::from_raw_parts(b, n);
        match gap::pearson(av, bv) {
            Ok(r) => {
                *out = r;
                DG_OK
            }
            Err(e) => fail_with(&e),
        }
    })
}

/// Intersection-over-union from flat prediction/truth id buffers.
/// `per_class` receives `classes` values; classes absent from both
/// prediction and truth are written as NaN and skipped by the mean.
/// `mean` is NaN when every class is absent. Either output may be null.
///
/// # Safety
/// `predicted` and `truth` must point to `n_pixels` bytes each;
/// `per_class`, when non-null, to `classes` doubles; `mean`, when
/// non-null, to one double.
#[no_mangle]
pub unsafe extern "C" fn dg_mean_iou(
    predicted: *const u8,
    truth: *const u8,
    n_pixels: usize,
    classes: usize,
    per_class: *mut f64,
    mean: *mut f64,
) -> dg_status {
    guarded(|| {
        if predicted.is_null() || truth.is_null() {
            return fail(DG_ERR_NULL_ARGUMENT, "predicted and truth must be non-null");
        }
        if n_pixels == 0 || classes == 0 {
            return fail(DG_ERR_CONFIG, "n_pixels and classes must be positive");
        }
        let pred = LabelMap {
            width: n_pixels,
            height: 1,
            data: std::slice::from_raw_parts(predicted, n_pixels).to_vec(),
        };
        let gt = LabelMap {
            width: n_pixels,
            height: 1,
            data: std::slice::from_raw_parts(truth, n_pixels).to_vec(),
        };
        let confusion = match segmetrics::confusion_matrix(&[(&gt, &pred)], classes) {
            Ok(c) => c,
            Err(e) => return fail_with(&e),
        };
        let report = segmetrics::mean_iou(&confusion);
        if !per_class.is_null() {
            let out = std::slice::from_raw_parts_mut(per_class, classes);
            for (slot, v) in out.iter_mut().zip(&report.per_class) {
                *slot = v.unwrap_or(f64::NAN);
            }
        }
        if !mean.is_null() {
            *mean = report.mean.unwrap_or(f64::NAN);
        }
        DG_OK
    })
}

/// A loaded translator pair; create with dg_translator_load, release with
/// dg_translator_free.
pub struct dg_translator {
    inner: TranslatorPair,
}

/// Loads a translator checkpoint from `path` (NUL-terminated UTF-8) and
/// stores the new handle in `*out`.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dg_translator_load(
    path: *const c_char,
    out: *mut *mut dg_translator,
) -> dg_status {
    guarded(|| {
        if path.is_null() || out.is_null() {
            return fail(DG_ERR_NULL_ARGUMENT, "path and out must be non-null");
        }
        let Ok(path) = CStr::from_ptr(path).to_str() else {
            return fail(DG_ERR_CONFIG, "path is not valid UTF-8");
        };
        match TranslatorPair::load(std::path::Path::new(path)) {
            Ok(pair) => {
                *out = Box::into_raw(Box::new(dg_translator { inner: pair }));
                DG_OK
            }
            Err(e) => fail_with(&e),
        }
    })
}

/// Side length of the square images a loaded translator accepts.
///
/// # Safety
/// `handle` must come from dg_translator_load and `out` be non-null.
#[no_mangle]
pub unsafe extern "C" fn dg_translator_image_size(
    handle: *const dg_translator,
    out: *mut usize,
) -> dg_status {
    guarded(|| {
        if handle.is_null() || out.is_null() {
            return fail(DG_ERR_NULL_ARGUMENT, "handle and out must be non-null");
        }
        *out = (*handle).inner.cfg.image_size;
        DG_OK
    })
}

/// Runs one image through the translator. `direction` 0 maps domain X to Y,
/// 1 maps Y to X. `rgb_in` and `rgb_out` are planar buffers of
/// `3 * width * height` doubles; extents must match the translator's
/// image size.
///
/// # Safety
/// `handle` must come from dg_translator_load; buffer sizes as above.
#[no_mangle]
pub unsafe extern "C" fn dg_translate(
    handle: *mut dg_translator,
    rgb_in: *const f64,
    width: usize,
    height: usize,
    direction: c_int,
    rgb_out: *mut f64,
) -> dg_status {
    guarded(|| {
        if handle.is_null() || rgb_in.is_null() || rgb_out.is_null() {
            return fail(DG_ERR_NULL_ARGUMENT, "handle and buffers must be non-null");
        }
        let dir = match direction {
            0 => Direction::XToY,
            1 => Direction::YToX,
            other => {
                return fail(DG_ERR_CONFIG, &format!("direction {other} must be 0 or 1"));
            }
        };
        let Some(n) = width.checked_mul(height).filter(|&n| n > 0) else {
            return fail(DG_ERR_CONFIG, "image extents must be positive and not overflow");
        };
        let img = ImageRgb {
            width,
            height,
            data: std::slice::from_raw_parts(rgb_in, 3 * n).to_vec(),
        };
        match (*handle).inner.translate(&img, dir) {
            Ok(out_img) => {
                std::slice::from_raw_parts_mut(rgb_out, 3 * n).copy_from_slice(&out_img.data);
                DG_OK
            }
            Err(e) => fail_with(&e),
        }
    })
}

/// Releases a translator handle. Null is a no-op.
///
/// # Safety
/// `handle` must be null or a pointer from dg_translator_load, released
/// exactly once.
#[no_mangle]
pub unsafe extern "C" fn dg_translator_free(handle: *mut dg_translator) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}
