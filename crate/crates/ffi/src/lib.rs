//! C ABI over the cmssa core: load a model, score images, compute metrics.
//!
//! Every function returns a [`CmssaStatus`]. On failure a message is kept per
//! thread and can be read with [`cmssa_last_error`]. Panics are caught at the
//! boundary and reported as `CMSSA_STATUS_INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use cmssa::encoders::{DualEncoder, Embedding};
use cmssa::imaging::{load_image, Image};
use cmssa::inference::{score_image, CropScorer};
use cmssa::metrics;
use cmssa::model::Model;
use cmssa::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CmssaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Checkpoint = 5,
    Shape = 6,
    Numeric = 7,
    Internal = 8,
}

impl From<&Error> for CmssaStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io { .. } | Error::Image { .. } => CmssaStatus::Io,
            Error::Parse { .. } => CmssaStatus::Parse,
            Error::Checkpoint { .. } | Error::Version { .. } | Error::ConfigMismatch { .. } => {
                CmssaStatus::Checkpoint
            }
            Error::Shape { .. } => CmssaStatus::Shape,
            Error::ZeroNorm | Error::NonFinite(_) | Error::NonFiniteLoss { .. } => CmssaStatus::Numeric,
            _ => CmssaStatus::InvalidArgument,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn fail(status: CmssaStatus, msg: impl Into<String>) -> CmssaStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> Result<(), CmssaStatus>) -> CmssaStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CmssaStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => fail(CmssaStatus::Internal, "panic inside cmssa"),
    }
}

fn core_err(e: Error) -> CmssaStatus {
    fail(CmssaStatus::from(&e), e.to_string())
}

/// Opaque model handle.
pub struct CmssaModel {
    model: Model,
    levels: Vec<Embedding>,
}

impl CropScorer for CmssaModel {
    fn crop_side(&self) -> usize {
        self.model.encoder.config().input_side
    }

    fn score_crop(&self, crop: &Image) -> cmssa::Result<f64> {
        self.model.score_crop_with(crop, &self.levels)
    }
}

unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a Path, CmssaStatus> {
    if path.is_null() {
        return Err(fail(CmssaStatus::NullPointer, "path is null"));
    }
    CStr::from_ptr(path)
        .to_str()
        .map(Path::new)
        .map_err(|_| fail(CmssaStatus::InvalidArgument, "path is not valid UTF-8"))
}

unsafe fn slice_arg<'a>(p: *const f64, n: usize, name: &str) -> Result<&'a [f64], CmssaStatus> {
    if p.is_null() {
        return Err(fail(CmssaStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

/// Loads a model checkpoint. On success `*out` owns a handle that must be
/// released with [`cmssa_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cmssa_model_load(path: *const c_char, out: *mut *mut CmssaModel) -> CmssaStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(CmssaStatus::NullPointer, "out is null"));
        }
        *out = ptr::null_mut();
        let path = path_arg(path)?;
        let model = Model::load(path).map_err(core_err)?;
        let levels = model.level_embeddings().map_err(core_err)?;
        *out = Box::into_raw(Box::new(CmssaModel { model, levels }));
        Ok(())
    })
}

/// Releases a handle from [`cmssa_model_load`]. Null is ignored.
///
/// # Safety
/// `model` must be null or a live handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn cmssa_model_free(model: *mut CmssaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Side length of the square crops the model scores.
///
/// # Safety
/// `model` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cmssa_model_input_side(model: *const CmssaModel, out: *mut u32) -> CmssaStatus {
    guard(|| {
        if model.is_null() || out.is_null() {
            return Err(fail(CmssaStatus::NullPointer, "model or out is null"));
        }
        *out = (*model).crop_side() as u32;
        Ok(())
    })
}

/// Scores an interleaved RGB8 image (`width * height * 3` bytes, rows packed)
/// by mean crop score. `stride` 0 selects non-overlapping crops.
///
/// # Safety
/// `model` must be a live handle, `pixels` must hold `width * height * 3`
/// bytes and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cmssa_model_score_rgb8(
    model: *const CmssaModel,
    pixels: *const u8,
    width: u32,
    height: u32,
    stride: u32,
    out: *mut f64,
) -> CmssaStatus {
    guard(|| {
        if model.is_null() || pixels.is_null() || out.is_null() {
            return Err(fail(CmssaStatus::NullPointer, "model, pixels or out is null"));
        }
        if width == 0 || height == 0 {
            return Err(fail(CmssaStatus::InvalidArgument, "image has zero size"));
        }
        let n = width as usize * height as usize * 3;
        let data = std::slice::from_raw_parts(pixels, n);
        let image = Image::new(
            width as usize,
            height as usize,
            data.iter().map(|&v| v as f32 / 255.0).collect(),
        )
        .map_err(core_err)?;
        let stride = (stride > 0).then_some(stride as usize);
        *out = score_image(&*model, &image, stride).map_err(core_err)?;
        Ok(())
    })
}

/// Loads an image file and scores it like [`cmssa_model_score_rgb8`].
///
/// # Safety
/// `model` must be a live handle, `path` a NUL-terminated string and `out` a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cmssa_model_score_file(
    model: *const CmssaModel,
    path: *const c_char,
    stride: u32,
    out: *mut f64,
) -> CmssaStatus {
    guard(|| {
        if model.is_null() || out.is_null() {
            return Err(fail(CmssaStatus::NullPointer, "model or out is null"));
        }
        let image = load_image(path_arg(path)?).map_err(core_err)?;
        let stride = (stride > 0).then_some(stride as usize);
        *out = score_image(&*model, &image, stride).map_err(core_err)?;
        Ok(())
    })
}

unsafe fn correlation(
    pred: *const f64,
    gt: *const f64,
    n: usize,
    out_value: *mut f64,
    out_degenerate: *mut bool,
    f: fn(&[f64], &[f64]) -> cmssa::Result<metrics::Correlation>,
) -> CmssaStatus {
    guard(|| {
        if out_value.is_null() {
            return Err(fail(CmssaStatus::NullPointer, "out_value is null"));
        }
        let c = f(slice_arg(pred, n, "pred")?, slice_arg(gt, n, "gt")?).map_err(core_err)?;
        *out_value = c.value;
        if !out_degenerate.is_null() {
            *out_degenerate = c.degenerate;
        }
        Ok(())
    })
}

unsafe fn error_metric(
    pred: *const f64,
    gt: *const f64,
    n: usize,
    out: *mut f64,
    f: fn(&[f64], &[f64]) -> cmssa::Result<f64>,
) -> CmssaStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(CmssaStatus::NullPointer, "out is null"));
        }
        *out = f(slice_arg(pred, n, "pred")?, slice_arg(gt, n, "gt")?).map_err(core_err)?;
        Ok(())
    })
}

/// Spearman rank correlation with average ranks for ties. Constant input
/// gives 0 with `*out_degenerate` set; `out_degenerate` may be null.
///
/// # Safety
/// `pred` and `gt` must each hold `n` values; `out_value` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cmssa_srcc(
    pred: *const f64,
    gt: *const f64,
    n: usize,
    out_value: *mut f64,
    out_degenerate: *mut bool,
) -> CmssaStatus {
    correlation(pred, gt, n, out_value, out_degenerate, metrics::srcc)
}

/// Pearson correlation; degenerate handling as in [`cmssa_srcc`].
///
/// # Safety
/// As [`cmssa_srcc`].
#[no_mangle]
pub unsafe extern "C" fn cmssa_plcc(
    pred: *const f64,
    gt: *const f64,
    n: usize,
    out_value: *mut f64,
    out_degenerate: *mut bool,
) -> CmssaStatus {
    correlation(pred, gt, n, out_value, out_degenerate, metrics::plcc)
}

/// Root mean squared error.
///
/// # Safety
/// `pred` and `gt` must each hold `n` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cmssa_rmse(pred: *const f64, gt: *const f64, n: usize, out: *mut f64) -> CmssaStatus {
    error_metric(pred, gt, n, out, metrics::rmse)
}

/// Square root of the mean absolute error.
///
/// # Safety
/// As [`cmssa_rmse`].
#[no_mangle]
pub unsafe extern "C" fn cmssa_rmae(pred: *const f64, gt: *const f64, n: usize, out: *mut f64) -> CmssaStatus {
    error_metric(pred, gt, n, out, metrics::rmae)
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next cmssa call on the same thread.
#[no_mangle]
pub extern "C" fn cmssa_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cmssa_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
