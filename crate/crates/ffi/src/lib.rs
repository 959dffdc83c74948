//! C interface to the dana toolkit.
//!
//! Every function returns a [`DanaStatus`]. On failure a human-readable
//! message is kept per thread and can be read with [`dana_last_error`].
//! Buffers are caller-owned; models are opaque handles released with
//! [`dana_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use dana::dap::{dap_forward, DapParams, FeatureMaps};
use dana::nn::{checkpoint, Classifier};
use dana::signal::TimeWindow;
use dana::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DanaStatus {
    Ok = 0,
    NullPointer = 1,
    Dimension = 2,
    UnsupportedDimensions = 3,
    TooShort = 4,
    InvalidSelection = 5,
    Config = 6,
    Io = 7,
    Format = 8,
    BufferTooSmall = 9,
    Internal = 10,
}

/// A trained classifier loaded from a checkpoint directory.
pub struct DanaModel {
    inner: Classifier,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &Error) -> DanaStatus {
    match err {
        Error::Dimension { .. } | Error::EmptyTape => DanaStatus::Dimension,
        Error::UnsupportedDimensions(_) => DanaStatus::UnsupportedDimensions,
        Error::TooShort { .. } => DanaStatus::TooShort,
        Error::InvalidSelection(_) => DanaStatus::InvalidSelection,
        Error::Config(_) | Error::DegenerateStats { .. } => DanaStatus::Config,
        Error::Io(_) => DanaStatus::Io,
        Error::Format { .. } | Error::Json(_) => DanaStatus::Format,
    }
}

enum Failure {
    Status(DanaStatus, String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn null() -> Failure {
    Failure::Status(DanaStatus::NullPointer, "null pointer argument".into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DanaStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DanaStatus::Ok,
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            DanaStatus::Internal
        }
    }
}

unsafe fn input<'a>(p: *const f64, len: usize) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null());
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a>(p: *mut f64, len: usize, need: usize) -> Result<&'a mut [f64], Failure> {
    if len < need {
        return Err(Failure::Status(
            DanaStatus::BufferTooSmall,
            format!("output buffer holds {len} values, {need} needed"),
        ));
    }
    if need == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null());
    }
    Ok(slice::from_raw_parts_mut(p, need))
}

/// Message for the most recent failure on this thread, or null. The pointer
/// stays valid until the next dana call on the same thread.
#[no_mangle]
pub extern "C" fn dana_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Adaptive max pooling of `maps` row-major `samples x streams` maps onto a
/// `width x height` grid. `out` receives `maps * width * height` values.
///
/// # Safety
/// `input_maps` must point to `maps * samples * streams` readable values and
/// `out` to `out_len` writable values.
#[no_mangle]
pub unsafe extern "C" fn dana_dap_forward(
    input_maps: *const f64,
    maps: usize,
    samples: usize,
    streams: usize,
    width: usize,
    height: usize,
    axes_per_sensor: usize,
    out: *mut f64,
    out_len: usize,
) -> DanaStatus {
    guard(|| {
        let data = input(input_maps, maps * samples * streams)?;
        let params = DapParams::new(width, height)?.with_axes_per_sensor(axes_per_sensor)?;
        let fmaps = FeatureMaps::new(maps, samples, streams, data.to_vec())?;
        let pooled = dap_forward(&fmaps, params)?;
        output(out, out_len, pooled.values.numel())?.copy_from_slice(pooled.values.data());
        Ok(())
    })
}

/// Linear resampling of a row-major `samples x streams` window from
/// `rate_hz` to `target_rate_hz`. The new sample count is written to
/// `out_samples` even when `out` is too small.
///
/// # Safety
/// `data` must point to `samples * streams` readable values, `out` to
/// `out_len` writable values and `out_samples` to one writable `usize`.
#[no_mangle]
pub unsafe extern "C" fn dana_resample(
    data: *const f64,
    samples: usize,
    streams: usize,
    rate_hz: f64,
    target_rate_hz: f64,
    out: *mut f64,
    out_len: usize,
    out_samples: *mut usize,
) -> DanaStatus {
    guard(|| {
        if out_samples.is_null() {
            return Err(null());
        }
        let values = input(data, samples * streams)?;
        let window = TimeWindow::new(values.to_vec(), samples, rate_hz, (0..streams).collect(), 1)?;
        let resampled = window.resample(target_rate_hz)?;
        *out_samples = resampled.samples();
        output(out, out_len, resampled.data().len())?.copy_from_slice(resampled.data());
        Ok(())
    })
}

/// Loads a checkpoint directory written by `dana train`.
///
/// # Safety
/// `dir` must be a NUL-terminated UTF-8 path and `model` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn dana_model_load(dir: *const c_char, model: *mut *mut DanaModel) -> DanaStatus {
    guard(|| {
        if dir.is_null() || model.is_null() {
            return Err(null());
        }
        *model = ptr::null_mut();
        let path = CStr::from_ptr(dir)
            .to_str()
            .map_err(|_| Failure::Status(DanaStatus::Config, "path is not valid UTF-8".into()))?;
        let (inner, _) = checkpoint::load(Path::new(path))?;
        *model = Box::into_raw(Box::new(DanaModel { inner }));
        Ok(())
    })
}

/// Number of classes the model scores.
///
/// # Safety
/// `model` must be null or a live handle from [`dana_model_load`].
#[no_mangle]
pub unsafe extern "C" fn dana_model_classes(model: *const DanaModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.spec.classes)
}

/// Class scores for one window of `samples` rows holding the axes of the
/// listed sensors side by side. `scores` receives one logit per class and
/// `label` the arg-max class.
///
/// # Safety
/// `model` must be a live handle; `data` must hold
/// `samples * sensor_count * axes_per_sensor` values; `sensors` must hold
/// `sensor_count` ids; `scores` must hold `scores_len` values; `label` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn dana_model_predict(
    model: *const DanaModel,
    data: *const f64,
    samples: usize,
    rate_hz: f64,
    sensors: *const usize,
    sensor_count: usize,
    scores: *mut f64,
    scores_len: usize,
    label: *mut usize,
) -> DanaStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(null)?;
        if sensors.is_null() || label.is_null() {
            return Err(null());
        }
        let sensors = slice::from_raw_parts(sensors, sensor_count).to_vec();
        let axes = model.inner.spec.axes_per_sensor;
        let values = input(data, samples * sensor_count * axes)?;
        let window = TimeWindow::new(values.to_vec(), samples, rate_hz, sensors, axes)?;
        let logits = model.inner.scores(&[&window])?;
        output(scores, scores_len, logits.numel())?.copy_from_slice(logits.data());
        *label = dana::nn::argmax(logits.data());
        Ok(())
    })
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dana_model_free(model: *mut DanaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
