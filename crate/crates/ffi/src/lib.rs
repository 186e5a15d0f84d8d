//! C ABI for the fairlens core.
//!
//! Every function returns an [`FlStatus`] and writes its result through an out
//! pointer. On failure the message is kept per thread and can be read with
//! [`fl_last_error_message`]. Distributions and estimators are opaque handles
//! owned by the caller and released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use fairlens::color::{self, LabPixel, RgbImage, SkinMask};
use fairlens::distance;
use fairlens::distribution::SkinDistribution;
use fairlens::estimator::BayesEstimator;
use fairlens::mitigation::{self, LossConfig};
use fairlens::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Precondition = 5,
    /// A panic was caught at the boundary.
    Internal = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlLab {
    pub l: f64,
    pub a: f64,
    pub b: f64,
}

/// Sorted ITA samples of one image.
pub struct FlDistribution(SkinDistribution);

/// Fitted performance estimator.
pub struct FlEstimator(BayesEstimator);

struct Failure {
    status: FlStatus,
    message: String,
}

impl Failure {
    fn new(status: FlStatus, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn null(what: &str) -> Self {
        Self::new(FlStatus::NullPointer, format!("null pointer: {what}"))
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => FlStatus::Io,
            Error::Decode { .. } | Error::ZeroArea { .. } | Error::Format { .. } | Error::Json(_) | Error::Csv(_) => {
                FlStatus::Format
            }
            Error::InsufficientBatches { .. }
            | Error::Singular(_)
            | Error::ZeroVariance(_)
            | Error::Precondition(_)
            | Error::Diverged { .. } => FlStatus::Precondition,
            _ => FlStatus::InvalidArgument,
        };
        Self::new(status, e.to_string())
    }
}

type FfiResult<T> = Result<T, Failure>;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', "?")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> FfiResult<()>) -> FlStatus {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FlStatus::Ok,
        Ok(Err(failure)) => {
            set_last_error(failure.message);
            failure.status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal error: {msg}"));
            FlStatus::Internal
        }
    }
}

unsafe fn out<'a, T>(ptr: *mut T, what: &str) -> FfiResult<&'a mut T> {
    ptr.as_mut().ok_or_else(|| Failure::null(what))
}

unsafe fn handle<'a, T>(ptr: *const T, what: &str) -> FfiResult<&'a T> {
    ptr.as_ref().ok_or_else(|| Failure::null(what))
}

// A zero length accepts any pointer, including null.
unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> FfiResult<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(Failure::null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn string(ptr: *const c_char, what: &str) -> FfiResult<String> {
    if ptr.is_null() {
        return Err(Failure::null(what));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Failure::new(FlStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

fn labels_of(bytes: &[u8]) -> Vec<bool> {
    bytes.iter().map(|&b| b != 0).collect()
}

fn finite(v: f64, what: &str) -> FfiResult<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Failure::new(
            FlStatus::InvalidArgument,
            format!("{what} must be finite, got {v}"),
        ))
    }
}

/// Message of the last failed call on this thread, or null when the last call
/// succeeded. The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn fl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `out` must be null or point to writable memory for one `FlLab`.
#[no_mangle]
pub unsafe extern "C" fn fl_srgb_to_lab(r: u8, g: u8, b: u8, out: *mut FlLab) -> FlStatus {
    guard(|| {
        let lab = color::srgb_to_cielab([r, g, b]);
        *self::out(out, "out")? = FlLab {
            l: lab.l,
            a: lab.a,
            b: lab.b,
        };
        Ok(())
    })
}

/// ITA angle in degrees. Fails with `PRECONDITION` when `b == 0`.
///
/// # Safety
/// `out` must be null or point to a writable `double`.
#[no_mangle]
pub unsafe extern "C" fn fl_ita(l: f64, a: f64, b: f64, out: *mut f64) -> FlStatus {
    guard(|| {
        let dst = self::out(out, "out")?;
        finite(l, "L")?;
        finite(b, "b")?;
        *dst = color::ita_of(LabPixel { l, a, b })
            .ok_or_else(|| Failure::new(FlStatus::Precondition, "ITA is undefined when b = 0"))?;
        Ok(())
    })
}

/// Builds a distribution from raw ITA samples.
///
/// # Safety
/// `source_id` must be a NUL-terminated string, `samples` must point to `len`
/// doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fl_distribution_new(
    source_id: *const c_char,
    samples: *const f64,
    len: usize,
    out: *mut *mut FlDistribution,
) -> FlStatus {
    guard(|| {
        let dst = self::out(out, "out")?;
        let id = string(source_id, "source_id")?;
        let samples = slice(samples, len, "samples")?.to_vec();
        let d = SkinDistribution::new(id, samples)?;
        *dst = Box::into_raw(Box::new(FlDistribution(d)));
        Ok(())
    })
}

/// Builds a distribution from an interleaved RGB buffer of `width * height`
/// pixels and a mask of the same size where non-zero bytes mark skin.
///
/// # Safety
/// `rgb` must hold `3 * width * height` bytes, `mask` `width * height` bytes;
/// `source_id` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fl_distribution_from_pixels(
    source_id: *const c_char,
    width: u32,
    height: u32,
    rgb: *const u8,
    mask: *const u8,
    out: *mut *mut FlDistribution,
) -> FlStatus {
    guard(|| {
        let dst = self::out(out, "out")?;
        let id = string(source_id, "source_id")?;
        let n = width as usize * height as usize;
        let rgb = slice(rgb, 3 * n, "rgb")?;
        let mask = slice(mask, n, "mask")?;
        let pixels = rgb.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let img = RgbImage::new(width, height, pixels)?;
        let mask = SkinMask::from_bytes(width, height, mask)?;
        let d = color::skin_distribution(&img, &mask, id)?;
        *dst = Box::into_raw(Box::new(FlDistribution(d)));
        Ok(())
    })
}

/// Loads an image and its mask from disk. A null `source_id` uses the image
/// file stem.
///
/// # Safety
/// Paths must be NUL-terminated strings, `source_id` null or NUL-terminated,
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fl_distribution_from_image(
    image_path: *const c_char,
    mask_path: *const c_char,
    source_id: *const c_char,
    out: *mut *mut FlDistribution,
) -> FlStatus {
    guard(|| {
        let dst = self::out(out, "out")?;
        let image_path = string(image_path, "image_path")?;
        let mask_path = string(mask_path, "mask_path")?;
        let id = if source_id.is_null() {
            Path::new(&image_path)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| image_path.clone())
        } else {
            string(source_id, "source_id")?
        };
        let img = color::load_image(&image_path)?;
        let mask = color::load_mask(&mask_path)?;
        let d = color::skin_distribution(&img, &mask, id)?;
        *dst = Box::into_raw(Box::new(FlDistribution(d)));
        Ok(())
    })
}

/// # Safety
/// `d` must be null or a handle from an `fl_distribution_*` constructor that
/// has not been freed.
#[no_mangle]
pub unsafe extern "C" fn fl_distribution_free(d: *mut FlDistribution) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}

/// # Safety
/// `d` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fl_distribution_len(d: *const FlDistribution, out: *mut usize) -> FlStatus {
    guard(|| {
        *self::out(out, "out")? = handle(d, "distribution")?.0.len();
        Ok(())
    })
}

/// # Safety
/// `d` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fl_distribution_median(d: *const FlDistribution, out: *mut f64) -> FlStatus {
    guard(|| {
        *self::out(out, "out")? = handle(d, "distribution")?.0.median();
        Ok(())
    })
}

/// Generalized inverse of the ECDF at `p` in `[0, 1]`.
///
/// # Safety
/// `d` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fl_distribution_quantile(d: *const FlDistribution, p: f64, out: *mut f64) -> FlStatus {
    guard(|| {
        let dst = self::out(out, "out")?;
        *dst = handle(d, "distribution")?.0.quantile(p)?;
        Ok(())
    })
}

/// Copies up to `capacity` sorted samples into `buf` and stores the total
/// count in `written`.
///
/// # Safety
/// `d` must be a live handle, `buf` must hold `capacity` doubles and
/// `written` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fl_distribution_samples(
    d: *const FlDistribution,
    buf: *mut f64,
    capacity: usize,
    written: *mut usize,
) -> FlStatus {
    guard(|| {
        let written = self::out(written, "written")?;
        let samples = handle(d, "distribution")?.0.samples();
        let n = samples.len().min(capacity);
        if n > 0 {
            if buf.is_null() {
                return Err(Failure::null("buf"));
            }
            std::slice::from_raw_parts_mut(buf, n).copy_from_slice(&samples[..n]);
        }
        *written = samples.len();
        Ok(())
    })
}

/// Unsigned one-dimensional Wasserstein distance.
///
/// # Safety
/// Both handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fl_wasserstein1(
    a: *const FlDistribution,
    b: *const FlDistribution,
    out: *mut f64,
) -> FlStatus {
    guard(|| {
        let dst = self::out(out, "out")?;
        *dst = distance::wasserstein1(&handle(a, "a")?.0, &handle(b, "b")?.0);
        Ok(())
    })
}

/// Signed distance of `other` from `base`: negative when the median of
/// `other` does not exceed the median of `base`.
///
/// # Safety
/// Both handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fl_signed_distance(
    base: *const FlDistribution,
    other: *const FlDistribution,
    out: *mut f64,
) -> FlStatus {
    guard(|| {
        let dst = self::out(out, "out")?;
        *dst = distance::signed_distance(&handle(base, "base")?.0, &handle(other, "other")?.0).value;
        Ok(())
    })
}

/// Parses an estimator from its JSON form.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fl_estimator_from_json(json: *const c_char, out: *mut *mut FlEstimator) -> FlStatus {
    guard(|| {
        let dst = self::out(out, "out")?;
        let est = BayesEstimator::from_json(&string(json, "json")?)?;
        *dst = Box::into_raw(Box::new(FlEstimator(est)));
        Ok(())
    })
}

/// Reads an estimator JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fl_estimator_load(path: *const c_char, out: *mut *mut FlEstimator) -> FlStatus {
    guard(|| {
        let dst = self::out(out, "out")?;
        let path = string(path, "path")?;
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Failure::new(FlStatus::Io, format!("i/o error on {path}: {e}")))?;
        let est = BayesEstimator::from_json(&text)?;
        *dst = Box::into_raw(Box::new(FlEstimator(est)));
        Ok(())
    })
}

/// # Safety
/// `e` must be null or a live estimator handle.
#[no_mangle]
pub unsafe extern "C" fn fl_estimator_free(e: *mut FlEstimator) {
    if !e.is_null() {
        drop(Box::from_raw(e));
    }
}

/// # Safety
/// `e` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fl_estimator_degree(e: *const FlEstimator, out: *mut usize) -> FlStatus {
    guard(|| {
        *self::out(out, "out")? = handle(e, "estimator")?.0.degree;
        Ok(())
    })
}

/// Predicted performance at signed distance `d`, clamped to `[0, 1]`.
///
/// # Safety
/// `e` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fl_estimator_predict(e: *const FlEstimator, d: f64, out: *mut f64) -> FlStatus {
    guard(|| {
        let dst = self::out(out, "out")?;
        let est = handle(e, "estimator")?;
        *dst = est.0.predict(finite(d, "distance")?);
        Ok(())
    })
}

/// Softmax of `1 - eps_i` over `n` predicted performances, written to `out`.
///
/// # Safety
/// `eps` and `out` must each hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn fl_penalty_weights(eps: *const f64, n: usize, out: *mut f64) -> FlStatus {
    guard(|| {
        let eps = slice(eps, n, "eps")?;
        let w = mitigation::penalty_weights(eps)?;
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        std::slice::from_raw_parts_mut(out, n).copy_from_slice(&w);
        Ok(())
    })
}

/// Binary cross-entropy of one score with the score clamped to
/// `[floor, 1 - floor]`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fl_bce(score: f64, label: bool, floor: f64, out: *mut f64) -> FlStatus {
    guard(|| {
        let dst = self::out(out, "out")?;
        finite(score, "score")?;
        if !(floor > 0.0 && floor < 0.5) {
            return Err(Failure::new(
                FlStatus::InvalidArgument,
                format!("floor must lie in (0, 0.5), got {floor}"),
            ));
        }
        *dst = mitigation::bce(score, label, floor);
        Ok(())
    })
}

/// `alpha * sum_i BCE_i * w_i`. Labels are bytes, non-zero meaning positive.
///
/// # Safety
/// `scores`, `labels` and `weights` must each hold `n` elements and `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn fl_weighted_bce(
    scores: *const f64,
    labels: *const u8,
    weights: *const f64,
    n: usize,
    alpha: f64,
    floor: f64,
    out: *mut f64,
) -> FlStatus {
    guard(|| {
        let dst = self::out(out, "out")?;
        let scores = slice(scores, n, "scores")?;
        let labels = labels_of(slice(labels, n, "labels")?);
        let weights = slice(weights, n, "weights")?;
        *dst = mitigation::weighted_bce(scores, &labels, weights, alpha, floor)?;
        Ok(())
    })
}

/// Loss of one batch at `epoch`: mean BCE while `epoch <= penalty_start_epoch`,
/// then the penalty-weighted sum with weights from the estimator's
/// predictions at `distances`.
///
/// # Safety
/// `scores`, `labels` and `distances` must each hold `n` elements, `e` must be
/// a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fl_distance_loss(
    scores: *const f64,
    labels: *const u8,
    distances: *const f64,
    n: usize,
    epoch: usize,
    penalty_start_epoch: usize,
    penalty_weight: f64,
    e: *const FlEstimator,
    out: *mut f64,
) -> FlStatus {
    guard(|| {
        let dst = self::out(out, "out")?;
        let est = handle(e, "estimator")?;
        let scores = slice(scores, n, "scores")?;
        let labels = labels_of(slice(labels, n, "labels")?);
        let distances = slice(distances, n, "distances")?;
        let cfg = LossConfig {
            penalty_start_epoch,
            penalty_weight,
            ..LossConfig::default()
        };
        cfg.validate()?;
        *dst = mitigation::distance_loss(scores, &labels, distances, epoch, &cfg, &est.0)?;
        Ok(())
    })
}
