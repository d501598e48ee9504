//! C ABI for the irispad detection stack.
//!
//! Every function returns an [`IrispadStatus`]; on failure a message is
//! available from [`irispad_last_error`] on the same thread. Objects are
//! opaque handles created by `*_new`/`*_load` functions and released with the
//! matching `*_free`. Classes are passed as `IRISPAD_BONAFIDE` / `IRISPAD_ATTACK`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use irispad::evaluation::compute_report;
use irispad::fusion::{fuse_decide, run_pipeline, FusionConfig};
use irispad::photometric::{score_pair, Score3D};
use irispad::threshold::fit_threshold;
use irispad::{
    CapturePair, Class, Decision, Error, Label, LightingGeometry, Mask, NirImage, Source,
};

pub const IRISPAD_BONAFIDE: i32 = 0;
pub const IRISPAD_ATTACK: i32 = 1;
/// Marks a missing 3D decision in [`IrispadPipelineResult::d3`].
pub const IRISPAD_NONE: i32 = -1;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IrispadStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Io = 3,
    Parse = 4,
    DimensionMismatch = 5,
    /// Collinear lights, degenerate data or diverging training.
    Numerical = 6,
    /// Too few valid pixels to compute a 3D score.
    Unscorable = 7,
    Panic = 8,
}

/// Grayscale image with intensities in [0, 1].
pub struct IrispadImage(NirImage);

/// Boolean usable-pixel mask.
pub struct IrispadMask(Mask);

/// Trained texture ensemble plus 3D threshold.
pub struct IrispadPipeline(FusionConfig);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrispadPipelineResult {
    pub fused: i32,
    pub d2: i32,
    /// `IRISPAD_NONE` when the pair was unscorable in 3D.
    pub d3: i32,
    /// NaN when the pair was unscorable in 3D.
    pub q: f64,
    pub s2: f64,
    pub unscorable_3d: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrispadReport {
    pub accuracy: f64,
    /// NaN when there are no attack samples.
    pub apcer: f64,
    /// NaN when there are no bona fide samples.
    pub bpcer: f64,
    pub attacks: usize,
    pub bonafides: usize,
    pub attack_errors: usize,
    pub bonafide_errors: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> IrispadStatus {
    match e {
        Error::Io { .. } => IrispadStatus::Io,
        Error::Parse { .. } => IrispadStatus::Parse,
        Error::DimensionMismatch { .. } => IrispadStatus::DimensionMismatch,
        e if e.is_numerical() => IrispadStatus::Numerical,
        _ => IrispadStatus::InvalidInput,
    }
}

struct Fail(IrispadStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(IrispadStatus::NullPointer, format!("{what} is null"))
}

fn invalid(message: impl Into<String>) -> Fail {
    Fail(IrispadStatus::InvalidInput, message.into())
}

/// Runs `f`, converting errors and panics into a status plus last-error message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> IrispadStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            IrispadStatus::Ok
        }
        Ok(Err(Fail(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            IrispadStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn path(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn class_of(code: i32) -> Result<Class, Fail> {
    match code {
        IRISPAD_BONAFIDE => Ok(Class::BonaFide),
        IRISPAD_ATTACK => Ok(Class::Attack),
        other => Err(invalid(format!("unknown class code {other}"))),
    }
}

fn code_of(class: Class) -> i32 {
    match class {
        Class::BonaFide => IRISPAD_BONAFIDE,
        Class::Attack => IRISPAD_ATTACK,
    }
}

/// Message of the last failed call on this thread, or null. Valid until the next call.
#[no_mangle]
pub extern "C" fn irispad_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Creates an image from `width * height` row-major intensities in [0, 1].
///
/// # Safety
/// `data` must point to `width * height` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn irispad_image_new(
    width: usize,
    height: usize,
    data: *const f64,
    out: *mut *mut IrispadImage,
) -> IrispadStatus {
    guard(|| {
        let n = width
            .checked_mul(height)
            .ok_or_else(|| invalid("image size overflows"))?;
        let data = slice(data, n, "data")?;
        put(
            out,
            IrispadImage(NirImage::new(width, height, data.to_vec())?),
        )
    })
}

/// Reads an 8-bit binary PGM.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn irispad_image_load_pgm(
    path_: *const c_char,
    out: *mut *mut IrispadImage,
) -> IrispadStatus {
    guard(|| put(out, IrispadImage(NirImage::load_pgm(path(path_, "path")?)?)))
}

/// # Safety
/// `image` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn irispad_image_free(image: *mut IrispadImage) {
    if !image.is_null() {
        drop(Box::from_raw(image));
    }
}

/// Creates a mask from `width * height` bytes; nonzero means usable.
///
/// # Safety
/// `data` must point to `width * height` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn irispad_mask_new(
    width: usize,
    height: usize,
    data: *const u8,
    out: *mut *mut IrispadMask,
) -> IrispadStatus {
    guard(|| {
        let n = width
            .checked_mul(height)
            .ok_or_else(|| invalid("mask size overflows"))?;
        let bits = slice(data, n, "data")?.iter().map(|&b| b != 0).collect();
        put(out, IrispadMask(Mask::new(width, height, bits)?))
    })
}

/// Reads a PGM mask; values of 128 or more are usable.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn irispad_mask_load_pgm(
    path_: *const c_char,
    out: *mut *mut IrispadMask,
) -> IrispadStatus {
    guard(|| put(out, IrispadMask(Mask::load_pgm(path(path_, "path")?)?)))
}

/// # Safety
/// `mask` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn irispad_mask_free(mask: *mut IrispadMask) {
    if !mask.is_null() {
        drop(Box::from_raw(mask));
    }
}

unsafe fn capture_pair(
    left: *const IrispadImage,
    right: *const IrispadImage,
    mask_left: *const IrispadMask,
    mask_right: *const IrispadMask,
    light_angle_deg: f64,
) -> Result<CapturePair, Fail> {
    let lights = LightingGeometry::symmetric_pair(light_angle_deg)?;
    Ok(CapturePair::new(
        deref(left, "left")?.0.clone(),
        deref(right, "right")?.0.clone(),
        deref(mask_left, "mask_left")?.0.clone(),
        deref(mask_right, "mask_right")?.0.clone(),
        lights,
    )?)
}

/// Photometric-stereo score of a pair lit from ±`light_angle_deg` along x.
///
/// Returns `Unscorable` (with `*q` untouched) when too few pixels are valid.
///
/// # Safety
/// All handles must be live; `q` must be writable.
#[no_mangle]
pub unsafe extern "C" fn irispad_score_3d(
    left: *const IrispadImage,
    right: *const IrispadImage,
    mask_left: *const IrispadMask,
    mask_right: *const IrispadMask,
    light_angle_deg: f64,
    q: *mut f64,
) -> IrispadStatus {
    guard(|| {
        if q.is_null() {
            return Err(null("q"));
        }
        let pair = capture_pair(left, right, mask_left, mask_right, light_angle_deg)?;
        match score_pair(&pair)? {
            Score3D::Scored(v) => {
                *q = v;
                Ok(())
            }
            Score3D::Unscorable { valid, mask_area } => Err(Fail(
                IrispadStatus::Unscorable,
                format!("{valid} valid pixels in a mask of {mask_area}"),
            )),
        }
    })
}

/// Loads a model directory written by `irispad train`.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn irispad_pipeline_load(
    dir: *const c_char,
    out: *mut *mut IrispadPipeline,
) -> IrispadStatus {
    guard(|| put(out, IrispadPipeline(FusionConfig::load(path(dir, "dir")?)?)))
}

/// # Safety
/// `pipeline` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn irispad_pipeline_free(pipeline: *mut IrispadPipeline) {
    if !pipeline.is_null() {
        drop(Box::from_raw(pipeline));
    }
}

/// Runs the cascaded detector on one pair.
///
/// # Safety
/// All handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn irispad_pipeline_run(
    pipeline: *const IrispadPipeline,
    left: *const IrispadImage,
    right: *const IrispadImage,
    mask_left: *const IrispadMask,
    mask_right: *const IrispadMask,
    light_angle_deg: f64,
    out: *mut IrispadPipelineResult,
) -> IrispadStatus {
    guard(|| {
        let config = &deref(pipeline, "pipeline")?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        let pair = capture_pair(left, right, mask_left, mask_right, light_angle_deg)?;
        let r = run_pipeline(&pair, config)?;
        *out = IrispadPipelineResult {
            fused: code_of(r.fused.class),
            d2: code_of(r.d2.class),
            d3: r.d3.map_or(IRISPAD_NONE, |d| code_of(d.class)),
            q: r.q.unwrap_or(f64::NAN),
            s2: r.s2,
            unscorable_3d: r.unscorable_3d,
        };
        Ok(())
    })
}

/// Cascade rule: a 2D attack verdict is final, otherwise the 3D verdict.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn irispad_fuse_decide(d2: i32, d3: i32, out: *mut i32) -> IrispadStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let d2 = Decision::new(class_of(d2)?, 0.0, Source::Pad2D)?;
        let d3 = Decision::new(class_of(d3)?, 0.0, Source::Pad3D)?;
        *out = code_of(fuse_decide(&d2, &d3)?.class);
        Ok(())
    })
}

/// Fits `score > threshold => attack` on `n` labeled scores.
///
/// # Safety
/// `scores` and `classes` must point to `n` elements; `threshold` must be writable.
#[no_mangle]
pub unsafe extern "C" fn irispad_fit_threshold(
    scores: *const f64,
    classes: *const i32,
    n: usize,
    threshold: *mut f64,
) -> IrispadStatus {
    guard(|| {
        if threshold.is_null() {
            return Err(null("threshold"));
        }
        let scores = slice(scores, n, "scores")?;
        let classes = slice(classes, n, "classes")?;
        let pairs = scores
            .iter()
            .zip(classes)
            .map(|(&s, &c)| Ok((s, class_of(c)?)))
            .collect::<Result<Vec<_>, Fail>>()?;
        *threshold = fit_threshold(&pairs)?;
        Ok(())
    })
}

/// APCER / BPCER / accuracy of `n` predictions against ground truth.
///
/// # Safety
/// `predicted` and `truth` must point to `n` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn irispad_report(
    predicted: *const i32,
    truth: *const i32,
    n: usize,
    out: *mut IrispadReport,
) -> IrispadStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let predicted = slice(predicted, n, "predicted")?;
        let truth = slice(truth, n, "truth")?;
        let decisions = predicted
            .iter()
            .map(|&c| Ok(Decision::new(class_of(c)?, 0.0, Source::Fusion)?))
            .collect::<Result<Vec<_>, Fail>>()?;
        let labels = truth
            .iter()
            .map(|&c| Ok(Label::new(class_of(c)?, "-")?))
            .collect::<Result<Vec<_>, Fail>>()?;
        let r = compute_report(&decisions, &labels, None)?;
        *out = IrispadReport {
            accuracy: r.accuracy,
            apcer: r.apcer.unwrap_or(f64::NAN),
            bpcer: r.bpcer.unwrap_or(f64::NAN),
            attacks: r.counts.attacks,
            bonafides: r.counts.bonafides,
            attack_errors: r.counts.attack_errors,
            bonafide_errors: r.counts.bonafide_errors,
        };
        Ok(())
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn irispad_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
