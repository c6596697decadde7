//! C ABI over `fhtw-core`.
//!
//! Every fallible function returns an `FhtwStatus`; on failure the message is
//! kept per thread and read back with `fhtw_last_error`. Handles are opaque
//! and must be released with their `_free` function. Sample buffers are
//! row-major `n x d` arrays of doubles.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use fhtw_core::estimator::{fit, infer_bases, FitConfig};
use fhtw_core::ftn::{correlation_from_covariance, correlation_original, FtnModel, TransformInfo};
use fhtw_core::models::{sample_ou, OuSpec};
use fhtw_core::sketch::SampleSet;
use fhtw_core::topology::{build_tree_1d, build_tree_2d};
use fhtw_core::wavelet::{FilterKind, Layout, WaveletPlan};
use fhtw_core::FhtwError;
use ndarray::ArrayView2;

/// Status codes. Values 2 to 4 match the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FhtwStatus {
    Ok = 0,
    InvalidInput = 2,
    DataError = 3,
    Numerical = 4,
    IoError = 5,
    NullPointer = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FhtwFilter {
    Haar = 0,
    D4 = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FhtwLayout {
    Line1d = 0,
    Grid2d = 1,
}

/// Opaque wavelet plan.
pub struct FhtwPlan(WaveletPlan);

/// Opaque fitted model.
pub struct FhtwModel(FtnModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &FhtwError) -> FhtwStatus {
    match e {
        FhtwError::InvalidInput(_) => FhtwStatus::InvalidInput,
        FhtwError::Data { .. } => FhtwStatus::DataError,
        FhtwError::Io { .. } => FhtwStatus::IoError,
        FhtwError::DegenerateModel(_) | FhtwError::DegenerateEdge { .. } | FhtwError::Internal(_) => {
            FhtwStatus::Numerical
        }
    }
}

enum Fail {
    Core(FhtwError),
    Null(&'static str),
}

impl From<FhtwError> for Fail {
    fn from(e: FhtwError) -> Self {
        Fail::Core(e)
    }
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail::Core(FhtwError::InvalidInput(msg.into()))
}

/// Runs `f`, converting errors and panics to a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FhtwStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            FhtwStatus::Ok
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            FhtwStatus::NullPointer
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            FhtwStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &'static str) -> Result<&'a mut [f64], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail::Null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid("path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

fn filter_kind(f: FhtwFilter) -> FilterKind {
    match f {
        FhtwFilter::Haar => FilterKind::Haar,
        FhtwFilter::D4 => FilterKind::D4,
    }
}

fn layout_kind(l: FhtwLayout) -> Layout {
    match l {
        FhtwLayout::Line1d => Layout::Line1D,
        FhtwLayout::Grid2d => Layout::Grid2D,
    }
}

fn check_len(got: usize, want: usize, what: &str) -> Result<(), Fail> {
    if got != want {
        return Err(invalid(format!("{what} has length {got}, expected {want}")));
    }
    Ok(())
}

fn samples_len(n: usize, d: usize) -> Result<usize, Fail> {
    n.checked_mul(d).ok_or_else(|| invalid("n * d overflows"))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call into the library from this thread.
#[no_mangle]
pub extern "C" fn fhtw_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Plan for a line of `d` sites (1D) or a grid of `d = m * m` sites (2D).
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn fhtw_plan_new(
    filter: FhtwFilter,
    layout: FhtwLayout,
    d: usize,
    out: *mut *mut FhtwPlan,
) -> FhtwStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let plan = WaveletPlan::for_dimension(filter_kind(filter), layout_kind(layout), d)?;
        *out = Box::into_raw(Box::new(FhtwPlan(plan)));
        Ok(())
    })
}

/// # Safety
/// `plan` must come from `fhtw_plan_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fhtw_plan_free(plan: *mut FhtwPlan) {
    if !plan.is_null() {
        drop(Box::from_raw(plan));
    }
}

/// Number of sites of the plan, 0 for a null handle.
///
/// # Safety
/// `plan` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fhtw_plan_dim(plan: *const FhtwPlan) -> usize {
    plan.as_ref().map_or(0, |p| p.0.dim())
}

unsafe fn plan_apply(
    plan: *const FhtwPlan,
    input: *const f64,
    output: *mut f64,
    len: usize,
    inverse: bool,
) -> FhtwStatus {
    guard(|| {
        let plan = &plan.as_ref().ok_or(Fail::Null("plan"))?.0;
        check_len(len, plan.dim(), "signal")?;
        let x = slice(input, len, "input")?;
        let y = if inverse { plan.inverse(x)? } else { plan.forward(x)? };
        slice_mut(output, len, "output")?.copy_from_slice(&y);
        Ok(())
    })
}

/// Wavelet coordinates of one lattice configuration of length `len`.
///
/// # Safety
/// `plan` must be live; `input` and `output` must each hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn fhtw_plan_forward(
    plan: *const FhtwPlan,
    input: *const f64,
    output: *mut f64,
    len: usize,
) -> FhtwStatus {
    plan_apply(plan, input, output, len, false)
}

/// Lattice configuration from wavelet coordinates.
///
/// # Safety
/// As for `fhtw_plan_forward`.
#[no_mangle]
pub unsafe extern "C" fn fhtw_plan_inverse(
    plan: *const FhtwPlan,
    input: *const f64,
    output: *mut f64,
    len: usize,
) -> FhtwStatus {
    plan_apply(plan, input, output, len, true)
}

/// Draws `n` samples of the periodic 1D OU chain into `out` (`n x d`).
///
/// # Safety
/// `out` must hold `n * d` doubles.
#[no_mangle]
pub unsafe extern "C" fn fhtw_sample_ou_1d(d: usize, alpha: f64, n: usize, seed: u64, out: *mut f64) -> FhtwStatus {
    guard(|| {
        let len = samples_len(n, d)?;
        let samples = sample_ou(&OuSpec::Line1d { d, alpha }, n, seed)?;
        slice_mut(out, len, "out")?.copy_from_slice(samples.as_slice().ok_or_else(|| invalid("layout"))?);
        Ok(())
    })
}

/// Fits a model with rank `rank` and Legendre degree `q` to `n` lattice
/// samples of dimension `d`, after transforming them with `filter`.
///
/// # Safety
/// `samples` must hold `n * d` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fhtw_model_fit(
    samples: *const f64,
    n: usize,
    d: usize,
    filter: FhtwFilter,
    layout: FhtwLayout,
    rank: usize,
    q: usize,
    seed: u64,
    out: *mut *mut FhtwModel,
) -> FhtwStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        if n == 0 {
            return Err(invalid("need at least one sample"));
        }
        let x = slice(samples, samples_len(n, d)?, "samples")?;
        let plan = WaveletPlan::for_dimension(filter_kind(filter), layout_kind(layout), d)?;
        let view = ArrayView2::from_shape((n, d), x).map_err(|e| invalid(e.to_string()))?;
        let coords = plan.transform_samples(view)?;
        let tree = match plan.layout {
            Layout::Line1D => build_tree_1d(plan.levels)?,
            Layout::Grid2D => build_tree_2d(plan.levels)?,
        };
        let bases = infer_bases(coords.view(), q + 1, fhtw_core::basis::DEFAULT_SUPPORT_MARGIN)?;
        let mut config = FitConfig::for_layout(rank, plan.layout);
        config.sketch.seed = seed;
        let (mut model, _) = fit(SampleSet::new(coords.view()), &tree, &bases, &config)?;
        model.transform = Some(TransformInfo::of(&plan));
        *out = Box::into_raw(Box::new(FhtwModel(model)));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fhtw_model_load(path: *const c_char, out: *mut *mut FhtwModel) -> FhtwStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let model = FtnModel::load(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(FhtwModel(model)));
        Ok(())
    })
}

/// # Safety
/// `model` must be live; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fhtw_model_save(model: *const FhtwModel, path: *const c_char) -> FhtwStatus {
    guard(|| {
        let model = &model.as_ref().ok_or(Fail::Null("model"))?.0;
        model.save(&path_arg(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fhtw_model_free(model: *mut FhtwModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of variables, 0 for a null handle.
///
/// # Safety
/// `model` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn fhtw_model_dim(model: *const FhtwModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.dim())
}

/// Normalised density at a point given in the model's (wavelet) coordinates.
///
/// # Safety
/// `point` must hold `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fhtw_model_density(
    model: *const FhtwModel,
    point: *const f64,
    len: usize,
    out: *mut f64,
) -> FhtwStatus {
    guard(|| {
        let model = &model.as_ref().ok_or(Fail::Null("model"))?.0;
        check_len(len, model.dim(), "point")?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let z = model.compute_normalization()?;
        *out = model.eval_density(slice(point, len, "point")?)? / z;
        Ok(())
    })
}

/// Row-major `d x d` correlation matrix in lattice coordinates when the
/// model records its transform, otherwise in model coordinates.
///
/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn fhtw_model_correlation(model: *const FhtwModel, out: *mut f64, len: usize) -> FhtwStatus {
    guard(|| {
        let model = &model.as_ref().ok_or(Fail::Null("model"))?.0;
        let d = model.dim();
        check_len(len, d * d, "output")?;
        let corr = match model.transform {
            Some(info) => correlation_original(model, &info.plan()?)?,
            None => correlation_from_covariance(&model.covariance()?)?,
        };
        let dst = slice_mut(out, len, "out")?;
        for i in 0..d {
            for j in 0..d {
                dst[i * d + j] = corr[(i, j)];
            }
        }
        Ok(())
    })
}
