//! C ABI for `ascep`.
//!
//! Objects cross the boundary as opaque handles created by `ascep_*_new` style
//! functions and released with the matching `*_free`. Every fallible call
//! returns an [`AscepStatus`]; on failure a message is available from
//! [`ascep_last_error`] on the same thread. Matrices are row-major.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ndarray::Array2;

use ascep::simgen::{simulate_study, SimConfig};
use ascep::{Dataset, Error, FitOptions, FitResult, Method, SeMode};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AscepStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// Argument outside its domain or with inconsistent dimensions.
    InvalidArgument = 2,
    /// Malformed configuration text or data.
    InvalidData = 3,
    /// The estimator failed numerically.
    Numerical = 4,
    /// The requested quantity was not computed.
    Unavailable = 5,
    /// A Rust panic was caught at the boundary.
    Internal = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AscepMethod {
    Aep = 0,
    AplExact = 1,
    AplTaylor = 2,
    Pcgc = 3,
    EpPlain = 4,
}

impl From<AscepMethod> for Method {
    fn from(m: AscepMethod) -> Self {
        match m {
            AscepMethod::Aep => Method::Aep,
            AscepMethod::AplExact => Method::AplExact,
            AscepMethod::AplTaylor => Method::AplTaylor,
            AscepMethod::Pcgc => Method::Pcgc,
            AscepMethod::EpPlain => Method::EpPlain,
        }
    }
}

/// Opaque study: covariates, genotypes and outcomes.
pub struct AscepDataset(Dataset);

/// Opaque fit result.
pub struct AscepFit(FitResult);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).unwrap_or_default());
}

fn status_of(e: &Error) -> AscepStatus {
    match e {
        Error::Domain(_) | Error::Dimension(_) | Error::Config(_) => AscepStatus::InvalidArgument,
        Error::Parse { .. }
        | Error::Json(_)
        | Error::Io(_)
        | Error::DegenerateColumn { .. }
        | Error::Shortfall { .. }
        | Error::RankDeficient
        | Error::DegenerateRegressor(_) => AscepStatus::InvalidData,
        Error::NotPositiveDefinite { .. } | Error::NonFiniteObjective => AscepStatus::Numerical,
    }
}

/// Runs `f`, recording errors and panics for [`ascep_last_error`].
fn guard(f: impl FnOnce() -> Result<(), AscepStatus>) -> AscepStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AscepStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            AscepStatus::Internal
        }
    }
}

fn fail(e: Error) -> AscepStatus {
    set_error(e.to_string());
    status_of(&e)
}

fn null(what: &str) -> AscepStatus {
    set_error(format!("{what} is null"));
    AscepStatus::NullPointer
}

/// Message for the last failure on this thread. Valid until the next failing
/// call on the same thread; never null.
#[no_mangle]
pub extern "C" fn ascep_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ascep_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a dataset from row-major `x` (`n × d`), `z` (`n × m`, standardized)
/// and `y` (`n` entries of 0 or 1). `x` may be null when `d` is 0.
///
/// # Safety
/// The buffers must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn ascep_dataset_new(
    x: *const f64,
    n: usize,
    d: usize,
    z: *const f64,
    m: usize,
    y: *const u8,
    out: *mut *mut AscepDataset,
) -> AscepStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if z.is_null() || y.is_null() || (x.is_null() && d > 0) {
            return Err(null("input buffer"));
        }
        let xv = if d == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(x, n * d).to_vec()
        };
        let x = Array2::from_shape_vec((n, d), xv).map_err(|e| fail(Error::Dimension(e.to_string())))?;
        let z = Array2::from_shape_vec((n, m), std::slice::from_raw_parts(z, n * m).to_vec())
            .map_err(|e| fail(Error::Dimension(e.to_string())))?;
        let y = std::slice::from_raw_parts(y, n).to_vec();
        let ds = Dataset::new(x, z, y).map_err(fail)?;
        *out = Box::into_raw(Box::new(AscepDataset(ds)));
        Ok(())
    })
}

/// Simulates a case-control study. `config_json` is a JSON simulation config
/// (omitted fields take defaults) or null for all defaults.
///
/// # Safety
/// `config_json` must be null or a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ascep_dataset_simulate(
    config_json: *const c_char,
    out: *mut *mut AscepDataset,
) -> AscepStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg: SimConfig = if config_json.is_null() {
            SimConfig::default()
        } else {
            let text = CStr::from_ptr(config_json)
                .to_str()
                .map_err(|e| fail(Error::Config(e.to_string())))?;
            serde_json::from_str(text).map_err(|e| fail(Error::Json(e)))?
        };
        let study = simulate_study(&cfg).map_err(fail)?;
        *out = Box::into_raw(Box::new(AscepDataset(study.dataset)));
        Ok(())
    })
}

/// # Safety
/// `ds` must be null or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn ascep_dataset_free(ds: *mut AscepDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Units, covariates, markers and cases of a dataset. Null outputs are skipped.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ascep_dataset_shape(
    ds: *const AscepDataset,
    n: *mut usize,
    d: *mut usize,
    m: *mut usize,
    cases: *mut usize,
) -> AscepStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        for (p, v) in [(n, ds.0.n()), (d, ds.0.d()), (m, ds.0.m()), (cases, ds.0.n_cases())] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Fits one study at prevalence `k`. A nonzero `jackknife` also computes the
/// delete-one standard error.
///
/// # Safety
/// `ds` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ascep_fit(
    ds: *const AscepDataset,
    method: AscepMethod,
    k: f64,
    jackknife: c_int,
    out: *mut *mut AscepFit,
) -> AscepStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let mut opts = FitOptions::new(method.into(), k);
        if jackknife != 0 {
            opts.se = SeMode::Jackknife;
        }
        let r = ascep::fit_study(&ds.0, None, &opts).map_err(fail)?;
        *out = Box::into_raw(Box::new(AscepFit(r)));
        Ok(())
    })
}

/// # Safety
/// `fit` must be null or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn ascep_fit_free(fit: *mut AscepFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

unsafe fn write_scalar(fit: *const AscepFit, out: *mut f64, get: impl Fn(&FitResult) -> Option<f64>) -> AscepStatus {
    guard(|| {
        let fit = fit.as_ref().ok_or_else(|| null("fit"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        match get(&fit.0) {
            Some(v) => {
                *out = v;
                Ok(())
            }
            None => {
                set_error("not computed for this fit");
                Err(AscepStatus::Unavailable)
            }
        }
    })
}

/// # Safety
/// `fit` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ascep_fit_theta(fit: *const AscepFit, out: *mut f64) -> AscepStatus {
    write_scalar(fit, out, |r| Some(r.theta_hat))
}

/// Jackknife standard error; `Unavailable` unless requested at fit time.
///
/// # Safety
/// `fit` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ascep_fit_se(fit: *const AscepFit, out: *mut f64) -> AscepStatus {
    write_scalar(fit, out, |r| r.se)
}

/// Objective at the estimate (NaN for the moment estimator).
///
/// # Safety
/// `fit` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ascep_fit_objective(fit: *const AscepFit, out: *mut f64) -> AscepStatus {
    write_scalar(fit, out, |r| Some(r.objective))
}

/// 1 if every inner solver converged and θ̂ is interior, 0 otherwise, −1 for null.
///
/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ascep_fit_ok(fit: *const AscepFit) -> c_int {
    match fit.as_ref() {
        Some(f) => (f.0.converged && !f.0.at_boundary) as c_int,
        None => -1,
    }
}

/// Copies up to `cap` liability-scale fixed effects into `buf` and stores the
/// total count in `len`. Pass `cap = 0` to query the length.
///
/// # Safety
/// `buf` must hold `cap` doubles; `len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ascep_fit_beta(
    fit: *const AscepFit,
    buf: *mut f64,
    cap: usize,
    len: *mut usize,
) -> AscepStatus {
    guard(|| {
        let fit = fit.as_ref().ok_or_else(|| null("fit"))?;
        if len.is_null() || (buf.is_null() && cap > 0) {
            return Err(null("output buffer"));
        }
        let beta = &fit.0.beta;
        *len = beta.len();
        let k = cap.min(beta.len());
        if k > 0 {
            ptr::copy_nonoverlapping(beta.as_ptr(), buf, k);
        }
        Ok(())
    })
}

/// The full fit as JSON. Release with [`ascep_string_free`].
///
/// # Safety
/// `fit` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ascep_fit_to_json(fit: *const AscepFit, out: *mut *mut c_char) -> AscepStatus {
    guard(|| {
        let fit = fit.as_ref().ok_or_else(|| null("fit"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let text = serde_json::to_string(&fit.0).map_err(|e| fail(Error::Json(e)))?;
        *out = CString::new(text)
            .map_err(|e| fail(Error::Config(e.to_string())))?
            .into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a string returned by this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn ascep_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// `P(X ≤ h, Y ≤ k)` for a standard bivariate normal with correlation `rho`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ascep_bvn_cdf(h: f64, k: f64, rho: f64, out: *mut f64) -> AscepStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ascep::bvn::bvn_cdf(h, k, rho).map_err(fail)?;
        Ok(())
    })
}

/// Sampling weights `(s0, s1)` for population prevalence `k` and sample case
/// fraction `p`.
///
/// # Safety
/// `s0` and `s1` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ascep_sampling_weights(k: f64, p: f64, s0: *mut f64, s1: *mut f64) -> AscepStatus {
    guard(|| {
        if s0.is_null() || s1.is_null() {
            return Err(null("out"));
        }
        let (a, b) = ascep::model::sampling_weights(k, p).map_err(fail)?;
        *s0 = a;
        *s1 = b;
        Ok(())
    })
}
