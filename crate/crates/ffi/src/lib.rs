//! C ABI for `mixorder`.
//!
//! Objects cross the boundary as opaque handles created by `mo_*_new` style
//! functions and released by the matching `mo_*_free`. Every fallible call
//! returns an [`MoStatus`]; on failure a message is available from
//! [`mo_last_error_message`] on the same thread.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mixorder::error::ErrorKind;
use mixorder::order_test::{aggregate_e_values, p_value_from_log_stat, random_split, TestConfig, Variant};
use mixorder::seed;
use mixorder::stp::{information_criteria, run_stp_on_plan, AlphaSchedule, StpOutcome};
use mixorder::{Dataset, FitConfig, MixError};

pub const MO_VARIANT_SPLIT1: u32 = 0;
pub const MO_VARIANT_SPLIT2: u32 = 1;
pub const MO_VARIANT_SWAPPED: u32 = 2;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ParseError = 3,
    DataError = 4,
    FitError = 5,
    OverlapError = 6,
    IoError = 7,
    InternalError = 8,
    Panic = 9,
}

/// Opaque dataset handle.
pub struct MoDataset {
    inner: Dataset,
}

/// Opaque result of a sequential testing run.
pub struct MoStpResult {
    inner: StpOutcome,
}

/// Options for [`mo_run_stp`]. Obtain defaults from [`mo_stp_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MoStpOptions {
    /// One of the `MO_VARIANT_*` constants.
    pub variant: u32,
    pub l: usize,
    /// Fixed level, used when `kappa` is zero.
    pub alpha: f64,
    /// When positive, the level is `n1^(-kappa)`.
    pub kappa: f64,
    pub g_max: usize,
    pub seed: u64,
    pub n1_fraction: f64,
    pub restarts: usize,
    pub ridge: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &MixError) -> MoStatus {
    match err.kind() {
        ErrorKind::Parse => MoStatus::ParseError,
        ErrorKind::Data => MoStatus::DataError,
        ErrorKind::Fit => MoStatus::FitError,
        ErrorKind::Overlap => MoStatus::OverlapError,
        ErrorKind::Io => MoStatus::IoError,
        ErrorKind::Internal => MoStatus::InternalError,
    }
}

enum Failure {
    Status(MoStatus, String),
    Mix(MixError),
}

impl From<MixError> for Failure {
    fn from(e: MixError) -> Self {
        Failure::Mix(e)
    }
}

fn null(what: &str) -> Failure {
    Failure::Status(MoStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Status(MoStatus::InvalidArgument, msg.into())
}

/// Runs `f`, converting errors and panics into a status code.
fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> MoStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MoStatus::Ok,
        Ok(Err(Failure::Status(status, msg))) => {
            set_error(msg);
            status
        }
        Ok(Err(Failure::Mix(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            MoStatus::Panic
        }
    }
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message for the most recent failure on this thread, or null. The pointer
/// stays valid until the next `mo_*` call on the same thread.
#[no_mangle]
pub extern "C" fn mo_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

#[no_mangle]
pub extern "C" fn mo_stp_options_default() -> MoStpOptions {
    let fit = FitConfig::default();
    MoStpOptions {
        variant: MO_VARIANT_SWAPPED,
        l: 2,
        alpha: 0.05,
        kappa: 0.0,
        g_max: 20,
        seed: 0,
        n1_fraction: 0.5,
        restarts: fit.restarts,
        ridge: fit.cov_ridge,
    }
}

/// Copies `n * d` row-major values into a new dataset.
#[no_mangle]
pub unsafe extern "C" fn mo_dataset_new(
    values: *const f64,
    n: usize,
    d: usize,
    out: *mut *mut MoDataset,
) -> MoStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        if values.is_null() {
            return Err(null("values"));
        }
        let len = n
            .checked_mul(d)
            .ok_or_else(|| invalid("n * d overflows"))?;
        let slice = std::slice::from_raw_parts(values, len);
        let inner = Dataset::new(slice.to_vec(), n, d)?;
        *out = Box::into_raw(Box::new(MoDataset { inner }));
        Ok(())
    })
}

/// Reads a CSV file (UTF-8 path).
#[no_mangle]
pub unsafe extern "C" fn mo_dataset_from_csv(
    path: *const c_char,
    out: *mut *mut MoDataset,
) -> MoStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| invalid("path is not valid UTF-8"))?;
        let inner = Dataset::from_csv_path(path)?;
        *out = Box::into_raw(Box::new(MoDataset { inner }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mo_dataset_n(ds: *const MoDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.n())
}

#[no_mangle]
pub unsafe extern "C" fn mo_dataset_d(ds: *const MoDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.d())
}

#[no_mangle]
pub unsafe extern "C" fn mo_dataset_free(ds: *mut MoDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

fn variant_of(code: u32) -> Result<Variant, Failure> {
    match code {
        MO_VARIANT_SPLIT1 => Ok(Variant::Split1),
        MO_VARIANT_SPLIT2 => Ok(Variant::Split2),
        MO_VARIANT_SWAPPED => Ok(Variant::Swapped),
        other => Err(invalid(format!("unknown variant code {other}"))),
    }
}

/// Splits the data at random and runs the sequential tests. `options` may
/// be null for defaults.
#[no_mangle]
pub unsafe extern "C" fn mo_run_stp(
    ds: *const MoDataset,
    options: *const MoStpOptions,
    out: *mut *mut MoStpResult,
) -> MoStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let data = &ds.as_ref().ok_or_else(|| null("dataset"))?.inner;
        let opts = options.as_ref().copied().unwrap_or_else(|| mo_stp_options_default());
        let schedule = if opts.kappa > 0.0 {
            AlphaSchedule::Power { kappa: opts.kappa }
        } else {
            AlphaSchedule::Fixed { alpha: opts.alpha }
        };
        if !(opts.n1_fraction > 0.0 && opts.n1_fraction < 1.0) {
            return Err(invalid("n1_fraction must lie in (0, 1)"));
        }
        let fit = FitConfig {
            restarts: opts.restarts,
            cov_ridge: opts.ridge,
            seed: seed::derive(opts.seed, seed::FIT, 0),
            ..FitConfig::default()
        };
        let cfg = TestConfig {
            l: opts.l,
            variant: variant_of(opts.variant)?,
            fit,
        };
        let n1 = (data.n() as f64 * opts.n1_fraction).floor() as usize;
        let plan = random_split(data.n(), n1, &mut seed::derive_rng(opts.seed, seed::SPLIT, 0))?;
        let inner = run_stp_on_plan(data, &plan, &cfg, &schedule, opts.g_max)?;
        *out = Box::into_raw(Box::new(MoStpResult { inner }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mo_stp_result_g_hat(res: *const MoStpResult) -> usize {
    res.as_ref().map_or(0, |r| r.inner.g_hat)
}

#[no_mangle]
pub unsafe extern "C" fn mo_stp_result_alpha(res: *const MoStpResult) -> f64 {
    res.as_ref().map_or(f64::NAN, |r| r.inner.alpha_used)
}

#[no_mangle]
pub unsafe extern "C" fn mo_stp_result_hit_cap(res: *const MoStpResult) -> bool {
    res.as_ref().is_some_and(|r| r.inner.hit_cap)
}

#[no_mangle]
pub unsafe extern "C" fn mo_stp_result_trail_len(res: *const MoStpResult) -> usize {
    res.as_ref().map_or(0, |r| r.inner.trail.len())
}

/// Reads trail entry `index`. Any output pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn mo_stp_result_trail_get(
    res: *const MoStpResult,
    index: usize,
    g: *mut usize,
    log_statistic: *mut f64,
    log_p: *mut f64,
) -> MoStatus {
    guard(|| {
        let res = res.as_ref().ok_or_else(|| null("result"))?;
        let t = res
            .inner
            .trail
            .get(index)
            .ok_or_else(|| invalid(format!("trail index {index} out of range")))?;
        if let Some(g) = g.as_mut() {
            *g = t.g;
        }
        if let Some(v) = log_statistic.as_mut() {
            *v = t.log_statistic;
        }
        if let Some(v) = log_p.as_mut() {
            *v = t.log_p;
        }
        Ok(())
    })
}

/// Serializes the result as JSON. Release the string with [`mo_string_free`].
#[no_mangle]
pub unsafe extern "C" fn mo_stp_result_to_json(
    res: *const MoStpResult,
    out: *mut *mut c_char,
) -> MoStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let res = res.as_ref().ok_or_else(|| null("result"))?;
        let text = serde_json::to_string(&res.inner).map_err(MixError::from)?;
        *out = CString::new(text)
            .map_err(|_| invalid("JSON contains a NUL byte"))?
            .into_raw();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mo_stp_result_free(res: *mut MoStpResult) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}

#[no_mangle]
pub unsafe extern "C" fn mo_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Fits `g = 1..=g_max` on the full data. `aic` and `bic` must hold `g_max`
/// values each; failed fits are reported as NaN. The argmins are written to
/// `g_aic` and `g_bic` (0 when every fit failed).
#[no_mangle]
pub unsafe extern "C" fn mo_information_criteria(
    ds: *const MoDataset,
    g_max: usize,
    seed: u64,
    aic: *mut f64,
    bic: *mut f64,
    g_aic: *mut usize,
    g_bic: *mut usize,
) -> MoStatus {
    guard(|| {
        let data = &ds.as_ref().ok_or_else(|| null("dataset"))?.inner;
        if aic.is_null() || bic.is_null() {
            return Err(null("aic/bic buffer"));
        }
        let table = information_criteria(data, g_max, &FitConfig::default().with_seed(seed))?;
        let aic = std::slice::from_raw_parts_mut(aic, g_max);
        let bic = std::slice::from_raw_parts_mut(bic, g_max);
        for (i, row) in table.rows.iter().enumerate() {
            aic[i] = row.aic.unwrap_or(f64::NAN);
            bic[i] = row.bic.unwrap_or(f64::NAN);
        }
        if let Some(g) = g_aic.as_mut() {
            *g = table.g_aic.unwrap_or(0);
        }
        if let Some(g) = g_bic.as_mut() {
            *g = table.g_bic.unwrap_or(0);
        }
        Ok(())
    })
}

/// p-value from a log statistic: `log p = min(-log V, 0)`.
#[no_mangle]
pub unsafe extern "C" fn mo_p_value(log_statistic: f64, p: *mut f64, log_p: *mut f64) -> MoStatus {
    guard(|| {
        let pv = p_value_from_log_stat(log_statistic)?;
        if let Some(p) = p.as_mut() {
            *p = pv.p;
        }
        if let Some(l) = log_p.as_mut() {
            *l = pv.log_p;
        }
        Ok(())
    })
}

/// Log of the mean of `m` e-values given by their logs.
#[no_mangle]
pub unsafe extern "C" fn mo_aggregate_e_values(
    log_e_values: *const f64,
    m: usize,
    out: *mut f64,
) -> MoStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let values = if m == 0 {
            &[][..]
        } else if log_e_values.is_null() {
            return Err(null("log_e_values"));
        } else {
            std::slice::from_raw_parts(log_e_values, m)
        };
        *out = aggregate_e_values(values)?;
        Ok(())
    })
}
