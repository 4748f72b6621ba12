//! C ABI for the WDRO dual-coreset library.
//!
//! Objects cross the boundary as opaque handles created and destroyed by
//! paired `_new`/`_free` style calls. Every fallible function returns an
//! error code (`WDRO_OK` on success) and stores a message retrievable with
//! [`wdro_last_error`] on failure. Handles are immutable after construction
//! and may be shared across threads; the error message is thread-local.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use libc::{c_char, c_int};

use wdro_core::coreset::{compute_anchors, sample_coreset, uniform_coreset, Anchors, Coreset};
use wdro_core::dataio::{parse_libsvm, synth_blobs, Dataset, MetricSpec, Norm, Task};
use wdro_core::losses::{LossKind, LossModel};
use wdro_core::wdro::WdroProblem;
use wdro_core::WdroError;

/// Success.
pub const WDRO_OK: c_int = 0;
/// Invalid argument (null pointer, bad UTF-8, malformed option string).
pub const WDRO_ERR_USAGE: c_int = 1;
/// Data error (I/O, parse, dimension or task mismatch).
pub const WDRO_ERR_DATA: c_int = 2;
/// Numerical or domain error (invalid sigma, budget, order, ...).
pub const WDRO_ERR_NUMERIC: c_int = 3;
/// Panic caught at the boundary.
pub const WDRO_ERR_INTERNAL: c_int = 4;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(sanitized).unwrap());
}

fn code_of(err: &WdroError) -> c_int {
    match err.exit_code() {
        2 => WDRO_ERR_DATA,
        _ => WDRO_ERR_NUMERIC,
    }
}

fn guard<F: FnOnce() -> c_int>(f: F) -> c_int {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(code) => code,
        Err(_) => {
            set_error("internal panic");
            WDRO_ERR_INTERNAL
        }
    }
}

/// Copy the last error message for this thread into `buf` (NUL-terminated,
/// truncated to `cap` bytes). Returns the full message length in bytes,
/// excluding the terminator.
///
/// # Safety
/// `buf` must point to `cap` writable bytes, or be null (then only the
/// required length is returned).
#[no_mangle]
pub unsafe extern "C" fn wdro_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap);
            std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            // ensure termination on truncation
            *buf.add(n - 1) = 0;
        }
        bytes.len() - 1
    })
}

/// Opaque dataset handle.
pub struct WdroDataset {
    inner: Dataset,
}

/// Opaque loss-model handle (loss family plus ground metric).
pub struct WdroModel {
    inner: LossModel,
}

/// Opaque anchor handle (hypothesis ball and multiplier interval).
pub struct WdroAnchors {
    inner: Anchors,
}

/// Opaque coreset handle (sparse weights over sample indices).
pub struct WdroCoreset {
    inner: Coreset,
}

unsafe fn cstr<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, c_int> {
    if ptr.is_null() {
        set_error(&format!("{what} is null"));
        return Err(WDRO_ERR_USAGE);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error(&format!("{what} is not valid UTF-8"));
        WDRO_ERR_USAGE
    })
}

unsafe fn out_param<T>(out: *mut *mut T) -> Result<(), c_int> {
    if out.is_null() {
        set_error("output parameter is null");
        return Err(WDRO_ERR_USAGE);
    }
    Ok(())
}

macro_rules! require {
    ($ptr:expr, $what:expr) => {
        match unsafe { $ptr.as_ref() } {
            Some(r) => r,
            None => {
                set_error(concat!($what, " handle is null"));
                return WDRO_ERR_USAGE;
            }
        }
    };
}

/// Parse a LIBSVM file into a dataset. `regression` nonzero keeps raw
/// labels; zero maps them to {-1, +1}.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wdro_dataset_read_libsvm(
    path: *const c_char,
    regression: c_int,
    out: *mut *mut WdroDataset,
) -> c_int {
    guard(|| {
        if let Err(code) = unsafe { out_param(out) } {
            return code;
        }
        let path = match unsafe { cstr(path, "path") } {
            Ok(s) => s,
            Err(code) => return code,
        };
        let task = if regression != 0 {
            Task::Regression
        } else {
            Task::Classification
        };
        let file = match std::fs::File::open(path) {
            Ok(f) => f,
            Err(e) => {
                set_error(&format!("open {path}: {e}"));
                return WDRO_ERR_DATA;
            }
        };
        match parse_libsvm(std::io::BufReader::new(file), task) {
            Ok(ds) => {
                unsafe { *out = Box::into_raw(Box::new(WdroDataset { inner: ds })) };
                WDRO_OK
            }
            Err(e) => {
                set_error(&e.to_string());
                code_of(&e)
            }
        }
    })
}

/// Generate the two-cluster synthetic dataset.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wdro_dataset_synth_blobs(
    n: usize,
    m: usize,
    separation: f64,
    label_noise: f64,
    seed: u64,
    out: *mut *mut WdroDataset,
) -> c_int {
    guard(|| {
        if let Err(code) = unsafe { out_param(out) } {
            return code;
        }
        match synth_blobs(n, m, separation, label_noise, seed) {
            Ok(ds) => {
                unsafe { *out = Box::into_raw(Box::new(WdroDataset { inner: ds })) };
                WDRO_OK
            }
            Err(e) => {
                set_error(&e.to_string());
                code_of(&e)
            }
        }
    })
}

/// Number of samples (0 for a null handle).
///
/// # Safety
/// `ds` must be null or a live handle from a `wdro_dataset_*` constructor.
#[no_mangle]
pub unsafe extern "C" fn wdro_dataset_len(ds: *const WdroDataset) -> usize {
    unsafe { ds.as_ref() }.map_or(0, |d| d.inner.len())
}

/// Feature dimension (0 for a null handle).
///
/// # Safety
/// `ds` must be null or a live handle from a `wdro_dataset_*` constructor.
#[no_mangle]
pub unsafe extern "C" fn wdro_dataset_dim(ds: *const WdroDataset) -> usize {
    unsafe { ds.as_ref() }.map_or(0, |d| d.inner.dim())
}

/// # Safety
/// `ds` must come from a `wdro_dataset_*` constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn wdro_dataset_free(ds: *mut WdroDataset) {
    if !ds.is_null() {
        drop(unsafe { Box::from_raw(ds) });
    }
}

/// Create a loss model. `loss` is one of `svm | logistic | huber:<delta> |
/// hypercube-svm:<l>`; `norm` is `l1 | l2 | linf`.
///
/// # Safety
/// `loss` and `norm` must be NUL-terminated strings, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wdro_model_new(
    loss: *const c_char,
    norm: *const c_char,
    gamma: f64,
    p: u32,
    out: *mut *mut WdroModel,
) -> c_int {
    guard(|| {
        if let Err(code) = unsafe { out_param(out) } {
            return code;
        }
        let loss = match unsafe { cstr(loss, "loss") } {
            Ok(s) => s,
            Err(code) => return code,
        };
        let norm = match unsafe { cstr(norm, "norm") } {
            Ok(s) => s,
            Err(code) => return code,
        };
        let build = || -> Result<LossModel, WdroError> {
            let kind = LossKind::parse(loss)?;
            let metric = MetricSpec::new(Norm::parse(norm)?, gamma, p)?;
            LossModel::new(kind, metric)
        };
        match build() {
            Ok(model) => {
                unsafe { *out = Box::into_raw(Box::new(WdroModel { inner: model })) };
                WDRO_OK
            }
            Err(e) => {
                set_error(&e.to_string());
                code_of(&e)
            }
        }
    })
}

/// # Safety
/// `model` must come from [`wdro_model_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn wdro_model_free(model: *mut WdroModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Compute anchors for the hypothesis ball `B(theta_anc, l_p)`. A null
/// `theta_anc` means the zero vector; otherwise `theta_len` must equal the
/// dataset dimension.
///
/// # Safety
/// Handles must be valid; `theta_anc`, when non-null, must point to
/// `theta_len` readable doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn wdro_anchors_compute(
    ds: *const WdroDataset,
    model: *const WdroModel,
    sigma: f64,
    theta_anc: *const f64,
    theta_len: usize,
    l_p: f64,
    out: *mut *mut WdroAnchors,
) -> c_int {
    guard(|| {
        if let Err(code) = unsafe { out_param(out) } {
            return code;
        }
        let ds = require!(ds, "dataset");
        let model = require!(model, "model");
        let theta = if theta_anc.is_null() {
            vec![0.0; ds.inner.dim()]
        } else {
            unsafe { std::slice::from_raw_parts(theta_anc, theta_len) }.to_vec()
        };
        match compute_anchors(&ds.inner, &model.inner, sigma, theta, l_p) {
            Ok(anchors) => {
                unsafe { *out = Box::into_raw(Box::new(WdroAnchors { inner: anchors })) };
                WDRO_OK
            }
            Err(e) => {
                set_error(&e.to_string());
                code_of(&e)
            }
        }
    })
}

/// Anchor multiplier `lambda_anc` (NaN for a null handle).
///
/// # Safety
/// `anchors` must be null or a live handle from [`wdro_anchors_compute`].
#[no_mangle]
pub unsafe extern "C" fn wdro_anchors_lambda(anchors: *const WdroAnchors) -> f64 {
    unsafe { anchors.as_ref() }.map_or(f64::NAN, |a| a.inner.lambda_anc)
}

/// Data spread `rho = max_i d(xi_i, xi_0)` (NaN for a null handle).
///
/// # Safety
/// `anchors` must be null or a live handle from [`wdro_anchors_compute`].
#[no_mangle]
pub unsafe extern "C" fn wdro_anchors_rho(anchors: *const WdroAnchors) -> f64 {
    unsafe { anchors.as_ref() }.map_or(f64::NAN, |a| a.inner.rho)
}

/// # Safety
/// `anchors` must come from [`wdro_anchors_compute`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn wdro_anchors_free(anchors: *mut WdroAnchors) {
    if !anchors.is_null() {
        drop(unsafe { Box::from_raw(anchors) });
    }
}

/// Build a dual coreset with `budget` support points by grid sampling.
///
/// # Safety
/// Handles must be valid and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wdro_coreset_build(
    ds: *const WdroDataset,
    model: *const WdroModel,
    anchors: *const WdroAnchors,
    sigma: f64,
    budget: usize,
    seed: u64,
    out: *mut *mut WdroCoreset,
) -> c_int {
    guard(|| {
        if let Err(code) = unsafe { out_param(out) } {
            return code;
        }
        let ds = require!(ds, "dataset");
        let model = require!(model, "model");
        let anchors = require!(anchors, "anchors");
        match sample_coreset(&ds.inner, &model.inner, sigma, &anchors.inner, budget, seed) {
            Ok(cs) => {
                unsafe { *out = Box::into_raw(Box::new(WdroCoreset { inner: cs })) };
                WDRO_OK
            }
            Err(e) => {
                set_error(&e.to_string());
                code_of(&e)
            }
        }
    })
}

/// Baseline: uniform sampling without replacement, weights `1/budget`.
///
/// # Safety
/// `ds` must be valid and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wdro_coreset_uniform(
    ds: *const WdroDataset,
    budget: usize,
    seed: u64,
    out: *mut *mut WdroCoreset,
) -> c_int {
    guard(|| {
        if let Err(code) = unsafe { out_param(out) } {
            return code;
        }
        let ds = require!(ds, "dataset");
        match uniform_coreset(&ds.inner, budget, seed) {
            Ok(cs) => {
                unsafe { *out = Box::into_raw(Box::new(WdroCoreset { inner: cs })) };
                WDRO_OK
            }
            Err(e) => {
                set_error(&e.to_string());
                code_of(&e)
            }
        }
    })
}

/// Support size of a coreset (0 for a null handle).
///
/// # Safety
/// `cs` must be null or a live handle from a `wdro_coreset_*` constructor.
#[no_mangle]
pub unsafe extern "C" fn wdro_coreset_support(cs: *const WdroCoreset) -> usize {
    unsafe { cs.as_ref() }.map_or(0, |c| c.inner.support_size())
}

/// Serialize a coreset to its text document.
///
/// # Safety
/// `cs` must be valid and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn wdro_coreset_write(cs: *const WdroCoreset, path: *const c_char) -> c_int {
    guard(|| {
        let cs = require!(cs, "coreset");
        let path = match unsafe { cstr(path, "path") } {
            Ok(s) => s,
            Err(code) => return code,
        };
        match std::fs::write(path, cs.inner.to_text()) {
            Ok(()) => WDRO_OK,
            Err(e) => {
                set_error(&format!("write {path}: {e}"));
                WDRO_ERR_DATA
            }
        }
    })
}

/// Read a coreset back from its text document.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wdro_coreset_read(
    path: *const c_char,
    out: *mut *mut WdroCoreset,
) -> c_int {
    guard(|| {
        if let Err(code) = unsafe { out_param(out) } {
            return code;
        }
        let path = match unsafe { cstr(path, "path") } {
            Ok(s) => s,
            Err(code) => return code,
        };
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                set_error(&format!("read {path}: {e}"));
                return WDRO_ERR_DATA;
            }
        };
        match Coreset::from_text(&text) {
            Ok(cs) => {
                unsafe { *out = Box::into_raw(Box::new(WdroCoreset { inner: cs })) };
                WDRO_OK
            }
            Err(e) => {
                set_error(&e.to_string());
                code_of(&e)
            }
        }
    })
}

/// # Safety
/// `cs` must come from a `wdro_coreset_*` constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn wdro_coreset_free(cs: *mut WdroCoreset) {
    if !cs.is_null() {
        drop(unsafe { Box::from_raw(cs) });
    }
}

/// Worst-case risk of `theta` under the (optionally weighted) empirical
/// distribution. `coreset` may be null for the uniform distribution;
/// `out_lambda` and `out_at_boundary` may be null when not needed.
///
/// # Safety
/// Handles must be valid; `theta` must point to `theta_len` readable
/// doubles; non-null out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn wdro_risk(
    ds: *const WdroDataset,
    model: *const WdroModel,
    anchors: *const WdroAnchors,
    coreset: *const WdroCoreset,
    sigma: f64,
    theta: *const f64,
    theta_len: usize,
    out_risk: *mut f64,
    out_lambda: *mut f64,
    out_at_boundary: *mut c_int,
) -> c_int {
    guard(|| {
        let ds = require!(ds, "dataset");
        let model = require!(model, "model");
        let anchors = require!(anchors, "anchors");
        if theta.is_null() || out_risk.is_null() {
            set_error("theta/out_risk is null");
            return WDRO_ERR_USAGE;
        }
        let theta = unsafe { std::slice::from_raw_parts(theta, theta_len) };
        let weights = unsafe { coreset.as_ref() }.map(|c| c.inner.clone());
        let run = || -> Result<_, WdroError> {
            let problem =
                WdroProblem::new(model.inner.clone(), sigma, anchors.inner.clone(), weights)?;
            problem.worst_case_risk(&ds.inner, theta)
        };
        match run() {
            Ok(rr) => {
                unsafe {
                    *out_risk = rr.risk;
                    if !out_lambda.is_null() {
                        *out_lambda = rr.lambda_star;
                    }
                    if !out_at_boundary.is_null() {
                        *out_at_boundary = rr.at_boundary as c_int;
                    }
                }
                WDRO_OK
            }
            Err(e) => {
                set_error(&e.to_string());
                code_of(&e)
            }
        }
    })
}

/// Train by projected subgradient descent and write the best iterate into
/// `theta_out` (length = dataset dimension). `coreset` may be null;
/// `theta0` null starts from the anchor point; `eta0 <= 0` selects the
/// default step scale.
///
/// # Safety
/// Handles must be valid; `theta_out` must point to `dim` writable doubles;
/// `theta0`, when non-null, to `dim` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn wdro_train(
    ds: *const WdroDataset,
    model: *const WdroModel,
    anchors: *const WdroAnchors,
    coreset: *const WdroCoreset,
    sigma: f64,
    steps: usize,
    eta0: f64,
    seed: u64,
    theta0: *const f64,
    theta_out: *mut f64,
    out_risk: *mut f64,
) -> c_int {
    guard(|| {
        let ds = require!(ds, "dataset");
        let model = require!(model, "model");
        let anchors = require!(anchors, "anchors");
        if theta_out.is_null() || out_risk.is_null() {
            set_error("theta_out/out_risk is null");
            return WDRO_ERR_USAGE;
        }
        let dim = ds.inner.dim();
        let weights = unsafe { coreset.as_ref() }.map(|c| c.inner.clone());
        let start: Vec<f64> = if theta0.is_null() {
            anchors.inner.theta_anc.clone()
        } else {
            unsafe { std::slice::from_raw_parts(theta0, dim) }.to_vec()
        };
        let eta = if eta0 > 0.0 { Some(eta0) } else { None };
        let run = || -> Result<_, WdroError> {
            let problem =
                WdroProblem::new(model.inner.clone(), sigma, anchors.inner.clone(), weights)?;
            problem.train(&ds.inner, Some(&start), steps, eta, seed)
        };
        match run() {
            Ok(fit) => {
                unsafe {
                    std::ptr::copy_nonoverlapping(fit.theta.as_ptr(), theta_out, dim);
                    *out_risk = fit.risk;
                }
                WDRO_OK
            }
            Err(e) => {
                set_error(&e.to_string());
                code_of(&e)
            }
        }
    })
}
