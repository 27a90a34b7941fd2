//! C ABI over `ice-core`.
//!
//! Complex arrays cross the boundary as interleaved `re, im` doubles;
//! matrices are row-major. Objects are opaque and owned by the caller once
//! returned, to be released with the matching `*_free`. Every fallible call
//! returns an [`IceStatus`]; the message of the last failure on the calling
//! thread is available from [`ice_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ice_core::cli::{extract, ExtractOutput, ExtractRequest};
use ice_core::error::IceError;
use ice_core::linalg::{CMatrix, CVector, C64};
use ice_core::simbench::{Algorithm, ExperimentConfig};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IceStatus {
    Ok = 0,
    /// The solver stopped at its iteration cap; the result is still valid.
    NotConverged = 1,
    NullPointer = 2,
    InvalidArgument = 3,
    Dimension = 4,
    Singular = 5,
    Degenerate = 6,
    NonFinite = 7,
    Breakdown = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IceAlgorithm {
    MpdrIni = 0,
    OgiceW = 1,
    OgiceA = 2,
    OgiceS = 3,
    OgiveW = 4,
    OgiveA = 5,
    OgiveS = 6,
    PilotedOgiveS = 7,
    Ng = 8,
    Scng = 9,
    Fica = 10,
}

impl IceAlgorithm {
    fn core(self) -> Algorithm {
        match self {
            Self::MpdrIni => Algorithm::MpdrIni,
            Self::OgiceW => Algorithm::OgiceW,
            Self::OgiceA => Algorithm::OgiceA,
            Self::OgiceS => Algorithm::OgiceS,
            Self::OgiveW => Algorithm::OgiveW,
            Self::OgiveA => Algorithm::OgiveA,
            Self::OgiveS => Algorithm::OgiveS,
            Self::PilotedOgiveS => Algorithm::PilotedOgiveS,
            Self::Ng => Algorithm::Ng,
            Self::Scng => Algorithm::Scng,
            Self::Fica => Algorithm::Fica,
        }
    }
}

/// Settings of the OGICE/OGIVE gradient solvers.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IceOptions {
    pub step_mu: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Criterion refresh period of the switched solvers.
    pub q: usize,
    /// Switching threshold.
    pub tau: f64,
}

/// Observed mixtures, `k` blocks of `d x n` samples, plus an optional pilot.
pub struct IceData {
    blocks: Vec<CMatrix>,
    pilot: Option<CVector>,
}

pub struct IceResult {
    inner: ExtractOutput,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &IceError) -> IceStatus {
    match e {
        IceError::Dimension(_) => IceStatus::Dimension,
        IceError::Singular(_) | IceError::NotPositiveDefinite => IceStatus::Singular,
        IceError::Degenerate(_) | IceError::DegenerateScore(_) => IceStatus::Degenerate,
        IceError::NonFinite(_) => IceStatus::NonFinite,
        IceError::Breakdown(_) => IceStatus::Breakdown,
        IceError::Config(_) | IceError::Format(_) => IceStatus::InvalidArgument,
    }
}

fn fail(status: IceStatus, msg: impl Into<String>) -> IceStatus {
    set_error(msg.into());
    status
}

/// Run `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<IceStatus, IceStatus>) -> IceStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(s)) | Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(IceStatus::Panic, format!("panic: {msg}"))
        }
    }
}

fn core_err(e: IceError) -> IceStatus {
    fail(status_of(&e), e.to_string())
}

fn complex_slice(p: *const f64, len: usize, what: &str) -> Result<Vec<C64>, IceStatus> {
    if p.is_null() {
        return Err(fail(IceStatus::NullPointer, format!("{what} is null")));
    }
    // SAFETY: the caller guarantees `2 * len` readable doubles at `p`
    let raw = unsafe { std::slice::from_raw_parts(p, 2 * len) };
    let v: Vec<C64> = raw.chunks_exact(2).map(|c| C64::new(c[0], c[1])).collect();
    if v.iter().any(|z| !z.is_finite()) {
        return Err(fail(IceStatus::NonFinite, format!("{what} has a non-finite entry")));
    }
    Ok(v)
}

fn write_complex(src: &[C64], out: *mut f64, what: &str) -> Result<(), IceStatus> {
    if out.is_null() {
        return Err(fail(IceStatus::NullPointer, format!("{what} is null")));
    }
    // SAFETY: the caller guarantees room for `2 * src.len()` doubles
    let dst = unsafe { std::slice::from_raw_parts_mut(out, 2 * src.len()) };
    for (d, z) in dst.chunks_exact_mut(2).zip(src) {
        d[0] = z.re;
        d[1] = z.im;
    }
    Ok(())
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ice_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn ice_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Default gradient-solver settings.
#[no_mangle]
pub extern "C" fn ice_options_default() -> IceOptions {
    let s = ice_core::ice::SolverConfig::ogice();
    IceOptions {
        step_mu: s.step_mu,
        tol: s.tol,
        max_iter: s.max_iter,
        q: s.q,
        tau: s.tau,
    }
}

/// Copy `k` mixtures into a new data object. `blocks[m]` points at
/// `2 * d * n` doubles.
///
/// # Safety
/// `blocks` must hold `k` valid pointers and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ice_data_new(
    blocks: *const *const f64,
    k: usize,
    d: usize,
    n: usize,
    out: *mut *mut IceData,
) -> IceStatus {
    guard(|| {
        if blocks.is_null() || out.is_null() {
            return Err(fail(IceStatus::NullPointer, "blocks or out is null"));
        }
        if k == 0 || d == 0 || n == 0 {
            return Err(fail(IceStatus::Dimension, format!("empty shape k={k} d={d} n={n}")));
        }
        let len = d.checked_mul(n).ok_or_else(|| fail(IceStatus::Dimension, "d * n overflows"))?;
        // SAFETY: `blocks` holds `k` pointers by contract
        let ptrs = unsafe { std::slice::from_raw_parts(blocks, k) };
        let mut mats = Vec::with_capacity(k);
        for (m, &p) in ptrs.iter().enumerate() {
            let data = complex_slice(p, len, &format!("block {m}"))?;
            mats.push(CMatrix::from_vec(d, n, data).map_err(core_err)?);
        }
        let data = Box::new(IceData {
            blocks: mats,
            pilot: None,
        });
        // SAFETY: checked non-null above
        unsafe { *out = Box::into_raw(data) };
        Ok(IceStatus::Ok)
    })
}

/// Attach a pilot of `n` complex samples for the piloted solver.
///
/// # Safety
/// `data` must come from [`ice_data_new`]; `pilot` must hold `2 * n` doubles.
#[no_mangle]
pub unsafe extern "C" fn ice_data_set_pilot(data: *mut IceData, pilot: *const f64) -> IceStatus {
    guard(|| {
        // SAFETY: null or a live handle by contract
        let data = unsafe { data.as_mut() }.ok_or_else(|| fail(IceStatus::NullPointer, "data is null"))?;
        let n = data.blocks[0].cols();
        data.pilot = Some(CVector::new(complex_slice(pilot, n, "pilot")?));
        Ok(IceStatus::Ok)
    })
}

/// # Safety
/// `data` must be null or come from [`ice_data_new`], and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ice_data_free(data: *mut IceData) {
    if !data.is_null() {
        // SAFETY: allocated by ice_data_new
        drop(unsafe { Box::from_raw(data) });
    }
}

/// Extract one source per mixture. `a_init` holds `k` initial mixing
/// vectors, `2 * d` doubles each. `options` may be null for the defaults.
///
/// Returns `ICE_STATUS_OK` or `ICE_STATUS_NOT_CONVERGED` with `*out` set, or
/// an error code with `*out` untouched.
///
/// # Safety
/// Pointers must be valid for the sizes above; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ice_extract(
    data: *const IceData,
    algorithm: IceAlgorithm,
    a_init: *const f64,
    options: *const IceOptions,
    out: *mut *mut IceResult,
) -> IceStatus {
    guard(|| {
        // SAFETY: null or a live handle by contract
        let data = unsafe { data.as_ref() }.ok_or_else(|| fail(IceStatus::NullPointer, "data is null"))?;
        if out.is_null() {
            return Err(fail(IceStatus::NullPointer, "out is null"));
        }
        let (k, d) = (data.blocks.len(), data.blocks[0].rows());
        let flat = complex_slice(a_init, k * d, "a_init")?;
        let inits: Vec<CVector> = flat.chunks_exact(d).map(|c| CVector::new(c.to_vec())).collect();
        let mut config = ExperimentConfig::default();
        // SAFETY: null or a valid struct by contract
        if let Some(o) = unsafe { options.as_ref() } {
            for s in [&mut config.ogice, &mut config.ogive] {
                s.step_mu = o.step_mu;
                s.tol = o.tol;
                s.max_iter = o.max_iter;
                s.q = o.q;
                s.tau = o.tau;
            }
            config.ogice.validate().map_err(core_err)?;
        }
        let req = ExtractRequest {
            algorithm: algorithm.core(),
            inputs: data.blocks.clone(),
            inits,
            pilot: data.pilot.clone(),
            truth: None,
            config,
        };
        let inner = extract(&req).map_err(core_err)?;
        let status = if inner.report.converged {
            IceStatus::Ok
        } else {
            IceStatus::NotConverged
        };
        // SAFETY: checked non-null above
        unsafe { *out = Box::into_raw(Box::new(IceResult { inner })) };
        Ok(status)
    })
}

fn result_ref<'a>(r: *const IceResult) -> Result<&'a IceResult, IceStatus> {
    // SAFETY: null or a live handle by contract of every caller
    unsafe { r.as_ref() }.ok_or_else(|| fail(IceStatus::NullPointer, "result is null"))
}

/// Number of mixtures in a result.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ice_result_mixtures(result: *const IceResult) -> usize {
    result_ref(result).map_or(0, |r| r.inner.report.mixtures.len())
}

/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ice_result_iterations(result: *const IceResult) -> usize {
    result_ref(result).map_or(0, |r| r.inner.report.iterations)
}

/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ice_result_converged(result: *const IceResult) -> bool {
    result_ref(result).is_ok_and(|r| r.inner.report.converged)
}

fn vector_of(result: *const IceResult, m: usize, w: bool, out: *mut f64) -> IceStatus {
    guard(|| {
        let r = result_ref(result)?;
        let mix = r
            .inner
            .report
            .mixtures
            .get(m)
            .ok_or_else(|| fail(IceStatus::Dimension, format!("mixture {m} out of range")))?;
        let v = if w { &mix.w } else { &mix.a };
        let z: Vec<C64> = v.iter().map(|p| C64::new(p[0], p[1])).collect();
        write_complex(&z, out, "out")?;
        Ok(IceStatus::Ok)
    })
}

/// Write the mixing vector of mixture `m` (`2 * d` doubles).
///
/// # Safety
/// `result` must be a live handle and `out` must have room for `2 * d` doubles.
#[no_mangle]
pub unsafe extern "C" fn ice_result_a(result: *const IceResult, m: usize, out: *mut f64) -> IceStatus {
    vector_of(result, m, false, out)
}

/// Write the separating vector of mixture `m` (`2 * d` doubles).
///
/// # Safety
/// `result` must be a live handle and `out` must have room for `2 * d` doubles.
#[no_mangle]
pub unsafe extern "C" fn ice_result_w(result: *const IceResult, m: usize, out: *mut f64) -> IceStatus {
    vector_of(result, m, true, out)
}

/// Write the extracted signal of mixture `m` (`2 * n` doubles).
///
/// # Safety
/// `result` must be a live handle and `out` must have room for `2 * n` doubles.
#[no_mangle]
pub unsafe extern "C" fn ice_result_signal(result: *const IceResult, m: usize, out: *mut f64) -> IceStatus {
    guard(|| {
        let r = result_ref(result)?;
        let s = &r.inner.signals;
        if m >= s.rows() {
            return Err(fail(IceStatus::Dimension, format!("mixture {m} out of range")));
        }
        write_complex(s.row(m), out, "out")?;
        Ok(IceStatus::Ok)
    })
}

/// # Safety
/// `result` must be null or come from [`ice_extract`], and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ice_result_free(result: *mut IceResult) {
    if !result.is_null() {
        // SAFETY: allocated by ice_extract
        drop(unsafe { Box::from_raw(result) });
    }
}
