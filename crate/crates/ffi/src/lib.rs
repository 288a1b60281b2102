//! C ABI for `posi-rip`.
//!
//! Designs and direction sets are opaque heap handles released with their
//! `*_free` function. Every fallible call returns a [`PosiStatus`]; on failure
//! [`posi_last_error`] describes the most recent error on the calling thread.
//! Degrees of freedom are passed as `uint64_t`, with [`POSI_DOF_INF`] for
//! the known-variance case.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use posi_rip::bounds::{compute_bounds, BellGrid, BellParams, BoundsConfig, RhoChoice};
use posi_rip::contrast::{ContrastOptions, DirectionSet};
use posi_rip::design::{DesignMatrix, EnsembleSpec};
use posi_rip::distributions::Dof;
use posi_rip::family::{EnumerationOptions, ModelFamily};
use posi_rip::rip::{rip_report, RipOptions};
use posi_rip::Error;

/// Degrees of freedom value meaning r = infinity.
pub const POSI_DOF_INF: u64 = u64::MAX;

/// Result of an FFI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PosiStatus {
    Ok = 0,
    NullPointer = 1,
    /// Invalid argument or failed validation.
    InvalidArgument = 2,
    /// NoRoot, EnumerationLimit, rank deficiency or similar.
    NumericFailure = 3,
    Io = 4,
    Panic = 5,
}

/// Opaque design matrix.
pub struct PosiDesign(DesignMatrix);

/// Opaque set of normalized contrast directions for a model family.
pub struct PosiDirections(DirectionSet);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PosiEstimate {
    pub k_hat: f64,
    pub k_lo: f64,
    pub k_hi: f64,
    pub k_se: f64,
    pub gauss_width_hat: f64,
    pub gauss_width_se: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PosiRip {
    pub kappa: f64,
    pub delta: f64,
    pub subsets_examined: u64,
}

/// Upper bounds for one configuration. `u_tilde_rip` is NaN when it is not
/// defined (min(n, p) < 2).
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PosiBounds {
    pub u_orth: f64,
    pub u_sparse: f64,
    pub u_rip: f64,
    pub u_bar_sparse: f64,
    pub u_bar_rip: f64,
    pub u_tilde_rip: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> PosiStatus {
    match e.exit_code() {
        3 => PosiStatus::NumericFailure,
        4 => PosiStatus::Io,
        _ => PosiStatus::InvalidArgument,
    }
}

struct Fail(PosiStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), format!("{}: {e}", e.kind()))
    }
}

fn null(what: &str) -> Fail {
    Fail(PosiStatus::NullPointer, format!("{what} is null"))
}

fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> PosiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error(String::new());
            PosiStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            PosiStatus::Panic
        }
    }
}

fn dof(r: u64) -> Result<Dof, Fail> {
    match r {
        POSI_DOF_INF => Ok(Dof::Infinite),
        0 => Err(Fail(PosiStatus::InvalidArgument, "degrees of freedom must be positive".into())),
        r => Ok(Dof::Finite(r)),
    }
}

unsafe fn str_arg<'a>(s: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s).to_str().map_err(|_| Fail(PosiStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message for the last failed call on this thread (empty after success).
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn posi_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn posi_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a design from `n * p` row-major values.
///
/// # Safety
/// `values` must point to `n * p` doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn posi_design_from_rows(
    values: *const f64,
    n: usize,
    p: usize,
    out: *mut *mut PosiDesign,
) -> PosiStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        if values.is_null() {
            return Err(null("values"));
        }
        let len = n.checked_mul(p).ok_or_else(|| Fail(PosiStatus::InvalidArgument, "n * p overflows".into()))?;
        let x = DesignMatrix::from_row_major(n, p, std::slice::from_raw_parts(values, len))?;
        *out = Box::into_raw(Box::new(PosiDesign(x)));
        Ok(())
    })
}

/// Creates a design from an ensemble spec such as `equicorr:p=20,k=10,c=0.2`.
///
/// # Safety
/// `spec` must be a NUL-terminated string and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn posi_design_from_ensemble(spec: *const c_char, out: *mut *mut PosiDesign) -> PosiStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let spec: EnsembleSpec = str_arg(spec, "spec")?.parse()?;
        *out = Box::into_raw(Box::new(PosiDesign(spec.build()?)));
        Ok(())
    })
}

/// Reads a headerless numeric CSV design.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn posi_design_read_csv(path: *const c_char, out: *mut *mut PosiDesign) -> PosiStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let x = DesignMatrix::read_csv(str_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(PosiDesign(x)));
        Ok(())
    })
}

/// Releases a design. Null is ignored.
///
/// # Safety
/// `design` must come from a `posi_design_*` constructor and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn posi_design_free(design: *mut PosiDesign) {
    if !design.is_null() {
        drop(Box::from_raw(design));
    }
}

/// # Safety
/// `design` must be a live handle; `n` and `p` must be writable.
#[no_mangle]
pub unsafe extern "C" fn posi_design_dims(design: *const PosiDesign, n: *mut usize, p: *mut usize) -> PosiStatus {
    guard(|| {
        let d = design.as_ref().ok_or_else(|| null("design"))?;
        *out_arg(n, "n")? = d.0.n();
        *out_arg(p, "p")? = d.0.p();
        Ok(())
    })
}

/// Exhaustive kappa(X, s) and delta(X, s), failing above `cap` subsets.
///
/// # Safety
/// `design` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn posi_rip(design: *const PosiDesign, s: usize, cap: u64, out: *mut PosiRip) -> PosiStatus {
    guard(|| {
        let d = design.as_ref().ok_or_else(|| null("design"))?;
        let out = out_arg(out, "out")?;
        let r = rip_report(&d.0, s, RipOptions { cap, ..Default::default() })?;
        *out = PosiRip { kappa: r.kappa, delta: r.delta, subsets_examined: r.subsets_examined };
        Ok(())
    })
}

/// Builds the contrast directions of all models of size 1..=s.
///
/// # Safety
/// `design` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn posi_directions_build(
    design: *const PosiDesign,
    s: usize,
    cap: u64,
    out: *mut *mut PosiDirections,
) -> PosiStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let d = design.as_ref().ok_or_else(|| null("design"))?;
        let family = ModelFamily::sparse(d.0.p(), s)?;
        let opts = ContrastOptions { enumeration: EnumerationOptions { cap, streaming: false }, ..Default::default() };
        let dirs = DirectionSet::build(&d.0, &family, opts)?;
        *out = Box::into_raw(Box::new(PosiDirections(dirs)));
        Ok(())
    })
}

/// Number of distinct directions in the set (0 for null).
///
/// # Safety
/// `dirs` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn posi_directions_len(dirs: *const PosiDirections) -> usize {
    dirs.as_ref().map_or(0, |d| d.0.len())
}

/// Releases a direction set. Null is ignored.
///
/// # Safety
/// `dirs` must come from `posi_directions_build` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn posi_directions_free(dirs: *mut PosiDirections) {
    if !dirs.is_null() {
        drop(Box::from_raw(dirs));
    }
}

/// Monte Carlo estimate of K at level 1 - alpha.
///
/// # Safety
/// `dirs` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn posi_estimate_k(
    dirs: *const PosiDirections,
    alpha: f64,
    r: u64,
    reps: usize,
    seed: u64,
    out: *mut PosiEstimate,
) -> PosiStatus {
    guard(|| {
        let d = dirs.as_ref().ok_or_else(|| null("dirs"))?;
        let out = out_arg(out, "out")?;
        let e = posi_rip::posi_mc::estimate_k(&d.0, alpha, dof(r)?, reps, seed)?;
        *out = PosiEstimate {
            k_hat: e.k_hat,
            k_lo: e.k_ci.0,
            k_hi: e.k_ci.1,
            k_se: e.k_se,
            gauss_width_hat: e.gauss_width_hat,
            gauss_width_se: e.gauss_width_se,
        };
        Ok(())
    })
}

/// All upper bounds for `(p, s, n, delta, alpha, r)` with grid size `grid`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn posi_bounds(
    p: usize,
    s: usize,
    n: usize,
    delta: f64,
    alpha: f64,
    r: u64,
    grid: usize,
    out: *mut PosiBounds,
) -> PosiStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let cfg = BoundsConfig { p, s, n, delta, alpha, r: dof(r)?, grid, rho: RhoChoice::Models };
        let b = compute_bounds(&cfg, None)?;
        *out = PosiBounds {
            u_orth: b.u_orth,
            u_sparse: b.u_sparse,
            u_rip: b.u_rip,
            u_bar_sparse: b.u_bar_sparse,
            u_bar_rip: b.u_bar_rip,
            u_tilde_rip: b.u_tilde_rip.unwrap_or(f64::NAN),
        };
        Ok(())
    })
}

/// B_l(q, r, rho) with rho given by its natural log.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn posi_solve_b_ell(
    q: u64,
    r: u64,
    ln_rho: f64,
    level: f64,
    grid: usize,
    out: *mut f64,
) -> PosiStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let r = dof(r)?;
        let params = BellParams::with_ln_rho(q, r, ln_rho, level, grid)?;
        *out = BellGrid::for_params(&params)?.solve(r, level)?;
        Ok(())
    })
}
