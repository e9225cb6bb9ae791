//! C ABI over the hydrobalance library.
//!
//! Conventions: objects are opaque handles created by `*_new`-style
//! constructors and released by the matching `*_free`; every fallible call
//! returns an [`HbStatus`] and writes results through out-pointers; the
//! last error message of the current thread is available from
//! [`hb_last_error`]. Passing a null handle returns
//! `HB_STATUS_NULL_POINTER` rather than crashing, and panics are caught at
//! the boundary and reported as `HB_STATUS_PANIC`.
//!
//! The matching header is generated into `include/hydrobalance.h` at build
//! time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use hydrobalance::config::Config;
use hydrobalance::des::{run as des_run, SimOutput, SnapshotPlan};
use hydrobalance::init::{InitLaw, InitialCondition};
use hydrobalance::params::{derive, DerivedConstants, ModelParams};
use hydrobalance::pde::{stationary, GridSpec, PdeCoeffs, StationaryProfile, TailGrid};

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ParseError = 3,
    NumericalError = 4,
    Panic = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(message: impl AsRef<str>) {
    let sanitized = message.as_ref().replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn guard<F: FnOnce() -> HbStatus>(f: F) -> HbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("panic across the C boundary");
            HbStatus::Panic
        }
    }
}

/// Model handle: validated parameters plus their derived constants.
pub struct HbModel {
    params: ModelParams,
    derived: DerivedConstants,
}

/// Closed-form stationary profile handle.
pub struct HbStationary {
    profile: StationaryProfile,
}

/// Tail-equation solver handle.
pub struct HbSolver {
    grid: TailGrid,
}

/// Finished simulation run handle.
pub struct HbSim {
    output: SimOutput,
    sqrt_n: f64,
}

/// Derived limit constants, by value.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct HbDerived {
    pub lambda_n: f64,
    pub lambda0_n: f64,
    pub mu_n: f64,
    pub rho: f64,
    pub b1: f64,
    pub c1: f64,
    pub b0: f64,
    pub sigma_ser: f64,
    pub sigma2: f64,
    pub a: f64,
}

/// Initial laws constructible through the C surface.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HbInitKind {
    /// Point mass at `p0`.
    Dirac = 0,
    /// Uniform on `[p0, p1)`.
    Uniform = 1,
}

fn init_law(kind: HbInitKind, p0: f64, p1: f64) -> Result<InitLaw, String> {
    let law = match kind {
        HbInitKind::Dirac => InitLaw::Dirac { x0: p0 },
        HbInitKind::Uniform => InitLaw::Uniform { lo: p0, hi: p1 },
    };
    law.validate().map_err(|e| e.to_string())?;
    Ok(law)
}

/// Crate version as a static C string.
#[no_mangle]
pub extern "C" fn hb_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// Message of the last error on this thread (empty when none). The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hb_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Parse a TOML configuration document (the same schema the CLI reads) and
/// build a model handle from its `[model]` table.
///
/// # Safety
/// `text` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hb_model_from_toml(
    text: *const c_char,
    out: *mut *mut HbModel,
) -> HbStatus {
    guard(|| {
        if text.is_null() || out.is_null() {
            set_error("null pointer");
            return HbStatus::NullPointer;
        }
        let text = match unsafe { CStr::from_ptr(text) }.to_str() {
            Ok(t) => t,
            Err(_) => {
                set_error("config text is not valid UTF-8");
                return HbStatus::ParseError;
            }
        };
        let config = match Config::from_toml_str(text) {
            Ok(c) => c,
            Err(e) => {
                set_error(e.to_string());
                return HbStatus::ParseError;
            }
        };
        let derived = match derive(&config.model) {
            Ok(d) => d,
            Err(e) => {
                set_error(e.to_string());
                return HbStatus::InvalidArgument;
            }
        };
        unsafe {
            *out = Box::into_raw(Box::new(HbModel {
                params: config.model,
                derived,
            }));
        }
        HbStatus::Ok
    })
}

/// # Safety
/// `model` must come from [`hb_model_from_toml`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn hb_model_free(model: *mut HbModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn hb_model_derived(model: *const HbModel, out: *mut HbDerived) -> HbStatus {
    guard(|| {
        if model.is_null() || out.is_null() {
            set_error("null pointer");
            return HbStatus::NullPointer;
        }
        let d = unsafe { &(*model).derived };
        unsafe {
            *out = HbDerived {
                lambda_n: d.lambda_n,
                lambda0_n: d.lambda0_n,
                mu_n: d.mu_n,
                rho: d.rho,
                b1: d.b1,
                c1: d.c1,
                b0: d.b0,
                sigma_ser: d.sigma_ser,
                sigma2: d.sigma2,
                a: d.a,
            };
        }
        HbStatus::Ok
    })
}

/// Build the closed-form stationary profile (requires a stable model,
/// `rho < 0`).
///
/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn hb_stationary_new(
    model: *const HbModel,
    out: *mut *mut HbStationary,
) -> HbStatus {
    guard(|| {
        if model.is_null() || out.is_null() {
            set_error("null pointer");
            return HbStatus::NullPointer;
        }
        let model = unsafe { &*model };
        let coeffs = PdeCoeffs::new(&model.params, &model.derived);
        match stationary(coeffs) {
            Ok(profile) => {
                unsafe {
                    *out = Box::into_raw(Box::new(HbStationary { profile }));
                }
                HbStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                HbStatus::InvalidArgument
            }
        }
    })
}

/// # Safety
/// `profile` must come from [`hb_stationary_new`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn hb_stationary_free(profile: *mut HbStationary) {
    if !profile.is_null() {
        drop(unsafe { Box::from_raw(profile) });
    }
}

/// `alpha = b / c1` of the profile; NaN on a null handle.
///
/// # Safety
/// `profile` must be a valid handle or null.
#[no_mangle]
pub unsafe extern "C" fn hb_stationary_alpha(profile: *const HbStationary) -> f64 {
    if profile.is_null() {
        return f64::NAN;
    }
    unsafe { &*profile }.profile.alpha
}

/// Evaluate the stationary tail (`out[i] = v_stat(xs[i])`).
///
/// # Safety
/// `xs` and `out` must point to `len` readable/writable doubles.
#[no_mangle]
pub unsafe extern "C" fn hb_stationary_tail(
    profile: *const HbStationary,
    xs: *const f64,
    len: usize,
    out: *mut f64,
) -> HbStatus {
    guard(|| {
        if profile.is_null() || (len > 0 && (xs.is_null() || out.is_null())) {
            set_error("null pointer");
            return HbStatus::NullPointer;
        }
        let profile = unsafe { &(*profile).profile };
        let xs = unsafe { std::slice::from_raw_parts(xs, len) };
        let out = unsafe { std::slice::from_raw_parts_mut(out, len) };
        for (o, &x) in out.iter_mut().zip(xs) {
            *o = profile.v(x);
        }
        HbStatus::Ok
    })
}

/// Evaluate the stationary density (`out[i] = u_stat(xs[i])`).
///
/// # Safety
/// `xs` and `out` must point to `len` readable/writable doubles.
#[no_mangle]
pub unsafe extern "C" fn hb_stationary_density(
    profile: *const HbStationary,
    xs: *const f64,
    len: usize,
    out: *mut f64,
) -> HbStatus {
    guard(|| {
        if profile.is_null() || (len > 0 && (xs.is_null() || out.is_null())) {
            set_error("null pointer");
            return HbStatus::NullPointer;
        }
        let profile = unsafe { &(*profile).profile };
        let xs = unsafe { std::slice::from_raw_parts(xs, len) };
        let out = unsafe { std::slice::from_raw_parts_mut(out, len) };
        for (o, &x) in out.iter_mut().zip(xs) {
            *o = profile.u(x);
        }
        HbStatus::Ok
    })
}

/// Create a tail-equation solver on `[0, x_max]` with `cells` cells,
/// initialized from the given law.
///
/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn hb_solver_new(
    model: *const HbModel,
    kind: HbInitKind,
    p0: f64,
    p1: f64,
    x_max: f64,
    cells: usize,
    out: *mut *mut HbSolver,
) -> HbStatus {
    guard(|| {
        if model.is_null() || out.is_null() {
            set_error("null pointer");
            return HbStatus::NullPointer;
        }
        let model = unsafe { &*model };
        let law = match init_law(kind, p0, p1) {
            Ok(law) => law,
            Err(e) => {
                set_error(e);
                return HbStatus::InvalidArgument;
            }
        };
        let coeffs = PdeCoeffs::new(&model.params, &model.derived);
        let spec = match GridSpec::new(x_max, cells) {
            Ok(s) => s,
            Err(e) => {
                set_error(e.to_string());
                return HbStatus::InvalidArgument;
            }
        };
        match TailGrid::init_tail(&law, coeffs, spec) {
            Ok(grid) => {
                unsafe {
                    *out = Box::into_raw(Box::new(HbSolver { grid }));
                }
                HbStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                HbStatus::InvalidArgument
            }
        }
    })
}

/// # Safety
/// `solver` must come from [`hb_solver_new`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn hb_solver_free(solver: *mut HbSolver) {
    if !solver.is_null() {
        drop(unsafe { Box::from_raw(solver) });
    }
}

/// Advance the solver to `t_end`.
///
/// # Safety
/// `solver` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn hb_solver_evolve(solver: *mut HbSolver, t_end: f64) -> HbStatus {
    guard(|| {
        if solver.is_null() {
            set_error("null pointer");
            return HbStatus::NullPointer;
        }
        match unsafe { &mut *solver }.grid.evolve(t_end) {
            Ok(()) => HbStatus::Ok,
            Err(e) => {
                set_error(e.to_string());
                HbStatus::NumericalError
            }
        }
    })
}

/// Current solver time; NaN on a null handle.
///
/// # Safety
/// `solver` must be a valid handle or null.
#[no_mangle]
pub unsafe extern "C" fn hb_solver_time(solver: *const HbSolver) -> f64 {
    if solver.is_null() {
        return f64::NAN;
    }
    unsafe { &*solver }.grid.t()
}

/// Evaluate the current tail by linear interpolation.
///
/// # Safety
/// `xs` and `out` must point to `len` readable/writable doubles.
#[no_mangle]
pub unsafe extern "C" fn hb_solver_tail(
    solver: *const HbSolver,
    xs: *const f64,
    len: usize,
    out: *mut f64,
) -> HbStatus {
    guard(|| {
        if solver.is_null() || (len > 0 && (xs.is_null() || out.is_null())) {
            set_error("null pointer");
            return HbStatus::NullPointer;
        }
        let curve = unsafe { &*solver }.grid.tail_curve();
        let xs = unsafe { std::slice::from_raw_parts(xs, len) };
        let out = unsafe { std::slice::from_raw_parts_mut(out, len) };
        for (o, &x) in out.iter_mut().zip(xs) {
            *o = curve.eval(x);
        }
        HbStatus::Ok
    })
}

/// Macroscopic mean and spread of the current profile.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn hb_solver_macro(
    solver: *const HbSolver,
    m_mac: *mut f64,
    sigma_mac: *mut f64,
) -> HbStatus {
    guard(|| {
        if solver.is_null() || m_mac.is_null() || sigma_mac.is_null() {
            set_error("null pointer");
            return HbStatus::NullPointer;
        }
        match unsafe { &*solver }.grid.macro_stats() {
            Ok(stats) => {
                unsafe {
                    *m_mac = stats.m_mac;
                    *sigma_mac = stats.sigma_mac;
                }
                HbStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                HbStatus::NumericalError
            }
        }
    })
}

/// Simulate the n-server system with snapshots at `times` (sorted,
/// nonnegative) under the given seed.
///
/// # Safety
/// `model`, `times` (length `n_times`) and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn hb_sim_run(
    model: *const HbModel,
    kind: HbInitKind,
    p0: f64,
    p1: f64,
    times: *const f64,
    n_times: usize,
    seed: u64,
    out: *mut *mut HbSim,
) -> HbStatus {
    guard(|| {
        if model.is_null() || out.is_null() || (n_times > 0 && times.is_null()) {
            set_error("null pointer");
            return HbStatus::NullPointer;
        }
        let model = unsafe { &*model };
        let law = match init_law(kind, p0, p1) {
            Ok(law) => law,
            Err(e) => {
                set_error(e);
                return HbStatus::InvalidArgument;
            }
        };
        let times = unsafe { std::slice::from_raw_parts(times, n_times) }.to_vec();
        let plan = SnapshotPlan::at_times(times);
        let ic = InitialCondition::from(law);
        match des_run(&model.params, &ic, &plan, seed) {
            Ok(output) => {
                unsafe {
                    *out = Box::into_raw(Box::new(HbSim {
                        output,
                        sqrt_n: f64::from(model.params.n).sqrt(),
                    }));
                }
                HbStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                HbStatus::InvalidArgument
            }
        }
    })
}

/// # Safety
/// `sim` must come from [`hb_sim_run`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn hb_sim_free(sim: *mut HbSim) {
    if !sim.is_null() {
        drop(unsafe { Box::from_raw(sim) });
    }
}

/// Number of recorded snapshots; 0 on a null handle.
///
/// # Safety
/// `sim` must be a valid handle or null.
#[no_mangle]
pub unsafe extern "C" fn hb_sim_snapshot_count(sim: *const HbSim) -> usize {
    if sim.is_null() {
        return 0;
    }
    unsafe { &*sim }.output.snapshots.len()
}

/// Time, sample size, empirical mean and variance of snapshot `index`.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn hb_sim_snapshot_stats(
    sim: *const HbSim,
    index: usize,
    t: *mut f64,
    size: *mut usize,
    mean: *mut f64,
    variance: *mut f64,
) -> HbStatus {
    guard(|| {
        if sim.is_null() || t.is_null() || size.is_null() || mean.is_null() || variance.is_null() {
            set_error("null pointer");
            return HbStatus::NullPointer;
        }
        let sim = unsafe { &*sim };
        let Some(snap) = sim.output.snapshots.get(index) else {
            set_error(format!("snapshot index {index} out of range"));
            return HbStatus::InvalidArgument;
        };
        unsafe {
            *t = snap.t;
            *size = snap.stats.size;
            *mean = snap.stats.mean;
            *variance = snap.stats.variance;
        }
        let _ = sim.sqrt_n;
        HbStatus::Ok
    })
}

/// Copy the sorted rescaled samples of snapshot `index` into `buf`
/// (capacity `cap`); writes the copied count to `written`.
///
/// # Safety
/// `buf` must point to `cap` writable doubles; the other pointers must be
/// valid.
#[no_mangle]
pub unsafe extern "C" fn hb_sim_snapshot_samples(
    sim: *const HbSim,
    index: usize,
    buf: *mut f64,
    cap: usize,
    written: *mut usize,
) -> HbStatus {
    guard(|| {
        if sim.is_null() || written.is_null() || (cap > 0 && buf.is_null()) {
            set_error("null pointer");
            return HbStatus::NullPointer;
        }
        let sim = unsafe { &*sim };
        let Some(snap) = sim.output.snapshots.get(index) else {
            set_error(format!("snapshot index {index} out of range"));
            return HbStatus::InvalidArgument;
        };
        let Some(measure) = snap.measure.as_ref() else {
            set_error("snapshot did not record samples");
            return HbStatus::InvalidArgument;
        };
        let n = measure.len().min(cap);
        let out = unsafe { std::slice::from_raw_parts_mut(buf, n) };
        out.copy_from_slice(&measure.samples()[..n]);
        unsafe {
            *written = n;
        }
        HbStatus::Ok
    })
}

// Null-safe free of a model pointer created elsewhere is covered above;
// nothing in this crate allocates through any other path.
