//! C ABI over the `nsdde` library.
//!
//! Every fallible function returns an [`NsddeStatus`]; on failure a message
//! for the calling thread is available from [`nsdde_last_error`]. Systems and
//! grids are opaque handles created by `*_new` style functions and released
//! with the matching `*_free`. Panics never cross the boundary: they are
//! reported as `NSDDE_STATUS_PANIC`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use nsdde::cli::{parse_config, run_experiment, BuiltinSystem, RunOptions};
use nsdde::scheme::{simulate_path, tame_drift};
use nsdde::stability::{estimate_second_moment, eval_f, find_decay_base, CertificateInputs};
use nsdde::{BrownianDriver, Error, InitialSegment, NeutralSystem, SchemeConfig, SchemeKind, TimeGrid, Vector};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NsddeStatus {
    Ok = 0,
    InvalidArgument = 1,
    GridIncompatible = 2,
    StepTooLarge = 3,
    PathDiverged = 4,
    HypothesisViolated = 5,
    CannotFit = 6,
    Io = 7,
    Config = 8,
    NullPointer = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

/// Scheme selector accepted by the simulation entry points.
pub const NSDDE_SCHEME_TAMED: u32 = 0;
pub const NSDDE_SCHEME_CLASSIC: u32 = 1;

/// Opaque built-in system.
pub struct NsddeSystem(BuiltinSystem);

/// Opaque time grid.
pub struct NsddeGrid(TimeGrid);

/// Inputs of the decay-base function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NsddeCertificateInputs {
    pub kappa: f64,
    pub tau: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub k_tilde: f64,
    pub h: f64,
}

/// Decay-base certificate.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NsddeCertificate {
    pub f_at_one: f64,
    pub c_bar: f64,
    pub c: f64,
    pub ms_rate: f64,
    pub as_rate: f64,
}

impl From<NsddeCertificateInputs> for CertificateInputs {
    fn from(i: NsddeCertificateInputs) -> Self {
        CertificateInputs {
            kappa: i.kappa,
            tau: i.tau,
            lambda2: i.lambda2,
            lambda3: i.lambda3,
            k_tilde: i.k_tilde,
            h: i.h,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(NsddeStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidArgument(_) | Error::OutOfRange { .. } => NsddeStatus::InvalidArgument,
            Error::GridIncompatible { .. } => NsddeStatus::GridIncompatible,
            Error::StepTooLarge { .. } => NsddeStatus::StepTooLarge,
            Error::PathDiverged { .. } => NsddeStatus::PathDiverged,
            Error::HypothesisViolated { .. } => NsddeStatus::HypothesisViolated,
            Error::CannotFit(_) => NsddeStatus::CannotFit,
            Error::Io { .. } => NsddeStatus::Io,
            Error::UnknownKey(_) | Error::Config(_) => NsddeStatus::Config,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(NsddeStatus::NullPointer, format!("{what} must not be null"))
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> NsddeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NsddeStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            NsddeStatus::Panic
        }
    }
}

fn scheme(kind: u32, alpha: f64) -> Result<SchemeConfig, Failure> {
    let kind = match kind {
        NSDDE_SCHEME_TAMED => SchemeKind::Tamed,
        NSDDE_SCHEME_CLASSIC => SchemeKind::Classic,
        other => return Err(Failure(NsddeStatus::InvalidArgument, format!("unknown scheme kind {other}"))),
    };
    Ok(SchemeConfig::new(kind, alpha)?)
}

unsafe fn out_slice<'a>(ptr: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn write_out<T>(ptr: *mut T, value: T) {
    if !ptr.is_null() {
        *ptr = value;
    }
}

/// Message of the most recent failed call on this thread, or null. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn nsdde_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Linear scalar system `d[x - k0 y] = (-a x + bt y) dt + s y dw`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn nsdde_system_linear(
    kappa0: f64,
    a: f64,
    btilde: f64,
    s: f64,
    out: *mut *mut NsddeSystem,
) -> NsddeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let sys = BuiltinSystem::linear(kappa0, a, btilde, s)?;
        *out = Box::into_raw(Box::new(NsddeSystem(sys)));
        Ok(())
    })
}

/// Scalar system with drift `-x^3` and no noise.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn nsdde_system_cubic(out: *mut *mut NsddeSystem) -> NsddeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = Box::into_raw(Box::new(NsddeSystem(BuiltinSystem::Cubic)));
        Ok(())
    })
}

/// Scalar system driven by unit additive noise only.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn nsdde_system_pure_noise(out: *mut *mut NsddeSystem) -> NsddeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = Box::into_raw(Box::new(NsddeSystem(BuiltinSystem::PureNoise)));
        Ok(())
    })
}

/// State dimension of a system; 0 for a null handle.
///
/// # Safety
/// `system` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nsdde_system_state_dim(system: *const NsddeSystem) -> usize {
    system.as_ref().map_or(0, |s| s.0.state_dim())
}

/// Releases a system handle. Null is ignored.
///
/// # Safety
/// `system` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nsdde_system_free(system: *mut NsddeSystem) {
    if !system.is_null() {
        drop(Box::from_raw(system));
    }
}

/// Grid with `h = tau / lag` on `[0, t_end]`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn nsdde_grid_new(tau: f64, t_end: f64, lag: usize, out: *mut *mut NsddeGrid) -> NsddeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let grid = TimeGrid::new(tau, t_end, lag)?;
        *out = Box::into_raw(Box::new(NsddeGrid(grid)));
        Ok(())
    })
}

/// Number of steps `M`; 0 for a null handle.
///
/// # Safety
/// `grid` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nsdde_grid_steps(grid: *const NsddeGrid) -> usize {
    grid.as_ref().map_or(0, |g| g.0.steps())
}

/// Step size `h`; NaN for a null handle.
///
/// # Safety
/// `grid` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nsdde_grid_step_size(grid: *const NsddeGrid) -> f64 {
    grid.as_ref().map_or(f64::NAN, |g| g.0.h())
}

/// Releases a grid handle. Null is ignored.
///
/// # Safety
/// `grid` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nsdde_grid_free(grid: *mut NsddeGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Tamed drift `b / (1 + h^alpha |b|)` of a `len`-vector into `out`.
///
/// # Safety
/// `b` and `out` must point to `len` readable and writable doubles.
#[no_mangle]
pub unsafe extern "C" fn nsdde_tame_drift(b: *const f64, len: usize, h: f64, alpha: f64, out: *mut f64) -> NsddeStatus {
    guard(|| {
        if b.is_null() {
            return Err(null("b"));
        }
        if !(h > 0.0) || !(alpha > 0.0 && alpha <= 0.5) {
            return Err(Failure(
                NsddeStatus::InvalidArgument,
                format!("need h > 0 and alpha in (0, 0.5], got h = {h}, alpha = {alpha}"),
            ));
        }
        let input = Vector::from_column_slice(std::slice::from_raw_parts(b, len));
        let dst = out_slice(out, len, "out")?;
        dst.copy_from_slice(tame_drift(&input, h, alpha).as_slice());
        Ok(())
    })
}

/// Simulates one path from the constant segment `xi = segment_value`.
///
/// States `Y_0, Y_1, ...` are written row by row into `states` (capacity
/// `capacity` doubles, `(M + 1) * state_dim` needed). `written` receives the
/// number of doubles written, or the required count on
/// `NSDDE_STATUS_BUFFER_TOO_SMALL`. `diverged_at` receives the diverging
/// step or -1. A diverged path returns `NSDDE_STATUS_PATH_DIVERGED` with the
/// finite prefix written.
///
/// # Safety
/// Handles must be live; `states` must hold `capacity` doubles; `written`
/// and `diverged_at` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn nsdde_simulate_path(
    system: *const NsddeSystem,
    grid: *const NsddeGrid,
    scheme_kind: u32,
    alpha: f64,
    segment_value: f64,
    seed: u64,
    stream: u64,
    states: *mut f64,
    capacity: usize,
    written: *mut usize,
    diverged_at: *mut i64,
) -> NsddeStatus {
    guard(|| {
        let sys = &system.as_ref().ok_or_else(|| null("system"))?.0;
        let grid = &grid.as_ref().ok_or_else(|| null("grid"))?.0;
        let config = scheme(scheme_kind, alpha)?;
        let dim = sys.state_dim();
        let needed = (grid.steps() + 1) * dim;
        if capacity < needed {
            write_out(written, needed);
            return Err(Failure(
                NsddeStatus::BufferTooSmall,
                format!("states needs {needed} doubles, got {capacity}"),
            ));
        }
        let segment = InitialSegment::constant(grid.tau(), Vector::from_element(dim, segment_value));
        let mut driver = BrownianDriver::new(seed, stream, sys.noise_dim());
        let path = simulate_path(sys, &segment, grid, &config, &mut driver)?;
        let dst = out_slice(states, capacity, "states")?;
        for (row, y) in dst.chunks_mut(dim).zip(&path.states) {
            row.copy_from_slice(y.as_slice());
        }
        write_out(written, path.states.len() * dim);
        write_out(diverged_at, path.diverged_at.map_or(-1, |k| k as i64));
        match path.diverged_at {
            Some(step) => Err(Error::PathDiverged { step }.into()),
            None => Ok(()),
        }
    })
}

/// Ensemble estimate of `E|Y_k|^2` and its standard error over `paths`
/// paths from the constant segment. Buffers need `M + 1` doubles each;
/// `written` receives the trajectory length, which is shorter if a path
/// diverged, and `divergences` the number of diverged paths.
///
/// # Safety
/// Handles must be live; `moments` and `std_errors` must hold `capacity`
/// doubles; `written` and `divergences` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn nsdde_estimate_second_moment(
    system: *const NsddeSystem,
    grid: *const NsddeGrid,
    scheme_kind: u32,
    alpha: f64,
    segment_value: f64,
    seed: u64,
    paths: usize,
    moments: *mut f64,
    std_errors: *mut f64,
    capacity: usize,
    written: *mut usize,
    divergences: *mut usize,
) -> NsddeStatus {
    guard(|| {
        let sys = &system.as_ref().ok_or_else(|| null("system"))?.0;
        let grid = &grid.as_ref().ok_or_else(|| null("grid"))?.0;
        let config = scheme(scheme_kind, alpha)?;
        let needed = grid.steps() + 1;
        if capacity < needed {
            write_out(written, needed);
            return Err(Failure(
                NsddeStatus::BufferTooSmall,
                format!("buffers need {needed} doubles, got {capacity}"),
            ));
        }
        let m = out_slice(moments, capacity, "moments")?;
        let se = out_slice(std_errors, capacity, "std_errors")?;
        let segment = InitialSegment::constant(grid.tau(), Vector::from_element(sys.state_dim(), segment_value));
        let traj = estimate_second_moment(sys, &segment, grid, &config, seed, paths)?;
        m[..traj.len()].copy_from_slice(&traj.moments);
        se[..traj.len()].copy_from_slice(&traj.std_errors);
        write_out(written, traj.len());
        write_out(divergences, traj.divergence_count);
        Ok(())
    })
}

/// Decay-base function `f(x)`.
#[no_mangle]
pub extern "C" fn nsdde_eval_f(x: f64, inputs: NsddeCertificateInputs) -> f64 {
    eval_f(x, inputs.kappa, inputs.tau, inputs.lambda2, inputs.lambda3, inputs.k_tilde, inputs.h)
}

/// Root `C_bar > 1` of `f`, the chosen base `C` and the certified rates.
///
/// # Safety
/// `inputs` must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nsdde_find_decay_base(
    inputs: *const NsddeCertificateInputs,
    out: *mut NsddeCertificate,
) -> NsddeStatus {
    guard(|| {
        let inputs = *inputs.as_ref().ok_or_else(|| null("inputs"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let cert = find_decay_base(&inputs.into())?;
        *out = NsddeCertificate {
            f_at_one: cert.f_at_one,
            c_bar: cert.c_bar,
            c: cert.c,
            ms_rate: cert.ms_rate,
            as_rate: cert.as_rate,
        };
        Ok(())
    })
}

/// Runs an experiment described by configuration text, as `nsdde run` does.
/// `out_dir` overrides `out.dir` when non-null; `workers == 0` uses every
/// core. `exit_code` receives the command-line exit status of the run.
///
/// # Safety
/// `config` must be a NUL-terminated string; `out_dir` null or
/// NUL-terminated; `exit_code` null or writable.
#[no_mangle]
pub unsafe extern "C" fn nsdde_run_config(
    config: *const c_char,
    out_dir: *const c_char,
    workers: usize,
    strict: bool,
    exit_code: *mut i32,
) -> NsddeStatus {
    guard(|| {
        if config.is_null() {
            return Err(null("config"));
        }
        let text = CStr::from_ptr(config)
            .to_str()
            .map_err(|e| Failure(NsddeStatus::Config, format!("config is not UTF-8: {e}")))?;
        let out_dir = if out_dir.is_null() {
            None
        } else {
            let s = CStr::from_ptr(out_dir)
                .to_str()
                .map_err(|e| Failure(NsddeStatus::InvalidArgument, format!("out_dir is not UTF-8: {e}")))?;
            Some(PathBuf::from(s))
        };
        let parsed = parse_config(text)?;
        let options = RunOptions {
            workers: (workers > 0).then_some(workers),
            strict,
            out_dir,
        };
        let outcome = run_experiment(&parsed, &options)?;
        write_out(exit_code, i32::from(outcome.exit_code()));
        Ok(())
    })
}
