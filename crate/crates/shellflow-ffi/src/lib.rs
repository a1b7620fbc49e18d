//! C ABI for the shell-model laboratory.
//!
//! Handles are opaque; every fallible call returns an `SfStatus` and leaves
//! a message retrievable through `sf_last_error_message` on failure. The
//! header `include/shellflow.h` is generated by cbindgen at build time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use shellflow::cli::{simulate_trajectory, FileConfig};
use shellflow::integrator::Trajectory;
use shellflow::stats::{fit_zeta, structure_function, Component, StructureTable};
use shellflow::ShellError;

/// Status codes mirroring the CLI exit contract.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SfStatus {
    SfOk = 0,
    SfNullArgument = 1,
    SfInvalidConfig = 2,
    SfBlowUp = 3,
    SfInvariantViolation = 4,
    SfInternal = 5,
}

/// Component selector for trajectory access.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SfComponent {
    SfComponentU = 0,
    SfComponentW = 1,
    SfComponentQ = 2,
}

impl SfComponent {
    fn to_component(self) -> Component {
        match self {
            SfComponent::SfComponentU => Component::U,
            SfComponent::SfComponentW => Component::W,
            SfComponent::SfComponentQ => Component::Q,
        }
    }
}

/// Opaque model handle: a parsed configuration.
pub struct SfModel {
    config: FileConfig,
}

/// Opaque trajectory handle.
pub struct SfTrajectory {
    traj: Trajectory,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &ShellError) -> SfStatus {
    match err {
        ShellError::BlowUp { .. } => SfStatus::SfBlowUp,
        ShellError::InvariantViolation(_) => SfStatus::SfInvariantViolation,
        ShellError::Member { source, .. } => status_of(source),
        _ => SfStatus::SfInvalidConfig,
    }
}

fn fail(err: ShellError) -> SfStatus {
    let status = status_of(&err);
    set_error(&err.to_string());
    status
}

fn guard<F: FnOnce() -> SfStatus>(f: F) -> SfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            SfStatus::SfInternal
        }
    }
}

/// Message of the most recent failure on this thread; the pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Parse a TOML configuration into a model handle.
///
/// # Safety
/// `text` must be a NUL-terminated string, `out` a valid pointer. The handle
/// must be released with `sf_model_free`.
#[no_mangle]
pub unsafe extern "C" fn sf_model_parse_toml(
    text: *const c_char,
    out: *mut *mut SfModel,
) -> SfStatus {
    guard(|| {
        if text.is_null() || out.is_null() {
            set_error("null argument");
            return SfStatus::SfNullArgument;
        }
        let text = match unsafe { CStr::from_ptr(text) }.to_str() {
            Ok(t) => t,
            Err(_) => {
                set_error("config text is not valid UTF-8");
                return SfStatus::SfInvalidConfig;
            }
        };
        match FileConfig::from_toml(text) {
            Ok(config) => {
                // surface model-level validation now, not at first use
                if let Err(e) = config.to_model_config() {
                    return fail(e);
                }
                if let Err(e) = config.to_solver_settings() {
                    return fail(e);
                }
                unsafe { *out = Box::into_raw(Box::new(SfModel { config })) };
                SfStatus::SfOk
            }
            Err(e) => fail(e),
        }
    })
}

/// Release a model handle; a null pointer is a no-op.
///
/// # Safety
/// `model` must come from `sf_model_parse_toml` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sf_model_free(model: *mut SfModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Shell count of the model.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sf_model_shells(model: *const SfModel) -> u32 {
    if model.is_null() {
        return 0;
    }
    unsafe { &*model }.config.model.n_shells as u32
}

/// Integrate one trajectory per the model's solver section.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer; the trajectory
/// must be released with `sf_trajectory_free`.
#[no_mangle]
pub unsafe extern "C" fn sf_simulate(
    model: *const SfModel,
    seed: u64,
    out: *mut *mut SfTrajectory,
) -> SfStatus {
    guard(|| {
        if model.is_null() || out.is_null() {
            set_error("null argument");
            return SfStatus::SfNullArgument;
        }
        let model = unsafe { &*model };
        match simulate_trajectory(&model.config, seed) {
            Ok(traj) => {
                unsafe { *out = Box::into_raw(Box::new(SfTrajectory { traj })) };
                SfStatus::SfOk
            }
            Err(e) => fail(e),
        }
    })
}

/// Release a trajectory handle; a null pointer is a no-op.
///
/// # Safety
/// `traj` must come from `sf_simulate` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sf_trajectory_free(traj: *mut SfTrajectory) {
    if !traj.is_null() {
        drop(unsafe { Box::from_raw(traj) });
    }
}

/// Number of stored samples.
///
/// # Safety
/// `traj` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sf_trajectory_samples(traj: *const SfTrajectory) -> usize {
    if traj.is_null() {
        return 0;
    }
    unsafe { &*traj }.traj.times.len()
}

/// Shell count of the stored states.
///
/// # Safety
/// `traj` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sf_trajectory_shells(traj: *const SfTrajectory) -> u32 {
    if traj.is_null() {
        return 0;
    }
    unsafe { &*traj }.traj.n_shells() as u32
}

/// Time of sample `index`.
///
/// # Safety
/// `traj` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sf_trajectory_time(
    traj: *const SfTrajectory,
    index: usize,
    out: *mut f64,
) -> SfStatus {
    if traj.is_null() || out.is_null() {
        set_error("null argument");
        return SfStatus::SfNullArgument;
    }
    let traj = &unsafe { &*traj }.traj;
    match traj.times.get(index) {
        Some(t) => {
            unsafe { *out = *t };
            SfStatus::SfOk
        }
        None => {
            set_error("sample index out of range");
            SfStatus::SfInvalidConfig
        }
    }
}

/// Copy one component of sample `index` into `re_im`, interleaved as
/// re_1, im_1, ..., re_N, im_N (2N doubles).
///
/// # Safety
/// `traj` must be a live handle; `re_im` must point to at least 2N doubles.
#[no_mangle]
pub unsafe extern "C" fn sf_trajectory_state(
    traj: *const SfTrajectory,
    index: usize,
    component: SfComponent,
    re_im: *mut f64,
) -> SfStatus {
    guard(|| {
        if traj.is_null() || re_im.is_null() {
            set_error("null argument");
            return SfStatus::SfNullArgument;
        }
        let traj = &unsafe { &*traj }.traj;
        let state = match traj.states.get(index) {
            Some(s) => s,
            None => {
                set_error("sample index out of range");
                return SfStatus::SfInvalidConfig;
            }
        };
        let n = traj.n_shells();
        let out = unsafe { std::slice::from_raw_parts_mut(re_im, 2 * n) };
        let lambda = traj.config.lambda;
        for i in 0..n {
            let a = match component {
                SfComponent::SfComponentU => state.u.amplitudes()[i],
                SfComponent::SfComponentW => state.w.amplitudes()[i],
                SfComponent::SfComponentQ => {
                    state.u.amplitudes()[i] + lambda * state.w.amplitudes()[i]
                }
            };
            out[2 * i] = a.re;
            out[2 * i + 1] = a.im;
        }
        SfStatus::SfOk
    })
}

/// S_p(k_n) of the chosen component into `out` (N doubles).
///
/// # Safety
/// `traj` must be a live handle; `out` must point to at least N doubles.
#[no_mangle]
pub unsafe extern "C" fn sf_structure_function(
    traj: *const SfTrajectory,
    p: f64,
    component: SfComponent,
    out: *mut f64,
) -> SfStatus {
    guard(|| {
        if traj.is_null() || out.is_null() {
            set_error("null argument");
            return SfStatus::SfNullArgument;
        }
        let traj = &unsafe { &*traj }.traj;
        match structure_function(traj, p, component.to_component()) {
            Ok(table) => {
                let slice = unsafe { std::slice::from_raw_parts_mut(out, table.values.len()) };
                slice.copy_from_slice(&table.values);
                SfStatus::SfOk
            }
            Err(e) => fail(e),
        }
    })
}

/// Least-squares scaling exponent of `s_values` against `wavenumbers` over
/// the 1-based shell range [n_lo, n_hi].
///
/// # Safety
/// `s_values` and `wavenumbers` must point to `len` doubles each; `zeta`
/// and `residual` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn sf_fit_zeta(
    s_values: *const f64,
    wavenumbers: *const f64,
    len: usize,
    n_lo: usize,
    n_hi: usize,
    zeta: *mut f64,
    residual: *mut f64,
) -> SfStatus {
    guard(|| {
        if s_values.is_null() || wavenumbers.is_null() || zeta.is_null() || residual.is_null() {
            set_error("null argument");
            return SfStatus::SfNullArgument;
        }
        let values = unsafe { std::slice::from_raw_parts(s_values, len) }.to_vec();
        let ks = unsafe { std::slice::from_raw_parts(wavenumbers, len) }.to_vec();
        let table = StructureTable {
            p: f64::NAN,
            component: Component::U,
            wavenumbers: ks,
            values,
            t_window: (0.0, 0.0),
            samples: 0,
        };
        match fit_zeta(&table, n_lo, n_hi) {
            Ok((z, r)) => {
                unsafe {
                    *zeta = z;
                    *residual = r;
                }
                SfStatus::SfOk
            }
            Err(e) => fail(e),
        }
    })
}

/// k_n = k0 2^n for n >= 1.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sf_wavenumber(shell: u32, k0: f64, out: *mut f64) -> SfStatus {
    if out.is_null() {
        set_error("null argument");
        return SfStatus::SfNullArgument;
    }
    match shellflow::shell_core::wavenumber(shell as usize, k0) {
        Ok(k) => {
            unsafe { *out = k };
            SfStatus::SfOk
        }
        Err(e) => fail(e),
    }
}

/// Run the invariant battery of the validate subcommand.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sf_validate(model: *const SfModel) -> SfStatus {
    guard(|| {
        if model.is_null() {
            set_error("null argument");
            return SfStatus::SfNullArgument;
        }
        let model = unsafe { &*model };
        match shellflow::cli::cmd_validate(&model.config) {
            Ok(()) => SfStatus::SfOk,
            Err(e) => fail(e),
        }
    })
}
