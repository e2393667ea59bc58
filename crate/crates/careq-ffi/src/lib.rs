//! C ABI over the hospital-choice equilibrium library.
//!
//! # Conventions
//!
//! * Scenarios and equilibria cross the boundary as opaque handles; free
//!   them with their `*_free` functions exactly once.
//! * Every function returns a [`CareqStatus`]; outputs go through pointer
//!   arguments. `CAREQ_STATUS_OK` (0) means success.
//! * On any non-OK status a thread-local message is set; read it with
//!   [`careq_last_error`]. The pointer stays valid until the next failing
//!   call on the same thread.
//! * Buffers are caller-allocated: pass the element capacity, get
//!   `CAREQ_STATUS_BUFFER_TOO_SMALL` when it does not suffice. Query sizes
//!   with [`careq_scenario_num_levels`] / [`careq_scenario_num_classes`];
//!   choice rows have `num_levels + 1` entries (opt-out first).
//! * Handles are immutable after creation, so sharing them across threads
//!   for reads is safe; creation and destruction are not synchronized.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;

use careq::equilibrium::{solve, SolverSettings};
use careq::model::{load_scenario, validate_scenario, Equilibrium, Scenario};

/// Result of every FFI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CareqStatus {
    /// Success.
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// The input could not be read or parsed as JSON.
    Parse = 3,
    /// The scenario failed validation.
    Invalid = 4,
    /// The solver failed to converge.
    Solver = 5,
    /// A caller-supplied buffer was too small.
    BufferTooSmall = 6,
}

/// Opaque scenario handle.
pub struct CareqScenario(Scenario);

/// Opaque equilibrium handle.
pub struct CareqEquilibrium {
    equilibrium: Equilibrium,
    n_levels: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn fail(status: CareqStatus, message: impl AsRef<str>) -> CareqStatus {
    let sanitized = message.as_ref().replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).expect("NUL bytes removed above");
    });
    status
}

/// Message of the most recent failure on this thread, or an empty string.
/// The pointer is invalidated by the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn careq_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Version of the underlying library as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn careq_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

unsafe fn read_utf8<'a>(pointer: *const c_char, what: &str) -> Result<&'a str, CareqStatus> {
    if pointer.is_null() {
        return Err(fail(CareqStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(pointer).to_str().map_err(|_| {
        fail(
            CareqStatus::InvalidUtf8,
            format!("{what} is not valid UTF-8"),
        )
    })
}

fn emit_scenario(s: Scenario, out: *mut *mut CareqScenario) -> CareqStatus {
    let violations = validate_scenario(&s);
    if !violations.is_empty() {
        let joined = violations
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join("; ");
        return fail(CareqStatus::Invalid, joined);
    }
    unsafe {
        *out = Box::into_raw(Box::new(CareqScenario(s)));
    }
    CareqStatus::Ok
}

/// Loads and validates a scenario from a JSON file.
///
/// # Safety
/// `path` must point to a NUL-terminated string and `out` to writable
/// storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn careq_scenario_load(
    path: *const c_char,
    out: *mut *mut CareqScenario,
) -> CareqStatus {
    if out.is_null() {
        return fail(CareqStatus::NullArgument, "out is null");
    }
    let path = match read_utf8(path, "path") {
        Ok(p) => p,
        Err(status) => return status,
    };
    match load_scenario(Path::new(path)) {
        Ok(s) => emit_scenario(s, out),
        Err(careq::model::ModelError::Invalid(v)) => fail(
            CareqStatus::Invalid,
            v.iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join("; "),
        ),
        Err(e) => fail(CareqStatus::Parse, e.to_string()),
    }
}

/// Parses and validates a scenario from a JSON string.
///
/// # Safety
/// `json` must point to a NUL-terminated string and `out` to writable
/// storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn careq_scenario_from_json(
    json: *const c_char,
    out: *mut *mut CareqScenario,
) -> CareqStatus {
    if out.is_null() {
        return fail(CareqStatus::NullArgument, "out is null");
    }
    let json = match read_utf8(json, "json") {
        Ok(j) => j,
        Err(status) => return status,
    };
    match serde_json::from_str::<Scenario>(json) {
        Ok(s) => emit_scenario(s, out),
        Err(e) => fail(CareqStatus::Parse, e.to_string()),
    }
}

/// Frees a scenario handle; a null handle is a no-op.
///
/// # Safety
/// `scenario` must be a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn careq_scenario_free(scenario: *mut CareqScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Number of facility levels of a scenario.
///
/// # Safety
/// Both pointers must be valid; `scenario` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn careq_scenario_num_levels(
    scenario: *const CareqScenario,
    out: *mut usize,
) -> CareqStatus {
    if scenario.is_null() || out.is_null() {
        return fail(CareqStatus::NullArgument, "scenario or out is null");
    }
    *out = (*scenario).0.levels.len();
    CareqStatus::Ok
}

/// Number of patient classes of a scenario.
///
/// # Safety
/// Both pointers must be valid; `scenario` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn careq_scenario_num_classes(
    scenario: *const CareqScenario,
    out: *mut usize,
) -> CareqStatus {
    if scenario.is_null() || out.is_null() {
        return fail(CareqStatus::NullArgument, "scenario or out is null");
    }
    *out = (*scenario).0.classes.len();
    CareqStatus::Ok
}

/// Computes the unique equilibrium of a scenario.
///
/// `grad_tol` and `max_iters` of zero (or below) select the defaults
/// (1e-10 normalized, 200 iterations).
///
/// # Safety
/// `scenario` must be a live handle and `out` writable storage for one
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn careq_solve(
    scenario: *const CareqScenario,
    grad_tol: f64,
    max_iters: usize,
    out: *mut *mut CareqEquilibrium,
) -> CareqStatus {
    if scenario.is_null() || out.is_null() {
        return fail(CareqStatus::NullArgument, "scenario or out is null");
    }
    let defaults = SolverSettings::default();
    let settings = SolverSettings {
        grad_tol: if grad_tol > 0.0 {
            grad_tol
        } else {
            defaults.grad_tol
        },
        max_iters: if max_iters > 0 {
            max_iters
        } else {
            defaults.max_iters
        },
        ..defaults
    };
    let s = &(*scenario).0;
    match solve(s, &settings) {
        Ok(equilibrium) => {
            *out = Box::into_raw(Box::new(CareqEquilibrium {
                equilibrium,
                n_levels: s.levels.len(),
            }));
            CareqStatus::Ok
        }
        Err(e @ careq::equilibrium::SolveError::Invalid(_))
        | Err(e @ careq::equilibrium::SolveError::NonSaturation { .. }) => {
            fail(CareqStatus::Invalid, e.to_string())
        }
        Err(e) => fail(CareqStatus::Solver, e.to_string()),
    }
}

/// Frees an equilibrium handle; a null handle is a no-op.
///
/// # Safety
/// `equilibrium` must be a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn careq_equilibrium_free(equilibrium: *mut CareqEquilibrium) {
    if !equilibrium.is_null() {
        drop(Box::from_raw(equilibrium));
    }
}

unsafe fn copy_slice(values: &[f64], buffer: *mut f64, capacity: usize, what: &str) -> CareqStatus {
    if buffer.is_null() {
        return fail(CareqStatus::NullArgument, format!("{what} buffer is null"));
    }
    if capacity < values.len() {
        return fail(
            CareqStatus::BufferTooSmall,
            format!(
                "{what} needs {} elements, buffer holds {capacity}",
                values.len()
            ),
        );
    }
    ptr::copy_nonoverlapping(values.as_ptr(), buffer, values.len());
    CareqStatus::Ok
}

/// Copies the equilibrium waits (hours), one per level.
///
/// # Safety
/// `equilibrium` must be a live handle; `buffer` must hold `capacity`
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn careq_equilibrium_waits(
    equilibrium: *const CareqEquilibrium,
    buffer: *mut f64,
    capacity: usize,
) -> CareqStatus {
    if equilibrium.is_null() {
        return fail(CareqStatus::NullArgument, "equilibrium is null");
    }
    copy_slice(&(*equilibrium).equilibrium.waits, buffer, capacity, "waits")
}

/// Copies the equilibrium flows (patients/year), one per level.
///
/// # Safety
/// `equilibrium` must be a live handle; `buffer` must hold `capacity`
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn careq_equilibrium_flows(
    equilibrium: *const CareqEquilibrium,
    buffer: *mut f64,
    capacity: usize,
) -> CareqStatus {
    if equilibrium.is_null() {
        return fail(CareqStatus::NullArgument, "equilibrium is null");
    }
    copy_slice(&(*equilibrium).equilibrium.flows, buffer, capacity, "flows")
}

/// Copies one class's choice probabilities over `{opt-out} + levels`
/// (`num_levels + 1` entries; the opt-out entry is zero when the scenario
/// disables opting out).
///
/// # Safety
/// `equilibrium` must be a live handle; `buffer` must hold `capacity`
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn careq_equilibrium_choice(
    equilibrium: *const CareqEquilibrium,
    class_index: usize,
    buffer: *mut f64,
    capacity: usize,
) -> CareqStatus {
    if equilibrium.is_null() {
        return fail(CareqStatus::NullArgument, "equilibrium is null");
    }
    let handle = &*equilibrium;
    match handle.equilibrium.choice.get(class_index) {
        Some(row) => copy_slice(row, buffer, capacity, "choice row"),
        None => fail(
            CareqStatus::Invalid,
            format!(
                "class index {class_index} out of range ({} classes)",
                handle.equilibrium.choice.len()
            ),
        ),
    }
}

/// Number of entries in each of this equilibrium's wait/flow vectors.
///
/// # Safety
/// Both pointers must be valid; `equilibrium` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn careq_equilibrium_num_levels(
    equilibrium: *const CareqEquilibrium,
    out: *mut usize,
) -> CareqStatus {
    if equilibrium.is_null() || out.is_null() {
        return fail(CareqStatus::NullArgument, "equilibrium or out is null");
    }
    *out = (*equilibrium).n_levels;
    CareqStatus::Ok
}

/// Objective value at the equilibrium.
///
/// # Safety
/// Both pointers must be valid; `equilibrium` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn careq_equilibrium_objective(
    equilibrium: *const CareqEquilibrium,
    out: *mut f64,
) -> CareqStatus {
    if equilibrium.is_null() || out.is_null() {
        return fail(CareqStatus::NullArgument, "equilibrium or out is null");
    }
    *out = (*equilibrium).equilibrium.objective;
    CareqStatus::Ok
}

/// Normalized gradient sup-norm certifying convergence.
///
/// # Safety
/// Both pointers must be valid; `equilibrium` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn careq_equilibrium_grad_norm(
    equilibrium: *const CareqEquilibrium,
    out: *mut f64,
) -> CareqStatus {
    if equilibrium.is_null() || out.is_null() {
        return fail(CareqStatus::NullArgument, "equilibrium or out is null");
    }
    *out = (*equilibrium).equilibrium.grad_norm;
    CareqStatus::Ok
}

/// Whether every equilibrium wait is within the 10-hour feasibility cap.
///
/// # Safety
/// Both pointers must be valid; `equilibrium` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn careq_equilibrium_feasible(
    equilibrium: *const CareqEquilibrium,
    out: *mut bool,
) -> CareqStatus {
    if equilibrium.is_null() || out.is_null() {
        return fail(CareqStatus::NullArgument, "equilibrium or out is null");
    }
    *out = (*equilibrium).equilibrium.feasible;
    CareqStatus::Ok
}
