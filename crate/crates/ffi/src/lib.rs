//! C ABI over the `mergesim` library.
//!
//! Every function returns an [`MsStatus`]; results go through out-pointers.
//! Handles are opaque and owned by the caller once returned, to be released
//! with the matching `*_free` function. The message of the most recent
//! failure on the calling thread is available from [`ms_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::fs::File;
use std::io::BufWriter;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mergesim::intent::{intent_grid, IntentBelief, GRID_SIZE};
use mergesim::sim::{self, ScenarioConfig, SimOutcome, Verdict};
use mergesim::world::{self, DriverAction, VehicleId, VehicleState};

/// Result code of every exported function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidConfig = 3,
    Simulation = 4,
    OutOfRange = 5,
    Io = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsVerdict {
    MergedSuccess = 0,
    Collision = 1,
    RampEndFailure = 2,
    Timeout = 3,
}

impl From<Verdict> for MsVerdict {
    fn from(v: Verdict) -> Self {
        match v {
            Verdict::MergedSuccess => MsVerdict::MergedSuccess,
            Verdict::Collision => MsVerdict::Collision,
            Verdict::RampEndFailure => MsVerdict::RampEndFailure,
            Verdict::Timeout => MsVerdict::Timeout,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsVehicleState {
    pub x: f64,
    pub y: f64,
    pub v_x: f64,
}

impl From<MsVehicleState> for VehicleState {
    fn from(s: MsVehicleState) -> Self {
        VehicleState::new(s.x, s.y, s.v_x)
    }
}

impl From<VehicleState> for MsVehicleState {
    fn from(s: VehicleState) -> Self {
        MsVehicleState {
            x: s.x,
            y: s.y,
            v_x: s.v_x,
        }
    }
}

/// One trace row. `action` is the action index in tie order
/// (maintain, accelerate, decelerate, steer left, steer right) or -1.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsTraceRow {
    pub step: usize,
    pub time: f64,
    pub vehicle_id: u32,
    pub state: MsVehicleState,
    pub action: i32,
}

/// Validated scenario.
pub struct MsScenario(ScenarioConfig);

/// Result of one simulation run.
pub struct MsOutcome(SimOutcome);

/// Intent belief over the 22-cell grid.
pub struct MsBelief(IntentBelief);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(message: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = message.into());
}

fn guard(f: impl FnOnce() -> Result<(), (MsStatus, String)>) -> MsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MsStatus::Ok,
        Ok(Err((status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            MsStatus::Panic
        }
    }
}

fn null() -> (MsStatus, String) {
    (MsStatus::NullPointer, "null pointer argument".into())
}

unsafe fn read_str<'a>(p: *const c_char) -> Result<&'a str, (MsStatus, String)> {
    if p.is_null() {
        return Err(null());
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| (MsStatus::InvalidUtf8, e.to_string()))
}

unsafe fn deref<'a, T>(p: *const T) -> Result<&'a T, (MsStatus, String)> {
    p.as_ref().ok_or_else(null)
}

unsafe fn write<T>(out: *mut T, value: T) -> Result<(), (MsStatus, String)> {
    if out.is_null() {
        return Err(null());
    }
    out.write(value);
    Ok(())
}

/// Copies the last error message of this thread into `buf` as a
/// NUL-terminated string, truncating to `len - 1` bytes. Returns the full
/// message length in bytes, excluding the terminator.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ms_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Parses and validates a scenario from JSON.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_scenario_from_json(json: *const c_char, out: *mut *mut MsScenario) -> MsStatus {
    guard(|| {
        let text = read_str(json)?;
        let cfg = ScenarioConfig::from_json(text).map_err(|e| (MsStatus::InvalidConfig, e.to_string()))?;
        write(out, Box::into_raw(Box::new(MsScenario(cfg))))
    })
}

/// Replaces the scenario seed.
///
/// # Safety
/// `scenario` must come from [`ms_scenario_from_json`].
#[no_mangle]
pub unsafe extern "C" fn ms_scenario_set_seed(scenario: *mut MsScenario, seed: u64) -> MsStatus {
    guard(|| {
        let s = scenario.as_mut().ok_or_else(null)?;
        s.0.seed = seed;
        Ok(())
    })
}

/// # Safety
/// `scenario` must be null or come from [`ms_scenario_from_json`], and is
/// invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn ms_scenario_free(scenario: *mut MsScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Advances one state by one disturbance-free step under the scenario's road
/// and kinematics. `action` is an index in tie order.
///
/// # Safety
/// `scenario` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_step(
    scenario: *const MsScenario,
    state: MsVehicleState,
    action: i32,
    out: *mut MsVehicleState,
) -> MsStatus {
    guard(|| {
        let s = deref(scenario)?;
        let index = usize::try_from(action)
            .ok()
            .filter(|i| *i < DriverAction::COUNT)
            .ok_or_else(|| (MsStatus::OutOfRange, format!("action index {action} out of range")))?;
        let p = &s.0.params;
        let next = world::step(
            &state.into(),
            DriverAction::from_index(index),
            &p.road,
            &p.kinematics,
            [0.0; 3],
        );
        write(out, next.into())
    })
}

/// Runs the closed-loop simulation.
///
/// # Safety
/// `scenario` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_simulate(scenario: *const MsScenario, out: *mut *mut MsOutcome) -> MsStatus {
    guard(|| {
        let s = deref(scenario)?;
        let outcome = sim::run(&s.0).map_err(|e| (MsStatus::Simulation, e.to_string()))?;
        write(out, Box::into_raw(Box::new(MsOutcome(outcome))))
    })
}

/// # Safety
/// `outcome` must be null or come from [`ms_simulate`], and is invalid
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn ms_outcome_free(outcome: *mut MsOutcome) {
    if !outcome.is_null() {
        drop(Box::from_raw(outcome));
    }
}

/// # Safety
/// `outcome` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_outcome_verdict(outcome: *const MsOutcome, out: *mut MsVerdict) -> MsStatus {
    guard(|| write(out, deref(outcome)?.0.verdict.into()))
}

/// Merge completion time in seconds, NaN when the ego never merged.
///
/// # Safety
/// `outcome` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_outcome_merge_time(outcome: *const MsOutcome, out: *mut f64) -> MsStatus {
    guard(|| write(out, deref(outcome)?.0.merge_time.unwrap_or(f64::NAN)))
}

/// # Safety
/// `outcome` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_outcome_steps(outcome: *const MsOutcome, out: *mut usize) -> MsStatus {
    guard(|| write(out, deref(outcome)?.0.steps))
}

/// # Safety
/// `outcome` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_outcome_trace_len(outcome: *const MsOutcome, out: *mut usize) -> MsStatus {
    guard(|| write(out, deref(outcome)?.0.trace.len()))
}

/// # Safety
/// `outcome` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_outcome_trace_row(
    outcome: *const MsOutcome,
    index: usize,
    out: *mut MsTraceRow,
) -> MsStatus {
    guard(|| {
        let o = deref(outcome)?;
        let r = o
            .0
            .trace
            .get(index)
            .ok_or_else(|| (MsStatus::OutOfRange, format!("trace row {index} out of range")))?;
        write(
            out,
            MsTraceRow {
                step: r.step,
                time: r.time,
                vehicle_id: r.vehicle_id.0,
                state: r.state.into(),
                action: r.action.map_or(-1, |a| a.index() as i32),
            },
        )
    })
}

/// Writes the trace CSV to `path`.
///
/// # Safety
/// `outcome` must be valid; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ms_outcome_write_trace_csv(outcome: *const MsOutcome, path: *const c_char) -> MsStatus {
    guard(|| {
        let o = deref(outcome)?;
        let path = read_str(path)?;
        let file = File::create(path).map_err(|e| (MsStatus::Io, format!("{path}: {e}")))?;
        o.0.write_trace_csv(BufWriter::new(file))
            .map_err(|e| (MsStatus::Io, e.to_string()))
    })
}

/// Final ego belief about `vehicle_id`.
///
/// # Safety
/// `outcome` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_outcome_belief(
    outcome: *const MsOutcome,
    vehicle_id: u32,
    out: *mut *mut MsBelief,
) -> MsStatus {
    guard(|| {
        let o = deref(outcome)?;
        let b = o
            .0
            .beliefs
            .get(&VehicleId(vehicle_id))
            .ok_or_else(|| (MsStatus::OutOfRange, format!("no belief about vehicle {vehicle_id}")))?;
        write(out, Box::into_raw(Box::new(MsBelief(b.clone()))))
    })
}

/// Uniform belief over the grid.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_belief_uniform(out: *mut *mut MsBelief) -> MsStatus {
    guard(|| write(out, Box::into_raw(Box::new(MsBelief(IntentBelief::default())))))
}

/// # Safety
/// `belief` must be null or come from this library, and is invalid
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn ms_belief_free(belief: *mut MsBelief) {
    if !belief.is_null() {
        drop(Box::from_raw(belief));
    }
}

/// Number of intent cells.
#[no_mangle]
pub extern "C" fn ms_grid_size() -> usize {
    GRID_SIZE
}

/// Copies the cell probabilities into `buf`, which must hold at least
/// [`ms_grid_size`] values.
///
/// # Safety
/// `belief` must be valid; `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ms_belief_probabilities(belief: *const MsBelief, buf: *mut f64, len: usize) -> MsStatus {
    guard(|| {
        let b = deref(belief)?;
        if buf.is_null() {
            return Err(null());
        }
        let p = b.0.probabilities();
        if len < p.len() {
            return Err((MsStatus::OutOfRange, format!("buffer holds {len} of {} values", p.len())));
        }
        ptr::copy_nonoverlapping(p.as_ptr(), buf, p.len());
        Ok(())
    })
}

/// # Safety
/// `belief` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_belief_entropy(belief: *const MsBelief, out: *mut f64) -> MsStatus {
    guard(|| write(out, deref(belief)?.0.entropy()))
}

/// Index of the most probable cell.
///
/// # Safety
/// `belief` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_belief_map_index(belief: *const MsBelief, out: *mut usize) -> MsStatus {
    guard(|| write(out, deref(belief)?.0.map_index()))
}

/// Label of cell `index` such as `egoistic_001`, copied like
/// [`ms_last_error_message`]. `required` receives the full label length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes; `required` must be
/// null or writable.
#[no_mangle]
pub unsafe extern "C" fn ms_cell_label(index: usize, buf: *mut c_char, len: usize, required: *mut usize) -> MsStatus {
    guard(|| {
        let cell = intent_grid()
            .get(index)
            .copied()
            .ok_or_else(|| (MsStatus::OutOfRange, format!("cell {index} out of range")))?;
        let label = cell.label();
        if !required.is_null() {
            *required = label.len();
        }
        if !buf.is_null() && len > 0 {
            let n = label.len().min(len - 1);
            ptr::copy_nonoverlapping(label.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        Ok(())
    })
}
