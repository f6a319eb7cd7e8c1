use std::ffi::{c_char, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use mergesim_ffi::*;

const EMPTY_ROAD: &str = include_str!("../../core/scenarios/empty_road.json");
const FIVE_VEHICLE: &str = include_str!("../../core/scenarios/five_vehicle.json");

fn scenario(json: &str) -> *mut MsScenario {
    let text = CString::new(json).unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { ms_scenario_from_json(text.as_ptr(), &mut out) }, MsStatus::Ok);
    assert!(!out.is_null());
    out
}

fn last_error() -> String {
    let mut buf = vec![0u8; 256];
    let n = unsafe { ms_last_error_message(buf.as_mut_ptr().cast::<c_char>(), buf.len()) };
    buf.truncate(n.min(255));
    String::from_utf8(buf).unwrap()
}

fn simulate(s: *const MsScenario) -> *mut MsOutcome {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { ms_simulate(s, &mut out) }, MsStatus::Ok);
    out
}

#[test]
fn empty_road_merges_through_the_abi() {
    let s = scenario(EMPTY_ROAD);
    let o = simulate(s);
    let mut verdict = MsVerdict::Timeout;
    let mut merge_time = 0.0;
    let mut steps = 0usize;
    unsafe {
        assert_eq!(ms_outcome_verdict(o, &mut verdict), MsStatus::Ok);
        assert_eq!(ms_outcome_merge_time(o, &mut merge_time), MsStatus::Ok);
        assert_eq!(ms_outcome_steps(o, &mut steps), MsStatus::Ok);
    }
    assert_eq!(verdict, MsVerdict::MergedSuccess);
    assert_eq!(merge_time, 2.0);
    assert_eq!(steps, 2);

    let mut len = 0usize;
    unsafe { assert_eq!(ms_outcome_trace_len(o, &mut len), MsStatus::Ok) };
    assert_eq!(len, 3);
    let mut row = MsTraceRow {
        step: 0,
        time: 0.0,
        vehicle_id: 0,
        state: MsVehicleState { x: 0.0, y: 0.0, v_x: 0.0 },
        action: 0,
    };
    unsafe { assert_eq!(ms_outcome_trace_row(o, 0, &mut row), MsStatus::Ok) };
    assert_eq!(row.state, MsVehicleState { x: 0.0, y: 1.75, v_x: 25.0 });
    assert_eq!(row.action, 3);
    unsafe { assert_eq!(ms_outcome_trace_row(o, 2, &mut row), MsStatus::Ok) };
    assert_eq!(row.action, -1);
    unsafe {
        assert_eq!(ms_outcome_trace_row(o, 3, &mut row), MsStatus::OutOfRange);
        ms_outcome_free(o);
        ms_scenario_free(s);
    }
    assert!(last_error().contains("out of range"));
}

#[test]
fn malformed_json_reports_invalid_config() {
    let text = CString::new("{\"vehicles\": 3}").unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { ms_scenario_from_json(text.as_ptr(), &mut out) }, MsStatus::InvalidConfig);
    assert!(out.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn null_arguments_are_rejected() {
    let mut out = ptr::null_mut();
    unsafe {
        assert_eq!(ms_scenario_from_json(ptr::null(), &mut out), MsStatus::NullPointer);
        let mut outcome = ptr::null_mut();
        assert_eq!(ms_simulate(ptr::null(), &mut outcome), MsStatus::NullPointer);
        let mut v = MsVerdict::Timeout;
        assert_eq!(ms_outcome_verdict(ptr::null(), &mut v), MsStatus::NullPointer);
        ms_scenario_free(ptr::null_mut());
        ms_outcome_free(ptr::null_mut());
        ms_belief_free(ptr::null_mut());
    }
    assert_eq!(last_error(), "null pointer argument");
}

#[test]
fn invalid_utf8_is_rejected() {
    let bytes = [0xffu8, 0xfe, 0];
    let mut out = ptr::null_mut();
    let status = unsafe { ms_scenario_from_json(bytes.as_ptr().cast::<c_char>(), &mut out) };
    assert_eq!(status, MsStatus::InvalidUtf8);
}

#[test]
fn error_message_truncates_and_reports_length() {
    let text = CString::new("not json").unwrap();
    let mut out = ptr::null_mut();
    unsafe { ms_scenario_from_json(text.as_ptr(), &mut out) };
    let full = unsafe { ms_last_error_message(ptr::null_mut(), 0) };
    let mut buf = [1 as c_char; 4];
    let n = unsafe { ms_last_error_message(buf.as_mut_ptr(), buf.len()) };
    assert_eq!(n, full);
    assert!(full > 3);
    assert_eq!(buf[3], 0);
}

#[test]
fn step_matches_kinematics() {
    let s = scenario(EMPTY_ROAD);
    let mut next = MsVehicleState { x: 0.0, y: 0.0, v_x: 0.0 };
    let start = MsVehicleState { x: 10.0, y: 1.75, v_x: 20.0 };
    unsafe {
        assert_eq!(ms_step(s, start, 1, &mut next), MsStatus::Ok);
        assert_eq!(next, MsVehicleState { x: 30.0, y: 1.75, v_x: 26.0 });
        assert_eq!(ms_step(s, start, 3, &mut next), MsStatus::Ok);
        assert_eq!(next, MsVehicleState { x: 30.0, y: 3.5, v_x: 20.0 });
        assert_eq!(ms_step(s, start, 5, &mut next), MsStatus::OutOfRange);
        assert_eq!(ms_step(s, start, -1, &mut next), MsStatus::OutOfRange);
        ms_scenario_free(s);
    }
}

#[test]
fn beliefs_are_normalized_distributions() {
    let s = scenario(FIVE_VEHICLE);
    let o = simulate(s);
    let mut b = ptr::null_mut();
    let n = ms_grid_size();
    assert_eq!(n, 22);
    let mut p = vec![0.0; n];
    unsafe {
        assert_eq!(ms_outcome_belief(o, 1, &mut b), MsStatus::Ok);
        assert_eq!(ms_belief_probabilities(b, p.as_mut_ptr(), n), MsStatus::Ok);
        assert_eq!(ms_belief_probabilities(b, p.as_mut_ptr(), n - 1), MsStatus::OutOfRange);
    }
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    let mut map = 0usize;
    let mut entropy = 0.0;
    unsafe {
        assert_eq!(ms_belief_map_index(b, &mut map), MsStatus::Ok);
        assert_eq!(ms_belief_entropy(b, &mut entropy), MsStatus::Ok);
    }
    let best = p.iter().cloned().fold(f64::MIN, f64::max);
    assert_eq!(p[map], best);
    assert!(entropy < (n as f64).ln());
    unsafe {
        let mut none = ptr::null_mut();
        assert_eq!(ms_outcome_belief(o, 99, &mut none), MsStatus::OutOfRange);
        ms_belief_free(b);
        ms_outcome_free(o);
        ms_scenario_free(s);
    }

    let mut u = ptr::null_mut();
    unsafe {
        assert_eq!(ms_belief_uniform(&mut u), MsStatus::Ok);
        assert_eq!(ms_belief_probabilities(u, p.as_mut_ptr(), n), MsStatus::Ok);
        assert_eq!(ms_belief_entropy(u, &mut entropy), MsStatus::Ok);
        ms_belief_free(u);
    }
    assert!(p.iter().all(|v| (v - 1.0 / n as f64).abs() < 1e-15));
    assert!((entropy - (n as f64).ln()).abs() < 1e-12);
}

#[test]
fn cell_labels() {
    let mut buf = [0 as c_char; 32];
    let mut required = 0usize;
    let label = |i: usize, buf: &mut [c_char; 32], req: &mut usize| {
        assert_eq!(unsafe { ms_cell_label(i, buf.as_mut_ptr(), buf.len(), req) }, MsStatus::Ok);
        let bytes: Vec<u8> = buf[..*req].iter().map(|c| *c as u8).collect();
        String::from_utf8(bytes).unwrap()
    };
    assert_eq!(label(0, &mut buf, &mut required), "prosocial_001");
    assert_eq!(label(21, &mut buf, &mut required), "altruistic");
    assert_eq!(
        unsafe { ms_cell_label(22, buf.as_mut_ptr(), buf.len(), &mut required) },
        MsStatus::OutOfRange
    );
}

#[test]
fn seeded_runs_write_identical_traces() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario(FIVE_VEHICLE);
    unsafe { assert_eq!(ms_scenario_set_seed(s, 11), MsStatus::Ok) };
    let mut files = Vec::new();
    for k in 0..2 {
        let path = dir.path().join(format!("trace{k}.csv"));
        let c = CString::new(path.to_str().unwrap()).unwrap();
        let o = simulate(s);
        unsafe {
            assert_eq!(ms_outcome_write_trace_csv(o, c.as_ptr()), MsStatus::Ok);
            ms_outcome_free(o);
        }
        files.push(std::fs::read(path).unwrap());
    }
    assert_eq!(files[0], files[1]);
    let bad = CString::new(dir.path().join("missing/trace.csv").to_str().unwrap()).unwrap();
    let o = simulate(s);
    unsafe {
        assert_eq!(ms_outcome_write_trace_csv(o, bad.as_ptr()), MsStatus::Io);
        ms_outcome_free(o);
        ms_scenario_free(s);
    }
}

#[test]
fn header_is_valid_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/mergesim.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["ms_scenario_from_json", "ms_simulate", "ms_last_error_message", "MS_STATUS_PANIC"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let status = Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .status()
        .expect("a C compiler on PATH");
    assert!(status.success());
}
