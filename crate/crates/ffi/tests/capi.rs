use std::ffi::{CStr, CString};
use std::ptr;

use edgewatt::session::{simulate, SimulationOptions};
use edgewatt::telemetry::{write_trace, Deployment, DeploymentKind, ExperimentPlan};
use edgewatt::workload::{SimProfile, SimulatedAgent};
use edgewatt_ffi::*;

fn last_error() -> String {
    let p = ew_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(ew_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn power_across_counter_wrap() {
    let mut mw = 0.0;
    // 1 J over 1 s with the counter wrapping at 10 J.
    let s = unsafe { ew_power_from_counters(9_500_000, 0, 500_000, 1000, 10_000_000, 1e6, &mut mw) };
    assert_eq!(s, EwStatus::Ok);
    assert!((mw - 1000.0).abs() < 1e-9);
}

#[test]
fn power_errors_map_to_codes() {
    let mut mw = 0.0;
    let s = unsafe { ew_power_from_counters(0, 1000, 10, 1000, 1_000_000, 1e6, &mut mw) };
    assert_eq!(s, EwStatus::InvalidInterval);
    assert!(!last_error().is_empty());
    let s = unsafe { ew_power_from_counters(0, 0, 900_000, 1, 1_000_000, 1e3, &mut mw) };
    assert_eq!(s, EwStatus::ImplausibleReading);
    let s = unsafe { ew_power_from_counters(0, 0, 1, 1, 1, 1e3, ptr::null_mut()) };
    assert_eq!(s, EwStatus::NullPointer);
}

#[test]
fn throughput_rates() {
    let (mut bps, mut pps) = (0.0, 0.0);
    let s = unsafe { ew_throughput_from_counters(0, 0, 0, 125_000_000, 10_000, 1000, 64, &mut bps, &mut pps) };
    assert_eq!(s, EwStatus::Ok);
    assert_eq!(bps, 1e9);
    assert_eq!(pps, 10_000.0);
    let s = unsafe { ew_throughput_from_counters(0, 0, 0, 1, 1, 1000, 16, &mut bps, &mut pps) };
    assert_eq!(s, EwStatus::InvalidArgument);
}

#[test]
fn offset_model_round_trip() {
    let t = [100.0, 200.0, 300.0, 400.0];
    let d: Vec<f64> = t.iter().map(|x| 4.63977 * x + 7845.0).collect();
    let mut model = ptr::null_mut();
    let s = unsafe { ew_offset_fit(t.as_ptr(), d.as_ptr(), t.len(), &mut model) };
    assert_eq!(s, EwStatus::Ok);
    unsafe {
        assert!((ew_offset_alpha(model) - 4.63977).abs() < 1e-9);
        assert!((ew_offset_c(model) - 7845.0).abs() < 1e-6);
        let p = ew_offset_predict(model, 20_000.0, 500.0);
        assert!((p - (20_000.0 + 4.63977 * 500.0 + 7845.0)).abs() < 1e-6);
        ew_offset_free(model);
        assert!(ew_offset_alpha(ptr::null()).is_nan());
    }
}

#[test]
fn degenerate_offset_fit() {
    let t = [300.0; 4];
    let d = [1.0, 2.0, 3.0, 4.0];
    let mut model = ptr::null_mut();
    let s = unsafe { ew_offset_fit(t.as_ptr(), d.as_ptr(), 4, &mut model) };
    assert_eq!(s, EwStatus::DegenerateFit);
    assert!(model.is_null());
    let s = unsafe { ew_offset_fit(ptr::null(), d.as_ptr(), 4, &mut model) };
    assert_eq!(s, EwStatus::NullPointer);
}

#[test]
fn cpu_curve_through_c() {
    let coef = [5000.0, 8000.0, -2000.0, 3000.0, 1000.0];
    let load: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let power: Vec<f64> = load
        .iter()
        .map(|x| coef.iter().rev().fold(0.0, |acc, c| acc * x + c))
        .collect();
    let mut curve = ptr::null_mut();
    unsafe {
        assert_eq!(
            ew_cpu_curve_fit(load.as_ptr(), power.as_ptr(), load.len(), &mut curve),
            EwStatus::Ok
        );
        let mut out = [0.0; 5];
        assert_eq!(ew_cpu_curve_coefficients(curve, out.as_mut_ptr()), EwStatus::Ok);
        for (a, b) in out.iter().zip(coef) {
            assert!((a - b).abs() < 1e-3, "{out:?}");
        }
        assert!((ew_cpu_curve_eval(curve, 0.5) - power[5]).abs() < 1e-3);
        ew_cpu_curve_free(curve);
    }
}

#[test]
fn attribution_conserves_power() {
    let cpu = [300.0, 100.0, 0.0];
    let mut out = [0.0; 3];
    let mut residual = 0.0;
    let s = unsafe { ew_attribute(10_000.0, 2000.0, cpu.as_ptr(), 3, out.as_mut_ptr(), &mut residual) };
    assert_eq!(s, EwStatus::Ok);
    assert_eq!(residual, 2000.0);
    assert!((out[0] - 6000.0).abs() < 1e-9);
    assert!((out[1] - 2000.0).abs() < 1e-9);
    assert_eq!(out[2], 0.0);
    let s = unsafe { ew_attribute(-1.0, 2000.0, cpu.as_ptr(), 3, out.as_mut_ptr(), &mut residual) };
    assert_eq!(s, EwStatus::InvalidArgument);
}

#[test]
fn energy_per_bit() {
    let mut nj = 0.0;
    assert_eq!(unsafe { ew_energy_per_bit(10_000.0, 100.0, &mut nj) }, EwStatus::Ok);
    assert!((nj - 100.0).abs() < 1e-9);
    assert_eq!(
        unsafe { ew_energy_per_bit(10_000.0, 0.0, &mut nj) },
        EwStatus::InvalidArgument
    );
}

#[test]
fn trace_handle() {
    let plan = ExperimentPlan::traffic_sweep(
        "ffi",
        Deployment {
            kind: DeploymentKind::BareMetal,
            software: "sim".into(),
        },
        100.0,
        3,
        5.0,
    );
    let run = simulate(&plan, &SimProfile::bare_metal(), SimulationOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.jsonl");
    write_trace(&run, &path).unwrap();

    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    let meter = CString::new(SimulatedAgent::HARDWARE_METER).unwrap();
    let mut trace = ptr::null_mut();
    unsafe {
        assert_eq!(ew_trace_open(c_path.as_ptr(), &mut trace), EwStatus::Ok);
        let mut n = 0;
        assert_eq!(ew_trace_sample_count(trace, meter.as_ptr(), &mut n), EwStatus::Ok);
        assert_eq!(n, 20);
        assert_eq!(ew_trace_phase_count(trace, &mut n), EwStatus::Ok);
        assert_eq!(n, 4);
        let mut json = ptr::null_mut();
        assert_eq!(ew_trace_report_json(trace, &mut json), EwStatus::Ok);
        let text = CStr::from_ptr(json).to_str().unwrap();
        let value: serde_json::Value = serde_json::from_str(text).unwrap();
        assert!(value.is_object());
        ew_string_free(json);
        ew_trace_free(trace);
    }
}

#[test]
fn trace_open_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = CString::new(dir.path().join("none.jsonl").to_str().unwrap()).unwrap();
    let mut trace = ptr::null_mut();
    assert_eq!(unsafe { ew_trace_open(missing.as_ptr(), &mut trace) }, EwStatus::Io);

    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"schema\":\"edgewatt-trace/9\"}\n").unwrap();
    let bad = CString::new(bad.to_str().unwrap()).unwrap();
    let s = unsafe { ew_trace_open(bad.as_ptr(), &mut trace) };
    assert!(matches!(s, EwStatus::SchemaVersion | EwStatus::Parse), "{s:?}");
    assert!(trace.is_null());
}

#[test]
fn header_declares_every_export() {
    let header = include_str!("../include/edgewatt.h");
    let src = include_str!("../src/lib.rs");
    for line in src.lines() {
        if let Some(rest) = line.split("extern \"C\" fn ").nth(1) {
            let name = rest.split('(').next().unwrap();
            assert!(header.contains(&format!("{name}(")), "{name} missing from header");
        }
    }
}
