//! C ABI for edgewatt.
//!
//! Every function returns an [`EwStatus`]; results go through out-pointers.
//! Models and traces are opaque handles owned by the caller and released
//! with the matching `*_free` function. After a non-`Ok` status,
//! [`ew_last_error_message`] describes the failure on the calling thread.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use edgewatt::analysis::{
    build_report, energy_per_bit_nj, fit_cpu_power_curve, fit_offset_model, AnalysisError, AnalysisOptions,
    CpuPowerCurve, OffsetModel, OffsetPoint,
};
use edgewatt::attribution::{attribute, AttributionError, ProcessCpuDelta};
use edgewatt::collectors::{throughput_from_counters, CollectorError, CounterWidth, InterfaceCounters};
use edgewatt::meters::{power_from_counters, EnergyCounterReading, MeterError};
use edgewatt::telemetry::{read_trace, MeterId, TraceError, TraceRun};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EwStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DegenerateFit = 3,
    InvalidInterval = 4,
    ImplausibleReading = 5,
    Io = 6,
    Parse = 7,
    SchemaVersion = 8,
    Internal = 9,
}

/// Fitted hardware/software offset model.
pub struct EwOffsetModel(OffsetModel);

/// Fitted 4th-degree CPU load to power curve.
pub struct EwCpuCurve(CpuPowerCurve);

/// A trace loaded from disk.
pub struct EwTrace(TraceRun);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn fail(status: EwStatus, message: impl Into<String>) -> EwStatus {
    set_error(message);
    status
}

fn guard(f: impl FnOnce() -> EwStatus) -> EwStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(EwStatus::Internal, "internal panic"),
    }
}

fn meter_status(e: &MeterError) -> EwStatus {
    match e {
        MeterError::InvalidInterval(_) => EwStatus::InvalidInterval,
        MeterError::ImplausibleReading { .. } => EwStatus::ImplausibleReading,
        MeterError::Io(_) => EwStatus::Io,
        _ => EwStatus::InvalidArgument,
    }
}

fn analysis_status(e: &AnalysisError) -> EwStatus {
    match e {
        AnalysisError::DegenerateFit(_) => EwStatus::DegenerateFit,
        _ => EwStatus::InvalidArgument,
    }
}

fn trace_status(e: &TraceError) -> EwStatus {
    match e {
        TraceError::Io(_) => EwStatus::Io,
        TraceError::SchemaVersion { .. } => EwStatus::SchemaVersion,
        TraceError::Encode(_) => EwStatus::Internal,
        _ => EwStatus::Parse,
    }
}

unsafe fn slice<'a, T>(p: *const T, n: usize) -> Option<&'a [T]> {
    if n == 0 {
        Some(&[])
    } else if p.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(p, n))
    }
}

/// Message for the last failure on this thread, or null. Valid until the
/// next edgewatt call on the same thread.
#[no_mangle]
pub extern "C" fn ew_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ew_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Average power in mW between two readings of a wrapping energy counter.
#[no_mangle]
pub unsafe extern "C" fn ew_power_from_counters(
    prev_uj: u64,
    prev_ms: i64,
    curr_uj: u64,
    curr_ms: i64,
    max_uj: u64,
    ceiling_mw: f64,
    out_mw: *mut f64,
) -> EwStatus {
    guard(|| {
        if out_mw.is_null() {
            return fail(EwStatus::NullPointer, "out_mw is null");
        }
        let reading = |t, e| EnergyCounterReading {
            timestamp_ms: t,
            domain: "package".into(),
            energy_uj: e,
            counter_max_uj: max_uj,
        };
        match power_from_counters(
            &MeterId::new("ffi"),
            &reading(prev_ms, prev_uj),
            &reading(curr_ms, curr_uj),
            ceiling_mw,
        ) {
            Ok(s) => {
                *out_mw = s.power_mw;
                EwStatus::Ok
            }
            Err(e) => fail(meter_status(&e), e.to_string()),
        }
    })
}

/// Receive rate between two interface counter snapshots. `width_bits` is
/// 32 or 64.
#[no_mangle]
pub unsafe extern "C" fn ew_throughput_from_counters(
    prev_bytes: u64,
    prev_packets: u64,
    prev_ms: i64,
    curr_bytes: u64,
    curr_packets: u64,
    curr_ms: i64,
    width_bits: u32,
    out_bps: *mut f64,
    out_pps: *mut f64,
) -> EwStatus {
    guard(|| {
        if out_bps.is_null() || out_pps.is_null() {
            return fail(EwStatus::NullPointer, "output pointer is null");
        }
        let width = match width_bits {
            32 => CounterWidth::Bits32,
            64 => CounterWidth::Bits64,
            w => return fail(EwStatus::InvalidArgument, format!("counter width {w} is not 32 or 64")),
        };
        let snap = |t, b, p| InterfaceCounters {
            timestamp_ms: t,
            interface: "ffi".into(),
            rx_bytes: b,
            tx_bytes: 0,
            rx_packets: p,
            tx_packets: 0,
        };
        match throughput_from_counters(
            &snap(prev_ms, prev_bytes, prev_packets),
            &snap(curr_ms, curr_bytes, curr_packets),
            width,
        ) {
            Ok([rx, _]) => {
                *out_bps = rx.bits_per_second;
                *out_pps = rx.packets_per_second;
                EwStatus::Ok
            }
            Err(CollectorError::InvalidInterval(dt)) => {
                fail(EwStatus::InvalidInterval, format!("non-positive interval of {dt} ms"))
            }
            Err(e @ CollectorError::Implausible { .. }) => fail(EwStatus::ImplausibleReading, e.to_string()),
            Err(e) => fail(EwStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Fits `hw - sw = alpha * T + c` to `n` points.
#[no_mangle]
pub unsafe extern "C" fn ew_offset_fit(
    throughput_mbps: *const f64,
    diff_mw: *const f64,
    n: usize,
    out: *mut *mut EwOffsetModel,
) -> EwStatus {
    guard(|| {
        let (Some(t), Some(d)) = (slice(throughput_mbps, n), slice(diff_mw, n)) else {
            return fail(EwStatus::NullPointer, "input array is null");
        };
        if out.is_null() {
            return fail(EwStatus::NullPointer, "out is null");
        }
        let points: Vec<OffsetPoint> = t
            .iter()
            .zip(d)
            .map(|(&throughput_mbps, &diff_mw)| OffsetPoint {
                throughput_mbps,
                diff_mw,
            })
            .collect();
        match fit_offset_model(&points) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(EwOffsetModel(m)));
                EwStatus::Ok
            }
            Err(e) => fail(analysis_status(&e), e.to_string()),
        }
    })
}

/// Slope in mW per Mbps; NaN for a null handle.
#[no_mangle]
pub unsafe extern "C" fn ew_offset_alpha(model: *const EwOffsetModel) -> f64 {
    model.as_ref().map_or(f64::NAN, |m| m.0.alpha)
}

/// Intercept in mW; NaN for a null handle.
#[no_mangle]
pub unsafe extern "C" fn ew_offset_c(model: *const EwOffsetModel) -> f64 {
    model.as_ref().map_or(f64::NAN, |m| m.0.c)
}

/// Hardware power predicted from software power and throughput; NaN for a
/// null handle.
#[no_mangle]
pub unsafe extern "C" fn ew_offset_predict(model: *const EwOffsetModel, p_sw_mw: f64, throughput_mbps: f64) -> f64 {
    model
        .as_ref()
        .map_or(f64::NAN, |m| m.0.predict(p_sw_mw, throughput_mbps))
}

#[no_mangle]
pub unsafe extern "C" fn ew_offset_free(model: *mut EwOffsetModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Fits a 4th-degree polynomial of power against CPU load in [0, 1].
#[no_mangle]
pub unsafe extern "C" fn ew_cpu_curve_fit(
    load: *const f64,
    power_mw: *const f64,
    n: usize,
    out: *mut *mut EwCpuCurve,
) -> EwStatus {
    guard(|| {
        let (Some(l), Some(p)) = (slice(load, n), slice(power_mw, n)) else {
            return fail(EwStatus::NullPointer, "input array is null");
        };
        if out.is_null() {
            return fail(EwStatus::NullPointer, "out is null");
        }
        let samples: Vec<(f64, f64)> = l.iter().copied().zip(p.iter().copied()).collect();
        match fit_cpu_power_curve(&samples) {
            Ok(c) => {
                *out = Box::into_raw(Box::new(EwCpuCurve(c)));
                EwStatus::Ok
            }
            Err(e) => fail(analysis_status(&e), e.to_string()),
        }
    })
}

/// Power in mW at `load`; NaN for a null handle.
#[no_mangle]
pub unsafe extern "C" fn ew_cpu_curve_eval(curve: *const EwCpuCurve, load: f64) -> f64 {
    curve.as_ref().map_or(f64::NAN, |c| c.0.eval(load))
}

/// Copies the five coefficients, constant term first, into `out`.
#[no_mangle]
pub unsafe extern "C" fn ew_cpu_curve_coefficients(curve: *const EwCpuCurve, out: *mut f64) -> EwStatus {
    let Some(c) = curve.as_ref() else {
        return fail(EwStatus::NullPointer, "curve is null");
    };
    if out.is_null() {
        return fail(EwStatus::NullPointer, "out is null");
    }
    ptr::copy_nonoverlapping(c.0.coefficients.as_ptr(), out, 5);
    EwStatus::Ok
}

#[no_mangle]
pub unsafe extern "C" fn ew_cpu_curve_free(curve: *mut EwCpuCurve) {
    if !curve.is_null() {
        drop(Box::from_raw(curve));
    }
}

/// Splits host power across `n` processes by their CPU time in one window.
/// `out_mw` receives one value per process.
#[no_mangle]
pub unsafe extern "C" fn ew_attribute(
    host_power_mw: f64,
    idle_floor_mw: f64,
    cpu_time_ms: *const f64,
    n: usize,
    out_mw: *mut f64,
    out_residual_mw: *mut f64,
) -> EwStatus {
    guard(|| {
        let Some(cpu) = slice(cpu_time_ms, n) else {
            return fail(EwStatus::NullPointer, "cpu_time_ms is null");
        };
        if (n > 0 && out_mw.is_null()) || out_residual_mw.is_null() {
            return fail(EwStatus::NullPointer, "output pointer is null");
        }
        let deltas: Vec<ProcessCpuDelta> = cpu
            .iter()
            .enumerate()
            .map(|(i, &ms)| ProcessCpuDelta {
                pid: i as u32,
                command: String::new(),
                cpu_time_delta: ms,
                window: (0, 1),
            })
            .collect();
        match attribute(host_power_mw, idle_floor_mw, &deltas) {
            Ok(record) => {
                let out = std::slice::from_raw_parts_mut(out_mw, n);
                out.fill(0.0);
                for e in &record.entries {
                    out[e.pid as usize] = e.power_mw;
                }
                *out_residual_mw = record.residual_static_mw;
                EwStatus::Ok
            }
            Err(e @ AttributionError::Window { .. }) => fail(EwStatus::Internal, e.to_string()),
            Err(e) => fail(EwStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Energy per transmitted bit in nJ.
#[no_mangle]
pub unsafe extern "C" fn ew_energy_per_bit(power_mw: f64, throughput_mbps: f64, out_nj: *mut f64) -> EwStatus {
    if out_nj.is_null() {
        return fail(EwStatus::NullPointer, "out_nj is null");
    }
    match energy_per_bit_nj(power_mw, throughput_mbps) {
        Some(v) => {
            *out_nj = v;
            EwStatus::Ok
        }
        None => fail(EwStatus::InvalidArgument, "throughput must be positive"),
    }
}

/// Loads and validates a JSONL trace.
#[no_mangle]
pub unsafe extern "C" fn ew_trace_open(path: *const c_char, out: *mut *mut EwTrace) -> EwStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return fail(EwStatus::NullPointer, "path or out is null");
        }
        let Ok(path) = CStr::from_ptr(path).to_str() else {
            return fail(EwStatus::InvalidArgument, "path is not UTF-8");
        };
        match read_trace(Path::new(path)) {
            Ok(run) => {
                *out = Box::into_raw(Box::new(EwTrace(run)));
                EwStatus::Ok
            }
            Err(e) => fail(trace_status(&e), e.to_string()),
        }
    })
}

/// Host-scope power samples of `meter_id` in the trace.
#[no_mangle]
pub unsafe extern "C" fn ew_trace_sample_count(
    trace: *const EwTrace,
    meter_id: *const c_char,
    out: *mut usize,
) -> EwStatus {
    let Some(t) = trace.as_ref() else {
        return fail(EwStatus::NullPointer, "trace is null");
    };
    if meter_id.is_null() || out.is_null() {
        return fail(EwStatus::NullPointer, "meter_id or out is null");
    }
    let Ok(id) = CStr::from_ptr(meter_id).to_str() else {
        return fail(EwStatus::InvalidArgument, "meter_id is not UTF-8");
    };
    let id = MeterId::new(id);
    *out = t.0.host_samples(&id).count();
    EwStatus::Ok
}

/// Phase count of the trace's plan.
#[no_mangle]
pub unsafe extern "C" fn ew_trace_phase_count(trace: *const EwTrace, out: *mut usize) -> EwStatus {
    let Some(t) = trace.as_ref() else {
        return fail(EwStatus::NullPointer, "trace is null");
    };
    if out.is_null() {
        return fail(EwStatus::NullPointer, "out is null");
    }
    *out = t.0.phase_marks.len();
    EwStatus::Ok
}

/// Analysis report of the trace as a JSON string. Release it with
/// [`ew_string_free`].
#[no_mangle]
pub unsafe extern "C" fn ew_trace_report_json(trace: *const EwTrace, out: *mut *mut c_char) -> EwStatus {
    guard(|| {
        let Some(t) = trace.as_ref() else {
            return fail(EwStatus::NullPointer, "trace is null");
        };
        if out.is_null() {
            return fail(EwStatus::NullPointer, "out is null");
        }
        let report = match build_report(std::slice::from_ref(&t.0), &AnalysisOptions::default(), &[]) {
            Ok(r) => r,
            Err(e) => return fail(analysis_status(&e), e.to_string()),
        };
        match serde_json::to_string(&report).map(CString::new) {
            Ok(Ok(s)) => {
                *out = s.into_raw();
                EwStatus::Ok
            }
            _ => fail(EwStatus::Internal, "report could not be encoded"),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn ew_trace_free(trace: *mut EwTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

#[no_mangle]
pub unsafe extern "C" fn ew_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
