//! C ABI over `bearing-formation`.
//!
//! Handles are opaque and owned by the caller once returned; release them with
//! the matching `*_free` function. Every entry point returns a [`BfStatus`] and
//! records a message retrievable with [`bf_last_error`] on failure. Strings
//! returned through out-pointers must be released with [`bf_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::panic::{self, AssertUnwindSafe};
use std::ptr;

use bearing_formation::analysis;
use bearing_formation::scenario::ScenarioDocument;
use bearing_formation::simulator::{self, SimResult};
use bearing_formation::{Error, ReasonCode, Scenario};

/// Outcome of an FFI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BfStatus {
    Ok = 0,
    /// Malformed scenario, bad override or failed validation.
    InputError = 2,
    /// The leaders and bearings do not determine the followers.
    NonUniqueTarget = 3,
    /// The run stopped early; the partial result is still returned.
    Aborted = 4,
    NullArgument = 5,
    InvalidUtf8 = 6,
    IoError = 7,
    /// The caller's buffer was too short; the required length was written.
    BufferTooSmall = 8,
    OutOfRange = 9,
    Panic = 10,
}

/// Per-step scalar series stored in a result.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BfSeries {
    Time = 0,
    DeltaPNorm = 1,
    DeltaVNorm = 2,
    BearingError = 3,
    MinDistance = 4,
    MaxControlInf = 5,
}

/// Headline numbers of a run.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct BfSummary {
    pub steps: usize,
    pub final_time: f64,
    pub final_delta_p: f64,
    pub final_delta_v: f64,
    pub final_bearing_error: f64,
    pub min_distance: f64,
    pub max_control_inf: f64,
    /// NaN when the threshold was never reached.
    pub time_to_threshold: f64,
    pub converged: bool,
    pub aborted: bool,
}

/// Parsed scenario document plus any overrides applied so far.
pub struct BfScenario {
    doc: ScenarioDocument,
}

/// Time series of one simulation.
pub struct BfResult {
    inner: SimResult,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl ToString) {
    let text = msg.to_string().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).unwrap_or_default());
}

fn fail(status: BfStatus, msg: impl ToString) -> BfStatus {
    set_error(msg);
    status
}

fn library_status(e: &Error) -> BfStatus {
    match e.reason_code() {
        Some(ReasonCode::NonUniqueTarget) => BfStatus::NonUniqueTarget,
        _ => BfStatus::InputError,
    }
}

fn guard(f: impl FnOnce() -> BfStatus) -> BfStatus {
    match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == BfStatus::Ok {
                set_error("");
            }
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            fail(BfStatus::Panic, format!("internal panic: {msg}"))
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char) -> Result<&'a str, BfStatus> {
    if p.is_null() {
        return Err(fail(BfStatus::NullArgument, "null string argument"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(BfStatus::InvalidUtf8, "string argument is not UTF-8"))
}

fn give_string(text: String, out: *mut *mut c_char) -> BfStatus {
    match CString::new(text) {
        Ok(c) => {
            unsafe { *out = c.into_raw() };
            BfStatus::Ok
        }
        Err(_) => fail(BfStatus::InputError, "output contains a NUL byte"),
    }
}

fn build(doc: &ScenarioDocument) -> Result<Scenario, BfStatus> {
    let file = doc.parse().map_err(|e| fail(BfStatus::InputError, e))?;
    file.to_scenario(&doc.default_name())
        .map_err(|e| fail(library_status(&e), e))
}

/// Parses a scenario from a NUL-terminated JSON document.
///
/// # Safety
/// `json` must be a valid C string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn bf_scenario_from_json(json: *const c_char, out: *mut *mut BfScenario) -> BfStatus {
    guard(|| {
        if out.is_null() {
            return fail(BfStatus::NullArgument, "null out pointer");
        }
        *out = ptr::null_mut();
        let text = match read_str(json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let doc = match ScenarioDocument::from_str(text) {
            Ok(d) => d,
            Err(e) => return fail(BfStatus::InputError, e),
        };
        if let Err(e) = doc.parse() {
            return fail(BfStatus::InputError, e);
        }
        *out = Box::into_raw(Box::new(BfScenario { doc }));
        BfStatus::Ok
    })
}

/// Sets a dotted key, e.g. `controller.k_p`, to a JSON literal.
///
/// # Safety
/// `scenario` must come from [`bf_scenario_from_json`]; `key` and `value`
/// must be valid C strings.
#[no_mangle]
pub unsafe extern "C" fn bf_scenario_set(
    scenario: *mut BfScenario,
    key: *const c_char,
    value: *const c_char,
) -> BfStatus {
    guard(|| {
        let Some(sc) = scenario.as_mut() else {
            return fail(BfStatus::NullArgument, "null scenario");
        };
        let (key, value) = match (read_str(key), read_str(value)) {
            (Ok(k), Ok(v)) => (k, v),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        let mut doc = sc.doc.clone();
        if let Err(e) = doc.set(key, value) {
            return fail(BfStatus::InputError, e);
        }
        if let Err(e) = doc.parse() {
            return fail(BfStatus::InputError, e);
        }
        sc.doc = doc;
        BfStatus::Ok
    })
}

/// Releases a scenario. Null is ignored.
///
/// # Safety
/// `scenario` must come from [`bf_scenario_from_json`] and not be used again.
#[no_mangle]
pub unsafe extern "C" fn bf_scenario_free(scenario: *mut BfScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Writes the analysis report as JSON. Pass NaN for `gamma` to use the
/// scenario's own value, if any.
///
/// # Safety
/// `scenario` must be a live handle and `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn bf_analyze(scenario: *const BfScenario, gamma: f64, out_json: *mut *mut c_char) -> BfStatus {
    guard(|| {
        if out_json.is_null() {
            return fail(BfStatus::NullArgument, "null out pointer");
        }
        *out_json = ptr::null_mut();
        let Some(sc) = scenario.as_ref() else {
            return fail(BfStatus::NullArgument, "null scenario");
        };
        let s = match build(&sc.doc) {
            Ok(s) => s,
            Err(st) => return st,
        };
        let gamma = if gamma.is_nan() {
            sc.doc.parse().ok().and_then(|f| f.gamma())
        } else {
            Some(gamma)
        };
        let report = s.prepare().and_then(|p| analysis::analyze(&p, gamma));
        match report {
            Ok(r) => give_string(serde_json::to_string(&r).expect("reports serialize"), out_json),
            Err(e) => fail(library_status(&e), e),
        }
    })
}

/// Runs the closed loop. On [`BfStatus::Aborted`] the partial result is
/// still stored in `out`.
///
/// # Safety
/// `scenario` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bf_simulate(scenario: *const BfScenario, out: *mut *mut BfResult) -> BfStatus {
    guard(|| {
        if out.is_null() {
            return fail(BfStatus::NullArgument, "null out pointer");
        }
        *out = ptr::null_mut();
        let Some(sc) = scenario.as_ref() else {
            return fail(BfStatus::NullArgument, "null scenario");
        };
        let prepared = match build(&sc.doc).and_then(|s| s.prepare().map_err(|e| fail(library_status(&e), e))) {
            Ok(p) => p,
            Err(st) => return st,
        };
        let inner = simulator::run_prepared(&prepared);
        let status = match &inner.aborted {
            Some(a) => fail(BfStatus::Aborted, format!("aborted at t={}: {}", a.time, a.reason)),
            None => BfStatus::Ok,
        };
        *out = Box::into_raw(Box::new(BfResult { inner }));
        status
    })
}

/// Releases a result. Null is ignored.
///
/// # Safety
/// `result` must come from [`bf_simulate`] and not be used again.
#[no_mangle]
pub unsafe extern "C" fn bf_result_free(result: *mut BfResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Number of stored steps, including the initial one. Zero for null.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bf_result_len(result: *const BfResult) -> usize {
    result.as_ref().map_or(0, |r| r.inner.len())
}

/// Agent count, dimension and leader count.
///
/// # Safety
/// `result` must be a live handle; the out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn bf_result_shape(
    result: *const BfResult,
    n: *mut usize,
    d: *mut usize,
    n_leaders: *mut usize,
) -> BfStatus {
    guard(|| {
        let Some(r) = result.as_ref() else {
            return fail(BfStatus::NullArgument, "null result");
        };
        if n.is_null() || d.is_null() || n_leaders.is_null() {
            return fail(BfStatus::NullArgument, "null out pointer");
        }
        *n = r.inner.n;
        *d = r.inner.d;
        *n_leaders = r.inner.n_leaders;
        BfStatus::Ok
    })
}

/// Fills `out` with the run's headline numbers.
///
/// # Safety
/// `result` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bf_result_summary(result: *const BfResult, out: *mut BfSummary) -> BfStatus {
    guard(|| {
        let (Some(r), false) = (result.as_ref(), out.is_null()) else {
            return fail(BfStatus::NullArgument, "null argument");
        };
        let s = r.inner.summary();
        *out = BfSummary {
            steps: s.steps,
            final_time: s.final_time,
            final_delta_p: s.final_delta_p,
            final_delta_v: s.final_delta_v,
            final_bearing_error: s.final_bearing_error,
            min_distance: s.min_distance,
            max_control_inf: s.max_control_inf,
            time_to_threshold: s.time_to_threshold.unwrap_or(f64::NAN),
            converged: s.converged,
            aborted: s.aborted,
        };
        BfStatus::Ok
    })
}

unsafe fn copy_out(values: &[f64], buf: *mut f64, cap: usize, written: *mut usize) -> BfStatus {
    if written.is_null() {
        return fail(BfStatus::NullArgument, "null length pointer");
    }
    *written = values.len();
    if cap < values.len() {
        return fail(BfStatus::BufferTooSmall, format!("need {} values, got room for {cap}", values.len()));
    }
    if buf.is_null() {
        return fail(BfStatus::NullArgument, "null buffer");
    }
    ptr::copy_nonoverlapping(values.as_ptr(), buf, values.len());
    BfStatus::Ok
}

/// Copies one scalar series into `buf`. `written` receives the series length
/// even when the buffer is too short, so a first call with `cap = 0` sizes it.
///
/// # Safety
/// `buf` must hold `cap` doubles; `written` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bf_result_series(
    result: *const BfResult,
    series: BfSeries,
    buf: *mut f64,
    cap: usize,
    written: *mut usize,
) -> BfStatus {
    guard(|| {
        let Some(r) = result.as_ref() else {
            return fail(BfStatus::NullArgument, "null result");
        };
        let r = &r.inner;
        let values = match series {
            BfSeries::Time => r.times.clone(),
            BfSeries::DeltaPNorm => r.delta_p_norms(),
            BfSeries::DeltaVNorm => r.delta_v_norms(),
            BfSeries::BearingError => r.total_bearing_error.clone(),
            BfSeries::MinDistance => r.min_pairwise_distance.clone(),
            BfSeries::MaxControlInf => r.max_control_inf(),
        };
        copy_out(&values, buf, cap, written)
    })
}

/// Copies the stacked positions (`n * d` values, agents in order) at `step`.
///
/// # Safety
/// `buf` must hold `cap` doubles; `written` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bf_result_positions(
    result: *const BfResult,
    step: usize,
    buf: *mut f64,
    cap: usize,
    written: *mut usize,
) -> BfStatus {
    guard(|| {
        let Some(r) = result.as_ref() else {
            return fail(BfStatus::NullArgument, "null result");
        };
        let Some(state) = r.inner.states.get(step) else {
            return fail(BfStatus::OutOfRange, format!("step {step} out of range"));
        };
        copy_out(state.positions.as_slice(), buf, cap, written)
    })
}

/// Writes the per-step CSV to `path`.
///
/// # Safety
/// `result` must be a live handle and `path` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn bf_result_write_csv(result: *const BfResult, path: *const c_char) -> BfStatus {
    guard(|| {
        let Some(r) = result.as_ref() else {
            return fail(BfStatus::NullArgument, "null result");
        };
        let path = match read_str(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let written = File::create(path).and_then(|f| {
            let mut w = BufWriter::new(f);
            r.inner.write_csv(&mut w)?;
            w.flush()
        });
        match written {
            Ok(()) => BfStatus::Ok,
            Err(e) => fail(BfStatus::IoError, format!("{path}: {e}")),
        }
    })
}

/// Serializes the full result as JSON.
///
/// # Safety
/// `result` must be a live handle and `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn bf_result_to_json(result: *const BfResult, out_json: *mut *mut c_char) -> BfStatus {
    guard(|| {
        if out_json.is_null() {
            return fail(BfStatus::NullArgument, "null out pointer");
        }
        *out_json = ptr::null_mut();
        let Some(r) = result.as_ref() else {
            return fail(BfStatus::NullArgument, "null result");
        };
        give_string(serde_json::to_string(&r.inner.to_json()).expect("results serialize"), out_json)
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn bf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn bf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Static name of a status, e.g. `"NON_UNIQUE_TARGET"`.
#[no_mangle]
pub extern "C" fn bf_status_name(status: BfStatus) -> *const c_char {
    let s: &'static CStr = match status {
        BfStatus::Ok => c"OK",
        BfStatus::InputError => c"INPUT_ERROR",
        BfStatus::NonUniqueTarget => c"NON_UNIQUE_TARGET",
        BfStatus::Aborted => c"ABORTED",
        BfStatus::NullArgument => c"NULL_ARGUMENT",
        BfStatus::InvalidUtf8 => c"INVALID_UTF8",
        BfStatus::IoError => c"IO_ERROR",
        BfStatus::BufferTooSmall => c"BUFFER_TOO_SMALL",
        BfStatus::OutOfRange => c"OUT_OF_RANGE",
        BfStatus::Panic => c"PANIC",
    };
    s.as_ptr()
}
