//! C ABI over `otac-core`.
//!
//! Every fallible function returns an [`OtacStatus`]; on failure the message
//! is available from [`otac_last_error`] on the same thread. Objects are
//! opaque handles released with their matching `*_free` function. Strings
//! returned through out-pointers are owned by the caller and released with
//! [`otac_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use otac_core::config::RunFile;
use otac_core::experiment::{run_simulation, sweep, SimulationResult, SweepTable};
use otac_core::suites::{run_suite, Suite, SuiteOptions};
use otac_core::Error;

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OtacStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Io = 4,
    InvalidInput = 5,
    Runtime = 6,
    OutOfRange = 7,
    Panic = 8,
}

/// A parsed and validated run configuration.
pub struct OtacConfig {
    file: RunFile,
}

enum Outcome {
    Simulation(SimulationResult),
    Sweep(SweepTable),
}

/// The outcome of [`otac_run`]: either per-scheme traces or a sweep table.
pub struct OtacResult {
    outcome: Outcome,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(e: &Error) -> OtacStatus {
    match e {
        Error::Config(_) => OtacStatus::Config,
        Error::Io { .. } | Error::Csv(_) => OtacStatus::Io,
        Error::InvalidInput(_) => OtacStatus::InvalidInput,
        _ => OtacStatus::Runtime,
    }
}

fn fail(status: OtacStatus, msg: impl Into<String>) -> OtacStatus {
    set_error(msg);
    status
}

/// Run `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (OtacStatus, String)>) -> OtacStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            OtacStatus::Ok
        }
        Ok(Err((s, m))) => fail(s, m),
        Err(_) => fail(OtacStatus::Panic, "internal panic"),
    }
}

fn core(e: Error) -> (OtacStatus, String) {
    (status_of(&e), e.to_string())
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, (OtacStatus, String)> {
    if p.is_null() {
        return Err((OtacStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (OtacStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

fn out_string(out: *mut *mut c_char, s: String) -> Result<(), (OtacStatus, String)> {
    let c = CString::new(s).map_err(|_| (OtacStatus::Runtime, "string contains NUL".to_string()))?;
    // SAFETY: callers check `out` for null before reaching here
    unsafe { *out = c.into_raw() };
    Ok(())
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), (OtacStatus, String)> {
    if p.is_null() {
        Err((OtacStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn otac_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn otac_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Release a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn otac_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parse a TOML run configuration held in memory.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn otac_config_from_toml(toml: *const c_char, out: *mut *mut OtacConfig) -> OtacStatus {
    guard(|| {
        non_null(out, "out")?;
        let t = text(toml, "toml")?;
        let file = RunFile::parse(t, "<memory>").map_err(core)?;
        *out = Box::into_raw(Box::new(OtacConfig { file }));
        Ok(())
    })
}

/// Load a TOML run configuration from a file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn otac_config_load(path: *const c_char, out: *mut *mut OtacConfig) -> OtacStatus {
    guard(|| {
        non_null(out, "out")?;
        let p = text(path, "path")?;
        let file = RunFile::load(Path::new(p)).map_err(core)?;
        *out = Box::into_raw(Box::new(OtacConfig { file }));
        Ok(())
    })
}

/// Override the master seed.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn otac_config_set_seed(config: *mut OtacConfig, seed: u64) -> OtacStatus {
    guard(|| {
        non_null(config, "config")?;
        (*config).file.sim.seed = seed;
        Ok(())
    })
}

/// Override the number of Monte-Carlo runs.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn otac_config_set_runs(config: *mut OtacConfig, runs: usize) -> OtacStatus {
    guard(|| {
        non_null(config, "config")?;
        if runs == 0 {
            return Err((OtacStatus::Config, "runs must be positive".into()));
        }
        (*config).file.sim.runs = runs;
        Ok(())
    })
}

/// Fully resolved configuration as TOML.
///
/// # Safety
/// `config` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn otac_config_resolved_toml(config: *const OtacConfig, out: *mut *mut c_char) -> OtacStatus {
    guard(|| {
        non_null(config, "config")?;
        non_null(out, "out")?;
        out_string(out, (*config).file.resolved_toml().map_err(core)?)
    })
}

/// Release a configuration. Null is ignored.
///
/// # Safety
/// `config` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn otac_config_free(config: *mut OtacConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Run the configured experiment, or its sweep when one is configured.
///
/// # Safety
/// `config` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn otac_run(config: *const OtacConfig, out: *mut *mut OtacResult) -> OtacStatus {
    guard(|| {
        non_null(config, "config")?;
        non_null(out, "out")?;
        let file = &(*config).file;
        let outcome = match &file.sweep {
            Some(s) => Outcome::Sweep(sweep(s.axis, &s.values, &file.sim).map_err(core)?),
            None => Outcome::Simulation(run_simulation(&file.sim).map_err(core)?),
        };
        *out = Box::into_raw(Box::new(OtacResult { outcome }));
        Ok(())
    })
}

/// Whether the result holds a sweep table (1) or per-scheme traces (0).
///
/// # Safety
/// `result` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn otac_result_is_sweep(result: *const OtacResult) -> c_int {
    match result.as_ref() {
        Some(OtacResult {
            outcome: Outcome::Sweep(_),
        }) => 1,
        _ => 0,
    }
}

/// Number of schemes in the result.
///
/// # Safety
/// `result` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn otac_result_scheme_count(result: *const OtacResult, out: *mut usize) -> OtacStatus {
    guard(|| {
        non_null(result, "result")?;
        non_null(out, "out")?;
        *out = match &(*result).outcome {
            Outcome::Simulation(s) => s.logs.len(),
            Outcome::Sweep(t) => t.schemes.len(),
        };
        Ok(())
    })
}

/// Display name of scheme `index`, e.g. `OTA-C`.
///
/// # Safety
/// `result` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn otac_result_scheme_name(
    result: *const OtacResult,
    index: usize,
    out: *mut *mut c_char,
) -> OtacStatus {
    guard(|| {
        non_null(result, "result")?;
        non_null(out, "out")?;
        let scheme = match &(*result).outcome {
            Outcome::Simulation(s) => s.logs.get(index).map(|l| l.scheme),
            Outcome::Sweep(t) => t.schemes.get(index).copied(),
        };
        let scheme = scheme.ok_or((OtacStatus::OutOfRange, format!("scheme index {index} out of range")))?;
        out_string(out, scheme.name().to_string())
    })
}

/// Final run-averaged NMSE in dB of scheme `index`.
///
/// # Safety
/// `result` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn otac_result_final_nmse_db(result: *const OtacResult, index: usize, out: *mut f64) -> OtacStatus {
    guard(|| {
        non_null(result, "result")?;
        non_null(out, "out")?;
        match &(*result).outcome {
            Outcome::Simulation(s) => {
                let log = s
                    .logs
                    .get(index)
                    .ok_or((OtacStatus::OutOfRange, format!("scheme index {index} out of range")))?;
                *out = log.final_nmse();
                Ok(())
            }
            Outcome::Sweep(_) => Err((OtacStatus::InvalidInput, "sweep results have no single final NMSE".into())),
        }
    })
}

/// NMSE table as CSV: per-iteration traces, or the sweep table.
///
/// # Safety
/// `result` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn otac_result_csv(result: *const OtacResult, out: *mut *mut c_char) -> OtacStatus {
    guard(|| {
        non_null(result, "result")?;
        non_null(out, "out")?;
        let csv = match &(*result).outcome {
            Outcome::Simulation(s) => s.nmse_csv(),
            Outcome::Sweep(t) => t.to_csv(),
        };
        out_string(out, csv)
    })
}

/// Full metric trace of scheme `index` as CSV.
///
/// # Safety
/// `result` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn otac_result_metrics_csv(
    result: *const OtacResult,
    index: usize,
    out: *mut *mut c_char,
) -> OtacStatus {
    guard(|| {
        non_null(result, "result")?;
        non_null(out, "out")?;
        match &(*result).outcome {
            Outcome::Simulation(s) => {
                let log = s
                    .logs
                    .get(index)
                    .ok_or((OtacStatus::OutOfRange, format!("scheme index {index} out of range")))?;
                out_string(out, log.to_csv())
            }
            Outcome::Sweep(_) => Err((OtacStatus::InvalidInput, "sweep results carry no metric traces".into())),
        }
    })
}

/// Release a result. Null is ignored.
///
/// # Safety
/// `result` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn otac_result_free(result: *mut OtacResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Run a verification suite by name. `samples == 0` selects the suite's
/// default. `passed` receives 1 or 0; `report`, when non-null, receives the
/// printable report.
///
/// # Safety
/// `suite` must be a NUL-terminated string; `passed` must be writable;
/// `report` must be writable or null.
#[no_mangle]
pub unsafe extern "C" fn otac_verify(
    suite: *const c_char,
    samples: usize,
    disconnected: c_int,
    seed: u64,
    passed: *mut c_int,
    report: *mut *mut c_char,
) -> OtacStatus {
    guard(|| {
        non_null(passed, "passed")?;
        let name = text(suite, "suite")?;
        let suite: Suite = name.parse().map_err(core)?;
        let opts = SuiteOptions {
            samples: (samples > 0).then_some(samples),
            disconnected: disconnected != 0,
            seed,
        };
        let reports = run_suite(suite, &opts).map_err(core)?;
        *passed = c_int::from(reports.iter().all(|r| r.passed));
        if !report.is_null() {
            out_string(report, reports.iter().map(|r| r.to_string()).collect())?;
        }
        Ok(())
    })
}
