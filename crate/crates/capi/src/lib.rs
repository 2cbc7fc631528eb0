//! C ABI for the gapdecomp library.
//!
//! Conventions:
//! - Functions return a status code: 0 ok, 1 config error, 2 data error,
//!   3 estimation error, 4 validation failed, negative codes for misuse of
//!   the ABI itself. The last error message is retrievable per thread via
//!   [`gapdecomp_last_error`].
//! - Reports are opaque handles freed with [`gapdecomp_report_free`];
//!   strings returned through out-parameters are freed with
//!   [`gapdecomp_string_free`].

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use libc::{c_char, c_int};

use gapdecomp::commands::{run_decompose, run_simulate, run_validate, ValidateOptions};
use gapdecomp::config::{parse_dgp, parse_run_config};
use gapdecomp::{Error, ErrorClass};

pub const GAPDECOMP_OK: c_int = 0;
pub const GAPDECOMP_CONFIG_ERROR: c_int = 1;
pub const GAPDECOMP_DATA_ERROR: c_int = 2;
pub const GAPDECOMP_ESTIMATION_ERROR: c_int = 3;
pub const GAPDECOMP_VALIDATION_FAILED: c_int = 4;
pub const GAPDECOMP_NULL_ARGUMENT: c_int = -1;
pub const GAPDECOMP_INVALID_UTF8: c_int = -2;
pub const GAPDECOMP_PANIC: c_int = -3;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

fn status_of(err: &Error) -> c_int {
    match err.class() {
        ErrorClass::Config => GAPDECOMP_CONFIG_ERROR,
        ErrorClass::Data => GAPDECOMP_DATA_ERROR,
        ErrorClass::Estimation => GAPDECOMP_ESTIMATION_ERROR,
    }
}

fn fail(err: &Error) -> c_int {
    set_last_error(&err.to_string());
    status_of(err)
}

fn guard<F: FnOnce() -> c_int>(body: F) -> c_int {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            set_last_error("internal panic");
            GAPDECOMP_PANIC
        }
    }
}

/// # Safety
/// `ptr` must be null or a NUL-terminated string valid for the duration of
/// the call.
unsafe fn utf8_arg<'a>(ptr: *const c_char) -> Result<&'a str, c_int> {
    if ptr.is_null() {
        set_last_error("null argument");
        return Err(GAPDECOMP_NULL_ARGUMENT);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_last_error("argument is not valid UTF-8");
        GAPDECOMP_INVALID_UTF8
    })
}

/// An analysis report held behind the ABI; opaque to C callers.
pub struct GapdecompReport {
    json: CString,
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gapdecomp_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// Message of the last error on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn gapdecomp_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(std::ptr::null(), |c| c.as_ptr())
    })
}

fn run_from_config_text(toml: &str, out: *mut *mut GapdecompReport) -> c_int {
    let config = match parse_run_config(toml) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    match run_decompose(&config) {
        Ok(report) => {
            let json = CString::new(report.to_json()).unwrap_or_default();
            let handle = Box::new(GapdecompReport { json });
            unsafe { *out = Box::into_raw(handle) };
            clear_last_error();
            GAPDECOMP_OK
        }
        Err(e) => fail(&e),
    }
}

/// Run the analysis described by a TOML configuration string. On success,
/// `*out` owns a report handle.
///
/// # Safety
/// `config_toml` must be a valid NUL-terminated string and `out` a valid
/// pointer to write one pointer through.
#[no_mangle]
pub unsafe extern "C" fn gapdecomp_run_config_str(
    config_toml: *const c_char,
    out: *mut *mut GapdecompReport,
) -> c_int {
    guard(|| {
        if out.is_null() {
            set_last_error("null out pointer");
            return GAPDECOMP_NULL_ARGUMENT;
        }
        let toml = match utf8_arg(config_toml) {
            Ok(s) => s,
            Err(code) => return code,
        };
        run_from_config_text(toml, out)
    })
}

/// As [`gapdecomp_run_config_str`], reading the configuration from a file.
///
/// # Safety
/// `config_path` must be a valid NUL-terminated string and `out` a valid
/// pointer to write one pointer through.
#[no_mangle]
pub unsafe extern "C" fn gapdecomp_run_config_file(
    config_path: *const c_char,
    out: *mut *mut GapdecompReport,
) -> c_int {
    guard(|| {
        if out.is_null() {
            set_last_error("null out pointer");
            return GAPDECOMP_NULL_ARGUMENT;
        }
        let path = match utf8_arg(config_path) {
            Ok(s) => s,
            Err(code) => return code,
        };
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                return fail(&Error::Io {
                    path: path.to_string(),
                    source: e,
                })
            }
        };
        run_from_config_text(&text, out)
    })
}

/// Borrow the report's JSON; valid while the report handle lives.
///
/// # Safety
/// `report` must be a live handle from a `gapdecomp_run_config_*` call.
#[no_mangle]
pub unsafe extern "C" fn gapdecomp_report_json(report: *const GapdecompReport) -> *const c_char {
    if report.is_null() {
        return std::ptr::null();
    }
    (*report).json.as_ptr()
}

/// Free a report handle. Null is allowed.
///
/// # Safety
/// `report` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gapdecomp_report_free(report: *mut GapdecompReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Generate a synthetic population from a TOML process definition, writing
/// the canonical CSV and the oracle truth JSON. `out_records` (optional)
/// receives the record count.
///
/// # Safety
/// String arguments must be valid NUL-terminated strings; `out_records`
/// must be null or valid to write one u64 through.
#[no_mangle]
pub unsafe extern "C" fn gapdecomp_simulate(
    dgp_toml: *const c_char,
    data_path: *const c_char,
    truth_path: *const c_char,
    out_records: *mut u64,
) -> c_int {
    guard(|| {
        let dgp_text = match utf8_arg(dgp_toml) {
            Ok(s) => s,
            Err(code) => return code,
        };
        let data = match utf8_arg(data_path) {
            Ok(s) => s,
            Err(code) => return code,
        };
        let truth = match utf8_arg(truth_path) {
            Ok(s) => s,
            Err(code) => return code,
        };
        let dgp = match parse_dgp(dgp_text) {
            Ok(d) => d,
            Err(e) => return fail(&e),
        };
        match run_simulate(&dgp, Path::new(data), Path::new(truth)) {
            Ok(n) => {
                if !out_records.is_null() {
                    *out_records = n as u64;
                }
                clear_last_error();
                GAPDECOMP_OK
            }
            Err(e) => fail(&e),
        }
    })
}

/// Validate the estimation pipeline against a TOML process definition.
/// `*out_summary_json` (optional) receives the check table as JSON (free
/// with [`gapdecomp_string_free`]). Returns 0 when all checks pass and 4
/// when the comparison fails.
///
/// # Safety
/// `dgp_toml` must be a valid NUL-terminated string; `out_summary_json`
/// must be null or valid to write one pointer through.
#[no_mangle]
pub unsafe extern "C" fn gapdecomp_validate(
    dgp_toml: *const c_char,
    out_summary_json: *mut *mut c_char,
) -> c_int {
    guard(|| {
        let dgp_text = match utf8_arg(dgp_toml) {
            Ok(s) => s,
            Err(code) => return code,
        };
        let dgp = match parse_dgp(dgp_text) {
            Ok(d) => d,
            Err(e) => return fail(&e),
        };
        match run_validate(&dgp, &ValidateOptions::default()) {
            Ok(summary) => {
                if !out_summary_json.is_null() {
                    let json = serde_json::to_string_pretty(&summary).unwrap_or_default();
                    *out_summary_json = CString::new(json).unwrap_or_default().into_raw();
                }
                clear_last_error();
                if summary.passed {
                    GAPDECOMP_OK
                } else {
                    set_last_error("validation failed");
                    GAPDECOMP_VALIDATION_FAILED
                }
            }
            Err(e) => fail(&e),
        }
    })
}

/// Free a string returned through an out-parameter. Null is allowed.
///
/// # Safety
/// `s` must be null or a string produced by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gapdecomp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
