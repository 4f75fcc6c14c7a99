//! C ABI over `irs_joint`.
//!
//! Objects cross the boundary as opaque pointers returned by the constructors
//! and released with the matching `*_free`. Every fallible call
//! returns an [`IrsStatus`]; on failure the message is available from
//! [`irs_last_error_message`] on the same thread. Strings returned through
//! out-parameters are owned by the caller and released with
//! [`irs_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use irs_joint::alt_opt::{self, records_to_json_lines, SolutionRecord};
use irs_joint::channel::{generate_channels, ChannelRealization};
use irs_joint::config::dbm_to_watts;
use irs_joint::harness::{emit_csv, run_scheme, run_sweep, to_csv, ExperimentSpec, Scheme};
use irs_joint::{Error, SystemConfig};

/// Result codes for every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IrsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Domain = 3,
    Dimension = 4,
    Config = 5,
    QosInfeasible = 6,
    PowerInfeasible = 7,
    NonConvergence = 8,
    Singular = 9,
    OracleRefused = 10,
    UnknownScheme = 11,
    Io = 12,
    Json = 13,
    OutOfRange = 14,
    Panic = 15,
}

/// Opaque system configuration.
pub struct IrsConfig {
    inner: SystemConfig,
}

/// Opaque channel realization.
pub struct IrsChannels {
    inner: ChannelRealization,
}

/// Opaque trajectory of an alternating-optimization run.
pub struct IrsRunResult {
    records: Vec<SolutionRecord>,
    aborted: Option<String>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &Error) -> IrsStatus {
    match e {
        Error::Domain(_) => IrsStatus::Domain,
        Error::Dimension { .. } => IrsStatus::Dimension,
        Error::Config(_) => IrsStatus::Config,
        Error::QosInfeasible { .. } => IrsStatus::QosInfeasible,
        Error::PowerInfeasible { .. } => IrsStatus::PowerInfeasible,
        Error::NonConvergence { .. } => IrsStatus::NonConvergence,
        Error::Singular(_) => IrsStatus::Singular,
        Error::OracleRefused(_) => IrsStatus::OracleRefused,
        Error::UnknownScheme(_) => IrsStatus::UnknownScheme,
        Error::Io { .. } => IrsStatus::Io,
        Error::Json(_) => IrsStatus::Json,
    }
}

struct Failure(IrsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(IrsStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, recording its error or panic as the thread's last error.
fn guard<F>(f: F) -> IrsStatus
where
    F: FnOnce() -> Result<(), Failure>,
{
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => IrsStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            IrsStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| Failure(IrsStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

fn to_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("interior nul removed").into_raw()
}

/// Message of the last failed call on this thread, or null if it succeeded.
/// The pointer stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn irs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn irs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn irs_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Desk-scale configuration (32 antennas, 4x4 IRS, 4 users).
#[no_mangle]
pub extern "C" fn irs_config_desk() -> *mut IrsConfig {
    Box::into_raw(Box::new(IrsConfig {
        inner: SystemConfig::desk(),
    }))
}

/// Full-size configuration (256 antennas, 8x8 IRS, 16 users).
#[no_mangle]
pub extern "C" fn irs_config_paper_scale() -> *mut IrsConfig {
    Box::into_raw(Box::new(IrsConfig {
        inner: SystemConfig::paper_scale(),
    }))
}

/// Parses a JSON configuration with the field names of the Rust `SystemConfig`.
///
/// # Safety
/// `json` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn irs_config_from_json(json: *const c_char, out: *mut *mut IrsConfig) -> IrsStatus {
    guard(|| {
        let text = read_str(json, "json")?;
        let inner: SystemConfig = serde_json::from_str(text).map_err(Error::from)?;
        inner.validate()?;
        write_out(out, Box::into_raw(Box::new(IrsConfig { inner })), "out")
    })
}

/// Serializes a configuration to JSON; free the result with `irs_string_free`.
///
/// # Safety
/// `config` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn irs_config_to_json(config: *const IrsConfig, out: *mut *mut c_char) -> IrsStatus {
    guard(|| {
        let cfg = deref(config, "config")?;
        let text = serde_json::to_string(&cfg.inner).map_err(Error::from)?;
        write_out(out, to_c_string(text), "out")
    })
}

/// Sets the noise power so that `10 log10(P / sigma^2) = snr_db`.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn irs_config_set_snr_db(config: *mut IrsConfig, snr_db: f64) -> IrsStatus {
    guard(|| {
        let cfg = deref_mut(config, "config")?;
        if !snr_db.is_finite() {
            return Err(Failure(IrsStatus::Domain, format!("snr_db must be finite, got {snr_db}")));
        }
        cfg.inner = cfg.inner.clone().with_snr_db(snr_db);
        Ok(())
    })
}

/// Sets the transmit power in dBm, keeping the noise power.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn irs_config_set_power_dbm(config: *mut IrsConfig, dbm: f64) -> IrsStatus {
    guard(|| {
        let cfg = deref_mut(config, "config")?;
        let mut next = cfg.inner.clone();
        next.total_power = dbm_to_watts(dbm);
        next.validate()?;
        cfg.inner = next;
        Ok(())
    })
}

/// Sets the seed used for the initial IRS phases.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn irs_config_set_seed(config: *mut IrsConfig, seed: u64) -> IrsStatus {
    guard(|| {
        deref_mut(config, "config")?.inner.rng_seed = seed;
        Ok(())
    })
}

/// # Safety
/// `config` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn irs_config_free(config: *mut IrsConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Draws a channel realization; equal `(config, seed)` give identical channels.
///
/// # Safety
/// `config` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn irs_channels_generate(
    config: *const IrsConfig,
    seed: u64,
    out: *mut *mut IrsChannels,
) -> IrsStatus {
    guard(|| {
        let cfg = deref(config, "config")?;
        let inner = generate_channels(&cfg.inner, seed)?;
        write_out(out, Box::into_raw(Box::new(IrsChannels { inner })), "out")
    })
}

/// Antenna, IRS element and user counts of a realization.
///
/// # Safety
/// `channels` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn irs_channels_dims(
    channels: *const IrsChannels,
    n_tx: *mut usize,
    n_irs: *mut usize,
    n_users: *mut usize,
) -> IrsStatus {
    guard(|| {
        let ch = &deref(channels, "channels")?.inner;
        write_out(n_tx, ch.n_tx(), "n_tx")?;
        write_out(n_irs, ch.n_irs(), "n_irs")?;
        write_out(n_users, ch.n_users(), "n_users")
    })
}

/// # Safety
/// `channels` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn irs_channels_free(channels: *mut IrsChannels) {
    if !channels.is_null() {
        drop(Box::from_raw(channels));
    }
}

/// Runs the full alternating optimization. A run stopped by an infeasible
/// block still yields a result holding the completed iterations; check
/// `irs_result_aborted`.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn irs_run_joint(
    config: *const IrsConfig,
    channels: *const IrsChannels,
    out: *mut *mut IrsRunResult,
) -> IrsStatus {
    guard(|| {
        let cfg = &deref(config, "config")?.inner;
        let ch = &deref(channels, "channels")?.inner;
        if out.is_null() {
            return Err(null("out"));
        }
        cfg.validate()?;
        let result = match alt_opt::run(cfg, ch) {
            Ok(records) => IrsRunResult { records, aborted: None },
            Err(a) => IrsRunResult {
                records: a.records,
                aborted: Some(a.error.to_string()),
            },
        };
        write_out(out, Box::into_raw(Box::new(result)), "out")
    })
}

/// Final sum rate of one scheme (`joint`, `partial_f_fixed`, `random_theta`,
/// `uniform_pa`, `no_irs`).
///
/// # Safety
/// Handles must be live; `scheme` nul-terminated; `out_rate` writable.
#[no_mangle]
pub unsafe extern "C" fn irs_run_scheme(
    config: *const IrsConfig,
    channels: *const IrsChannels,
    scheme: *const c_char,
    out_rate: *mut f64,
) -> IrsStatus {
    guard(|| {
        let cfg = &deref(config, "config")?.inner;
        let ch = &deref(channels, "channels")?.inner;
        let scheme: Scheme = read_str(scheme, "scheme")?.parse()?;
        if out_rate.is_null() {
            return Err(null("out_rate"));
        }
        let rate = run_scheme(scheme, cfg, ch)?;
        write_out(out_rate, rate, "out_rate")
    })
}

/// Number of recorded iterations, including the initial point.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn irs_result_len(result: *const IrsRunResult) -> usize {
    result.as_ref().map_or(0, |r| r.records.len())
}

/// 1 if the run stopped early on an infeasible block, 0 otherwise.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn irs_result_aborted(result: *const IrsRunResult) -> i32 {
    result.as_ref().map_or(0, |r| r.aborted.is_some() as i32)
}

/// Sum rate (bit/s/Hz) after iteration `index`.
///
/// # Safety
/// `result` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn irs_result_sum_rate(result: *const IrsRunResult, index: usize, out: *mut f64) -> IrsStatus {
    guard(|| {
        let r = deref(result, "result")?;
        let rec = r.records.get(index).ok_or_else(|| {
            Failure(
                IrsStatus::OutOfRange,
                format!("index {index} out of range for {} records", r.records.len()),
            )
        })?;
        write_out(out, rec.sum_rate, "out")
    })
}

/// Iteration records as JSON lines; free with `irs_string_free`.
///
/// # Safety
/// `result` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn irs_result_to_json_lines(result: *const IrsRunResult, out: *mut *mut c_char) -> IrsStatus {
    guard(|| {
        let r = deref(result, "result")?;
        let text = records_to_json_lines(&r.records)?;
        write_out(out, to_c_string(text), "out")
    })
}

/// Reason the run stopped early, or null when it completed.
/// Valid while the result handle lives.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn irs_result_abort_reason(result: *const IrsRunResult) -> *mut c_char {
    match result.as_ref().and_then(|r| r.aborted.clone()) {
        Some(msg) => to_c_string(msg),
        None => ptr::null_mut(),
    }
}

/// # Safety
/// `result` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn irs_result_free(result: *mut IrsRunResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Runs the sweep described by a JSON experiment spec, writes the CSV to
/// `out_path` (the spec's own path when null) and returns the CSV text.
///
/// # Safety
/// `spec_json` nul-terminated; `out_path` null or nul-terminated; `out_csv` writable.
#[no_mangle]
pub unsafe extern "C" fn irs_run_sweep(
    spec_json: *const c_char,
    out_path: *const c_char,
    out_csv: *mut *mut c_char,
) -> IrsStatus {
    guard(|| {
        let mut spec = ExperimentSpec::from_json(read_str(spec_json, "spec_json")?)?;
        if !out_path.is_null() {
            spec.out_path = PathBuf::from(read_str(out_path, "out_path")?);
        }
        if out_csv.is_null() {
            return Err(null("out_csv"));
        }
        let result = run_sweep(&spec)?;
        emit_csv(&result, &spec.out_path)?;
        write_out(out_csv, to_c_string(to_csv(&result)?), "out_csv")
    })
}
