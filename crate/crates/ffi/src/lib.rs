//! C ABI for the skyrelay simulator.
//!
//! Configurations and sweep results are opaque handles owned by the caller
//! and released with the matching `_free` function. Every fallible call
//! returns a [`SkyrelayStatus`]; the message for the last failure on the
//! calling thread is available from [`skyrelay_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use skyrelay::metrics::{LinkCounters, MetricRecord};
use skyrelay::runner::{figure_recipe, run_cell, run_sweep, RunConfig};
use skyrelay::scenario::ScenarioKind;
use skyrelay::{SimError, SweepResult};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkyrelayStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    InvalidCount = 4,
    UnknownScenario = 5,
    UnknownFigure = 6,
    Trace = 7,
    Io = 8,
    OutOfRange = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkyrelayScenario {
    Mff = 0,
    Bff = 1,
    Bfa = 2,
    Bao = 3,
}

/// Scenario codes cross the boundary as plain integers so that an out of
/// range value from C is an error instead of undefined behaviour.
fn scenario_arg(code: u32) -> Result<ScenarioKind, Failure> {
    match code {
        0 => Ok(ScenarioKind::Mff),
        1 => Ok(ScenarioKind::Bff),
        2 => Ok(ScenarioKind::Bfa),
        3 => Ok(ScenarioKind::Bao),
        _ => Err(Failure(
            SkyrelayStatus::UnknownScenario,
            format!("scenario code {code} (expected 0..=3)"),
        )),
    }
}

impl From<ScenarioKind> for SkyrelayScenario {
    fn from(s: ScenarioKind) -> Self {
        match s {
            ScenarioKind::Mff => SkyrelayScenario::Mff,
            ScenarioKind::Bff => SkyrelayScenario::Bff,
            ScenarioKind::Bfa => SkyrelayScenario::Bfa,
            ScenarioKind::Bao => SkyrelayScenario::Bao,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SkyrelayLinkCounters {
    pub offered: u64,
    pub delivered: u64,
    pub dropped_overflow: u64,
    pub dropped_channel: u64,
    pub in_flight: u64,
}

/// One sweep cell. Latencies are in seconds and NaN when nothing was
/// delivered on that hop during the measurement window.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkyrelayRecord {
    pub scenario: SkyrelayScenario,
    pub n_vehicles: u32,
    pub fps: u32,
    pub seed: u64,
    pub per_user_throughput_bps: f64,
    pub latency_l1_s: f64,
    pub latency_l2_s: f64,
    pub latency_total_s: f64,
    pub reliability: f64,
    pub uplink: SkyrelayLinkCounters,
    pub downlink: SkyrelayLinkCounters,
}

impl From<LinkCounters> for SkyrelayLinkCounters {
    fn from(c: LinkCounters) -> Self {
        Self {
            offered: c.offered,
            delivered: c.delivered,
            dropped_overflow: c.dropped_overflow,
            dropped_channel: c.dropped_channel,
            in_flight: c.in_flight,
        }
    }
}

impl From<&MetricRecord> for SkyrelayRecord {
    fn from(r: &MetricRecord) -> Self {
        Self {
            scenario: r.scenario.into(),
            n_vehicles: r.n_vehicles,
            fps: r.fps,
            seed: r.seed,
            per_user_throughput_bps: r.per_user_throughput_bps,
            latency_l1_s: r.latency_l1.unwrap_or(f64::NAN),
            latency_l2_s: r.latency_l2.unwrap_or(f64::NAN),
            latency_total_s: r.latency_total.unwrap_or(f64::NAN),
            reliability: r.reliability,
            uplink: r.ul.into(),
            downlink: r.dl.into(),
        }
    }
}

/// Opaque sweep configuration.
pub struct SkyrelayConfig {
    inner: RunConfig,
}

/// Opaque sweep result.
pub struct SkyrelaySweep {
    inner: SweepResult,
    config_hash: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(SkyrelayStatus, String);

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        let status = match &e {
            SimError::SchedulingInPast { .. } => SkyrelayStatus::Panic,
            SimError::InvalidCount(_) => SkyrelayStatus::InvalidCount,
            SimError::UnknownScenario(_) => SkyrelayStatus::UnknownScenario,
            SimError::UnknownFigure(_) => SkyrelayStatus::UnknownFigure,
            SimError::Config(_) => SkyrelayStatus::Config,
            SimError::Trace { .. } => SkyrelayStatus::Trace,
            SimError::Io { .. } => SkyrelayStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(SkyrelayStatus::NullPointer, format!("{what} is NULL"))
}

/// Runs `f`, turning errors and panics into a status code.
fn guard<F>(f: F) -> SkyrelayStatus
where
    F: FnOnce() -> Result<(), Failure>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SkyrelayStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic inside the simulator".into());
            set_last_error(msg);
            SkyrelayStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(SkyrelayStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn config_mut<'a>(cfg: *mut SkyrelayConfig) -> Result<&'a mut RunConfig, Failure> {
    cfg.as_mut().map(|c| &mut c.inner).ok_or_else(|| null("config"))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn emit_config(out: *mut *mut SkyrelayConfig, inner: RunConfig) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(SkyrelayConfig { inner }));
    Ok(())
}

/// Message describing the last failed call on this thread, or NULL. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn skyrelay_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn skyrelay_version() -> *const c_char {
    static VERSION_C: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION_C.as_ptr().cast()
}

/// Default configuration: all four scenarios, N = 4..21, 15 and 30 FPS,
/// seeds 1..5, 15 s per cell, calibrated link rates.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn skyrelay_config_new(out: *mut *mut SkyrelayConfig) -> SkyrelayStatus {
    guard(|| emit_config(out, RunConfig::default()))
}

/// Parses a TOML configuration (same format as the CLI's `--config`).
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` as for [`skyrelay_config_new`].
#[no_mangle]
pub unsafe extern "C" fn skyrelay_config_from_toml(
    toml: *const c_char,
    out: *mut *mut SkyrelayConfig,
) -> SkyrelayStatus {
    guard(|| {
        let text = str_arg(toml, "toml")?;
        emit_config(out, RunConfig::from_toml_str(text)?)
    })
}

/// Canned sweep for `fig3a`, `fig3b`, `fig3c` or `fig4`.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` as for [`skyrelay_config_new`].
#[no_mangle]
pub unsafe extern "C" fn skyrelay_config_from_figure(
    name: *const c_char,
    out: *mut *mut SkyrelayConfig,
) -> SkyrelayStatus {
    guard(|| {
        let name = str_arg(name, "name")?;
        emit_config(out, figure_recipe(name)?)
    })
}

/// # Safety
/// `cfg` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn skyrelay_config_free(cfg: *mut SkyrelayConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// `list` holds [`SkyrelayScenario`] codes.
///
/// # Safety
/// `cfg` must be a live handle; `list` must point to `len` readable values.
#[no_mangle]
pub unsafe extern "C" fn skyrelay_config_set_scenarios(
    cfg: *mut SkyrelayConfig,
    list: *const u32,
    len: usize,
) -> SkyrelayStatus {
    guard(|| {
        let cfg = config_mut(cfg)?;
        cfg.scenarios = slice_arg(list, len, "list")?
            .iter()
            .map(|&s| scenario_arg(s))
            .collect::<Result<_, _>>()?;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a live handle; `list` must point to `len` readable values.
#[no_mangle]
pub unsafe extern "C" fn skyrelay_config_set_vehicles(
    cfg: *mut SkyrelayConfig,
    list: *const u32,
    len: usize,
) -> SkyrelayStatus {
    guard(|| {
        let cfg = config_mut(cfg)?;
        cfg.vehicles = slice_arg(list, len, "list")?.to_vec();
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a live handle; `list` must point to `len` readable values.
#[no_mangle]
pub unsafe extern "C" fn skyrelay_config_set_fps(
    cfg: *mut SkyrelayConfig,
    list: *const u32,
    len: usize,
) -> SkyrelayStatus {
    guard(|| {
        let cfg = config_mut(cfg)?;
        cfg.fps = slice_arg(list, len, "list")?.to_vec();
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a live handle; `list` must point to `len` readable values.
#[no_mangle]
pub unsafe extern "C" fn skyrelay_config_set_seeds(
    cfg: *mut SkyrelayConfig,
    list: *const u64,
    len: usize,
) -> SkyrelayStatus {
    guard(|| {
        let cfg = config_mut(cfg)?;
        cfg.seeds = slice_arg(list, len, "list")?.to_vec();
        Ok(())
    })
}

/// Simulated seconds per cell and the leading warm-up excluded from
/// latency and throughput.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn skyrelay_config_set_time(
    cfg: *mut SkyrelayConfig,
    sim_time_s: f64,
    warmup_s: f64,
) -> SkyrelayStatus {
    guard(|| {
        let cfg = config_mut(cfg)?;
        if !(sim_time_s > 0.0 && warmup_s >= 0.0 && warmup_s < sim_time_s) {
            return Err(Failure(
                SkyrelayStatus::InvalidArgument,
                format!("need 0 <= warm-up < sim time, got {warmup_s} and {sim_time_s}"),
            ));
        }
        cfg.sim_time_secs = sim_time_s;
        cfg.warmup_secs = warmup_s;
        Ok(())
    })
}

/// Link rates in bit/s and per-packet loss probabilities.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn skyrelay_config_set_link(
    cfg: *mut SkyrelayConfig,
    uplink_rate_bps: f64,
    downlink_rate_bps: f64,
    loss_prob_ul: f64,
    loss_prob_dl: f64,
) -> SkyrelayStatus {
    guard(|| {
        let cfg = config_mut(cfg)?;
        let mut link = cfg.link;
        link.uplink_rate_bps = uplink_rate_bps;
        link.downlink_rate_bps = downlink_rate_bps;
        link.loss_prob_ul = loss_prob_ul;
        link.loss_prob_dl = loss_prob_dl;
        link.validate()?;
        cfg.link = link;
        Ok(())
    })
}

/// Per-bearer buffer capacities in bytes.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn skyrelay_config_set_buffers(
    cfg: *mut SkyrelayConfig,
    uplink_bytes: u64,
    downlink_bytes: u64,
) -> SkyrelayStatus {
    guard(|| {
        let cfg = config_mut(cfg)?;
        if uplink_bytes == 0 || downlink_bytes == 0 {
            return Err(Failure(SkyrelayStatus::InvalidArgument, "buffer capacity must be positive".into()));
        }
        cfg.buffers.uplink_bytes = uplink_bytes;
        cfg.buffers.downlink_bytes = downlink_bytes;
        Ok(())
    })
}

/// Worker threads for sweeps; 0 means all cores.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn skyrelay_config_set_parallelism(cfg: *mut SkyrelayConfig, threads: usize) -> SkyrelayStatus {
    guard(|| {
        let cfg = config_mut(cfg)?;
        cfg.parallelism = (threads > 0).then_some(threads);
        Ok(())
    })
}

/// Number of cells a sweep of `cfg` would run.
///
/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn skyrelay_config_cell_count(cfg: *const SkyrelayConfig, out: *mut usize) -> SkyrelayStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("config"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = cfg.inner.cell_count();
        Ok(())
    })
}

/// Runs a single cell with the settings of `cfg`. The sweep axes of `cfg`
/// are ignored; `scenario` is a [`SkyrelayScenario`] code.
///
/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn skyrelay_run_cell(
    cfg: *const SkyrelayConfig,
    scenario: u32,
    n_vehicles: u32,
    fps: u32,
    seed: u64,
    out: *mut SkyrelayRecord,
) -> SkyrelayStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("config"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let spec = cfg.inner.cell_spec(scenario_arg(scenario)?, n_vehicles, fps, seed)?;
        let outcome = run_cell(&spec)?;
        *out = SkyrelayRecord::from(&outcome.record);
        Ok(())
    })
}

/// Runs every cell of `cfg`. Records are ordered by scenario, N, FPS, seed.
///
/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn skyrelay_sweep_run(cfg: *const SkyrelayConfig, out: *mut *mut SkyrelaySweep) -> SkyrelayStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("config"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let mut run = cfg.inner.clone();
        // The caller decides where (and whether) to write.
        run.output = None;
        let inner = run_sweep(&run)?;
        let config_hash = CString::new(inner.provenance.config_hash.clone()).expect("hex has no NUL");
        *out = Box::into_raw(Box::new(SkyrelaySweep { inner, config_hash }));
        Ok(())
    })
}

/// Number of records; 0 for NULL.
///
/// # Safety
/// `sweep` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn skyrelay_sweep_len(sweep: *const SkyrelaySweep) -> usize {
    sweep.as_ref().map_or(0, |s| s.inner.records.len())
}

/// # Safety
/// `sweep` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn skyrelay_sweep_get(
    sweep: *const SkyrelaySweep,
    index: usize,
    out: *mut SkyrelayRecord,
) -> SkyrelayStatus {
    guard(|| {
        let sweep = sweep.as_ref().ok_or_else(|| null("sweep"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let r = sweep.inner.records.get(index).ok_or_else(|| {
            Failure(
                SkyrelayStatus::OutOfRange,
                format!("index {index} out of range for {} records", sweep.inner.records.len()),
            )
        })?;
        *out = SkyrelayRecord::from(r);
        Ok(())
    })
}

/// Hex SHA-256 of the configuration that produced the sweep. Owned by the
/// sweep; valid until it is freed.
///
/// # Safety
/// `sweep` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn skyrelay_sweep_config_hash(sweep: *const SkyrelaySweep) -> *const c_char {
    sweep.as_ref().map_or(ptr::null(), |s| s.config_hash.as_ptr())
}

/// Writes the CSV (all columns) to `path` and provenance next to it.
///
/// # Safety
/// `sweep` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn skyrelay_sweep_write_csv(sweep: *const SkyrelaySweep, path: *const c_char) -> SkyrelayStatus {
    guard(|| {
        let sweep = sweep.as_ref().ok_or_else(|| null("sweep"))?;
        let path = PathBuf::from(str_arg(path, "path")?);
        sweep.inner.write_files(&path, None)?;
        Ok(())
    })
}

/// # Safety
/// `sweep` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn skyrelay_sweep_free(sweep: *mut SkyrelaySweep) {
    if !sweep.is_null() {
        drop(Box::from_raw(sweep));
    }
}
