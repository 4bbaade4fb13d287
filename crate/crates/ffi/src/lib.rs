//! C ABI over the edgedrive simulator.
//!
//! Every function returns an [`EdStatus`]; on failure a message is kept per
//! thread and can be read with [`ed_last_error`]. Handles are opaque and must
//! be released with their `_free` function. Strings returned through `char**`
//! are owned by the caller and released with [`ed_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use edgedrive::bench::{aggregate_report, run_benchmark, DeploymentMode, PerceptionModels};
use edgedrive::config::RunConfig;
use edgedrive::evaluation::classifier_seed;
use edgedrive::fusion::weighted_fuse;
use edgedrive::perception::train_cell_classifier;
use edgedrive::rl::{BrakingPolicy, DrivingEnv, Policy, RandomPolicy, STATE_FEATURES};
use edgedrive::sim::{Action, WeatherKind};
use edgedrive::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Numerical = 4,
    Io = 5,
    /// A Rust panic was caught at the boundary.
    Internal = 6,
}

/// Built-in driving policy codes for [`ed_benchmark_json`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdPolicy {
    Random = 0,
    Braking = 1,
}

/// Outcome of one simulator tick.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EdStep {
    pub reward: f64,
    pub collided: bool,
    pub lane_departed: bool,
    pub done: bool,
}

/// Ego vehicle pose and speed.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EdVehicle {
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub heading: f64,
}

/// Opaque closed-loop simulator: world, sensors and fusion.
pub struct EdSimulator {
    env: DrivingEnv,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> EdStatus {
    match e {
        Error::Config { .. } | Error::Format(_) => EdStatus::Config,
        Error::Numerical(_) | Error::DegenerateEvidence | Error::UndefinedMetric(_) => {
            EdStatus::Numerical
        }
        Error::Io(_) => EdStatus::Io,
        _ => EdStatus::InvalidArgument,
    }
}

/// Run `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (EdStatus, String)>) -> EdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            EdStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            EdStatus::Internal
        }
    }
}

fn lib_err(e: Error) -> (EdStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(name: &str) -> (EdStatus, String) {
    (EdStatus::NullPointer, format!("{name} is null"))
}

fn weather_from(code: u32) -> Result<WeatherKind, (EdStatus, String)> {
    WeatherKind::ALL.get(code as usize).copied().ok_or_else(|| {
        (
            EdStatus::InvalidArgument,
            format!("weather code {code} out of range 0..4"),
        )
    })
}

/// `NULL` means the embedded defaults.
unsafe fn config_from(json: *const c_char) -> Result<RunConfig, (EdStatus, String)> {
    if json.is_null() {
        return Ok(RunConfig::default());
    }
    let text = CStr::from_ptr(json)
        .to_str()
        .map_err(|_| (EdStatus::InvalidArgument, "config is not UTF-8".to_string()))?;
    RunConfig::from_json(text).map_err(lib_err)
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn ed_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ed_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Number of features written by [`ed_simulator_observation`].
#[no_mangle]
pub extern "C" fn ed_observation_len() -> usize {
    STATE_FEATURES
}

/// Create a simulator from a JSON run configuration (`NULL` for defaults).
/// Weather codes: 0 clear, 1 fog, 2 rain, 3 snow.
///
/// # Safety
/// `config_json` must be `NULL` or a NUL-terminated string; `out` must be
/// valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ed_simulator_new(
    config_json: *const c_char,
    weather: u32,
    seed: u64,
    out: *mut *mut EdSimulator,
) -> EdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let cfg = config_from(config_json)?;
        let w = weather_from(weather)?;
        let env = DrivingEnv::reset(&cfg.env(), w, cfg.agent.reward, seed).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(EdSimulator { env }));
        Ok(())
    })
}

/// Release a simulator. `NULL` is ignored.
///
/// # Safety
/// `sim` must come from [`ed_simulator_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ed_simulator_free(sim: *mut EdSimulator) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Apply an action for one tick. Action codes: 0 steer left, 1 steer
/// right, 2 maintain, 3 accelerate, 4 brake.
///
/// # Safety
/// `sim` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ed_simulator_step(
    sim: *mut EdSimulator,
    action: u32,
    out: *mut EdStep,
) -> EdStatus {
    guard(|| {
        let sim = sim.as_mut().ok_or_else(|| null("sim"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let a = Action::from_index(action as usize).map_err(lib_err)?;
        if sim.env.done() {
            return Err((EdStatus::InvalidArgument, "episode already finished".into()));
        }
        let s = sim.env.step(a).map_err(lib_err)?;
        *out = EdStep {
            reward: s.reward,
            collided: s.outcome.collided,
            lane_departed: s.outcome.lane_departed,
            done: s.outcome.done,
        };
        Ok(())
    })
}

/// Write the agent observation into `out[0..len]`; `len` must equal
/// [`ed_observation_len`].
///
/// # Safety
/// `sim` must be a live handle and `out` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ed_simulator_observation(
    sim: *const EdSimulator,
    out: *mut f64,
    len: usize,
) -> EdStatus {
    guard(|| {
        let sim = sim.as_ref().ok_or_else(|| null("sim"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        if len != STATE_FEATURES {
            return Err((
                EdStatus::InvalidArgument,
                format!("buffer holds {len} values, need {STATE_FEATURES}"),
            ));
        }
        let features = sim.env.observation().features;
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(&features);
        Ok(())
    })
}

/// True ego state.
///
/// # Safety
/// `sim` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ed_simulator_ego(
    sim: *const EdSimulator,
    out: *mut EdVehicle,
) -> EdStatus {
    guard(|| {
        let sim = sim.as_ref().ok_or_else(|| null("sim"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let e = sim.env.world().ego;
        *out = EdVehicle {
            x: e.x,
            y: e.y,
            v: e.v,
            heading: e.heading,
        };
        Ok(())
    })
}

/// Current tick and whether the episode has ended.
///
/// # Safety
/// `sim` must be a live handle; `tick` and `done` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ed_simulator_status(
    sim: *const EdSimulator,
    tick: *mut u32,
    done: *mut bool,
) -> EdStatus {
    guard(|| {
        let sim = sim.as_ref().ok_or_else(|| null("sim"))?;
        let tick = tick.as_mut().ok_or_else(|| null("tick"))?;
        let done = done.as_mut().ok_or_else(|| null("done"))?;
        *tick = sim.env.world().tick;
        *done = sim.env.done();
        Ok(())
    })
}

/// Inverse-variance fusion of `n` scalar estimates.
///
/// # Safety
/// `means` and `variances` must be valid for `n` doubles; `out_mean` and
/// `out_variance` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ed_fuse(
    means: *const f64,
    variances: *const f64,
    n: usize,
    out_mean: *mut f64,
    out_variance: *mut f64,
) -> EdStatus {
    guard(|| {
        if means.is_null() || variances.is_null() {
            return Err(null("input"));
        }
        let out_mean = out_mean.as_mut().ok_or_else(|| null("out_mean"))?;
        let out_variance = out_variance.as_mut().ok_or_else(|| null("out_variance"))?;
        let m = std::slice::from_raw_parts(means, n);
        let v = std::slice::from_raw_parts(variances, n);
        let pairs: Vec<(f64, f64)> = m.iter().copied().zip(v.iter().copied()).collect();
        let (mean, var) = weighted_fuse(&pairs).map_err(lib_err)?;
        *out_mean = mean;
        *out_variance = var;
        Ok(())
    })
}

/// Run the benchmark grid of the configuration's `benchmark` section with a
/// built-in policy (an [`EdPolicy`] code) and return the report as JSON in
/// `*out_json`.
///
/// # Safety
/// `config_json` must be `NULL` or a NUL-terminated string; `out_json`
/// valid for writes. Release the result with [`ed_string_free`].
#[no_mangle]
pub unsafe extern "C" fn ed_benchmark_json(
    config_json: *const c_char,
    policy: u32,
    out_json: *mut *mut c_char,
) -> EdStatus {
    guard(|| {
        if out_json.is_null() {
            return Err(null("out_json"));
        }
        *out_json = ptr::null_mut();
        let cfg = config_from(config_json)?;
        let policy: Box<dyn Policy> = match policy {
            p if p == EdPolicy::Random as u32 => Box::new(RandomPolicy),
            p if p == EdPolicy::Braking as u32 => Box::new(BrakingPolicy::default()),
            p => {
                return Err((
                    EdStatus::InvalidArgument,
                    format!("policy code {p} out of range 0..2"),
                ))
            }
        };
        let classifier =
            train_cell_classifier(&cfg.perception, &cfg.sensors, classifier_seed(cfg.seed))
                .map_err(lib_err)?;
        let models = PerceptionModels::new(classifier);
        let b = &cfg.benchmark;
        let metrics = run_benchmark(
            &cfg.pipeline(),
            Some(&models),
            policy.as_ref(),
            &b.modes,
            &b.weathers,
            b.episodes,
            cfg.seed,
            b.threads,
        )
        .map_err(lib_err)?;
        let cells: Vec<(DeploymentMode, WeatherKind)> = b
            .modes
            .iter()
            .flat_map(|m| b.weathers.iter().map(move |w| (*m, *w)))
            .collect();
        let report = aggregate_report(&metrics, &cells).map_err(lib_err)?;
        let c = CString::new(report.to_json()).map_err(|e| (EdStatus::Internal, e.to_string()))?;
        *out_json = c.into_raw();
        Ok(())
    })
}

/// Release a string returned by this library. `NULL` is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ed_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
