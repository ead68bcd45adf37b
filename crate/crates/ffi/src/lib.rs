//! C ABI over the simulator, trained policies and the evaluation harness.
//!
//! Objects cross the boundary as opaque handles created by `*_new` /
//! `*_load` and released by the matching `*_free`. Every fallible call
//! returns an [`FfStatus`]; on failure a message is available from
//! [`ff_last_error`] on the same thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use fishform::dynamics::{NoiseModel, NUM_ACTIONS};
use fishform::env::{EnvConfig, FormationDistribution, FormationEnv, Observation, OBS_DIM};
use fishform::eval::{self, EvalSettings, ScenarioScript};
use fishform::marl::greedy_joint_action;
use fishform::nn::QNetBank;

/// Length of one observation vector.
pub const FF_OBS_DIM: usize = 11;
/// Number of discrete actions.
pub const FF_NUM_ACTIONS: usize = 15;

const _: () = assert!(FF_OBS_DIM == OBS_DIM && FF_NUM_ACTIONS == NUM_ACTIONS);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    IncompatibleCheckpoint = 4,
    EpisodeFinished = 5,
    Runtime = 6,
    Panic = 7,
}

/// Simulation environment handle.
pub struct FfEnv {
    env: FormationEnv,
}

/// Trained policy handle.
pub struct FfPolicy {
    bank: QNetBank,
}

/// Result of one environment step.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct FfStepInfo {
    pub team_reward: f64,
    pub done: bool,
}

/// Evaluation metrics (cm² for `*_mse`, cm for `*_rmse`).
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct FfErrors {
    pub err_t_mse: f64,
    pub err_t_rmse: f64,
    pub err_f_mse: f64,
    pub err_f_rmse: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nuls removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Fail(FfStatus, String);

type FfResult = Result<(), Fail>;

fn fail<T>(status: FfStatus, msg: impl Into<String>) -> Result<T, Fail> {
    Err(Fail(status, msg.into()))
}

/// Run `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> FfResult) -> FfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FfStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            FfStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Fail> {
    if p.is_null() {
        fail(FfStatus::NullPointer, format!("{name} is null"))
    } else {
        Ok(())
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    non_null(p, name)?;
    // SAFETY: the caller passes a nul-terminated string.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .or_else(|_| fail(FfStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

fn write_observations(obs: &[Observation], out: *mut f64, len: usize) -> FfResult {
    non_null(out, "observation buffer")?;
    let need = obs.len() * OBS_DIM;
    if len < need {
        return fail(FfStatus::InvalidArgument, format!("observation buffer holds {len} values, need {need}"));
    }
    // SAFETY: `out` is non-null and the caller guarantees `len` writable values.
    let dst = unsafe { std::slice::from_raw_parts_mut(out, need) };
    for (chunk, o) in dst.chunks_exact_mut(OBS_DIM).zip(obs) {
        chunk.copy_from_slice(&o.0);
    }
    Ok(())
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ff_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Create an environment of `n_agents` robots on a circle of `radius` cm
/// with the named formation (see the CLI's `--formation`).
///
/// # Safety
/// `formation` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ff_env_new(
    n_agents: usize,
    radius: f64,
    formation: *const c_char,
    noise: bool,
    seed: u64,
    out: *mut *mut FfEnv,
) -> FfStatus {
    guard(|| {
        non_null(out, "out")?;
        // SAFETY: forwarded caller contract.
        let name = unsafe { str_arg(formation, "formation") }?;
        let arcs = eval::named_formation(name, n_agents).or_else(|e| fail(FfStatus::InvalidArgument, e.to_string()))?;
        let config = EnvConfig {
            n_agents,
            radius_min: radius,
            radius_max: radius,
            formation: FormationDistribution::Fixed { arc_angles: arcs },
            noise: if noise { NoiseModel::default() } else { NoiseModel::disabled() },
            ..EnvConfig::default()
        };
        let env = FormationEnv::new(config, seed).or_else(|e| fail(FfStatus::InvalidArgument, e.to_string()))?;
        // SAFETY: `out` checked non-null above.
        unsafe { *out = Box::into_raw(Box::new(FfEnv { env })) };
        Ok(())
    })
}

/// Release an environment. Null is ignored.
///
/// # Safety
/// `env` must come from [`ff_env_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ff_env_free(env: *mut FfEnv) {
    if !env.is_null() {
        // SAFETY: ownership returns from the caller.
        drop(unsafe { Box::from_raw(env) });
    }
}

/// Number of agents, or 0 for a null handle.
///
/// # Safety
/// `env` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ff_env_n_agents(env: *const FfEnv) -> usize {
    // SAFETY: caller contract.
    unsafe { env.as_ref() }.map_or(0, |e| e.env.config().n_agents)
}

/// Start a new episode and write the initial observations
/// (`n_agents × FF_OBS_DIM` values, physical units) to `obs_out`.
///
/// # Safety
/// `env` must be a live handle and `obs_out` must hold `obs_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ff_env_reset(env: *mut FfEnv, obs_out: *mut f64, obs_len: usize) -> FfStatus {
    guard(|| {
        // SAFETY: caller contract.
        let Some(e) = (unsafe { env.as_mut() }) else {
            return fail(FfStatus::NullPointer, "env is null");
        };
        let obs = e.env.reset().or_else(|err| fail(FfStatus::Runtime, err.to_string()))?;
        write_observations(&obs, obs_out, obs_len)
    })
}

/// Apply one joint action (`n_agents` action ids) and write the next
/// observations and step information.
///
/// # Safety
/// `env` must be live, `actions` must hold `n_actions` values, `obs_out`
/// `obs_len` doubles, and `info` must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn ff_env_step(
    env: *mut FfEnv,
    actions: *const u32,
    n_actions: usize,
    obs_out: *mut f64,
    obs_len: usize,
    info: *mut FfStepInfo,
) -> FfStatus {
    guard(|| {
        // SAFETY: caller contract.
        let Some(e) = (unsafe { env.as_mut() }) else {
            return fail(FfStatus::NullPointer, "env is null");
        };
        non_null(actions, "actions")?;
        // SAFETY: caller contract.
        let ids: Vec<usize> = unsafe { std::slice::from_raw_parts(actions, n_actions) }
            .iter()
            .map(|&a| a as usize)
            .collect();
        let result = e.env.step(&ids).or_else(|err| {
            let status = match err {
                fishform::env::EnvError::EpisodeFinished => FfStatus::EpisodeFinished,
                _ => FfStatus::InvalidArgument,
            };
            fail(status, err.to_string())
        })?;
        write_observations(&result.next_observations, obs_out, obs_len)?;
        // SAFETY: caller contract.
        if let Some(info) = unsafe { info.as_mut() } {
            *info = FfStepInfo {
                team_reward: result.team_reward,
                done: result.done,
            };
        }
        Ok(())
    })
}

/// Write the true pose of every agent as `(x, y, heading)` triples.
///
/// # Safety
/// `env` must be live and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ff_env_poses(env: *const FfEnv, out: *mut f64, len: usize) -> FfStatus {
    guard(|| {
        // SAFETY: caller contract.
        let Some(e) = (unsafe { env.as_ref() }) else {
            return fail(FfStatus::NullPointer, "env is null");
        };
        non_null(out, "out")?;
        let poses = &e.env.state().poses;
        if len < 3 * poses.len() {
            return fail(FfStatus::InvalidArgument, format!("pose buffer needs {} values", 3 * poses.len()));
        }
        // SAFETY: caller contract.
        let dst = unsafe { std::slice::from_raw_parts_mut(out, 3 * poses.len()) };
        for (chunk, p) in dst.chunks_exact_mut(3).zip(poses) {
            chunk.copy_from_slice(&[p.p.x, p.p.y, p.alpha]);
        }
        Ok(())
    })
}

/// Load a checkpoint file.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ff_policy_load(path: *const c_char, out: *mut *mut FfPolicy) -> FfStatus {
    guard(|| {
        non_null(out, "out")?;
        // SAFETY: forwarded caller contract.
        let path = unsafe { str_arg(path, "path") }?;
        let (bank, _) = eval::load_checkpoint(Path::new(path)).map_err(|e| match e {
            eval::EvalError::IoFailure { .. } => Fail(FfStatus::Io, e.to_string()),
            _ => Fail(FfStatus::IncompatibleCheckpoint, e.to_string()),
        })?;
        // SAFETY: `out` checked non-null above.
        unsafe { *out = Box::into_raw(Box::new(FfPolicy { bank })) };
        Ok(())
    })
}

/// Release a policy. Null is ignored.
///
/// # Safety
/// `policy` must come from [`ff_policy_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ff_policy_free(policy: *mut FfPolicy) {
    if !policy.is_null() {
        // SAFETY: ownership returns from the caller.
        drop(unsafe { Box::from_raw(policy) });
    }
}

/// Greedy actions for `n_agents` observations in physical units (as
/// written by [`ff_env_reset`] / [`ff_env_step`]).
///
/// # Safety
/// `obs` must hold `n_agents × FF_OBS_DIM` doubles and `actions_out`
/// `n_agents` values.
#[no_mangle]
pub unsafe extern "C" fn ff_policy_act(
    policy: *const FfPolicy,
    obs: *const f64,
    n_agents: usize,
    actions_out: *mut u32,
) -> FfStatus {
    guard(|| {
        // SAFETY: caller contract.
        let Some(p) = (unsafe { policy.as_ref() }) else {
            return fail(FfStatus::NullPointer, "policy is null");
        };
        non_null(obs, "obs")?;
        non_null(actions_out, "actions_out")?;
        // SAFETY: caller contract.
        let raw = unsafe { std::slice::from_raw_parts(obs, n_agents * OBS_DIM) };
        let joint: Vec<[f64; OBS_DIM]> = raw
            .chunks_exact(OBS_DIM)
            .map(|c| Observation(c.try_into().expect("exact chunk")).normalized())
            .collect();
        let actions = greedy_joint_action(&p.bank, &joint).or_else(|e| fail(FfStatus::InvalidArgument, e.to_string()))?;
        // SAFETY: caller contract.
        let dst = unsafe { std::slice::from_raw_parts_mut(actions_out, n_agents) };
        for (d, a) in dst.iter_mut().zip(actions) {
            *d = a as u32;
        }
        Ok(())
    })
}

/// Greedy evaluation of a policy on a named formation.
///
/// # Safety
/// `policy` must be live, `formation` nul-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ff_evaluate(
    policy: *const FfPolicy,
    n_agents: usize,
    radius: f64,
    formation: *const c_char,
    episodes: usize,
    episode_length: usize,
    settle_steps: usize,
    noise: bool,
    seed: u64,
    out: *mut FfErrors,
) -> FfStatus {
    guard(|| {
        // SAFETY: caller contract.
        let Some(p) = (unsafe { policy.as_ref() }) else {
            return fail(FfStatus::NullPointer, "policy is null");
        };
        non_null(out, "out")?;
        // SAFETY: forwarded caller contract.
        let name = unsafe { str_arg(formation, "formation") }?;
        let invalid = |e: eval::EvalError| Fail(FfStatus::InvalidArgument, e.to_string());
        let scenario = ScenarioScript::fixed(eval::named_formation(name, n_agents).map_err(invalid)?);
        let settings = EvalSettings {
            radius,
            episodes,
            episode_length,
            settle_steps,
            noise,
            seed,
            ..EvalSettings::default()
        };
        let run = eval::evaluate(&p.bank, "ffi", &scenario, &settings, false).map_err(invalid)?;
        let r = &run.report;
        // SAFETY: checked non-null above.
        unsafe {
            *out = FfErrors {
                err_t_mse: r.err_t_mse,
                err_t_rmse: r.err_t_rmse,
                err_f_mse: r.err_f_mse,
                err_f_rmse: r.err_f_rmse,
            }
        };
        Ok(())
    })
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn ff_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}
