use std::ffi::{CStr, CString};
use std::ptr;

use fishform::nn::{serialize, CheckpointMeta, QNetBank};
use fishform_ffi::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn last_error() -> String {
    unsafe { CStr::from_ptr(ff_last_error()) }.to_string_lossy().into_owned()
}

fn checkpoint(dir: &tempfile::TempDir) -> CString {
    let bank = QNetBank::dueling(&mut ChaCha8Rng::seed_from_u64(1));
    let path = dir.path().join("policy.json");
    std::fs::write(&path, serialize(&bank, &CheckpointMeta::default())).unwrap();
    CString::new(path.to_str().unwrap()).unwrap()
}

#[test]
fn env_round_trip() {
    let name = CString::new("equilateral").unwrap();
    let mut env = ptr::null_mut();
    unsafe {
        assert_eq!(ff_env_new(3, 70.0, name.as_ptr(), false, 7, &mut env), FfStatus::Ok);
        assert_eq!(ff_env_n_agents(env), 3);
        let mut obs = [0.0; 3 * FF_OBS_DIM];
        assert_eq!(ff_env_reset(env, obs.as_mut_ptr(), obs.len()), FfStatus::Ok);
        let actions = [7u32, 7, 7];
        let mut info = FfStepInfo::default();
        assert_eq!(
            ff_env_step(env, actions.as_ptr(), 3, obs.as_mut_ptr(), obs.len(), &mut info),
            FfStatus::Ok
        );
        assert!(info.team_reward <= 0.0 && !info.done);
        let mut poses = [0.0; 9];
        assert_eq!(ff_env_poses(env, poses.as_mut_ptr(), 9), FfStatus::Ok);
        assert!(poses.iter().all(|v| v.is_finite()));
        ff_env_free(env);
    }
}

#[test]
fn errors_are_reported() {
    let name = CString::new("decagon").unwrap();
    let mut env = ptr::null_mut();
    unsafe {
        assert_eq!(
            ff_env_new(3, 70.0, name.as_ptr(), false, 7, &mut env),
            FfStatus::InvalidArgument
        );
        assert!(last_error().contains("decagon"));
        assert!(env.is_null());
        assert_eq!(ff_env_reset(ptr::null_mut(), ptr::null_mut(), 0), FfStatus::NullPointer);

        let eq = CString::new("equilateral").unwrap();
        assert_eq!(ff_env_new(3, 70.0, eq.as_ptr(), false, 7, &mut env), FfStatus::Ok);
        let mut small = [0.0; 5];
        assert_eq!(ff_env_reset(env, small.as_mut_ptr(), 5), FfStatus::InvalidArgument);
        let bad = [99u32, 0, 0];
        let mut obs = [0.0; 33];
        assert_eq!(
            ff_env_step(env, bad.as_ptr(), 3, obs.as_mut_ptr(), 33, ptr::null_mut()),
            FfStatus::InvalidArgument
        );
        ff_env_free(env);
        ff_env_free(ptr::null_mut());
    }
}

#[test]
fn policy_acts_and_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    let path = checkpoint(&dir);
    let mut policy = ptr::null_mut();
    unsafe {
        assert_eq!(ff_policy_load(path.as_ptr(), &mut policy), FfStatus::Ok);
        let obs = [0.1; 10 * FF_OBS_DIM];
        let mut actions = [0u32; 10];
        assert_eq!(ff_policy_act(policy, obs.as_ptr(), 10, actions.as_mut_ptr()), FfStatus::Ok);
        assert!(actions.iter().all(|&a| (a as usize) < FF_NUM_ACTIONS));
        let name = CString::new("decagon").unwrap();
        let mut errs = FfErrors::default();
        assert_eq!(
            ff_evaluate(policy, 10, 80.0, name.as_ptr(), 1, 40, 10, false, 3, &mut errs),
            FfStatus::Ok
        );
        assert!((errs.err_t_rmse.powi(2) - errs.err_t_mse).abs() < 1e-9 * errs.err_t_mse.max(1.0));
        ff_policy_free(policy);
    }
}

#[test]
fn bad_checkpoints_are_distinguished() {
    let dir = tempfile::tempdir().unwrap();
    let garbage = dir.path().join("bad.json");
    std::fs::write(&garbage, b"{\"format\": \"fishform-qnet\"").unwrap();
    let garbage = CString::new(garbage.to_str().unwrap()).unwrap();
    let missing = CString::new(dir.path().join("none.json").to_str().unwrap()).unwrap();
    let mut policy = ptr::null_mut();
    unsafe {
        assert_eq!(ff_policy_load(garbage.as_ptr(), &mut policy), FfStatus::IncompatibleCheckpoint);
        assert_eq!(ff_policy_load(missing.as_ptr(), &mut policy), FfStatus::Io);
        assert!(last_error().contains("none.json"));
        assert!(policy.is_null());
    }
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(ff_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
