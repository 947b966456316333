//! C interface to a finished graspforge run directory.
//!
//! Handles are opaque and owned by the caller; every `*_new`/`*_open`/`*_load`
//! has a matching `*_free`. Fallible calls return a `GfStatus` and leave a
//! message for `gf_last_error_message` on the calling thread.

use graspforge::diffusion::{success_rate, validation_setups, DiffusionPolicy};
use graspforge::pipeline::{load_sampling_bounds, PipelineConfig};
use graspforge::sampler::{sample_valid_pose, SamplingBounds};
use graspforge::seeding::derived_rng;
use graspforge::sim::{GraspEnv, ObjectId, HAND_JOINTS};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// A file the call needs is missing or unreadable.
    NotFound = 3,
    /// Simulation, sampling or inference failed.
    Failed = 4,
    /// A Rust panic was caught at the boundary.
    Panic = 5,
}

/// A run directory with its stored config and simulation environment.
pub struct GfRun {
    dir: PathBuf,
    cfg: PipelineConfig,
    env: GraspEnv,
}

/// A trained diffusion policy for one object.
pub struct GfPolicy {
    object: ObjectId,
    policy: DiffusionPolicy,
}

/// Rejection sampler of validation object poses for one object.
pub struct GfSampler {
    object: ObjectId,
    bounds: SamplingBounds,
    env: GraspEnv,
    max_tries: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(GfStatus, String);

fn fail(status: GfStatus, msg: impl ToString) -> Failure {
    Failure(status, msg.to_string())
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

/// Runs `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            GfStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("panic: {msg}"));
            GfStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(GfStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(GfStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| fail(GfStatus::NullPointer, format!("{name} is null")))
}

fn object_of(run: &GfRun, name: &str) -> Result<ObjectId, Failure> {
    let id: ObjectId = name.parse().map_err(|e| fail(GfStatus::InvalidArgument, e))?;
    if !run.cfg.objects.contains(&id) {
        return Err(fail(GfStatus::InvalidArgument, format!("{id} is not part of this run")));
    }
    Ok(id)
}

unsafe fn put<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

/// Message of the last failed call on this thread, or "" after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn gf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Opens a run directory created by the `graspforge` CLI.
///
/// # Safety
/// `run_dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gf_run_open(run_dir: *const c_char, out: *mut *mut GfRun) -> GfStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(GfStatus::NullPointer, "out is null"));
        }
        *out = ptr::null_mut();
        let dir = PathBuf::from(str_arg(run_dir, "run_dir")?);
        let cfg_path = dir.join("config.json");
        if !cfg_path.exists() {
            return Err(fail(GfStatus::NotFound, format!("{} does not exist", cfg_path.display())));
        }
        let cfg = PipelineConfig::load(&cfg_path).map_err(|e| fail(GfStatus::InvalidArgument, e))?;
        let (_, env) = cfg.environments().map_err(|e| fail(GfStatus::InvalidArgument, e))?;
        put(out, GfRun { dir, cfg, env });
        Ok(())
    })
}

/// # Safety
/// `run` must come from `gf_run_open` and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn gf_run_free(run: *mut GfRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Loads the trained policy for `object` ("banana", "bottle" or "camera").
///
/// # Safety
/// `run` must be a live handle, `object` a NUL-terminated string, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn gf_policy_load(run: *const GfRun, object: *const c_char, out: *mut *mut GfPolicy) -> GfStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(GfStatus::NullPointer, "out is null"));
        }
        *out = ptr::null_mut();
        let run = ref_arg(run, "run")?;
        let object = object_of(run, str_arg(object, "object")?)?;
        let dir = run.dir.join("policies");
        if !dir.join(format!("{object}.json")).exists() {
            return Err(fail(GfStatus::NotFound, format!("no trained policy for {object} in {}", dir.display())));
        }
        let policy = DiffusionPolicy::load(&dir, object.as_str()).map_err(|e| fail(GfStatus::NotFound, e))?;
        put(out, GfPolicy { object, policy });
        Ok(())
    })
}

/// # Safety
/// `policy` must come from `gf_policy_load` and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn gf_policy_free(policy: *mut GfPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Length of the observation history `gf_policy_sample` expects, or 0 for null.
///
/// # Safety
/// `policy` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gf_policy_history_len(policy: *const GfPolicy) -> usize {
    policy.as_ref().map_or(0, |p| p.policy.cond_dim())
}

/// Number of doubles in one sampled action block (prediction steps * hand joints), or 0 for null.
///
/// # Safety
/// `policy` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gf_policy_block_len(policy: *const GfPolicy) -> usize {
    policy.as_ref().map_or(0, |p| p.policy.pred_horizon * HAND_JOINTS)
}

/// Samples one action block for a stacked observation history. The result
/// depends only on the inputs and `seed`.
///
/// # Safety
/// `history` must hold `history_len` doubles and `out` `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn gf_policy_sample(
    policy: *const GfPolicy,
    history: *const f64,
    history_len: usize,
    seed: u64,
    out: *mut f64,
    out_len: usize,
) -> GfStatus {
    guard(|| {
        let p = ref_arg(policy, "policy")?;
        if history.is_null() || out.is_null() {
            return Err(fail(GfStatus::NullPointer, "history and out must not be null"));
        }
        let want = p.policy.cond_dim();
        if history_len != want {
            return Err(fail(GfStatus::InvalidArgument, format!("history_len is {history_len}, expected {want}")));
        }
        let block = p.policy.pred_horizon * HAND_JOINTS;
        if out_len < block {
            return Err(fail(GfStatus::InvalidArgument, format!("out_len is {out_len}, need {block}")));
        }
        let h = std::slice::from_raw_parts(history, history_len);
        let mut rngs = [derived_rng(seed, &[])];
        let actions = p.policy.sample_actions(&[h], &mut rngs).map_err(|e| fail(GfStatus::Failed, e))?;
        let dst = std::slice::from_raw_parts_mut(out, block);
        for (d, v) in dst.iter_mut().zip(actions[0].iter().flatten()) {
            *d = *v;
        }
        Ok(())
    })
}

/// Closed-loop success rate of `policy` over `episodes` freshly sampled
/// validation setups, using the run's rollout settings.
///
/// # Safety
/// `run` and `policy` must be live handles and `out_success_rate` valid.
#[no_mangle]
pub unsafe extern "C" fn gf_policy_evaluate(
    run: *const GfRun,
    policy: *const GfPolicy,
    episodes: usize,
    seed: u64,
    out_success_rate: *mut f64,
) -> GfStatus {
    guard(|| {
        let run = ref_arg(run, "run")?;
        let p = ref_arg(policy, "policy")?;
        if out_success_rate.is_null() {
            return Err(fail(GfStatus::NullPointer, "out_success_rate is null"));
        }
        if episodes == 0 {
            return Err(fail(GfStatus::InvalidArgument, "episodes must be positive"));
        }
        let bounds = load_sampling_bounds(&run.dir, p.object).map_err(|e| fail(GfStatus::NotFound, e))?;
        let d = &run.cfg.diffusion;
        let setups =
            validation_setups(&run.env, p.object, &bounds, episodes, d.randomize_robot_pose, run.cfg.eval.max_tries, seed)
                .map_err(|e| fail(GfStatus::Failed, e))?;
        let rate = success_rate(&run.env, &p.policy, &setups, d.rollout_step_cap, run.cfg.record.clamp)
            .map_err(|e| fail(GfStatus::Failed, e))?;
        *out_success_rate = rate;
        Ok(())
    })
}

/// Creates a pose sampler from the run's pose statistics.
///
/// # Safety
/// `run` must be a live handle, `object` a NUL-terminated string, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn gf_sampler_new(run: *const GfRun, object: *const c_char, out: *mut *mut GfSampler) -> GfStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(GfStatus::NullPointer, "out is null"));
        }
        *out = ptr::null_mut();
        let run = ref_arg(run, "run")?;
        let object = object_of(run, str_arg(object, "object")?)?;
        let bounds = load_sampling_bounds(&run.dir, object).map_err(|e| fail(GfStatus::NotFound, e))?;
        put(out, GfSampler { object, bounds, env: run.env.clone(), max_tries: run.cfg.eval.max_tries });
        Ok(())
    })
}

/// # Safety
/// `sampler` must come from `gf_sampler_new` and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn gf_sampler_free(sampler: *mut GfSampler) {
    if !sampler.is_null() {
        drop(Box::from_raw(sampler));
    }
}

/// Draws one collision-free object pose in the hand-base frame as
/// `[x, y, theta]` (metres, radians).
///
/// # Safety
/// `sampler` must be a live handle and `out_pose` point to 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn gf_sampler_sample(sampler: *const GfSampler, seed: u64, out_pose: *mut f64) -> GfStatus {
    guard(|| {
        let s = ref_arg(sampler, "sampler")?;
        if out_pose.is_null() {
            return Err(fail(GfStatus::NullPointer, "out_pose is null"));
        }
        let world = s.env.world(s.object).map_err(|e| fail(GfStatus::Failed, e))?;
        let mut rng = derived_rng(seed, &[]);
        let pose = sample_valid_pose(&s.bounds, world, s.env.protocol.open_hand, &mut rng, s.max_tries)
            .map_err(|e| fail(GfStatus::Failed, e))?;
        let dst = std::slice::from_raw_parts_mut(out_pose, 3);
        dst.copy_from_slice(&[pose.x, pose.y, pose.theta]);
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_arguments_are_reported() {
        let mut run = ptr::null_mut();
        let st = unsafe { gf_run_open(ptr::null(), &mut run) };
        assert_eq!(st, GfStatus::NullPointer);
        let msg = unsafe { CStr::from_ptr(gf_last_error_message()) };
        assert_eq!(msg.to_str().unwrap(), "run_dir is null");
        assert!(run.is_null());
    }

    #[test]
    fn missing_run_directory() {
        let dir = CString::new("/nonexistent/graspforge-run").unwrap();
        let mut run = ptr::null_mut();
        assert_eq!(unsafe { gf_run_open(dir.as_ptr(), &mut run) }, GfStatus::NotFound);
        assert!(run.is_null());
    }

    #[test]
    fn version_matches_crate() {
        let v = unsafe { CStr::from_ptr(gf_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}
