use super::GraspRecord;
use crate::sim::{GraspEnv, SimError, HAND_JOINTS};
use rayon::prelude::*;

/// Five evenly spaced tilts over ±25°.
pub fn default_tilt_set() -> Vec<f64> {
    [-25.0f64, -12.5, 0.0, 12.5, 25.0].iter().map(|d| d.to_radians()).collect()
}

/// Replays a record in the static robot pose with no residual and returns the reward.
pub fn replay_record(env: &GraspEnv, record: &GraspRecord, tilt: f64) -> Result<f64, SimError> {
    let world = env.world(record.object_id)?;
    let out = world.run_grasp(
        env.static_arm(),
        &record.rel_pose,
        record.hand_joint_targets,
        [0.0; HAND_JOINTS],
        tilt,
        &env.protocol,
    )?;
    Ok(out.reward)
}

/// Keeps, in input order, the records whose replay succeeds at every tilt.
pub fn preselect(env: &GraspEnv, records: &[GraspRecord], tilt_set: &[f64]) -> Result<Vec<GraspRecord>, SimError> {
    if tilt_set.is_empty() {
        return Err(SimError::InvalidParams("tilt set must not be empty".into()));
    }
    let keep: Vec<bool> = records
        .par_iter()
        .map(|r| {
            for &t in tilt_set {
                if replay_record(env, r, t)? != 0.0 {
                    return Ok(false);
                }
            }
            Ok(true)
        })
        .collect::<Result<_, SimError>>()?;
    Ok(records.iter().zip(keep).filter(|(_, k)| *k).map(|(r, _)| r.clone()).collect())
}
