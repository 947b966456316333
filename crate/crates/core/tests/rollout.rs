use graspforge::dataset::*;
use graspforge::diffusion::*;
use graspforge::geom::Pose2;
use graspforge::rl::*;
use graspforge::sim::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Fixture {
    env: GraspEnv,
    records: Vec<GraspRecord>,
    episodes: Vec<Episode>,
}

fn fixture() -> Fixture {
    let shapes: Vec<ObjectShape> = ObjectId::ALL.iter().map(|i| ObjectShape::builtin(*i)).collect();
    let env = GraspEnv::new(
        &HandModel::default(),
        &SimParams::default(),
        &GraspProtocol::default(),
        &RobotPoseSpec::default(),
        &shapes,
    )
    .unwrap();
    let world = env.world(ObjectId::Bottle).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let recs = generate_seed_grasps(world, env.protocol.open_hand, 20, 0.0, &SeedConfig::default(), &mut rng).unwrap();
    let records = preselect(&env, &recs, &default_tilt_set()).unwrap();
    let cfg = RecordConfig { episodes_per_object: 3, ..RecordConfig::default() };
    let episodes = record_enhanced_dataset(&env, &records, &ZeroResidual, &cfg, 12).unwrap().episodes;
    Fixture { env, records, episodes }
}

/// Plays back a fixed action list, `exec` actions per planning cycle.
struct Replay {
    actions: Vec<[f64; HAND_JOINTS]>,
    cursor: usize,
    exec: usize,
}

impl ActionPlanner for Replay {
    fn obs_horizon(&self) -> usize {
        2
    }

    fn plan(&mut self, histories: &[&[f64]], _: &mut [ChaCha8Rng]) -> Result<Vec<Vec<[f64; HAND_JOINTS]>>, DiffusionError> {
        assert_eq!(histories.len(), 1);
        assert_eq!(histories[0].len(), 2 * OBS_WIDTH_DIFFUSION);
        let last = self.actions.len() - 1;
        let block = (self.cursor..self.cursor + 8).map(|i| self.actions[i.min(last)]).collect();
        self.cursor += self.exec;
        Ok(vec![block])
    }
}

fn setup_for(f: &Fixture, e: &Episode, seed: u64) -> RolloutSetup {
    let record = f.records.iter().find(|r| r.record_id == e.record_id).unwrap();
    RolloutSetup {
        object: e.object_id,
        arm: std::array::from_fn(|i| e.robot_pose[i]),
        rel_pose: record.rel_pose,
        seed,
    }
}

#[test]
fn replaying_a_recorded_episode_succeeds() {
    let f = fixture();
    assert!(!f.episodes.is_empty());
    for e in &f.episodes {
        let actions: Vec<[f64; HAND_JOINTS]> = e.steps.iter().map(|s| s.action).collect();
        let mut planner = Replay { actions: actions.clone(), cursor: 0, exec: 4 };
        let params = RolloutParams { exec_horizon: 4, step_cap: actions.len(), clamp: 25e-4 };
        let out = receding_horizon_rollout(&f.env, &[setup_for(&f, e, 1)], &mut planner, &params).unwrap();
        assert!(!out[0].aborted);
        assert_eq!(out[0].executed.len(), actions.len());
        for (x, y) in out[0].executed.iter().zip(&actions) {
            assert!(x.iter().zip(y).all(|(a, b)| (a - b).abs() <= 1e-12));
        }
        assert_eq!(out[0].reward, REWARD_SUCCESS, "episode for {}", e.record_id);
    }
}

#[test]
fn cycles_follow_the_step_cap() {
    let f = fixture();
    let e = &f.episodes[0];
    let actions: Vec<[f64; HAND_JOINTS]> = e.steps.iter().map(|s| s.action).collect();
    for (cap, cycles) in [(12, 3), (13, 4), (4, 1)] {
        let mut planner = Replay { actions: actions.clone(), cursor: 0, exec: 4 };
        let params = RolloutParams { exec_horizon: 4, step_cap: cap, clamp: 25e-4 };
        let out = receding_horizon_rollout(&f.env, &[setup_for(&f, e, 1)], &mut planner, &params).unwrap();
        assert_eq!(out[0].cycles, cycles, "cap {cap}");
        assert_eq!(out[0].executed.len(), cap);
        assert_eq!(out[0].latencies_ms.len(), cycles);
    }
    let bad = RolloutParams { exec_horizon: 0, step_cap: 12, clamp: 25e-4 };
    let mut planner = Replay { actions, cursor: 0, exec: 4 };
    assert!(receding_horizon_rollout(&f.env, &[setup_for(&f, e, 1)], &mut planner, &bad).is_err());
}

#[test]
fn overlapping_placement_aborts() {
    let f = fixture();
    let e = &f.episodes[0];
    let mut s = setup_for(&f, e, 1);
    // Object centred on the palm base overlaps the hand.
    s.rel_pose = Pose2::new(0.0, 0.0, 0.0);
    let mut planner = Replay { actions: vec![[0.0; HAND_JOINTS]], cursor: 0, exec: 4 };
    let params = RolloutParams { exec_horizon: 4, step_cap: 8, clamp: 25e-4 };
    let out = receding_horizon_rollout(&f.env, &[s], &mut planner, &params).unwrap();
    assert!(out[0].aborted);
    assert_eq!(out[0].reward, REWARD_FAILURE);
    assert_eq!(out[0].cycles, 0);
}

#[test]
fn policy_rollouts_are_reproducible_and_clamped() {
    let f = fixture();
    let cfg = DiffusionConfig { diffusion_steps: 5, ..DiffusionConfig::default() };
    let policy = DiffusionPolicy::new(&cfg, &f.episodes, f.env.hand(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let setups: Vec<RolloutSetup> = f.episodes.iter().enumerate().map(|(i, e)| setup_for(&f, e, 40 + i as u64)).collect();
    let params = RolloutParams { exec_horizon: 4, step_cap: 20, clamp: 25e-4 };
    let a = receding_horizon_rollout(&f.env, &setups, &mut &policy, &params).unwrap();
    let b = receding_horizon_rollout(&f.env, &setups, &mut &policy, &params).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.executed, y.executed);
        assert_eq!(x.reward, y.reward);
        assert_eq!(x.cycles, 5);
        let mut prev = f.env.protocol.open_hand;
        for cmd in &x.executed {
            for j in 0..HAND_JOINTS {
                assert!((cmd[j] - prev[j]).abs() <= 25e-4 + 1e-12);
            }
            prev = *cmd;
        }
    }
    // A single setup run alone matches its row in the batch.
    let solo = receding_horizon_rollout(&f.env, &setups[1..2], &mut &policy, &params).unwrap();
    assert_eq!(solo[0].executed, a[1].executed);
}
