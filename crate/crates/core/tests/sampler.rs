mod support;

use graspforge::dataset::*;
use graspforge::geom::Pose2;
use graspforge::sampler::*;
use graspforge::sim::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use support::quantile_oracle;

#[test]
fn quantiles_match_sort_and_interpolate() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let n = rng.random_range(4..60);
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let d = DimStats::from_samples(&v).unwrap();
        for (got, p) in [(d.q1, 0.25), (d.q3, 0.75)] {
            let want = quantile_oracle(&v, p);
            assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "{got} vs {want}");
        }
        assert!(d.q1 <= d.q3);
        assert_eq!(d.iqr, d.q3 - d.q1);
    }
}

fn stats_from(cols: &[Vec<f64>; 8]) -> PoseStats {
    let d = |c: &Vec<f64>| DimStats::from_samples(c).unwrap();
    PoseStats {
        object_id: ObjectId::Banana,
        count: cols[0].len(),
        x: d(&cols[0]),
        y: d(&cols[1]),
        theta: d(&cols[2]),
        dist_palm_center: d(&cols[3]),
        dist_finger_center: d(&cols[4]),
        min_dist_palm: d(&cols[5]),
        min_dist_finger: d(&cols[6]),
        edge_angle: Some(d(&cols[7])),
    }
}

proptest! {
    #[test]
    fn bounds_scale_with_the_samples(
        seed in any::<u64>(),
        n in 4usize..30,
        k in -4i32..=4,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cols: [Vec<f64>; 8] = std::array::from_fn(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
        // Powers of two scale every intermediate exactly.
        let s = 2f64.powi(k);
        let scaled: [Vec<f64>; 8] = std::array::from_fn(|i| cols[i].iter().map(|v| v * s).collect());
        let (b, bs) = (sampling_bounds(&stats_from(&cols)), sampling_bounds(&stats_from(&scaled)));
        for (u, v) in [(b.x, bs.x), (b.y, bs.y), (b.theta, bs.theta)] {
            prop_assert_eq!([u[0] * s, u[1] * s], v);
        }
        prop_assert_eq!(b.d_max_palm * s, bs.d_max_palm);
        prop_assert_eq!(b.d_max_finger * s, bs.d_max_finger);
        prop_assert_eq!(b.d_min_palm * s, bs.d_min_palm);
        prop_assert_eq!(b.d_min_finger * s, bs.d_min_finger);
        prop_assert!(b.x[0] <= b.x[1] && b.d_min_palm >= 0.0);
    }
}

#[test]
fn negative_minimum_distance_whisker_is_floored() {
    let mut cols: [Vec<f64>; 8] = std::array::from_fn(|_| vec![1.0, 2.0, 3.0, 4.0, 5.0]);
    cols[5] = vec![0.0, 0.1, 0.2, 5.0, 6.0];
    let b = sampling_bounds(&stats_from(&cols));
    assert!(stats_from(&cols).min_dist_palm.lower < 0.0);
    assert_eq!(b.d_min_palm, 0.0);
}

fn env() -> GraspEnv {
    let shapes: Vec<ObjectShape> = ObjectId::ALL.iter().map(|i| ObjectShape::builtin(*i)).collect();
    GraspEnv::new(
        &HandModel::default(),
        &SimParams::default(),
        &GraspProtocol::default(),
        &RobotPoseSpec::default(),
        &shapes,
    )
    .unwrap()
}

fn object_bounds(env: &GraspEnv, id: ObjectId) -> SamplingBounds {
    let world = env.world(id).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let recs = generate_seed_grasps(world, env.protocol.open_hand, 40, 0.0, &SeedConfig::default(), &mut rng).unwrap();
    sampling_bounds(&collect_pose_stats(world, env.protocol.open_hand, &recs).unwrap())
}

#[test]
fn accepted_poses_pass_every_gate_on_recheck() {
    let env = env();
    let open = env.protocol.open_hand;
    for id in [ObjectId::Banana, ObjectId::Bottle] {
        let world = env.world(id).unwrap();
        let b = object_bounds(&env, id);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let p = sample_valid_pose(&b, world, open, &mut rng, 10_000).unwrap();
            for (v, [lo, hi]) in [(p.x, b.x), (p.y, b.y), (p.theta, b.theta)] {
                assert!(v >= lo && v <= hi);
            }
            let m = pose_metrics(world, open, &p);
            assert!(m.dist_palm_center <= b.d_max_palm && m.dist_finger_center <= b.d_max_finger);
            assert!(m.min_dist_palm >= b.d_min_palm && m.min_dist_finger >= b.d_min_finger);
            if let (Some(a), Some(lo), Some(hi)) = (m.edge_angles, b.theta_min, b.theta_max) {
                assert!(a.iter().all(|v| *v >= lo && *v <= hi));
            }
            let joints = JointVector::new([0.0; 3], open);
            let base = world.hand.hand_base(&joints.arm());
            assert!(!world.collides(&joints, &place_object_relative(&base, &p)));
        }
    }
}

#[test]
fn infeasible_distance_gate_reports_its_rejections() {
    let env = env();
    let world = env.world(ObjectId::Bottle).unwrap();
    let mut b = object_bounds(&env, ObjectId::Bottle);
    b.d_max_palm = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    match sample_valid_pose(&b, world, env.protocol.open_hand, &mut rng, 200) {
        Err(SamplerError::Exhausted { tries, rejections }) => {
            assert_eq!(tries, 200);
            assert_eq!(rejections.distance_max, 200);
        }
        other => panic!("expected exhaustion, got {other:?}"),
    }
    assert!(sample_valid_pose(&b, world, env.protocol.open_hand, &mut rng, 0).is_err());
}

#[test]
fn vacuous_gates_accept_the_first_draw() {
    let env = env();
    let world = env.world(ObjectId::Bottle).unwrap();
    let mut b = object_bounds(&env, ObjectId::Bottle);
    b.d_max_palm = f64::INFINITY;
    b.d_max_finger = f64::INFINITY;
    b.d_min_palm = 0.0;
    b.d_min_finger = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut replay = rng.clone();
    let p = sample_valid_pose(&b, world, env.protocol.open_hand, &mut rng, 1).unwrap();
    let first = |ab: [f64; 2], r: &mut ChaCha8Rng| ab[0] + (ab[1] - ab[0]) * r.random::<f64>();
    assert_eq!(p.x, first(b.x, &mut replay));
    assert_eq!(p.y, first(b.y, &mut replay));
    assert_eq!(p.theta, first(b.theta, &mut replay));

    // Degenerate intervals return their single value.
    b.x = [p.x; 2];
    b.y = [p.y; 2];
    b.theta = [p.theta; 2];
    assert_eq!(sample_valid_pose(&b, world, env.protocol.open_hand, &mut rng, 1).unwrap(), p);
}

fn open_kinematics(world: &GraspWorld, open: [f64; HAND_JOINTS]) -> HandKinematics {
    world.hand.forward_kinematics(&JointVector::new([0.0; 3], open))
}

#[test]
fn object_on_palm_centre_has_zero_centre_distance() {
    let env = env();
    let open = env.protocol.open_hand;
    let world = env.world(ObjectId::Camera).unwrap();
    let fk = open_kinematics(world, open);
    let c = fk.hand_base.inverse().transform_point(fk.palm_center);
    let m = pose_metrics(world, open, &Pose2::new(c.x, c.y, 0.3));
    assert!(m.dist_palm_center < 1e-12);
    assert!(m.edge_angles.is_none());
}

#[test]
fn symmetric_bar_across_the_palm_has_equal_edge_angles() {
    let hand = HandModel::default();
    let open = GraspProtocol::default().open_hand;
    let bar = [[-0.5, 0.0], [-0.4, -0.1], [0.4, -0.1], [0.5, 0.0], [0.4, 0.1], [-0.4, 0.1]];
    let shape = ObjectShape::from_outline(ObjectId::Banana, &bar, 0.1, true).unwrap();
    let world = GraspWorld::new(hand, shape, SimParams::default());
    let fk = open_kinematics(&world, open);
    // Centroid on the palm normal, long axis along the palm.
    let centre = fk.palm_center + fk.palm_normal * 0.08;
    let axis = world.shape.principal_axis();
    let tangent = fk.palm_normal.perp();
    let world_theta = tangent.y.atan2(tangent.x) - axis.y.atan2(axis.x);
    let base = fk.hand_base;
    let c = base.inverse().transform_point(centre);
    let rel = Pose2::new(c.x, c.y, world_theta - base.theta);
    let [a1, a2] = pose_metrics(&world, open, &rel).edge_angles.unwrap();
    // Mirror symmetry about the palm normal: both ends sit at the same angle,
    // atan(half length / offset) = atan(0.05 / 0.08).
    assert!((a1 - a2).abs() < 1e-9, "{a1} {a2}");
    assert!((a1 - (0.05f64 / 0.08).atan()).abs() < 1e-9);
    assert!(a1 < PI / 2.0);
}
