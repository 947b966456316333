use super::{DatasetError, GraspRecord, Provenance};
use crate::geom::{Pose2, Vec2};
use crate::sim::contact::{capsule_polygon_contact, PolygonView};
use crate::sim::{GraspWorld, JointVector, ObjectId, ARM_JOINTS, HAND_JOINTS, NUM_FINGERS};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedConfig {
    /// Clearance between the palm surface and the top of the object.
    pub palm_gap: f64,
    pub perturb_xy: f64,
    pub perturb_theta: f64,
    pub close_step: f64,
    pub squeeze: f64,
    pub max_attempts: usize,
    pub deficit_range: [f64; 2],
    pub lateral_range: [f64; 2],
}

impl Default for SeedConfig {
    fn default() -> Self {
        Self {
            palm_gap: 0.004,
            perturb_xy: 0.01,
            perturb_theta: 0.25,
            close_step: 0.01,
            squeeze: 0.05,
            max_attempts: 50,
            deficit_range: [0.1, 0.4],
            lateral_range: [0.05, 0.15],
        }
    }
}

impl SeedConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: String| Err(DatasetError::InvalidInput(m));
        if !(self.close_step > 0.0) {
            return bad(format!("close_step {} must be positive", self.close_step));
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be >= 1".into());
        }
        for (name, [lo, hi]) in [("deficit_range", self.deficit_range), ("lateral_range", self.lateral_range)] {
            if !(lo >= 0.0 && lo <= hi) {
                return bad(format!("{name} [{lo}, {hi}] invalid"));
            }
        }
        if self.palm_gap < 0.0 || self.perturb_xy < 0.0 || self.perturb_theta < 0.0 || self.squeeze < 0.0 {
            return bad("gap, perturbations and squeeze must be >= 0".into());
        }
        Ok(())
    }
}

fn nominal_theta(id: ObjectId) -> f64 {
    match id {
        ObjectId::Banana | ObjectId::Camera => FRAC_PI_2,
        ObjectId::Bottle => 0.0,
    }
}

/// Object pose in the hand-base frame with its top `gap` below the palm surface.
pub fn nominal_rel_pose(world: &GraspWorld, dx: f64, dtheta: f64, gap: f64) -> Pose2 {
    let theta = nominal_theta(world.shape.id) + dtheta;
    let top = world
        .shape
        .vertices
        .iter()
        .map(|v| v.rotated(theta).y)
        .fold(f64::NEG_INFINITY, f64::max);
    Pose2::new(dx, -(world.hand.phalanx_radius + gap + top), theta)
}

fn finger_touches(world: &GraspWorld, joints: &JointVector, verts: &[Vec2], centroid: Vec2, finger: usize, link: Option<usize>) -> bool {
    let caps = world.hand.capsules(joints);
    let view = PolygonView {
        vertices: verts,
        orientation: 1.0,
        centroid,
        bound_radius: world.shape.circumradius(),
    };
    (0..2)
        .filter(|l| link.is_none_or(|k| k == *l))
        .any(|l| capsule_polygon_contact(&caps[1 + 2 * finger + l], &view).is_some())
}

/// Closes each finger against the fixed object: both joints in `close_step`
/// increments until the finger touches, the distal joint alone until the
/// fingertip link touches, then `squeeze` more on both. `None` if a finger
/// reaches its limits without touching.
fn close_fingers(world: &GraspWorld, arm: [f64; ARM_JOINTS], open: [f64; HAND_JOINTS], rel: &Pose2, cfg: &SeedConfig) -> Option<[f64; HAND_JOINTS]> {
    let base = world.hand.hand_base(&arm);
    let pose = base.compose(rel);
    let verts = world.shape.world_vertices(&pose);
    let centroid = pose.translation();
    let limits = &world.hand.joint_limits[ARM_JOINTS..];
    let mut q = open;
    for f in 0..NUM_FINGERS {
        let (p, d) = (2 * f, 2 * f + 1);
        let touching = |q: &[f64; HAND_JOINTS], link: Option<usize>| {
            finger_touches(world, &JointVector::new(arm, *q), &verts, centroid, f, link)
        };
        while !touching(&q, None) {
            if q[p] >= limits[p][1] && q[d] >= limits[d][1] {
                return None;
            }
            q[p] = (q[p] + cfg.close_step).min(limits[p][1]);
            q[d] = (q[d] + cfg.close_step).min(limits[d][1]);
        }
        while !touching(&q, Some(1)) && q[d] < limits[d][1] {
            q[d] = (q[d] + cfg.close_step).min(limits[d][1]);
        }
        q[p] = (q[p] + cfg.squeeze).min(limits[p][1]);
        q[d] = (q[d] + cfg.squeeze).min(limits[d][1]);
    }
    Some(q)
}

/// Synthetic seed grasps for one object. Exactly `round(flaw_fraction · n)`
/// records are corrupted, either by opening every joint by a random deficit
/// or by shifting the object sideways, and tagged as flawed.
pub fn generate_seed_grasps<R: Rng + ?Sized>(
    world: &GraspWorld,
    open_hand: [f64; HAND_JOINTS],
    n: usize,
    flaw_fraction: f64,
    cfg: &SeedConfig,
    rng: &mut R,
) -> Result<Vec<GraspRecord>, DatasetError> {
    if n == 0 {
        return Err(DatasetError::InvalidInput("n must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&flaw_fraction) {
        return Err(DatasetError::InvalidInput(format!("flaw_fraction {flaw_fraction} outside [0, 1]")));
    }
    cfg.validate()?;
    let id = world.shape.id;
    let arm = [0.0; ARM_JOINTS];
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let mut found = None;
        for _ in 0..cfg.max_attempts {
            let dx = rng.random_range(-cfg.perturb_xy..=cfg.perturb_xy);
            let dy = rng.random_range(-cfg.perturb_xy..=cfg.perturb_xy);
            let dth = rng.random_range(-cfg.perturb_theta..=cfg.perturb_theta);
            let nominal = nominal_rel_pose(world, dx, dth, cfg.palm_gap);
            // Only push the object further from the palm, never into it.
            let rel = Pose2::new(nominal.x, nominal.y - dy.abs(), nominal.theta);
            let placed = world.place(arm, open_hand, &rel);
            if placed.collided {
                continue;
            }
            if let Some(q) = close_fingers(world, arm, open_hand, &rel, cfg) {
                found = Some((rel, q));
                break;
            }
        }
        let (rel_pose, targets) = found.ok_or(DatasetError::NoContact { object: id, attempts: cfg.max_attempts })?;
        records.push(GraspRecord {
            record_id: format!("{id}-{i:05}"),
            object_id: id,
            scale: world.shape.scale,
            rel_pose,
            hand_joint_targets: targets,
            provenance: Provenance::default(),
        });
    }

    let n_flawed = (flaw_fraction * n as f64).round() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut flawed = idx[..n_flawed].to_vec();
    flawed.sort_unstable();
    let limits = &world.hand.joint_limits[ARM_JOINTS..];
    for i in flawed {
        let r = &mut records[i];
        if rng.random_bool(0.5) {
            let deficit = rng.random_range(cfg.deficit_range[0]..=cfg.deficit_range[1]);
            for (j, q) in r.hand_joint_targets.iter_mut().enumerate() {
                *q = (*q - deficit).max(limits[j][0]);
            }
        } else {
            let shift = rng.random_range(cfg.lateral_range[0]..=cfg.lateral_range[1]);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            r.rel_pose = Pose2::new(r.rel_pose.x + sign * shift, r.rel_pose.y, r.rel_pose.theta);
        }
        r.provenance.synthetic_flawed = true;
    }
    Ok(records)
}
