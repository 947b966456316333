//! Object-pose statistics from the curated records and rejection sampling of
//! new, plausible, collision-free validation poses.

use crate::dataset::GraspRecord;
use crate::geom::{polygon_signed_area, segment_polygon_distance, Pose2, Vec2};
use crate::sim::{place_object_relative, GraspWorld, JointVector, ObjectId, HAND_JOINTS, MIDDLE_FINGER};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("need at least 4 samples for quartiles, got {0}")]
    TooFewSamples(usize),
    #[error("non-finite sample")]
    NonFinite,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("no valid pose after {tries} draws; rejections: {rejections}")]
    Exhausted { tries: usize, rejections: RejectionCounts },
}

/// Quantile by linear interpolation between order statistics of a sorted slice.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimStats {
    pub sorted: Vec<f64>,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    /// Lower whisker `Q1 − 1.5·IQR`.
    pub lower: f64,
    /// Upper whisker `Q3 + 1.5·IQR`.
    pub upper: f64,
}

impl DimStats {
    pub fn from_samples(samples: &[f64]) -> Result<Self, SamplerError> {
        if samples.len() < 4 {
            return Err(SamplerError::TooFewSamples(samples.len()));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(SamplerError::NonFinite);
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let q1 = quantile(&sorted, 0.25);
        let q3 = quantile(&sorted, 0.75);
        let iqr = q3 - q1;
        Ok(Self { sorted, q1, q3, iqr, lower: q1 - 1.5 * iqr, upper: q3 + 1.5 * iqr })
    }

    /// Uniform-sampling interval `[(Q1 + L)/2, (Q3 + U)/2]`.
    pub fn interval(&self) -> [f64; 2] {
        [(self.q1 + self.lower) / 2.0, (self.q3 + self.upper) / 2.0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseMetrics {
    pub dist_palm_center: f64,
    /// From the middle phalanx of the middle finger.
    pub dist_finger_center: f64,
    pub min_dist_palm: f64,
    pub min_dist_finger: f64,
    /// Angles between the palm normal and the directions to the two ends of an elongated object.
    pub edge_angles: Option<[f64; 2]>,
}

/// Metrics of the object at `rel_pose` (hand-base frame) against the open hand.
pub fn pose_metrics(world: &GraspWorld, open_hand: [f64; HAND_JOINTS], rel_pose: &Pose2) -> PoseMetrics {
    let joints = JointVector::new([0.0; 3], open_hand);
    let fk = world.hand.forward_kinematics(&joints);
    let pose = place_object_relative(&fk.hand_base, rel_pose);
    let verts = world.shape.world_vertices(&pose);
    let orientation = polygon_signed_area(&verts).signum();
    let centroid = pose.translation();
    let finger_seg = fk.phalanx_segments[MIDDLE_FINGER][0];
    let edge_angles = world.shape.elongated.then(|| {
        let (lo, hi) = world.shape.extremal_vertices();
        let angle = |v: Vec2| {
            let d = (pose.transform_point(v) - fk.palm_center).normalized();
            d.dot(fk.palm_normal).clamp(-1.0, 1.0).acos()
        };
        [angle(lo), angle(hi)]
    });
    PoseMetrics {
        dist_palm_center: (centroid - fk.palm_center).norm(),
        dist_finger_center: (centroid - fk.middle_phalanx_center()).norm(),
        min_dist_palm: segment_polygon_distance(&fk.palm_segment, &verts, orientation),
        min_dist_finger: segment_polygon_distance(&finger_seg, &verts, orientation),
        edge_angles,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseStats {
    pub object_id: ObjectId,
    pub count: usize,
    pub x: DimStats,
    pub y: DimStats,
    pub theta: DimStats,
    pub dist_palm_center: DimStats,
    pub dist_finger_center: DimStats,
    pub min_dist_palm: DimStats,
    pub min_dist_finger: DimStats,
    /// Both edge angles of every record pooled (elongated objects only).
    pub edge_angle: Option<DimStats>,
}

/// Statistics over the records of one object.
pub fn collect_pose_stats(
    world: &GraspWorld,
    open_hand: [f64; HAND_JOINTS],
    records: &[GraspRecord],
) -> Result<PoseStats, SamplerError> {
    let id = world.shape.id;
    let recs: Vec<&GraspRecord> = records.iter().filter(|r| r.object_id == id).collect();
    if recs.len() < 4 {
        return Err(SamplerError::TooFewSamples(recs.len()));
    }
    let col = |f: &dyn Fn(&GraspRecord) -> f64| recs.iter().map(|r| f(r)).collect::<Vec<f64>>();
    let metrics: Vec<PoseMetrics> = recs.iter().map(|r| pose_metrics(world, open_hand, &r.rel_pose)).collect();
    let mcol = |f: &dyn Fn(&PoseMetrics) -> f64| metrics.iter().map(f).collect::<Vec<f64>>();
    let edge_angle = if world.shape.elongated {
        let pooled: Vec<f64> = metrics.iter().filter_map(|m| m.edge_angles).flatten().collect();
        Some(DimStats::from_samples(&pooled)?)
    } else {
        None
    };
    Ok(PoseStats {
        object_id: id,
        count: recs.len(),
        x: DimStats::from_samples(&col(&|r| r.rel_pose.x))?,
        y: DimStats::from_samples(&col(&|r| r.rel_pose.y))?,
        theta: DimStats::from_samples(&col(&|r| r.rel_pose.theta))?,
        dist_palm_center: DimStats::from_samples(&mcol(&|m| m.dist_palm_center))?,
        dist_finger_center: DimStats::from_samples(&mcol(&|m| m.dist_finger_center))?,
        min_dist_palm: DimStats::from_samples(&mcol(&|m| m.min_dist_palm))?,
        min_dist_finger: DimStats::from_samples(&mcol(&|m| m.min_dist_finger))?,
        edge_angle,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingBounds {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub theta: [f64; 2],
    pub d_max_palm: f64,
    pub d_max_finger: f64,
    pub d_min_palm: f64,
    pub d_min_finger: f64,
    pub theta_min: Option<f64>,
    pub theta_max: Option<f64>,
}

pub fn sampling_bounds(stats: &PoseStats) -> SamplingBounds {
    SamplingBounds {
        x: stats.x.interval(),
        y: stats.y.interval(),
        theta: stats.theta.interval(),
        d_max_palm: stats.dist_palm_center.upper,
        d_max_finger: stats.dist_finger_center.upper,
        d_min_palm: stats.min_dist_palm.lower.max(0.0),
        d_min_finger: stats.min_dist_finger.lower.max(0.0),
        theta_min: stats.edge_angle.as_ref().map(|s| s.lower),
        theta_max: stats.edge_angle.as_ref().map(|s| s.upper),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RejectionCounts {
    pub distance_max: usize,
    pub distance_min: usize,
    pub angle: usize,
    pub collision: usize,
}

impl std::fmt::Display for RejectionCounts {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "distance_max {}, distance_min {}, angle {}, collision {}",
            self.distance_max, self.distance_min, self.angle, self.collision
        )
    }
}

/// Which gates a pose fails; all false means the pose is acceptable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GateCheck {
    pub distance_max: bool,
    pub distance_min: bool,
    pub angle: bool,
    pub collision: bool,
}

impl GateCheck {
    pub fn passed(&self) -> bool {
        !(self.distance_max || self.distance_min || self.angle || self.collision)
    }
}

pub fn check_gates(
    bounds: &SamplingBounds,
    world: &GraspWorld,
    open_hand: [f64; HAND_JOINTS],
    rel_pose: &Pose2,
) -> GateCheck {
    let m = pose_metrics(world, open_hand, rel_pose);
    let angle = match (m.edge_angles, bounds.theta_min, bounds.theta_max) {
        (Some(a), Some(lo), Some(hi)) => a.iter().any(|v| *v < lo || *v > hi),
        _ => false,
    };
    let joints = JointVector::new([0.0; 3], open_hand);
    let base = world.hand.hand_base(&joints.arm());
    GateCheck {
        distance_max: m.dist_palm_center > bounds.d_max_palm || m.dist_finger_center > bounds.d_max_finger,
        distance_min: m.min_dist_palm < bounds.d_min_palm || m.min_dist_finger < bounds.d_min_finger,
        angle,
        collision: world.collides(&joints, &place_object_relative(&base, rel_pose)),
    }
}

fn uniform<R: Rng + ?Sized>(ab: [f64; 2], rng: &mut R) -> f64 {
    if ab[0] == ab[1] {
        ab[0]
    } else {
        ab[0] + (ab[1] - ab[0]) * rng.random::<f64>()
    }
}

/// Rejection-samples a relative object pose passing every gate.
pub fn sample_valid_pose<R: Rng + ?Sized>(
    bounds: &SamplingBounds,
    world: &GraspWorld,
    open_hand: [f64; HAND_JOINTS],
    rng: &mut R,
    max_tries: usize,
) -> Result<Pose2, SamplerError> {
    if max_tries == 0 {
        return Err(SamplerError::InvalidParams("max_tries must be >= 1".into()));
    }
    for [a, b] in [bounds.x, bounds.y, bounds.theta] {
        if !(a <= b) {
            return Err(SamplerError::InvalidParams(format!("empty interval [{a}, {b}]")));
        }
    }
    let mut rejections = RejectionCounts::default();
    for _ in 0..max_tries {
        let x = uniform(bounds.x, rng);
        let y = uniform(bounds.y, rng);
        let theta = uniform(bounds.theta, rng);
        // Keep the drawn angle as is; Pose2::new would wrap it.
        let pose = Pose2 { x, y, theta };
        let g = check_gates(bounds, world, open_hand, &pose);
        if g.passed() {
            return Ok(pose);
        }
        rejections.distance_max += g.distance_max as usize;
        rejections.distance_min += g.distance_min as usize;
        rejections.angle += g.angle as usize;
        rejections.collision += g.collision as usize;
    }
    Err(SamplerError::Exhausted { tries: max_tries, rejections })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quartiles_of_one_to_eight() {
        let s: Vec<f64> = (1..=8).map(f64::from).collect();
        let d = DimStats::from_samples(&s).unwrap();
        assert_eq!((d.q1, d.q3, d.iqr, d.lower, d.upper), (2.75, 6.25, 3.5, -2.5, 11.5));
        assert_eq!(d.interval(), [0.125, 8.875]);
    }

    #[test]
    fn degenerate_and_small() {
        let d = DimStats::from_samples(&[0.3; 6]).unwrap();
        assert_eq!((d.q1, d.q3, d.iqr, d.lower, d.upper), (0.3, 0.3, 0.0, 0.3, 0.3));
        assert_eq!(d.interval(), [0.3, 0.3]);
        assert!(matches!(DimStats::from_samples(&[1.0, 2.0, 3.0]), Err(SamplerError::TooFewSamples(3))));
    }

    #[test]
    fn symmetric_data_gives_symmetric_interval() {
        let d = DimStats::from_samples(&[-3.0, -1.0, -0.5, 0.5, 1.0, 3.0]).unwrap();
        let [a, b] = d.interval();
        assert_eq!(a, -b);
    }

    #[test]
    fn point_segment_to_disk_distance() {
        let disk: Vec<Vec2> = (0..256)
            .map(|k| {
                let t = k as f64 / 256.0 * std::f64::consts::TAU;
                Vec2::new(t.cos(), t.sin())
            })
            .collect();
        let p = Vec2::new(3.0, 0.0);
        let d = segment_polygon_distance(&crate::geom::Segment::new(p, p), &disk, 1.0);
        assert!((d - 2.0).abs() < 1e-3);
    }
}
