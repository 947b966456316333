//! Planar geometry: vectors, rigid poses, segments and convex polygons.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Counter-clockwise perpendicular.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        if n > 0.0 {
            Vec2::new(self.x / n, self.y / n)
        } else {
            Vec2::ZERO
        }
    }

    pub fn rotated(self, theta: f64) -> Vec2 {
        let (s, c) = theta.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl SubAssign for Vec2 {
    fn sub_assign(&mut self, o: Vec2) {
        self.x -= o.x;
        self.y -= o.y;
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into (−π, π].
pub fn normalize_angle(theta: f64) -> f64 {
    if theta > -PI && theta <= PI {
        return theta;
    }
    let two_pi = 2.0 * PI;
    let mut t = theta - two_pi * ((theta + PI) / two_pi).floor();
    if t <= -PI {
        t += two_pi;
    }
    if t > PI {
        t -= two_pi;
    }
    t
}

/// Rigid transform in SE(2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Default for Pose2 {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Pose2 {
    pub const IDENTITY: Pose2 = Pose2 { x: 0.0, y: 0.0, theta: 0.0 };

    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta: normalize_angle(theta) }
    }

    pub fn translation(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let p = self.transform_point(other.translation());
        Pose2::new(p.x, p.y, self.theta + other.theta)
    }

    pub fn inverse(&self) -> Pose2 {
        let p = (-self.translation()).rotated(-self.theta);
        Pose2::new(p.x, p.y, -self.theta)
    }

    pub fn transform_point(&self, p: Vec2) -> Vec2 {
        p.rotated(self.theta) + self.translation()
    }

    pub fn transform_vector(&self, v: Vec2) -> Vec2 {
        v.rotated(self.theta)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub a: Vec2,
    pub b: Vec2,
}

impl Segment {
    pub fn new(a: Vec2, b: Vec2) -> Self {
        Self { a, b }
    }

    pub fn midpoint(&self) -> Vec2 {
        (self.a + self.b) * 0.5
    }

    pub fn closest_param(&self, p: Vec2) -> f64 {
        let d = self.b - self.a;
        let len_sq = d.norm_sq();
        if len_sq == 0.0 {
            return 0.0;
        }
        ((p - self.a).dot(d) / len_sq).clamp(0.0, 1.0)
    }

    pub fn point_at(&self, s: f64) -> Vec2 {
        self.a + (self.b - self.a) * s
    }

    pub fn closest_point(&self, p: Vec2) -> Vec2 {
        self.point_at(self.closest_param(p))
    }

    pub fn distance_to_point(&self, p: Vec2) -> f64 {
        (p - self.closest_point(p)).norm()
    }
}

/// Closest points between two segments, returned as (point on `s`, point on `t`).
pub fn segment_segment_closest(s: &Segment, t: &Segment) -> (Vec2, Vec2) {
    // Candidates: each endpoint against the other segment. Exact when the
    // segments do not cross; crossing is handled by the callers.
    let cands = [
        (s.a, t.closest_point(s.a)),
        (s.b, t.closest_point(s.b)),
        (s.closest_point(t.a), t.a),
        (s.closest_point(t.b), t.b),
    ];
    let mut best = cands[0];
    let mut best_d = (best.0 - best.1).norm_sq();
    for c in &cands[1..] {
        let d = (c.0 - c.1).norm_sq();
        if d < best_d {
            best_d = d;
            best = *c;
        }
    }
    best
}

/// Whether two closed segments properly intersect.
pub fn segments_intersect(s: &Segment, t: &Segment) -> bool {
    let d1 = (s.b - s.a).cross(t.a - s.a);
    let d2 = (s.b - s.a).cross(t.b - s.a);
    let d3 = (t.b - t.a).cross(s.a - t.a);
    let d4 = (t.b - t.a).cross(s.b - t.a);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

/// Signed area; positive for counter-clockwise vertex order.
pub fn polygon_signed_area(v: &[Vec2]) -> f64 {
    let n = v.len();
    let mut a = 0.0;
    for i in 0..n {
        a += v[i].cross(v[(i + 1) % n]);
    }
    0.5 * a
}

/// Area centroid of a simple polygon.
pub fn polygon_centroid(v: &[Vec2]) -> Vec2 {
    let n = v.len();
    let mut c = Vec2::ZERO;
    let mut a = 0.0;
    for i in 0..n {
        let p = v[i];
        let q = v[(i + 1) % n];
        let w = p.cross(q);
        a += w;
        c += (p + q) * w;
    }
    c * (1.0 / (3.0 * a))
}

/// Second moment of area about the origin, for a polygon of either orientation.
pub fn polygon_second_moment(v: &[Vec2]) -> f64 {
    let n = v.len();
    let mut s = 0.0;
    for i in 0..n {
        let p = v[i];
        let q = v[(i + 1) % n];
        let w = p.cross(q);
        s += w * (p.dot(p) + p.dot(q) + q.dot(q));
    }
    (s / 12.0).abs()
}

/// Strict convexity test for a counter-clockwise polygon.
pub fn is_convex_ccw(v: &[Vec2]) -> bool {
    let n = v.len();
    if n < 3 {
        return false;
    }
    (0..n).all(|i| {
        let a = v[i];
        let b = v[(i + 1) % n];
        let c = v[(i + 2) % n];
        (b - a).cross(c - b) > 0.0
    })
}

/// Distance from a point to the boundary of a polygon, and whether the point is inside.
/// `orientation` is +1 for CCW vertex order and −1 for CW.
pub fn point_polygon(v: &[Vec2], orientation: f64, p: Vec2) -> (f64, bool) {
    let n = v.len();
    let mut inside = true;
    let mut best = f64::INFINITY;
    for i in 0..n {
        let a = v[i];
        let b = v[(i + 1) % n];
        if orientation * (b - a).cross(p - a) < 0.0 {
            inside = false;
        }
        let d = Segment::new(a, b).distance_to_point(p);
        if d < best {
            best = d;
        }
    }
    (best, inside)
}

/// Minimum distance between a segment and a convex polygon boundary or interior;
/// zero if they overlap.
pub fn segment_polygon_distance(seg: &Segment, v: &[Vec2], orientation: f64) -> f64 {
    let (da, ina) = point_polygon(v, orientation, seg.a);
    if ina {
        return 0.0;
    }
    let (db, inb) = point_polygon(v, orientation, seg.b);
    if inb {
        return 0.0;
    }
    let n = v.len();
    let mut best = da.min(db);
    for i in 0..n {
        let e = Segment::new(v[i], v[(i + 1) % n]);
        if segments_intersect(seg, &e) {
            return 0.0;
        }
        let (p, q) = segment_segment_closest(seg, &e);
        let d = (p - q).norm();
        if d < best {
            best = d;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose2 {
        Pose2::new(
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(-PI..PI),
        )
    }

    #[test]
    fn normalize_angle_range() {
        assert_eq!(normalize_angle(PI), PI);
        assert_eq!(normalize_angle(-PI), PI);
        assert!((normalize_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((normalize_angle(-0.5 - 4.0 * PI) + 0.5).abs() < 1e-12);
        for k in -20..20 {
            let t = normalize_angle(0.37 * k as f64);
            assert!(t > -PI && t <= PI);
        }
    }

    #[test]
    fn pose_group_laws() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let p = random_pose(&mut rng);
            let q = random_pose(&mut rng);
            let r = random_pose(&mut rng);
            let id = p.compose(&p.inverse());
            assert!(id.x.abs() < 1e-12 && id.y.abs() < 1e-12 && id.theta.abs() < 1e-12);
            let id2 = p.inverse().compose(&p);
            assert!(id2.x.abs() < 1e-12 && id2.y.abs() < 1e-12 && id2.theta.abs() < 1e-12);
            let lhs = p.compose(&q).compose(&r);
            let rhs = p.compose(&q.compose(&r));
            assert!((lhs.x - rhs.x).abs() < 1e-12);
            assert!((lhs.y - rhs.y).abs() < 1e-12);
            assert!(normalize_angle(lhs.theta - rhs.theta).abs() < 1e-12);
        }
    }

    #[test]
    fn unit_square_properties() {
        let sq = [
            Vec2::new(-0.5, -0.5),
            Vec2::new(0.5, -0.5),
            Vec2::new(0.5, 0.5),
            Vec2::new(-0.5, 0.5),
        ];
        assert!((polygon_signed_area(&sq) - 1.0).abs() < 1e-15);
        assert!(polygon_centroid(&sq).norm() < 1e-15);
        // J = (a^4)/6 for a unit square about its center
        assert!((polygon_second_moment(&sq) - 1.0 / 6.0).abs() < 1e-15);
        assert!(is_convex_ccw(&sq));
        let seg = Segment::new(Vec2::new(2.0, -1.0), Vec2::new(2.0, 1.0));
        assert!((segment_polygon_distance(&seg, &sq, 1.0) - 1.5).abs() < 1e-15);
        let crossing = Segment::new(Vec2::new(-2.0, 0.0), Vec2::new(2.0, 0.0));
        assert_eq!(segment_polygon_distance(&crossing, &sq, 1.0), 0.0);
    }
}
