//! Capsule–polygon contact generation.
//!
//! All routines accept polygons of either winding; `orientation` is the sign
//! of the signed area. Keeping the computation winding-agnostic means a scene
//! and its mirror image produce term-by-term mirrored contacts.

use super::hand::{Capsule, HandPart};
use crate::geom::{point_polygon, segment_segment_closest, segments_intersect, Segment, Vec2};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contact {
    /// World-frame contact point on the object surface.
    pub point: Vec2,
    /// Unit normal pointing into the object (direction of the force on it).
    pub normal: Vec2,
    pub depth: f64,
    pub body_part: HandPart,
}

/// World-frame object geometry prepared for contact queries.
pub struct PolygonView<'a> {
    pub vertices: &'a [Vec2],
    pub orientation: f64,
    pub centroid: Vec2,
    pub bound_radius: f64,
}

fn outward_normal(a: Vec2, b: Vec2, orientation: f64) -> Vec2 {
    let d = b - a;
    let len = d.norm();
    Vec2::new(orientation * d.y / len, -orientation * d.x / len)
}

fn project(vertices: &[Vec2], axis: Vec2) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in vertices {
        let d = v.dot(axis);
        lo = lo.min(d);
        hi = hi.max(d);
    }
    (lo, hi)
}

/// Penetration of a capsule into the polygon. Returns `None` when separated
/// by more than the capsule radius.
pub fn capsule_polygon_contact(cap: &Capsule, poly: &PolygonView<'_>) -> Option<Contact> {
    let seg = &cap.segment;
    if seg.distance_to_point(poly.centroid) > poly.bound_radius + cap.radius {
        return None;
    }
    let v = poly.vertices;
    let n = v.len();
    let (_, a_in) = point_polygon(v, poly.orientation, seg.a);
    let (_, b_in) = point_polygon(v, poly.orientation, seg.b);
    let crossing = a_in
        || b_in
        || (0..n).any(|i| segments_intersect(seg, &Segment::new(v[i], v[(i + 1) % n])));
    if crossing {
        return Some(deep_contact(cap, poly));
    }

    let mut best_d = f64::INFINITY;
    let mut best = (Vec2::ZERO, Vec2::ZERO);
    for i in 0..n {
        let e = Segment::new(v[i], v[(i + 1) % n]);
        let (p, q) = segment_segment_closest(seg, &e);
        let d = (q - p).norm();
        if d < best_d {
            best_d = d;
            best = (p, q);
        }
    }
    if best_d == 0.0 {
        return Some(deep_contact(cap, poly));
    }
    if best_d >= cap.radius {
        return None;
    }
    let (p, q) = best;
    Some(Contact {
        point: q,
        normal: (q - p) * (1.0 / best_d),
        depth: cap.radius - best_d,
        body_part: cap.part,
    })
}

/// Separating-axis resolution when the capsule axis itself enters the polygon.
fn deep_contact(cap: &Capsule, poly: &PolygonView<'_>) -> Contact {
    let seg = &cap.segment;
    let v = poly.vertices;
    let n = v.len();
    let mut axes: Vec<Vec2> = (0..n)
        .map(|i| outward_normal(v[i], v[(i + 1) % n], poly.orientation))
        .collect();
    let sd = seg.b - seg.a;
    if sd.norm_sq() > 0.0 {
        axes.push(sd.perp().normalized());
    }
    let mut best_overlap = f64::INFINITY;
    let mut best_dir = Vec2::ZERO;
    let mut best_point = seg.midpoint();
    for axis in axes {
        let (plo, phi) = project(v, axis);
        let (sa, sb) = (seg.a.dot(axis), seg.b.dot(axis));
        let (slo, shi) = if sa <= sb { (sa, sb) } else { (sb, sa) };
        // Polygon pushed along +axis clears the segment after (shi − plo).
        let plus = shi - plo;
        if plus < best_overlap {
            best_overlap = plus;
            best_dir = axis;
            best_point = if sa > sb { seg.a } else if sb > sa { seg.b } else { seg.midpoint() };
        }
        let minus = phi - slo;
        if minus < best_overlap {
            best_overlap = minus;
            best_dir = -axis;
            best_point = if sa < sb { seg.a } else if sb < sa { seg.b } else { seg.midpoint() };
        }
    }
    Contact {
        point: best_point,
        normal: best_dir,
        depth: best_overlap.max(0.0) + cap.radius,
        body_part: cap.part,
    }
}

pub fn contacts(capsules: &[Capsule], poly: &PolygonView<'_>) -> Vec<Contact> {
    capsules.iter().filter_map(|c| capsule_polygon_contact(c, poly)).collect()
}

/// Whether any capsule penetrates the polygon deeper than `tolerance`.
pub fn any_penetration(capsules: &[Capsule], poly: &PolygonView<'_>, tolerance: f64) -> bool {
    capsules
        .iter()
        .filter_map(|c| capsule_polygon_contact(c, poly))
        .any(|c| c.depth > tolerance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::polygon_signed_area;

    fn square(half: f64) -> Vec<Vec2> {
        vec![
            Vec2::new(-half, -half),
            Vec2::new(half, -half),
            Vec2::new(half, half),
            Vec2::new(-half, half),
        ]
    }

    fn view(v: &[Vec2]) -> PolygonView<'_> {
        PolygonView {
            vertices: v,
            orientation: polygon_signed_area(v).signum(),
            centroid: Vec2::ZERO,
            bound_radius: v.iter().map(|p| p.norm()).fold(0.0, f64::max),
        }
    }

    fn cap(a: Vec2, b: Vec2, r: f64) -> Capsule {
        Capsule { segment: Segment::new(a, b), radius: r, part: HandPart::Palm }
    }

    #[test]
    fn shallow_contact_from_above() {
        let sq = square(0.5);
        let c = cap(Vec2::new(-0.2, 0.55), Vec2::new(0.2, 0.55), 0.1);
        let hit = capsule_polygon_contact(&c, &view(&sq)).unwrap();
        assert!((hit.depth - 0.05).abs() < 1e-12);
        assert!((hit.normal - Vec2::new(0.0, -1.0)).norm() < 1e-12);
        assert!((hit.point.y - 0.5).abs() < 1e-12);
    }

    #[test]
    fn separated_capsule_has_no_contact() {
        let sq = square(0.5);
        let c = cap(Vec2::new(-0.2, 0.7), Vec2::new(0.2, 0.7), 0.1);
        assert!(capsule_polygon_contact(&c, &view(&sq)).is_none());
    }

    #[test]
    fn deep_contact_pushes_out_shortest_way() {
        let sq = square(0.5);
        let c = cap(Vec2::new(-0.2, 0.45), Vec2::new(0.2, 0.45), 0.1);
        let hit = capsule_polygon_contact(&c, &view(&sq)).unwrap();
        assert!((hit.depth - 0.15).abs() < 1e-12);
        assert!((hit.normal - Vec2::new(0.0, -1.0)).norm() < 1e-12);
    }

    #[test]
    fn normals_are_unit() {
        let sq = square(0.5);
        for k in 0..50 {
            let t = k as f64 * 0.13;
            let p = Vec2::new(0.55 * t.cos(), 0.55 * t.sin());
            let c = cap(p, p + Vec2::new(0.05, 0.02), 0.1);
            if let Some(hit) = capsule_polygon_contact(&c, &view(&sq)) {
                assert!((hit.normal.norm() - 1.0).abs() < 1e-9);
                assert!(hit.depth >= 0.0);
            }
        }
    }
}
