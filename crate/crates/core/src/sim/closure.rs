//! Planar force-closure test over friction-cone edge wrenches.

use super::contact::Contact;
use crate::geom::Vec2;

type Wrench = [f64; 3];

fn cross3(a: &Wrench, b: &Wrench) -> Wrench {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot3(a: &Wrench, b: &Wrench) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm3(a: &Wrench) -> f64 {
    dot3(a, a).sqrt()
}

/// Primitive wrenches (fx, fy, τ) of each contact: the two friction-cone
/// edges `n ± μ t`, or the bare normal when `mu == 0`.
pub fn primitive_wrenches(contacts: &[Contact], mu: f64, centroid: Vec2) -> Vec<Wrench> {
    let mut out = Vec::with_capacity(2 * contacts.len());
    for c in contacts {
        let r = c.point - centroid;
        let t = c.normal.perp();
        let edges: &[f64] = if mu > 0.0 { &[1.0, -1.0] } else { &[0.0] };
        for s in edges {
            let f = c.normal + t * (s * mu);
            out.push([f.x, f.y, r.cross(f)]);
        }
    }
    out
}

/// Whether the origin lies strictly inside the convex hull of `wrenches`.
pub fn origin_strictly_inside(wrenches: &[Wrench]) -> bool {
    const EPS: f64 = 1e-12;
    let n = wrenches.len();
    let scale = wrenches.iter().map(norm3).fold(0.0, f64::max);
    if n < 4 || scale == 0.0 {
        return false;
    }
    let mut has_rank3 = false;
    // The cone {d : d·w ≤ 0 ∀w} is pointed when the wrenches span R³, so if it is
    // non-trivial it has an extreme ray orthogonal to two of the wrenches.
    for i in 0..n {
        for j in (i + 1)..n {
            let d = cross3(&wrenches[i], &wrenches[j]);
            let dn = norm3(&d);
            if dn <= EPS * scale * scale {
                continue;
            }
            for sign in [1.0, -1.0] {
                let dd = [sign * d[0] / dn, sign * d[1] / dn, sign * d[2] / dn];
                let mut max_proj = f64::NEG_INFINITY;
                for w in wrenches {
                    max_proj = max_proj.max(dot3(&dd, w));
                }
                if max_proj > EPS * scale {
                    has_rank3 |= wrenches.iter().any(|w| dot3(&dd, w).abs() > EPS * scale);
                    continue;
                }
                return false;
            }
        }
    }
    has_rank3
}

/// Force closure with torques taken about `centroid`.
pub fn check_force_closure_about(contacts: &[Contact], mu: f64, centroid: Vec2) -> bool {
    if contacts.len() < 2 {
        return false;
    }
    origin_strictly_inside(&primitive_wrenches(contacts, mu, centroid))
}

/// Force closure for contacts expressed in the object frame (centroid at the origin).
pub fn check_force_closure(contacts: &[Contact], mu: f64) -> bool {
    check_force_closure_about(contacts, mu, Vec2::ZERO)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::hand::HandPart;
    use std::f64::consts::PI;

    fn disk_contact(angle: f64) -> Contact {
        let p = Vec2::new(angle.cos(), angle.sin());
        Contact { point: p, normal: -p, depth: 0.0, body_part: HandPart::Palm }
    }

    /// Dense direction sweep: closure iff every direction sees some wrench ahead of it.
    fn sweep_oracle(w: &[Wrench]) -> bool {
        let n = 20_000;
        let golden = PI * (3.0 - 5f64.sqrt());
        (0..n).all(|k| {
            let z = 1.0 - 2.0 * (k as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let d = [r * (golden * k as f64).cos(), r * (golden * k as f64).sin(), z];
            w.iter().map(|wi| dot3(&d, wi)).fold(f64::NEG_INFINITY, f64::max) > 0.0
        })
    }

    #[test]
    fn single_contact_never_closes() {
        assert!(!check_force_closure(&[disk_contact(0.3)], 0.8));
    }

    #[test]
    fn antipodal_pair_with_friction() {
        let cs = [disk_contact(0.0), disk_contact(PI)];
        assert!(check_force_closure(&cs, 0.3));
        assert!(sweep_oracle(&primitive_wrenches(&cs, 0.3, Vec2::ZERO)));
        assert!(!check_force_closure(&cs, 0.0));
    }

    #[test]
    fn tripod_on_disk() {
        let cs = [disk_contact(PI / 2.0), disk_contact(PI / 2.0 + 2.0 * PI / 3.0), disk_contact(PI / 2.0 + 4.0 * PI / 3.0)];
        // Frictionless normals on a disk all pass through the centre, so no
        // contact can resist a torque about it.
        assert!(!check_force_closure(&cs, 0.0));
        assert!(check_force_closure(&cs, 0.3));
    }

    #[test]
    fn agrees_with_direction_sweep() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut agree = 0;
        for _ in 0..200 {
            let k = rng.random_range(2..5);
            let cs: Vec<Contact> = (0..k).map(|_| disk_contact(rng.random_range(-PI..PI))).collect();
            let mu = rng.random_range(0.05..0.9);
            let w = primitive_wrenches(&cs, mu, Vec2::ZERO);
            if check_force_closure(&cs, mu) == sweep_oracle(&w) {
                agree += 1;
            }
        }
        // The sweep can miss razor-thin separating directions.
        assert!(agree >= 198, "agreement {agree}/200");
    }
}
