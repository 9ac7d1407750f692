//! Exact closest-feature primitives for triangles and segments.

use super::Vec3;

/// Closest pair between two triangles. `distance` is 0 when they touch or cross,
/// in which case both points coincide on the intersection.
#[derive(Debug, Clone, Copy)]
pub struct TriDistance {
    pub distance: f64,
    pub a: Vec3,
    pub b: Vec3,
}

/// Closest point to `p` on triangle `abc`, by Voronoi-region classification.
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

/// Closest points between segments `p1q1` and `p2q2`.
pub fn closest_points_segments(p1: &Vec3, q1: &Vec3, p2: &Vec3, q2: &Vec3) -> (Vec3, Vec3) {
    const EPS: f64 = 1e-300;
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);
    let (s, t);
    if a <= EPS && e <= EPS {
        return (*p1, *p2);
    }
    if a <= EPS {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= EPS {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let s0 = if denom > 0.0 { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
            let t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t = 0.0;
                s = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t = 1.0;
                s = ((b - c) / a).clamp(0.0, 1.0);
            } else {
                t = t0;
                s = s0;
            }
        }
    }
    (p1 + d1 * s, p2 + d2 * t)
}

fn project(t: &[Vec3; 3], axis: &Vec3) -> (f64, f64) {
    let p = [axis.dot(&t[0]), axis.dot(&t[1]), axis.dot(&t[2])];
    (p[0].min(p[1]).min(p[2]), p[0].max(p[1]).max(p[2]))
}

fn edges(t: &[Vec3; 3]) -> [Vec3; 3] {
    [t[1] - t[0], t[2] - t[1], t[0] - t[2]]
}

/// Separating-axis test for two closed triangles. Touching counts as intersecting.
pub fn triangles_intersect(t1: &[Vec3; 3], t2: &[Vec3; 3]) -> bool {
    let e1 = edges(t1);
    let e2 = edges(t2);
    let n1 = e1[0].cross(&e1[1]);
    let n2 = e2[0].cross(&e2[1]);
    let scale = e1.iter().chain(e2.iter()).map(|e| e.norm_squared()).fold(0.0, f64::max);
    let tiny = 1e-24 * scale * scale;

    let separated = |axis: &Vec3| {
        if axis.norm_squared() <= tiny {
            return false;
        }
        let (min1, max1) = project(t1, axis);
        let (min2, max2) = project(t2, axis);
        max1 < min2 || max2 < min1
    };

    if separated(&n1) || separated(&n2) {
        return false;
    }
    for a in &e1 {
        for b in &e2 {
            if separated(&a.cross(b)) {
                return false;
            }
        }
    }
    // In-plane edge normals; required when the triangles are coplanar.
    for e in &e1 {
        if separated(&n1.cross(e)) {
            return false;
        }
    }
    for e in &e2 {
        if separated(&n2.cross(e)) {
            return false;
        }
    }
    true
}

/// Point where segment `pq` crosses triangle `abc`, if it does so transversally.
fn segment_piercing(p: &Vec3, q: &Vec3, tri: &[Vec3; 3]) -> Option<Vec3> {
    let n = (tri[1] - tri[0]).cross(&(tri[2] - tri[0]));
    let dp = n.dot(&(p - tri[0]));
    let dq = n.dot(&(q - tri[0]));
    if dp * dq > 0.0 || dp == dq {
        return None;
    }
    let x = p + (q - p) * (dp / (dp - dq));
    let inside = (0..3).all(|i| {
        let a = tri[i];
        let b = tri[(i + 1) % 3];
        n.dot(&(b - a).cross(&(x - a))) >= 0.0
    });
    inside.then_some(x)
}

fn closest_features(t1: &[Vec3; 3], t2: &[Vec3; 3]) -> TriDistance {
    let mut best = TriDistance {
        distance: f64::INFINITY,
        a: t1[0],
        b: t2[0],
    };
    let mut consider = |a: Vec3, b: Vec3| {
        let d = (a - b).norm();
        if d < best.distance {
            best = TriDistance { distance: d, a, b };
        }
    };
    for p in t1 {
        consider(*p, closest_point_on_triangle(p, &t2[0], &t2[1], &t2[2]));
    }
    for p in t2 {
        consider(closest_point_on_triangle(p, &t1[0], &t1[1], &t1[2]), *p);
    }
    for i in 0..3 {
        for j in 0..3 {
            let (a, b) = closest_points_segments(&t1[i], &t1[(i + 1) % 3], &t2[j], &t2[(j + 1) % 3]);
            consider(a, b);
        }
    }
    best
}

/// Exact distance between two triangles with witness points.
pub fn triangle_distance(t1: &[Vec3; 3], t2: &[Vec3; 3]) -> TriDistance {
    if triangles_intersect(t1, t2) {
        let pierce = (0..3)
            .find_map(|i| segment_piercing(&t1[i], &t1[(i + 1) % 3], t2))
            .or_else(|| (0..3).find_map(|i| segment_piercing(&t2[i], &t2[(i + 1) % 3], t1)));
        let p = pierce.unwrap_or_else(|| {
            let f = closest_features(t1, t2);
            (f.a + f.b) / 2.0
        });
        return TriDistance { distance: 0.0, a: p, b: p };
    }
    closest_features(t1, t2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> [Vec3; 3] {
        [Vec3::from(a), Vec3::from(b), Vec3::from(c)]
    }

    #[test]
    fn point_triangle_regions() {
        let (a, b, c) = (Vec3::zeros(), Vec3::x(), Vec3::y());
        let f = closest_point_on_triangle(&Vec3::new(0.2, 0.2, 5.0), &a, &b, &c);
        assert!((f - Vec3::new(0.2, 0.2, 0.0)).norm() < 1e-15);
        assert_eq!(closest_point_on_triangle(&Vec3::new(-1.0, -1.0, 0.0), &a, &b, &c), a);
        let e = closest_point_on_triangle(&Vec3::new(1.0, 1.0, 0.0), &a, &b, &c);
        assert!((e - Vec3::new(0.5, 0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn segments_crossing_and_parallel() {
        let (a, b) = closest_points_segments(
            &Vec3::new(-1.0, 0.0, 0.0),
            &Vec3::new(1.0, 0.0, 0.0),
            &Vec3::new(0.0, -1.0, 2.0),
            &Vec3::new(0.0, 1.0, 2.0),
        );
        assert!((a - Vec3::zeros()).norm() < 1e-15);
        assert!((b - Vec3::new(0.0, 0.0, 2.0)).norm() < 1e-15);
        let (a, b) = closest_points_segments(&Vec3::zeros(), &Vec3::x(), &Vec3::new(0.5, 1.0, 0.0), &Vec3::new(3.0, 1.0, 0.0));
        assert!(((a - b).norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn crossing_triangles_intersect() {
        let t1 = tri([0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 2.0, 0.0]);
        let t2 = tri([0.5, 0.5, -1.0], [0.5, 0.5, 1.0], [3.0, 3.0, 0.0]);
        let d = triangle_distance(&t1, &t2);
        assert_eq!(d.distance, 0.0);
        assert_eq!(d.a, d.b);
        assert!(d.a.z.abs() < 1e-12);
    }

    #[test]
    fn coplanar_cases() {
        let t1 = tri([0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 2.0, 0.0]);
        let overlapping = tri([0.5, 0.5, 0.0], [3.0, 0.5, 0.0], [0.5, 3.0, 0.0]);
        assert!(triangles_intersect(&t1, &overlapping));
        let apart = tri([3.0, 3.0, 0.0], [4.0, 3.0, 0.0], [3.0, 4.0, 0.0]);
        assert!(!triangles_intersect(&t1, &apart));
        let d = triangle_distance(&t1, &apart);
        assert!((d.distance - (2.0 * 2.0f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn stacked_parallel_triangles() {
        let t1 = tri([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        let t2 = tri([0.0, 0.0, 0.5], [1.0, 0.0, 0.5], [0.0, 1.0, 0.5]);
        let d = triangle_distance(&t1, &t2);
        assert!((d.distance - 0.5).abs() < 1e-15);
    }
}
