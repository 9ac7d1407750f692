//! Brute-force reference geometry, written from first principles and kept
//! apart from the library so the two can be checked against each other.

#![allow(dead_code)]

use nalgebra::Vector3;
use vwc_core::geometry::{Pose, TriMesh};

pub type V = Vector3<f64>;
pub type Tri = [V; 3];

pub fn world_triangles(mesh: &TriMesh, pose: &Pose) -> Vec<Tri> {
    let rot = pose.orientation.to_rotation_matrix();
    let place = |v: &V| rot * v + pose.position;
    mesh.triangles()
        .iter()
        .map(|t| {
            let v = mesh.vertices();
            [place(&v[t[0] as usize]), place(&v[t[1] as usize]), place(&v[t[2] as usize])]
        })
        .collect()
}

pub fn closest_on_segment(p: &V, a: &V, b: &V) -> V {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return *a;
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    a + ab * t
}

/// Project onto the triangle's plane; if the foot lies inside (by edge
/// side tests) it is the answer, otherwise the nearest of the three edge
/// clamps is.
pub fn point_triangle(p: &V, t: &Tri) -> f64 {
    let n = (t[1] - t[0]).cross(&(t[2] - t[0]));
    let n2 = n.norm_squared();
    if n2 > 0.0 {
        let foot = p - n * ((p - t[0]).dot(&n) / n2);
        let inside = (0..3).all(|i| {
            let a = t[i];
            let b = t[(i + 1) % 3];
            (b - a).cross(&(foot - a)).dot(&n) >= 0.0
        });
        if inside {
            return (p - foot).norm();
        }
    }
    (0..3)
        .map(|i| (p - closest_on_segment(p, &t[i], &t[(i + 1) % 3])).norm())
        .fold(f64::INFINITY, f64::min)
}

/// Closest distance between segments `p0p1` and `q0q1`, clamped parametric form.
pub fn segment_segment(p0: &V, p1: &V, q0: &V, q1: &V) -> f64 {
    let d1 = p1 - p0;
    let d2 = q1 - q0;
    let r = p0 - q0;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);
    let (s, t);
    if a == 0.0 && e == 0.0 {
        return r.norm();
    }
    if a == 0.0 {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e == 0.0 {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > 0.0 { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    ((p0 + d1 * s) - (q0 + d2 * t)).norm()
}

/// Does the closed segment `a..b` touch the closed triangle? Uses signed
/// volumes, so it needs no division.
pub fn segment_hits_triangle(a: &V, b: &V, t: &Tri) -> bool {
    let vol = |p: &V, q: &V, r: &V, s: &V| (q - p).cross(&(r - p)).dot(&(s - p));
    let da = vol(&t[0], &t[1], &t[2], a);
    let db = vol(&t[0], &t[1], &t[2], b);
    if (da > 0.0 && db > 0.0) || (da < 0.0 && db < 0.0) || (da == 0.0 && db == 0.0) {
        return false;
    }
    let s0 = vol(a, b, &t[0], &t[1]);
    let s1 = vol(a, b, &t[1], &t[2]);
    let s2 = vol(a, b, &t[2], &t[0]);
    (s0 >= 0.0 && s1 >= 0.0 && s2 >= 0.0) || (s0 <= 0.0 && s1 <= 0.0 && s2 <= 0.0)
}

pub fn triangles_intersect(x: &Tri, y: &Tri) -> bool {
    (0..3).any(|i| segment_hits_triangle(&x[i], &x[(i + 1) % 3], y))
        || (0..3).any(|i| segment_hits_triangle(&y[i], &y[(i + 1) % 3], x))
}

pub fn triangle_distance(x: &Tri, y: &Tri) -> f64 {
    if triangles_intersect(x, y) {
        return 0.0;
    }
    let mut d = f64::INFINITY;
    for p in x {
        d = d.min(point_triangle(p, y));
    }
    for p in y {
        d = d.min(point_triangle(p, x));
    }
    for i in 0..3 {
        for j in 0..3 {
            d = d.min(segment_segment(&x[i], &x[(i + 1) % 3], &y[j], &y[(j + 1) % 3]));
        }
    }
    d
}

/// Minimum surface distance over every triangle pair; 0 when any pair meets.
pub fn mesh_distance(a: &TriMesh, pa: &Pose, b: &TriMesh, pb: &Pose) -> f64 {
    let ta = world_triangles(a, pa);
    let tb = world_triangles(b, pb);
    let mut best = f64::INFINITY;
    for x in &ta {
        for y in &tb {
            best = best.min(triangle_distance(x, y));
            if best == 0.0 {
                return 0.0;
            }
        }
    }
    best
}

pub fn meshes_intersect(a: &TriMesh, pa: &Pose, b: &TriMesh, pb: &Pose) -> bool {
    let ta = world_triangles(a, pa);
    let tb = world_triangles(b, pb);
    ta.iter().any(|x| tb.iter().any(|y| triangles_intersect(x, y)))
}
