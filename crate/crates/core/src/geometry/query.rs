use serde::{Deserialize, Serialize};

use super::bvh::{Aabb, NodeKind};
use super::mesh::TriMesh;
use super::triangle::{triangle_distance, TriDistance};
use super::{GeometryError, Pose, Vec3};
use crate::par;

/// Closest pair between two posed meshes, in world coordinates.
///
/// `distance` is exactly 0 when the surfaces touch or cross; the two points
/// then coincide on the intersection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    #[serde(with = "crate::serde_vec3")]
    pub point_a: Vec3,
    #[serde(with = "crate::serde_vec3")]
    pub point_b: Vec3,
    pub distance: f64,
}

impl Witness {
    pub fn swapped(self) -> Witness {
        Witness {
            point_a: self.point_b,
            point_b: self.point_a,
            distance: self.distance,
        }
    }

    pub fn is_contact(&self) -> bool {
        self.distance == 0.0
    }
}

fn check_nonempty(a: &TriMesh, b: &TriMesh) -> Result<(), GeometryError> {
    if a.is_empty() || b.is_empty() {
        Err(GeometryError::EmptyGeometry)
    } else {
        Ok(())
    }
}

/// Global minimum distance between the surfaces of two posed meshes, using
/// each mesh's bounding-volume hierarchy for branch-and-bound pruning.
pub fn closest_pair(mesh_a: &TriMesh, pose_a: &Pose, mesh_b: &TriMesh, pose_b: &Pose) -> Result<Witness, GeometryError> {
    check_nonempty(mesh_a, mesh_b)?;
    // Work in A's local frame; B is brought over by the relative transform.
    let rel = pose_a.inverse().compose(pose_b);
    let bvh_a = mesh_a.bvh();
    let bvh_b = mesh_b.bvh();
    let boxes_b: Vec<Aabb> = bvh_b.nodes.iter().map(|n| n.aabb.transformed(&rel)).collect();

    let mut best = TriDistance {
        distance: f64::INFINITY,
        a: Vec3::zeros(),
        b: Vec3::zeros(),
    };
    let mut stack = vec![(0usize, 0usize)];
    let mut tri_b_cache: Vec<Option<[Vec3; 3]>> = vec![None; mesh_b.len()];

    while let Some((i, j)) = stack.pop() {
        let na = &bvh_a.nodes[i];
        let nb = &bvh_b.nodes[j];
        if na.aabb.distance(&boxes_b[j]) > best.distance {
            continue;
        }
        match (&na.kind, &nb.kind) {
            (NodeKind::Leaf { start: sa, count: ca }, NodeKind::Leaf { start: sb, count: cb }) => {
                for &ta in &bvh_a.order[*sa..sa + ca] {
                    let tri_a = mesh_a.triangle(ta);
                    for &tb in &bvh_b.order[*sb..sb + cb] {
                        let tri_b = *tri_b_cache[tb].get_or_insert_with(|| mesh_b.triangle(tb).map(|v| rel.transform_point(&v)));
                        let d = triangle_distance(&tri_a, &tri_b);
                        if d.distance < best.distance {
                            best = d;
                            if best.distance == 0.0 {
                                return Ok(to_world(&best, pose_a));
                            }
                        }
                    }
                }
            }
            (NodeKind::Leaf { .. }, NodeKind::Inner { left, right }) => {
                push_ordered(&mut stack, na.aabb.distance(&boxes_b[*left]), (i, *left), na.aabb.distance(&boxes_b[*right]), (i, *right));
            }
            (NodeKind::Inner { left, right }, NodeKind::Leaf { .. }) => {
                let (l, r) = (&bvh_a.nodes[*left].aabb, &bvh_a.nodes[*right].aabb);
                push_ordered(&mut stack, l.distance(&boxes_b[j]), (*left, j), r.distance(&boxes_b[j]), (*right, j));
            }
            (NodeKind::Inner { left: la, right: ra }, NodeKind::Inner { left: lb, right: rb }) => {
                if na.aabb.half_extents().norm() >= boxes_b[j].half_extents().norm() {
                    let (l, r) = (&bvh_a.nodes[*la].aabb, &bvh_a.nodes[*ra].aabb);
                    push_ordered(&mut stack, l.distance(&boxes_b[j]), (*la, j), r.distance(&boxes_b[j]), (*ra, j));
                } else {
                    push_ordered(&mut stack, na.aabb.distance(&boxes_b[*lb]), (i, *lb), na.aabb.distance(&boxes_b[*rb]), (i, *rb));
                }
            }
        }
    }
    Ok(to_world(&best, pose_a))
}

/// Push so the nearer pair is popped first.
fn push_ordered(stack: &mut Vec<(usize, usize)>, d1: f64, p1: (usize, usize), d2: f64, p2: (usize, usize)) {
    if d1 <= d2 {
        stack.push(p2);
        stack.push(p1);
    } else {
        stack.push(p1);
        stack.push(p2);
    }
}

fn to_world(d: &TriDistance, pose_a: &Pose) -> Witness {
    let point_a = pose_a.transform_point(&d.a);
    let point_b = if d.distance == 0.0 { point_a } else { pose_a.transform_point(&d.b) };
    Witness {
        point_a,
        point_b,
        distance: d.distance,
    }
}

fn world_triangles(mesh: &TriMesh, pose: &Pose) -> Vec<[Vec3; 3]> {
    (0..mesh.len()).map(|i| mesh.triangle(i).map(|v| pose.transform_point(&v))).collect()
}

fn exhaustive_row(tris_a: &[[Vec3; 3]], tris_b: &[[Vec3; 3]], i: usize) -> TriDistance {
    tris_b
        .iter()
        .map(|tb| triangle_distance(&tris_a[i], tb))
        .reduce(|x, y| if y.distance < x.distance { y } else { x })
        .expect("non-empty mesh")
}

fn finish(best: Option<TriDistance>) -> Witness {
    let d = best.expect("non-empty mesh");
    Witness {
        point_a: d.a,
        point_b: if d.distance == 0.0 { d.a } else { d.b },
        distance: d.distance,
    }
}

/// All-pairs minimum on a single thread. No hierarchy, no pruning.
pub fn closest_pair_exhaustive_seq(mesh_a: &TriMesh, pose_a: &Pose, mesh_b: &TriMesh, pose_b: &Pose) -> Result<Witness, GeometryError> {
    check_nonempty(mesh_a, mesh_b)?;
    let ta = world_triangles(mesh_a, pose_a);
    let tb = world_triangles(mesh_b, pose_b);
    Ok(finish(par::min_by_key_seq(ta.len(), |i| exhaustive_row(&ta, &tb, i), |d| d.distance)))
}

/// All-pairs minimum fanned out over rows of A's triangles.
#[cfg(feature = "parallel")]
pub fn closest_pair_exhaustive_par(mesh_a: &TriMesh, pose_a: &Pose, mesh_b: &TriMesh, pose_b: &Pose) -> Result<Witness, GeometryError> {
    check_nonempty(mesh_a, mesh_b)?;
    let ta = world_triangles(mesh_a, pose_a);
    let tb = world_triangles(mesh_b, pose_b);
    Ok(finish(par::min_by_key_par(ta.len(), |i| exhaustive_row(&ta, &tb, i), |d| d.distance)))
}

/// Exhaustive triangle-pair minimum; parallel when the `parallel` feature is on.
/// Used for offline verification of committed states.
pub fn closest_pair_exhaustive(mesh_a: &TriMesh, pose_a: &Pose, mesh_b: &TriMesh, pose_b: &Pose) -> Result<Witness, GeometryError> {
    #[cfg(feature = "parallel")]
    {
        closest_pair_exhaustive_par(mesh_a, pose_a, mesh_b, pose_b)
    }
    #[cfg(not(feature = "parallel"))]
    {
        closest_pair_exhaustive_seq(mesh_a, pose_a, mesh_b, pose_b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;

    fn unit_cube() -> TriMesh {
        TriMesh::cuboid(Vec3::zeros(), Vec3::repeat(1.0)).unwrap()
    }

    #[test]
    fn separated_cubes() {
        let c = unit_cube();
        let w = closest_pair(&c, &Pose::identity(), &c, &Pose::from_translation(Vec3::new(1.5, 0.0, 0.0))).unwrap();
        assert!((w.distance - 0.5).abs() < 1e-12);
        assert!(((w.point_a - w.point_b).norm() - w.distance).abs() < 1e-12);
        assert!((w.point_a.x - 1.0).abs() < 1e-12 && (w.point_b.x - 1.5).abs() < 1e-12);
    }

    #[test]
    fn overlapping_and_coincident_cubes() {
        let c = unit_cube();
        let w = closest_pair(&c, &Pose::identity(), &c, &Pose::from_translation(Vec3::new(0.5, 0.0, 0.0))).unwrap();
        assert_eq!(w.distance, 0.0);
        assert_eq!(w.point_a, w.point_b);
        let w = closest_pair(&c, &Pose::identity(), &c, &Pose::identity()).unwrap();
        assert_eq!(w.distance, 0.0);
    }

    #[test]
    fn bvh_agrees_with_exhaustive_on_rotated_spheres() {
        let a = TriMesh::ellipsoid(Vec3::new(20.0, 10.0, 8.0), 24, 12).unwrap();
        let b = TriMesh::ellipsoid(Vec3::new(5.0, 5.0, 15.0), 12, 8).unwrap();
        let pa = Pose::new(Vec3::new(1.0, 2.0, 3.0), UnitQuaternion::from_euler_angles(0.3, 0.2, 0.1));
        for k in 0..8 {
            let pb = Pose::new(
                Vec3::new(30.0 - 3.0 * k as f64, 5.0, -2.0),
                UnitQuaternion::from_euler_angles(-0.4, 1.0, 0.2 * k as f64),
            );
            let fast = closest_pair(&a, &pa, &b, &pb).unwrap();
            let slow = closest_pair_exhaustive_seq(&a, &pa, &b, &pb).unwrap();
            assert!((fast.distance - slow.distance).abs() < 1e-9, "k={k}: {} vs {}", fast.distance, slow.distance);
            let sym = closest_pair(&b, &pb, &a, &pa).unwrap();
            assert!((fast.distance - sym.distance).abs() < 1e-9);
        }
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_matches_sequential() {
        let a = TriMesh::ellipsoid(Vec3::new(20.0, 10.0, 8.0), 16, 8).unwrap();
        let pb = Pose::from_translation(Vec3::new(0.0, 0.0, 25.0));
        let s = closest_pair_exhaustive_seq(&a, &Pose::identity(), &a, &pb).unwrap();
        let p = closest_pair_exhaustive_par(&a, &Pose::identity(), &a, &pb).unwrap();
        assert_eq!(s, p);
    }
}
