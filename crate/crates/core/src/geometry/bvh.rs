use super::mesh::TriMesh;
use super::{Pose, Vec3};

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn empty() -> Self {
        Aabb {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Self {
        points.into_iter().fold(Aabb::empty(), |b, p| b.grow(p))
    }

    pub fn grow(self, p: &Vec3) -> Self {
        Aabb {
            min: self.min.inf(p),
            max: self.max.sup(p),
        }
    }

    pub fn union(&self, o: &Aabb) -> Self {
        Aabb {
            min: self.min.inf(&o.min),
            max: self.max.sup(&o.max),
        }
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) / 2.0
    }

    pub fn half_extents(&self) -> Vec3 {
        (self.max - self.min) / 2.0
    }

    /// Euclidean gap between the boxes; 0 when they overlap.
    pub fn distance(&self, o: &Aabb) -> f64 {
        let gap = (o.min - self.max).sup(&(self.min - o.max)).sup(&Vec3::zeros());
        gap.norm()
    }

    /// Box enclosing this box after a rigid transform, slightly inflated.
    pub fn transformed(&self, pose: &Pose) -> Aabb {
        let r = pose.orientation.to_rotation_matrix();
        let c = pose.transform_point(&self.center());
        let h = r.matrix().abs() * self.half_extents() + Vec3::repeat(1e-9);
        Aabb { min: c - h, max: c + h }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum NodeKind {
    Leaf { start: usize, count: usize },
    Inner { left: usize, right: usize },
}

#[derive(Debug, Clone)]
pub(crate) struct Node {
    pub aabb: Aabb,
    pub kind: NodeKind,
}

/// Median-split AABB tree over a mesh's triangles in the mesh's local frame.
#[derive(Debug, Clone)]
pub(crate) struct Bvh {
    pub nodes: Vec<Node>,
    /// Triangle indices, permuted so every leaf covers a contiguous run.
    pub order: Vec<usize>,
}

impl Bvh {
    pub fn build(mesh: &TriMesh) -> Bvh {
        let centroids: Vec<Vec3> = (0..mesh.len())
            .map(|i| {
                let [a, b, c] = mesh.triangle(i);
                (a + b + c) / 3.0
            })
            .collect();
        let mut bvh = Bvh {
            nodes: Vec::with_capacity(2 * mesh.len() / LEAF_SIZE + 1),
            order: (0..mesh.len()).collect(),
        };
        bvh.build_node(mesh, &centroids, 0, mesh.len());
        bvh
    }

    fn build_node(&mut self, mesh: &TriMesh, centroids: &[Vec3], start: usize, end: usize) -> usize {
        let aabb = self.order[start..end]
            .iter()
            .flat_map(|&t| mesh.triangle(t))
            .fold(Aabb::empty(), |b, p| b.grow(&p));
        let idx = self.nodes.len();
        self.nodes.push(Node {
            aabb,
            kind: NodeKind::Leaf { start, count: end - start },
        });
        if end - start <= LEAF_SIZE {
            return idx;
        }
        let cb = self.order[start..end].iter().fold(Aabb::empty(), |b, &t| b.grow(&centroids[t]));
        let extent = cb.max - cb.min;
        let axis = extent.imax();
        let mid = (start + end) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centroids[a][axis].total_cmp(&centroids[b][axis])
        });
        let left = self.build_node(mesh, centroids, start, mid);
        let right = self.build_node(mesh, centroids, mid, end);
        self.nodes[idx].kind = NodeKind::Inner { left, right };
        idx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aabb_distance() {
        let a = Aabb { min: Vec3::zeros(), max: Vec3::repeat(1.0) };
        let b = Aabb { min: Vec3::new(2.0, 0.0, 0.0), max: Vec3::new(3.0, 1.0, 1.0) };
        assert_eq!(a.distance(&b), 1.0);
        assert_eq!(a.distance(&a), 0.0);
        let c = Aabb { min: Vec3::new(4.0, 5.0, 0.0), max: Vec3::new(5.0, 6.0, 1.0) };
        assert_eq!(a.distance(&c), 5.0);
    }

    #[test]
    fn leaves_cover_every_triangle_once() {
        let mesh = TriMesh::ellipsoid(Vec3::new(10.0, 5.0, 3.0), 16, 9).unwrap();
        let bvh = Bvh::build(&mesh);
        let mut seen = vec![0; mesh.len()];
        for n in &bvh.nodes {
            if let NodeKind::Leaf { start, count } = n.kind {
                for &t in &bvh.order[start..start + count] {
                    for p in mesh.triangle(t) {
                        assert!(p.iter().zip(n.aabb.min.iter()).all(|(x, m)| x >= m));
                        assert!(p.iter().zip(n.aabb.max.iter()).all(|(x, m)| x <= m));
                    }
                }
            }
        }
        fn walk(bvh: &Bvh, i: usize, seen: &mut [u32]) {
            match bvh.nodes[i].kind {
                NodeKind::Leaf { start, count } => bvh.order[start..start + count].iter().for_each(|&t| seen[t] += 1),
                NodeKind::Inner { left, right } => {
                    walk(bvh, left, seen);
                    walk(bvh, right, seen);
                }
            }
        }
        walk(&bvh, 0, &mut seen);
        assert!(seen.iter().all(|&s| s == 1));
    }
}
