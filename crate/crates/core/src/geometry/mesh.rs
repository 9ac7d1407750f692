use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use super::bvh::{Aabb, Bvh};
use super::{GeometryError, Vec3};

/// Minimum accepted triangle area, mm².
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

/// Indexed triangle mesh in its local (authoring) frame, millimetres.
///
/// The bounding-volume hierarchy used by distance queries is built on first use
/// and cached; the mesh itself is immutable after construction.
pub struct TriMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[u32; 3]>,
    bvh: OnceLock<Bvh>,
}

impl Clone for TriMesh {
    fn clone(&self) -> Self {
        TriMesh {
            vertices: self.vertices.clone(),
            triangles: self.triangles.clone(),
            bvh: OnceLock::new(),
        }
    }
}

impl fmt::Debug for TriMesh {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TriMesh")
            .field("vertices", &self.vertices.len())
            .field("triangles", &self.triangles.len())
            .finish()
    }
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Result<Self, GeometryError> {
        if vertices.is_empty() || triangles.is_empty() {
            return Err(GeometryError::EmptyGeometry);
        }
        if vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(GeometryError::NonFiniteVertex);
        }
        for (i, t) in triangles.iter().enumerate() {
            if let Some(&bad) = t.iter().find(|&&ix| ix as usize >= vertices.len()) {
                return Err(GeometryError::IndexOutOfRange {
                    triangle: i,
                    index: bad,
                    vertex_count: vertices.len(),
                });
            }
            let [a, b, c] = t.map(|ix| vertices[ix as usize]);
            let area = 0.5 * (b - a).cross(&(c - a)).norm();
            if area <= MIN_TRIANGLE_AREA {
                return Err(GeometryError::DegenerateTriangle { triangle: i, area });
            }
        }
        Ok(TriMesh {
            vertices,
            triangles,
            bvh: OnceLock::new(),
        })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn triangle(&self, i: usize) -> [Vec3; 3] {
        self.triangles[i].map(|ix| self.vertices[ix as usize])
    }

    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub(crate) fn bvh(&self) -> &Bvh {
        self.bvh.get_or_init(|| Bvh::build(self))
    }

    /// Centroid of the vertex set (not the area- or volume-weighted centroid).
    pub fn vertex_centroid(&self) -> Vec3 {
        self.vertices.iter().sum::<Vec3>() / self.vertices.len() as f64
    }

    pub fn aabb(&self) -> Aabb {
        Aabb::from_points(self.vertices.iter())
    }

    /// Axis-aligned box spanning `min`..`max`, outward-wound, 12 triangles.
    pub fn cuboid(min: Vec3, max: Vec3) -> Result<Self, GeometryError> {
        let v = |x: bool, y: bool, z: bool| {
            Vec3::new(
                if x { max.x } else { min.x },
                if y { max.y } else { min.y },
                if z { max.z } else { min.z },
            )
        };
        let vertices = vec![
            v(false, false, false),
            v(true, false, false),
            v(true, true, false),
            v(false, true, false),
            v(false, false, true),
            v(true, false, true),
            v(true, true, true),
            v(false, true, true),
        ];
        let triangles = vec![
            [0, 2, 1], [0, 3, 2], // -z
            [4, 5, 6], [4, 6, 7], // +z
            [0, 1, 5], [0, 5, 4], // -y
            [3, 7, 6], [3, 6, 2], // +y
            [0, 4, 7], [0, 7, 3], // -x
            [1, 2, 6], [1, 6, 5], // +x
        ];
        TriMesh::new(vertices, triangles)
    }

    /// Box of the given full size centered on the local origin.
    pub fn centered_box(size: Vec3) -> Result<Self, GeometryError> {
        TriMesh::cuboid(-size / 2.0, size / 2.0)
    }

    /// Latitude/longitude ellipsoid with semi-axes `radii`, centered on the origin.
    pub fn ellipsoid(radii: Vec3, segments: usize, rings: usize) -> Result<Self, GeometryError> {
        let segments = segments.max(3);
        let rings = rings.max(2);
        let mut vertices = vec![Vec3::new(0.0, 0.0, radii.z)];
        for r in 1..rings {
            let theta = std::f64::consts::PI * r as f64 / rings as f64;
            for s in 0..segments {
                let phi = 2.0 * std::f64::consts::PI * s as f64 / segments as f64;
                vertices.push(Vec3::new(
                    radii.x * theta.sin() * phi.cos(),
                    radii.y * theta.sin() * phi.sin(),
                    radii.z * theta.cos(),
                ));
            }
        }
        vertices.push(Vec3::new(0.0, 0.0, -radii.z));
        let south = (vertices.len() - 1) as u32;
        let ring = |r: usize, s: usize| (1 + (r - 1) * segments + s % segments) as u32;
        let mut triangles = Vec::new();
        for s in 0..segments {
            triangles.push([0, ring(1, s), ring(1, s + 1)]);
        }
        for r in 1..rings - 1 {
            for s in 0..segments {
                let (a, b, c, d) = (ring(r, s), ring(r, s + 1), ring(r + 1, s), ring(r + 1, s + 1));
                triangles.push([a, c, d]);
                triangles.push([a, d, b]);
            }
        }
        for s in 0..segments {
            triangles.push([south, ring(rings - 1, s + 1), ring(rings - 1, s)]);
        }
        TriMesh::new(vertices, triangles)
    }

    /// Load an ASCII STL or Wavefront OBJ file, chosen by extension.
    pub fn load(path: &Path) -> Result<Self, GeometryError> {
        let text = std::fs::read_to_string(path).map_err(|e| GeometryError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        let parsed = match ext.as_deref() {
            Some("stl") => parse_stl_ascii(&text),
            Some("obj") => parse_obj(&text),
            _ => Err(GeometryError::Parse {
                path: String::new(),
                line: 0,
                message: "unsupported mesh format (expected .stl or .obj)".into(),
            }),
        };
        parsed.map_err(|e| e.with_path(path))
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> GeometryError {
    GeometryError::Parse {
        path: String::new(),
        line,
        message: message.into(),
    }
}

fn parse_vec3<'a>(mut it: impl Iterator<Item = &'a str>, line: usize) -> Result<Vec3, GeometryError> {
    let mut out = [0.0; 3];
    for c in out.iter_mut() {
        let tok = it.next().ok_or_else(|| parse_err(line, "expected 3 coordinates"))?;
        *c = tok.parse().map_err(|_| parse_err(line, format!("bad number {tok:?}")))?;
    }
    Ok(Vec3::from(out))
}

/// Welds bit-identical vertices so STL facet soups share indices.
#[derive(Default)]
struct Welder {
    index: HashMap<[u64; 3], u32>,
    vertices: Vec<Vec3>,
}

impl Welder {
    fn insert(&mut self, v: Vec3) -> u32 {
        let key = [v.x.to_bits(), v.y.to_bits(), v.z.to_bits()];
        *self.index.entry(key).or_insert_with(|| {
            self.vertices.push(v);
            (self.vertices.len() - 1) as u32
        })
    }
}

pub fn parse_stl_ascii(text: &str) -> Result<TriMesh, GeometryError> {
    let mut welder = Welder::default();
    let mut triangles = Vec::new();
    let mut facet: Vec<u32> = Vec::with_capacity(3);
    let mut in_loop = false;
    let mut saw_solid = false;
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let mut toks = raw.split_whitespace();
        match toks.next() {
            None => {}
            Some("solid") => saw_solid = true,
            Some("facet") | Some("endsolid") => {}
            Some("outer") => {
                in_loop = true;
                facet.clear();
            }
            Some("vertex") => {
                if !in_loop {
                    return Err(parse_err(line, "vertex outside of loop"));
                }
                facet.push(welder.insert(parse_vec3(toks, line)?));
            }
            Some("endloop") => {
                if facet.len() != 3 {
                    return Err(parse_err(line, format!("facet with {} vertices; only triangles are accepted", facet.len())));
                }
                triangles.push([facet[0], facet[1], facet[2]]);
                in_loop = false;
            }
            Some("endfacet") => {}
            Some(other) => return Err(parse_err(line, format!("unexpected keyword {other:?}"))),
        }
    }
    if !saw_solid {
        return Err(parse_err(1, "missing 'solid' header (binary STL is not supported)"));
    }
    TriMesh::new(welder.vertices, triangles)
}

pub fn parse_obj(text: &str) -> Result<TriMesh, GeometryError> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let raw = raw.split('#').next().unwrap_or("");
        let mut toks = raw.split_whitespace();
        match toks.next() {
            Some("v") => vertices.push(parse_vec3(toks, line)?),
            Some("f") => {
                let refs: Vec<&str> = toks.collect();
                if refs.len() != 3 {
                    return Err(parse_err(line, format!("face with {} vertices; only triangles are accepted", refs.len())));
                }
                let mut tri = [0u32; 3];
                for (slot, r) in tri.iter_mut().zip(&refs) {
                    let head = r.split('/').next().unwrap_or("");
                    let ix: i64 = head.parse().map_err(|_| parse_err(line, format!("bad vertex reference {r:?}")))?;
                    let resolved = if ix > 0 {
                        ix - 1
                    } else if ix < 0 {
                        vertices.len() as i64 + ix
                    } else {
                        return Err(parse_err(line, "vertex index 0 is invalid"));
                    };
                    if resolved < 0 || resolved as usize >= vertices.len() {
                        return Err(parse_err(line, format!("vertex reference {r:?} out of range")));
                    }
                    *slot = resolved as u32;
                }
                triangles.push(tri);
            }
            _ => {}
        }
    }
    TriMesh::new(vertices, triangles)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_is_rejected() {
        assert!(matches!(TriMesh::new(vec![], vec![]), Err(GeometryError::EmptyGeometry)));
        assert_eq!(GeometryError::EmptyGeometry.to_string(), "empty geometry");
    }

    #[test]
    fn bad_index_and_degenerate() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::y()];
        assert!(matches!(
            TriMesh::new(v.clone(), vec![[0, 1, 3]]),
            Err(GeometryError::IndexOutOfRange { index: 3, .. })
        ));
        let line = vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0];
        assert!(matches!(TriMesh::new(line, vec![[0, 1, 2]]), Err(GeometryError::DegenerateTriangle { .. })));
    }

    #[test]
    fn cube_centroid() {
        let m = TriMesh::cuboid(Vec3::zeros(), Vec3::repeat(1.0)).unwrap();
        assert_eq!(m.len(), 12);
        assert!((m.vertex_centroid() - Vec3::repeat(0.5)).norm() < 1e-15);
    }

    #[test]
    fn stl_ascii_welds_vertices() {
        let stl = "solid t\n facet normal 0 0 1\n  outer loop\n   vertex 0 0 0\n   vertex 1 0 0\n   vertex 0 1 0\n  endloop\n endfacet\n\
                   facet normal 0 0 1\n  outer loop\n   vertex 1 0 0\n   vertex 1 1 0\n   vertex 0 1 0\n  endloop\n endfacet\nendsolid t\n";
        let m = parse_stl_ascii(stl).unwrap();
        assert_eq!(m.vertices().len(), 4);
        assert_eq!(m.len(), 2);
    }

    #[test]
    fn obj_quads_rejected() {
        let obj = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n";
        match parse_obj(obj) {
            Err(GeometryError::Parse { line, message, .. }) => {
                assert_eq!(line, 5);
                assert!(message.contains("only triangles"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let tri = "v 0 0 0\nv 1 0 0\nv 1 1 0\nf 1/1/1 2//2 -1\n";
        assert_eq!(parse_obj(tri).unwrap().len(), 1);
    }

    #[test]
    fn ellipsoid_is_closed() {
        let m = TriMesh::ellipsoid(Vec3::new(3.0, 2.0, 1.0), 8, 5).unwrap();
        // Euler characteristic of a sphere: V - E + F = 2, with E = 3F/2.
        let v = m.vertices().len() as i64;
        let f = m.len() as i64;
        assert_eq!(v - 3 * f / 2 + f, 2);
    }
}
