use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{GeometryError, Pose, TriMesh, Vec3};

/// Where a mesh comes from in scene and kinematics files.
///
/// A bare string is a file path relative to the referencing file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeshRef {
    File(PathBuf),
    Box {
        #[serde(rename = "box")]
        size_mm: [f64; 3],
        #[serde(default)]
        center_mm: [f64; 3],
    },
    Ellipsoid {
        #[serde(rename = "ellipsoid")]
        radii_mm: [f64; 3],
        #[serde(default)]
        center_mm: [f64; 3],
    },
}

impl MeshRef {
    pub fn resolve(&self, base_dir: &Path) -> Result<TriMesh, GeometryError> {
        match self {
            MeshRef::File(p) => {
                let path = if p.is_absolute() { p.clone() } else { base_dir.join(p) };
                TriMesh::load(&path)
            }
            MeshRef::Box { size_mm, center_mm } => {
                let h = Vec3::from(*size_mm) / 2.0;
                let c = Vec3::from(*center_mm);
                TriMesh::cuboid(c - h, c + h)
            }
            MeshRef::Ellipsoid { radii_mm, center_mm } => {
                TriMesh::ellipsoid(Vec3::from(*radii_mm), 24, 12)?.transformed(&Pose::from_translation(Vec3::from(*center_mm)))
            }
        }
    }
}

impl TriMesh {
    /// Copy with every vertex mapped through `pose`.
    pub fn transformed(&self, pose: &Pose) -> Result<TriMesh, GeometryError> {
        let vertices = self.vertices().iter().map(|v| pose.transform_point(v)).collect();
        TriMesh::new(vertices, self.triangles().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_and_file_refs() {
        let r: MeshRef = serde_json::from_str(r#"{"box":[10,20,30],"center_mm":[0,0,15]}"#).unwrap();
        let m = r.resolve(Path::new(".")).unwrap();
        let bb = m.aabb();
        assert_eq!(bb.min, Vec3::new(-5.0, -10.0, 0.0));
        assert_eq!(bb.max, Vec3::new(5.0, 10.0, 30.0));

        let r: MeshRef = serde_json::from_str(r#""meshes/missing.stl""#).unwrap();
        let err = r.resolve(Path::new("/nonexistent")).unwrap_err().to_string();
        assert!(err.contains("missing.stl"), "{err}");
    }
}
