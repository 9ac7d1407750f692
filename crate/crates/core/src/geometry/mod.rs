//! Poses, triangle meshes, closest-pair distance queries and safety-zone contacts.
//!
//! All lengths are millimetres.

mod bvh;
mod contact;
mod mesh;
mod pose;
mod query;
mod source;
pub mod triangle;

use std::path::Path;

pub use bvh::Aabb;
pub use contact::{contact_estimate, witness_normal, Contact};
pub use mesh::{parse_obj, parse_stl_ascii, TriMesh, MIN_TRIANGLE_AREA};
pub use pose::{compose, Pose, PoseDelta};
#[cfg(feature = "parallel")]
pub use query::closest_pair_exhaustive_par;
pub use source::MeshRef;
pub use query::{closest_pair, closest_pair_exhaustive, closest_pair_exhaustive_seq, Witness};

pub type Vec3 = nalgebra::Vector3<f64>;

#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("empty geometry")]
    EmptyGeometry,
    #[error("triangle {triangle} references vertex {index} but the mesh has {vertex_count} vertices")]
    IndexOutOfRange { triangle: usize, index: u32, vertex_count: usize },
    #[error("triangle {triangle} is degenerate (area {area:e} mm²)")]
    DegenerateTriangle { triangle: usize, area: f64 },
    #[error("mesh contains a non-finite vertex coordinate")]
    NonFiniteVertex,
    #[error("fallback normal must be a finite unit vector")]
    NonUnitNormal,
    #[error("safety margin must be positive, got {0}")]
    InvalidMargin(f64),
    #[error("pose has a non-finite position or a zero quaternion")]
    InvalidPose,
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("cannot read mesh file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl GeometryError {
    pub(crate) fn with_path(self, path: &Path) -> Self {
        match self {
            GeometryError::Parse { line, message, .. } => GeometryError::Parse {
                path: path.display().to_string(),
                line,
                message,
            },
            other => other,
        }
    }
}
