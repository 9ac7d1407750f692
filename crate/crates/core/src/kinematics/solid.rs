use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::geometry::{Pose, TriMesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PivotMode {
    #[default]
    SelfOrigin,
    GeometricCenter,
    User,
}

#[derive(Debug, Clone)]
pub struct SolidEntity {
    pub mesh: Arc<TriMesh>,
    pub pose: Pose,
    pub pivot_mode: PivotMode,
    /// Pivot in the solid's local frame, used in `User` mode.
    pub user_pivot: Pose,
}

impl SolidEntity {
    pub fn new(mesh: Arc<TriMesh>, pose: Pose) -> Self {
        SolidEntity {
            mesh,
            pose,
            pivot_mode: PivotMode::SelfOrigin,
            user_pivot: Pose::identity(),
        }
    }

    /// Pivot frame in the solid's local frame.
    pub fn local_pivot(&self) -> Pose {
        match self.pivot_mode {
            PivotMode::SelfOrigin => Pose::identity(),
            PivotMode::GeometricCenter => Pose::from_translation(self.mesh.vertex_centroid()),
            PivotMode::User => self.user_pivot,
        }
    }

    /// Pivot frame in world.
    pub fn pivot_frame(&self) -> Pose {
        self.pose.compose(&self.local_pivot())
    }
}
