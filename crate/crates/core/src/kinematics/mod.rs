//! Manipulable entities: rigid solids with pivots, serial robots with
//! forward and inverse kinematics, and a 56-DOF mannequin.

pub mod dls;
mod entity;
pub mod ik;
mod joint;
mod robot;
mod skeleton;
mod solid;

use std::path::Path;
use std::sync::Arc;

use serde::de::DeserializeOwned;

pub use dls::DlsParams;
pub use entity::{move_entity, Entity, EntityKind, EntityState, HandleAnchor, HandleMode, PosedMesh};
pub use ik::{ik, IkFamily, IkSolveRecord};
pub use joint::{Chain, Joint, JointType, OpwParams};
pub use robot::{IkChoice, RobotEntity, RobotFile, RobotHandle, RobotJointSpec};
pub use skeleton::{EndFrame, Hand, MannequinEntity, MannequinHandle, Skeleton, SkeletonFile, MANNEQUIN_DOF};
pub use solid::{PivotMode, SolidEntity};

use crate::geometry::{GeometryError, TriMesh};

/// Mesh rigidly attached to a joint's output frame, or to the base/root when `parent` is `None`.
#[derive(Debug, Clone)]
pub struct LinkMesh {
    pub parent: Option<usize>,
    pub mesh: Arc<TriMesh>,
}

#[derive(Debug, thiserror::Error)]
pub enum KinematicsError {
    #[error("out of workspace")]
    OutOfWorkspace,
    #[error("target unreachable")]
    TargetUnreachable { residual_mm: f64, residual_rad: f64 },
    #[error("joint {joint:?} value {value} is outside its limits")]
    LimitViolation { joint: String, value: f64 },
    #[error("expected {expected} joint values, got {got}")]
    DofMismatch { expected: usize, got: usize },
    #[error("invalid kinematic model: {0}")]
    InvalidModel(String),
    #[error("handle mode {mode:?} does not apply to {kind} entities")]
    HandleMismatch { mode: HandleMode, kind: &'static str },
    #[error("number of targets does not match the handle mode")]
    TargetMismatch,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_path_to_error::Error<serde_json::Error>,
    },
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, KinematicsError> {
    let text = std::fs::read_to_string(path).map_err(|source| KinematicsError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|source| KinematicsError::Parse {
        path: path.display().to_string(),
        source,
    })
}
