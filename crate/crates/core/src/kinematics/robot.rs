use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::ik::{self, IkFamily, IkSolveRecord};
use super::joint::{Chain, Joint};
use super::{read_json, KinematicsError, LinkMesh};
use crate::geometry::{MeshRef, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobotHandle {
    #[default]
    Base,
    Tcpf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IkChoice {
    #[default]
    Auto,
    Numeric,
}

/// On-disk robot description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobotFile {
    pub joints: Vec<RobotJointSpec>,
    #[serde(default)]
    pub tool: Pose,
    #[serde(default)]
    pub base_mesh: Option<MeshRef>,
    #[serde(default)]
    pub ik: IkChoice,
    #[serde(default)]
    pub q0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobotJointSpec {
    #[serde(flatten)]
    pub joint: Joint,
    /// Geometry of the link this joint drives, in the link frame.
    #[serde(default)]
    pub mesh: Option<MeshRef>,
}

#[derive(Debug, Clone)]
pub struct RobotEntity {
    pub chain: Arc<Chain>,
    pub family: IkFamily,
    pub q: Vec<f64>,
    pub base_pose: Pose,
    pub links: Arc<Vec<LinkMesh>>,
    pub handle_mode: RobotHandle,
}

impl RobotEntity {
    pub fn new(chain: Chain, q: Vec<f64>, base_pose: Pose, links: Vec<LinkMesh>) -> Result<Self, KinematicsError> {
        chain.check_q(&q)?;
        Ok(RobotEntity {
            family: IkFamily::detect(&chain),
            chain: Arc::new(chain),
            q,
            base_pose,
            links: Arc::new(links),
            handle_mode: RobotHandle::Base,
        })
    }

    pub fn from_file(file: RobotFile, base_dir: &Path, base_pose: Pose) -> Result<Self, KinematicsError> {
        let mut links = Vec::new();
        if let Some(m) = &file.base_mesh {
            links.push(LinkMesh {
                parent: None,
                mesh: Arc::new(m.resolve(base_dir)?),
            });
        }
        let mut joints = Vec::new();
        for (i, spec) in file.joints.into_iter().enumerate() {
            if let Some(m) = &spec.mesh {
                links.push(LinkMesh {
                    parent: Some(i),
                    mesh: Arc::new(m.resolve(base_dir)?),
                });
            }
            joints.push(spec.joint);
        }
        let chain = Chain::new(joints, file.tool)?;
        let q = file
            .q0
            .unwrap_or_else(|| chain.joints().iter().map(|j| 0.0f64.clamp(j.limits[0], j.limits[1])).collect());
        let mut robot = RobotEntity::new(chain, q, base_pose, links)?;
        if file.ik == IkChoice::Numeric {
            robot.family = IkFamily::Numeric;
        }
        Ok(robot)
    }

    pub fn load(path: &Path, base_pose: Pose) -> Result<Self, KinematicsError> {
        let file: RobotFile = read_json(path)?;
        RobotEntity::from_file(file, path.parent().unwrap_or(Path::new(".")), base_pose)
    }

    pub fn tcp_pose(&self) -> Pose {
        self.chain.fk(&self.base_pose, &self.q)
    }

    pub fn ik(&self, target: &Pose) -> Result<IkSolveRecord, KinematicsError> {
        ik::ik(&self.chain, &self.family, &self.base_pose, target, &self.q)
    }

    /// World pose of every link mesh.
    pub fn link_poses(&self) -> Vec<Pose> {
        let frames = self.chain.link_frames(&self.base_pose, &self.q);
        self.links.iter().map(|l| l.parent.map_or(self.base_pose, |i| frames[i])).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;

    #[test]
    fn file_schema_round_trip() {
        let text = r#"{
            "joints": [
                {"name": "j1", "type": "revolute", "axis": [0, 0, 1], "limits": [-3.1, 3.1],
                 "mesh": {"box": [400, 40, 40], "center_mm": [200, 0, 0]}},
                {"name": "j2", "type": "revolute", "axis": [0, 0, 1],
                 "origin": {"position_mm": [400, 0, 0]}, "limits": [-3.1, 3.1]}
            ],
            "tool": {"position_mm": [300, 0, 0]},
            "base_mesh": {"box": [100, 100, 20]}
        }"#;
        let file: RobotFile = serde_json::from_str(text).unwrap();
        let r = RobotEntity::from_file(file, Path::new("."), Pose::identity()).unwrap();
        assert_eq!(r.family, IkFamily::Planar2r { l1: 400.0, l2: 300.0 });
        assert_eq!(r.links.len(), 2);
        assert!((r.tcp_pose().position - Vec3::new(700.0, 0.0, 0.0)).norm() < 1e-12);
        assert_eq!(r.link_poses()[0], Pose::identity());
    }

    #[test]
    fn initial_q_must_respect_limits() {
        let chain = Chain::planar_2r(1.0, 1.0, [-1.0, 1.0]);
        assert!(RobotEntity::new(chain, vec![2.0, 0.0], Pose::identity(), vec![]).is_err());
    }
}
