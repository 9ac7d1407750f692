use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::dls::DlsParams;
use super::robot::{RobotEntity, RobotHandle};
use super::skeleton::{MannequinEntity, MannequinHandle};
use super::solid::{PivotMode, SolidEntity};
use super::KinematicsError;
use crate::geometry::{Pose, PoseDelta, TriMesh, Vec3};

/// Which frame of an entity the stylus drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandleMode {
    Base,
    Tcpf,
    WholeBody,
    LeftHand,
    RightHand,
    BothHands,
}

#[derive(Debug, Clone)]
pub enum EntityKind {
    Solid(SolidEntity),
    Robot(RobotEntity),
    Mannequin(MannequinEntity),
}

#[derive(Debug, Clone)]
pub struct Entity {
    pub name: String,
    pub kind: EntityKind,
}

#[derive(Debug, Clone)]
pub struct PosedMesh {
    pub mesh: Arc<TriMesh>,
    pub pose: Pose,
}

/// Mutable configuration of an entity, as written to the committed-state log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EntityState {
    Solid { pose: Pose },
    Robot { base_pose: Pose, q: Vec<f64> },
    Mannequin { root_pose: Pose, q: Vec<f64> },
}

impl EntityState {
    /// Bitwise equality, so `-0.0 != 0.0` and NaN payloads count.
    pub fn bits_eq(&self, other: &EntityState) -> bool {
        fn pose_bits(p: &Pose) -> [u64; 7] {
            let q = p.orientation.quaternion();
            [p.position.x, p.position.y, p.position.z, q.w, q.i, q.j, q.k].map(f64::to_bits)
        }
        fn q_bits(a: &[f64], b: &[f64]) -> bool {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
        }
        match (self, other) {
            (EntityState::Solid { pose: a }, EntityState::Solid { pose: b }) => pose_bits(a) == pose_bits(b),
            (EntityState::Robot { base_pose: a, q: qa }, EntityState::Robot { base_pose: b, q: qb })
            | (EntityState::Mannequin { root_pose: a, q: qa }, EntityState::Mannequin { root_pose: b, q: qb }) => {
                pose_bits(a) == pose_bits(b) && q_bits(qa, qb)
            }
            _ => false,
        }
    }
}

/// Entity handle snapshot taken when the clutch engages.
#[derive(Debug, Clone, PartialEq)]
pub struct HandleAnchor {
    pub poses: Vec<Pose>,
    pub pivot: Vec3,
}

impl Entity {
    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            EntityKind::Solid(_) => "solid",
            EntityKind::Robot(_) => "robot",
            EntityKind::Mannequin(_) => "mannequin",
        }
    }

    pub fn posed_meshes(&self) -> Vec<PosedMesh> {
        match &self.kind {
            EntityKind::Solid(s) => vec![PosedMesh {
                mesh: s.mesh.clone(),
                pose: s.pose,
            }],
            EntityKind::Robot(r) => r
                .links
                .iter()
                .zip(r.link_poses())
                .map(|(l, pose)| PosedMesh { mesh: l.mesh.clone(), pose })
                .collect(),
            EntityKind::Mannequin(m) => {
                let (_, post) = m.skeleton.frames(&m.root_pose, &m.q);
                m.skeleton
                    .meshes()
                    .iter()
                    .map(|l| PosedMesh {
                        mesh: l.mesh.clone(),
                        pose: l.parent.map_or(m.root_pose, |i| post[i]),
                    })
                    .collect()
            }
        }
    }

    pub fn handle_mode(&self) -> Option<HandleMode> {
        match &self.kind {
            EntityKind::Solid(_) => None,
            EntityKind::Robot(r) => Some(match r.handle_mode {
                RobotHandle::Base => HandleMode::Base,
                RobotHandle::Tcpf => HandleMode::Tcpf,
            }),
            EntityKind::Mannequin(m) => Some(match m.handle_mode {
                MannequinHandle::WholeBody => HandleMode::WholeBody,
                MannequinHandle::LeftHand => HandleMode::LeftHand,
                MannequinHandle::RightHand => HandleMode::RightHand,
                MannequinHandle::BothHands => HandleMode::BothHands,
            }),
        }
    }

    pub fn set_handle_mode(&mut self, mode: HandleMode) -> Result<(), KinematicsError> {
        let kind = self.kind_name();
        match (&mut self.kind, mode) {
            (EntityKind::Robot(r), HandleMode::Base) => r.handle_mode = RobotHandle::Base,
            (EntityKind::Robot(r), HandleMode::Tcpf) => r.handle_mode = RobotHandle::Tcpf,
            (EntityKind::Mannequin(m), HandleMode::WholeBody) => m.handle_mode = MannequinHandle::WholeBody,
            (EntityKind::Mannequin(m), HandleMode::LeftHand) => m.handle_mode = MannequinHandle::LeftHand,
            (EntityKind::Mannequin(m), HandleMode::RightHand) => m.handle_mode = MannequinHandle::RightHand,
            (EntityKind::Mannequin(m), HandleMode::BothHands) => m.handle_mode = MannequinHandle::BothHands,
            _ => return Err(KinematicsError::HandleMismatch { mode, kind }),
        }
        Ok(())
    }

    pub fn set_pivot(&mut self, mode: PivotMode, user_pivot: Option<Pose>) -> Result<(), KinematicsError> {
        match &mut self.kind {
            EntityKind::Solid(s) => {
                s.pivot_mode = mode;
                if let Some(p) = user_pivot {
                    s.user_pivot = p;
                }
                Ok(())
            }
            _ => Err(KinematicsError::InvalidModel(format!("{} entities have no pivot", self.kind_name()))),
        }
    }

    pub fn set_trunk_locked(&mut self, locked: bool) -> Result<(), KinematicsError> {
        match &mut self.kind {
            EntityKind::Mannequin(m) => {
                m.trunk_locked = locked;
                Ok(())
            }
            _ => Err(KinematicsError::InvalidModel(format!("{} entities have no trunk", self.kind_name()))),
        }
    }

    pub fn anchor(&self) -> HandleAnchor {
        match &self.kind {
            EntityKind::Solid(s) => HandleAnchor {
                poses: vec![s.pose],
                pivot: s.pivot_frame().position,
            },
            EntityKind::Robot(r) => {
                let p = match r.handle_mode {
                    RobotHandle::Base => r.base_pose,
                    RobotHandle::Tcpf => r.tcp_pose(),
                };
                HandleAnchor {
                    poses: vec![p],
                    pivot: p.position,
                }
            }
            EntityKind::Mannequin(m) => {
                let poses = m.handle_poses();
                let pivot = poses.iter().map(|p| p.position).sum::<Vec3>() / poses.len() as f64;
                HandleAnchor { poses, pivot }
            }
        }
    }

    /// The frame recorded into trajectories: the pivot, base, tool, root or hand frame.
    pub fn handle_pose(&self) -> Pose {
        match &self.kind {
            EntityKind::Solid(s) => s.pivot_frame(),
            _ => {
                let a = self.anchor();
                Pose::new(a.pivot, a.poses[0].orientation)
            }
        }
    }

    pub fn state(&self) -> EntityState {
        match &self.kind {
            EntityKind::Solid(s) => EntityState::Solid { pose: s.pose },
            EntityKind::Robot(r) => EntityState::Robot {
                base_pose: r.base_pose,
                q: r.q.clone(),
            },
            EntityKind::Mannequin(m) => EntityState::Mannequin {
                root_pose: m.root_pose,
                q: m.q.clone(),
            },
        }
    }

    pub fn set_state(&mut self, state: &EntityState) -> Result<(), KinematicsError> {
        match (&mut self.kind, state) {
            (EntityKind::Solid(s), EntityState::Solid { pose }) => s.pose = *pose,
            (EntityKind::Robot(r), EntityState::Robot { base_pose, q }) => {
                r.chain.check_q(q)?;
                r.base_pose = *base_pose;
                r.q = q.clone();
            }
            (EntityKind::Mannequin(m), EntityState::Mannequin { root_pose, q }) => {
                if q.len() != m.q.len() {
                    return Err(KinematicsError::DofMismatch {
                        expected: m.q.len(),
                        got: q.len(),
                    });
                }
                m.root_pose = *root_pose;
                m.q = q.clone();
            }
            _ => return Err(KinematicsError::InvalidModel(format!("state kind does not match {} entity {:?}", self.kind_name(), self.name))),
        }
        Ok(())
    }
}

/// Candidate configuration for `e` after the scene displacement `delta`
/// measured from `anchor`. The input entity is never modified.
pub fn move_entity(e: &Entity, anchor: &HandleAnchor, delta: &PoseDelta, dls: &DlsParams) -> Result<Entity, KinematicsError> {
    let mut out = e.clone();
    let targets: Vec<Pose> = anchor.poses.iter().map(|p| delta.apply_about(p, &anchor.pivot)).collect();
    match &mut out.kind {
        EntityKind::Solid(s) => s.pose = targets[0],
        EntityKind::Robot(r) => match r.handle_mode {
            RobotHandle::Base => r.base_pose = targets[0],
            RobotHandle::Tcpf => {
                let rec = r.ik(&targets[0])?;
                r.q = rec.q().to_vec();
            }
        },
        EntityKind::Mannequin(m) => {
            let (root, q) = m.solve(&targets, dls)?;
            m.root_pose = root;
            m.q = q;
        }
    }
    Ok(out)
}
