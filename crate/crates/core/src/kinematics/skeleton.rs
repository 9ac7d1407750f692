use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::dls::{self, DlsParams};
use super::joint::Joint;
use super::{read_json, KinematicsError, LinkMesh};
use crate::geometry::{MeshRef, Pose};

pub const MANNEQUIN_DOF: usize = 56;

const DEFAULT_SKELETON: &str = include_str!("../../data/mannequin_default.json");

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkeletonFile {
    pub root_pose: Pose,
    pub joints: Vec<TreeJointSpec>,
    pub end_frames: BTreeMap<String, EndFrameSpec>,
    #[serde(default)]
    pub meshes: Vec<MeshSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeJointSpec {
    #[serde(flatten)]
    pub joint: Joint,
    pub parent: Option<String>,
    #[serde(default)]
    pub default: f64,
    #[serde(default)]
    pub trunk: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EndFrameSpec {
    pub parent: String,
    #[serde(default)]
    pub offset: Pose,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeshSpec {
    pub parent: Option<String>,
    pub mesh: MeshRef,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hand {
    Left,
    Right,
}

impl Hand {
    fn frame_name(self) -> &'static str {
        match self {
            Hand::Left => "left_hand",
            Hand::Right => "right_hand",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EndFrame {
    pub parent: usize,
    pub offset: Pose,
}

/// Rooted joint tree. Parents always precede their children.
#[derive(Debug, Clone)]
pub struct Skeleton {
    joints: Vec<Joint>,
    parents: Vec<Option<usize>>,
    defaults: Vec<f64>,
    trunk: Vec<usize>,
    hands: [EndFrame; 2],
    meshes: Vec<LinkMesh>,
    default_root: Pose,
}

impl Skeleton {
    pub fn from_file(file: SkeletonFile, base_dir: &Path) -> Result<Skeleton, KinematicsError> {
        let mut index = HashMap::new();
        let mut joints = Vec::new();
        let mut parents = Vec::new();
        let mut defaults = Vec::new();
        let mut trunk = Vec::new();
        let lookup = |index: &HashMap<String, usize>, name: &str| {
            index
                .get(name)
                .copied()
                .ok_or_else(|| KinematicsError::InvalidModel(format!("unknown joint {name:?} (parents must be declared first)")))
        };
        for (i, spec) in file.joints.into_iter().enumerate() {
            spec.joint.validate()?;
            let parent = spec.parent.as_deref().map(|p| lookup(&index, p)).transpose()?;
            if index.insert(spec.joint.name.clone(), i).is_some() {
                return Err(KinematicsError::InvalidModel(format!("duplicate joint {:?}", spec.joint.name)));
            }
            if !spec.joint.within_limits(spec.default) {
                return Err(KinematicsError::LimitViolation {
                    joint: spec.joint.name.clone(),
                    value: spec.default,
                });
            }
            if spec.trunk {
                trunk.push(i);
            }
            parents.push(parent);
            defaults.push(spec.default);
            joints.push(spec.joint);
        }
        let hand = |h: Hand| -> Result<EndFrame, KinematicsError> {
            let spec = file
                .end_frames
                .get(h.frame_name())
                .ok_or_else(|| KinematicsError::InvalidModel(format!("missing end frame {:?}", h.frame_name())))?;
            Ok(EndFrame {
                parent: lookup(&index, &spec.parent)?,
                offset: spec.offset,
            })
        };
        let hands = [hand(Hand::Left)?, hand(Hand::Right)?];
        let meshes = file
            .meshes
            .iter()
            .map(|m| {
                Ok(LinkMesh {
                    parent: m.parent.as_deref().map(|p| lookup(&index, p)).transpose()?,
                    mesh: Arc::new(m.mesh.resolve(base_dir)?),
                })
            })
            .collect::<Result<Vec<_>, KinematicsError>>()?;
        Ok(Skeleton {
            joints,
            parents,
            defaults,
            trunk,
            hands,
            meshes,
            default_root: file.root_pose,
        })
    }

    pub fn load(path: &Path) -> Result<Skeleton, KinematicsError> {
        let file: SkeletonFile = read_json(path)?;
        Skeleton::from_file(file, path.parent().unwrap_or(Path::new(".")))
    }

    /// The shipped 56-DOF default skeleton.
    pub fn default_mannequin() -> Skeleton {
        let file: SkeletonFile = serde_json::from_str(DEFAULT_SKELETON).expect("bundled skeleton parses");
        Skeleton::from_file(file, Path::new(".")).expect("bundled skeleton is valid")
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    pub fn defaults(&self) -> &[f64] {
        &self.defaults
    }

    pub fn default_root(&self) -> Pose {
        self.default_root
    }

    pub fn trunk_indices(&self) -> &[usize] {
        &self.trunk
    }

    pub fn meshes(&self) -> &[LinkMesh] {
        &self.meshes
    }

    pub fn end_frame(&self, hand: Hand) -> EndFrame {
        self.hands[hand as usize]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    /// Pre-motion and post-motion world frames of every joint.
    pub fn frames(&self, root: &Pose, q: &[f64]) -> (Vec<Pose>, Vec<Pose>) {
        let mut pre = Vec::with_capacity(self.dof());
        let mut post: Vec<Pose> = Vec::with_capacity(self.dof());
        for (i, j) in self.joints.iter().enumerate() {
            let parent = self.parents[i].map_or(*root, |p| post[p]);
            let f = parent.compose(&j.origin);
            post.push(f.compose(&j.motion(q[i])));
            pre.push(f);
        }
        (pre, post)
    }

    pub fn hand_pose(&self, hand: Hand, root: &Pose, q: &[f64]) -> Pose {
        let e = self.end_frame(hand);
        let (_, post) = self.frames(root, q);
        post[e.parent].compose(&e.offset)
    }

    fn ancestors(&self, mut j: usize) -> Vec<usize> {
        let mut out = vec![j];
        while let Some(p) = self.parents[j] {
            out.push(p);
            j = p;
        }
        out
    }

    /// End poses and stacked Jacobian for a set of hands.
    pub fn hands_jacobian(&self, hands: &[Hand], root: &Pose, q: &[f64]) -> (Vec<Pose>, DMatrix<f64>) {
        let (pre, post) = self.frames(root, q);
        let mut jac = DMatrix::zeros(6 * hands.len(), self.dof());
        let mut poses = Vec::with_capacity(hands.len());
        for (k, &h) in hands.iter().enumerate() {
            let e = self.end_frame(h);
            let p = post[e.parent].compose(&e.offset);
            for j in self.ancestors(e.parent) {
                let col = self.joints[j].jacobian_column(&pre[j], &p.position);
                for (r, c) in col.iter().enumerate() {
                    jac[(6 * k + r, j)] = *c;
                }
            }
            poses.push(p);
        }
        (poses, jac)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MannequinHandle {
    WholeBody,
    LeftHand,
    RightHand,
    BothHands,
}

impl MannequinHandle {
    pub fn hands(self) -> &'static [Hand] {
        match self {
            MannequinHandle::WholeBody => &[],
            MannequinHandle::LeftHand => &[Hand::Left],
            MannequinHandle::RightHand => &[Hand::Right],
            MannequinHandle::BothHands => &[Hand::Left, Hand::Right],
        }
    }
}

#[derive(Debug, Clone)]
pub struct MannequinEntity {
    pub skeleton: Arc<Skeleton>,
    pub q: Vec<f64>,
    pub root_pose: Pose,
    pub handle_mode: MannequinHandle,
    pub trunk_locked: bool,
}

impl MannequinEntity {
    pub fn new(skeleton: Arc<Skeleton>) -> Result<Self, KinematicsError> {
        if skeleton.dof() != MANNEQUIN_DOF {
            return Err(KinematicsError::DofMismatch {
                expected: MANNEQUIN_DOF,
                got: skeleton.dof(),
            });
        }
        Ok(MannequinEntity {
            q: skeleton.defaults().to_vec(),
            root_pose: skeleton.default_root(),
            skeleton,
            handle_mode: MannequinHandle::WholeBody,
            trunk_locked: false,
        })
    }

    pub fn hand_pose(&self, hand: Hand) -> Pose {
        self.skeleton.hand_pose(hand, &self.root_pose, &self.q)
    }

    /// Handle-frame poses for the current mode (the root in whole-body mode).
    pub fn handle_poses(&self) -> Vec<Pose> {
        match self.handle_mode {
            MannequinHandle::WholeBody => vec![self.root_pose],
            m => m.hands().iter().map(|&h| self.hand_pose(h)).collect(),
        }
    }

    /// Solve for new `(root_pose, q)` reaching `targets`, one per handle frame.
    ///
    /// Whole-body mode moves the root rigidly. Hand modes run damped least
    /// squares on the joint tree; trunk joints are frozen while locked.
    pub fn solve(&self, targets: &[Pose], params: &DlsParams) -> Result<(Pose, Vec<f64>), KinematicsError> {
        let hands = self.handle_mode.hands();
        if self.handle_mode == MannequinHandle::WholeBody {
            return match targets {
                [root] => Ok((*root, self.q.clone())),
                _ => Err(KinematicsError::TargetMismatch),
            };
        }
        if targets.len() != hands.len() {
            return Err(KinematicsError::TargetMismatch);
        }
        let sk = &self.skeleton;
        let limits: Vec<[f64; 2]> = sk.joints().iter().map(|j| j.limits).collect();
        let mut active = vec![true; sk.dof()];
        if self.trunk_locked {
            for &t in sk.trunk_indices() {
                active[t] = false;
            }
        }
        let out = dls::solve(&self.q, &limits, &active, targets, params, |q| sk.hands_jacobian(hands, &self.root_pose, q));
        if !out.converged {
            return Err(KinematicsError::TargetUnreachable {
                residual_mm: out.residual_mm,
                residual_rad: out.residual_rad,
            });
        }
        Ok((self.root_pose, out.q))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;

    fn mannequin(mode: MannequinHandle) -> MannequinEntity {
        let mut m = MannequinEntity::new(Arc::new(Skeleton::default_mannequin())).unwrap();
        m.handle_mode = mode;
        m
    }

    #[test]
    fn default_skeleton_shape() {
        let sk = Skeleton::default_mannequin();
        assert_eq!(sk.dof(), 56);
        assert_eq!(sk.trunk_indices().len(), 9);
        assert_eq!(sk.meshes().len(), 4);
        let m = mannequin(MannequinHandle::WholeBody);
        let l = m.hand_pose(Hand::Left);
        let r = m.hand_pose(Hand::Right);
        assert!((l.position.y + r.position.y).abs() < 1e-9, "hands mirror");
        assert!(l.position.x > 200.0, "forearms point forward");
    }

    #[test]
    fn whole_body_moves_root_only() {
        let m = mannequin(MannequinHandle::WholeBody);
        let root = Pose::from_translation(m.root_pose.position + Vec3::new(100.0, 0.0, 0.0));
        let (r, q) = m.solve(&[root], &DlsParams::default()).unwrap();
        assert_eq!(r, root);
        assert!(q.iter().zip(&m.q).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn hand_target_converges_with_trunk_locked() {
        let mut m = mannequin(MannequinHandle::LeftHand);
        m.trunk_locked = true;
        let mut t = m.hand_pose(Hand::Left);
        t.position += Vec3::new(30.0, 20.0, 30.0);
        let (_, q) = m.solve(&[t], &DlsParams::default()).unwrap();
        let got = m.skeleton.hand_pose(Hand::Left, &m.root_pose, &q);
        assert!((got.position - t.position).norm() < 1.0);
        for &i in m.skeleton.trunk_indices() {
            assert_eq!(q[i].to_bits(), m.q[i].to_bits());
        }
    }

    #[test]
    fn unreachable_hand_target() {
        let m = mannequin(MannequinHandle::RightHand);
        let mut t = m.hand_pose(Hand::Right);
        t.position += Vec3::new(5000.0, 0.0, 0.0);
        let e = m.solve(&[t], &DlsParams::default()).unwrap_err();
        assert_eq!(e.to_string(), "target unreachable");
        assert!(m.solve(&[t, t], &DlsParams::default()).is_err());
    }

    #[test]
    fn hands_jacobian_matches_finite_differences() {
        let m = mannequin(MannequinHandle::BothHands);
        let sk = &m.skeleton;
        let (_, jac) = sk.hands_jacobian(&[Hand::Left, Hand::Right], &m.root_pose, &m.q);
        let h = 1e-6;
        for i in 0..sk.dof() {
            let mut qp = m.q.clone();
            let mut qm = m.q.clone();
            qp[i] += h;
            qm[i] -= h;
            for (k, hand) in [Hand::Left, Hand::Right].into_iter().enumerate() {
                let d = (sk.hand_pose(hand, &m.root_pose, &qp).position - sk.hand_pose(hand, &m.root_pose, &qm).position) / (2.0 * h);
                for r in 0..3 {
                    assert!((jac[(6 * k + r, i)] - d[r]).abs() < 1e-3, "joint {i} hand {k} row {r}");
                }
            }
        }
    }
}
