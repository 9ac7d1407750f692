use nalgebra::{DMatrix, Unit, UnitQuaternion};
use serde::{Deserialize, Serialize};

use super::KinematicsError;
use crate::geometry::{Pose, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointType {
    Revolute,
    Prismatic,
}

/// One degree of freedom: a fixed `origin` offset from the parent frame
/// followed by a motion along or about `axis` (radians or millimetres).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: JointType,
    #[serde(with = "crate::serde_vec3")]
    pub axis: Vec3,
    #[serde(default)]
    pub origin: Pose,
    pub limits: [f64; 2],
}

impl Joint {
    pub fn revolute(name: impl Into<String>, axis: Vec3, origin: Pose, limits: [f64; 2]) -> Self {
        Joint {
            name: name.into(),
            kind: JointType::Revolute,
            axis,
            origin,
            limits,
        }
    }

    pub fn prismatic(name: impl Into<String>, axis: Vec3, origin: Pose, limits: [f64; 2]) -> Self {
        Joint {
            name: name.into(),
            kind: JointType::Prismatic,
            axis,
            origin,
            limits,
        }
    }

    pub fn validate(&self) -> Result<(), KinematicsError> {
        let n = self.axis.norm();
        if !n.is_finite() || (n - 1.0).abs() > 1e-9 {
            return Err(KinematicsError::InvalidModel(format!("joint {:?}: axis must be a unit vector", self.name)));
        }
        let [lo, hi] = self.limits;
        if !(lo <= hi) || lo.is_nan() || hi.is_nan() {
            return Err(KinematicsError::InvalidModel(format!("joint {:?}: limits must satisfy lo <= hi", self.name)));
        }
        Ok(())
    }

    pub fn within_limits(&self, q: f64) -> bool {
        q >= self.limits[0] && q <= self.limits[1]
    }

    pub fn clamp(&self, q: f64) -> f64 {
        q.clamp(self.limits[0], self.limits[1])
    }

    pub fn motion(&self, q: f64) -> Pose {
        match self.kind {
            JointType::Revolute => Pose::from_rotation(UnitQuaternion::from_axis_angle(&Unit::new_unchecked(self.axis), q)),
            JointType::Prismatic => Pose::from_translation(self.axis * q),
        }
    }

    /// Geometric Jacobian column for a point `p`, given the joint's pre-motion world frame.
    pub(crate) fn jacobian_column(&self, pre_motion: &Pose, p: &Vec3) -> [f64; 6] {
        let a = pre_motion.orientation * self.axis;
        match self.kind {
            JointType::Revolute => {
                let v = a.cross(&(p - pre_motion.position));
                [v.x, v.y, v.z, a.x, a.y, a.z]
            }
            JointType::Prismatic => [a.x, a.y, a.z, 0.0, 0.0, 0.0],
        }
    }
}

/// Serial chain from a base frame to a tool frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    joints: Vec<Joint>,
    tool: Pose,
}

impl Chain {
    pub fn new(joints: Vec<Joint>, tool: Pose) -> Result<Self, KinematicsError> {
        if joints.is_empty() {
            return Err(KinematicsError::InvalidModel("chain has no joints".into()));
        }
        for j in &joints {
            j.validate()?;
        }
        Ok(Chain { joints, tool })
    }

    /// Planar two-link arm in the base xy plane, both joints about +z.
    pub fn planar_2r(l1: f64, l2: f64, limits: [f64; 2]) -> Self {
        let j = |name: &str, x: f64| Joint::revolute(name, Vec3::z(), Pose::from_translation(Vec3::new(x, 0.0, 0.0)), limits);
        Chain {
            joints: vec![j("j1", 0.0), j("j2", l1)],
            tool: Pose::from_translation(Vec3::new(l2, 0.0, 0.0)),
        }
    }

    pub fn planar_3r(l1: f64, l2: f64, l3: f64, limits: [f64; 2]) -> Self {
        let j = |name: &str, x: f64| Joint::revolute(name, Vec3::z(), Pose::from_translation(Vec3::new(x, 0.0, 0.0)), limits);
        Chain {
            joints: vec![j("j1", 0.0), j("j2", l1), j("j3", l2)],
            tool: Pose::from_translation(Vec3::new(l3, 0.0, 0.0)),
        }
    }

    /// Six-axis arm with a spherical wrist, parameterised like the usual
    /// ortho-parallel industrial layout (`a1`, `a2`, `b`, `c1`..`c4`, mm).
    pub fn spherical_wrist(p: &OpwParams, limits: [[f64; 2]; 6]) -> Self {
        let t = |x: f64, y: f64, z: f64| Pose::from_translation(Vec3::new(x, y, z));
        let axes = [Vec3::z(), Vec3::y(), Vec3::y(), Vec3::z(), Vec3::y(), Vec3::z()];
        let origins = [
            Pose::identity(),
            t(p.a1, p.b, p.c1),
            t(0.0, 0.0, p.c2),
            t(p.a2, 0.0, p.c3),
            Pose::identity(),
            Pose::identity(),
        ];
        let joints = (0..6)
            .map(|i| Joint::revolute(format!("j{}", i + 1), axes[i], origins[i], limits[i]))
            .collect();
        Chain {
            joints,
            tool: t(0.0, 0.0, p.c4),
        }
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn tool(&self) -> &Pose {
        &self.tool
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn within_limits(&self, q: &[f64]) -> bool {
        q.len() == self.dof() && self.joints.iter().zip(q).all(|(j, &v)| j.within_limits(v))
    }

    pub fn check_q(&self, q: &[f64]) -> Result<(), KinematicsError> {
        if q.len() != self.dof() {
            return Err(KinematicsError::DofMismatch {
                expected: self.dof(),
                got: q.len(),
            });
        }
        if let Some(i) = self.joints.iter().zip(q).position(|(j, &v)| !j.within_limits(v)) {
            return Err(KinematicsError::LimitViolation {
                joint: self.joints[i].name.clone(),
                value: q[i],
            });
        }
        Ok(())
    }

    /// World frame of every link (after each joint's motion).
    pub fn link_frames(&self, base: &Pose, q: &[f64]) -> Vec<Pose> {
        let mut f = *base;
        self.joints
            .iter()
            .zip(q)
            .map(|(j, &v)| {
                f = f.compose(&j.origin).compose(&j.motion(v));
                f
            })
            .collect()
    }

    pub fn fk(&self, base: &Pose, q: &[f64]) -> Pose {
        let last = self.link_frames(base, q).pop().unwrap_or(*base);
        last.compose(&self.tool)
    }

    /// 6×n geometric Jacobian of the tool frame (linear rows first).
    pub fn jacobian(&self, base: &Pose, q: &[f64]) -> DMatrix<f64> {
        let tip = self.fk(base, q).position;
        let mut jac = DMatrix::zeros(6, self.dof());
        let mut f = *base;
        for (i, (j, &v)) in self.joints.iter().zip(q).enumerate() {
            let pre = f.compose(&j.origin);
            let col = j.jacobian_column(&pre, &tip);
            for (r, c) in col.iter().enumerate() {
                jac[(r, i)] = *c;
            }
            f = pre.compose(&j.motion(v));
        }
        jac
    }
}

/// Link dimensions of a six-axis spherical-wrist arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpwParams {
    pub a1: f64,
    pub a2: f64,
    pub b: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
}
