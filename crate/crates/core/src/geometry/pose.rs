use nalgebra::{Quaternion, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::{GeometryError, Vec3};

/// Rigid placement: position in millimetres plus a unit-quaternion orientation.
///
/// Serialized as `{"position_mm": [x, y, z], "quat_wxyz": [w, x, y, z]}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRepr", into = "PoseRepr")]
pub struct Pose {
    pub position: Vec3,
    pub orientation: UnitQuaternion<f64>,
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    position_mm: [f64; 3],
    #[serde(default = "identity_wxyz")]
    quat_wxyz: [f64; 4],
}

fn identity_wxyz() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

impl TryFrom<PoseRepr> for Pose {
    type Error = GeometryError;

    fn try_from(r: PoseRepr) -> Result<Self, Self::Error> {
        let [w, x, y, z] = r.quat_wxyz;
        let q = Quaternion::new(w, x, y, z);
        let n = q.norm();
        if !n.is_finite() || n < 1e-12 || r.position_mm.iter().any(|c| !c.is_finite()) {
            return Err(GeometryError::InvalidPose);
        }
        Ok(Pose {
            position: Vector3::from(r.position_mm),
            orientation: UnitQuaternion::new_normalize(q),
        })
    }
}

impl From<Pose> for PoseRepr {
    fn from(p: Pose) -> Self {
        let q = p.orientation.quaternion();
        PoseRepr {
            position_mm: [p.position.x, p.position.y, p.position.z],
            quat_wxyz: [q.w, q.i, q.j, q.k],
        }
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            position: Vec3::zeros(),
            orientation: UnitQuaternion::identity(),
        }
    }

    pub fn new(position: Vec3, orientation: UnitQuaternion<f64>) -> Self {
        Pose { position, orientation }
    }

    pub fn from_translation(position: Vec3) -> Self {
        Pose {
            position,
            orientation: UnitQuaternion::identity(),
        }
    }

    pub fn from_rotation(orientation: UnitQuaternion<f64>) -> Self {
        Pose {
            position: Vec3::zeros(),
            orientation,
        }
    }

    /// Rotation of `angle` radians about `axis` (need not be normalized) at the origin.
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        Self::from_rotation(UnitQuaternion::from_axis_angle(&Unit::new_normalize(axis), angle))
    }

    /// `self ∘ other`: `other`'s frame expressed through `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        compose(self, other)
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.orientation.inverse();
        Pose {
            position: -(inv * self.position),
            orientation: inv,
        }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.orientation * p + self.position
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.orientation * v
    }

    /// Geodesic angle between the two orientations, in radians.
    pub fn angle_to(&self, other: &Pose) -> f64 {
        self.orientation.angle_to(&other.orientation)
    }
}

/// Rigid displacement in world axes: rotate about a pivot, then translate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseDelta {
    #[serde(with = "crate::serde_vec3")]
    pub translation: Vec3,
    pub rotation: UnitQuaternion<f64>,
}

impl Default for PoseDelta {
    fn default() -> Self {
        PoseDelta::identity()
    }
}

impl PoseDelta {
    pub fn identity() -> Self {
        PoseDelta {
            translation: Vec3::zeros(),
            rotation: UnitQuaternion::identity(),
        }
    }

    pub fn translation(t: Vec3) -> Self {
        PoseDelta {
            translation: t,
            rotation: UnitQuaternion::identity(),
        }
    }

    /// Rotate `pose` about the world point `pivot`, then translate.
    pub fn apply_about(&self, pose: &Pose, pivot: &Vec3) -> Pose {
        Pose {
            position: pivot + self.rotation * (pose.position - pivot) + self.translation,
            orientation: UnitQuaternion::new_normalize(self.rotation.quaternion() * pose.orientation.quaternion()),
        }
    }

    /// Rotate `pose` about its own origin, then translate.
    pub fn apply(&self, pose: &Pose) -> Pose {
        self.apply_about(pose, &pose.position)
    }
}

/// Composition `a ∘ b`, renormalizing the resulting quaternion.
pub fn compose(a: &Pose, b: &Pose) -> Pose {
    Pose {
        position: a.position + a.orientation * b.position,
        orientation: UnitQuaternion::new_normalize(a.orientation.quaternion() * b.orientation.quaternion()),
    }
}
