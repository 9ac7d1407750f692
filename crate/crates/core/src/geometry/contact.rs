use serde::{Deserialize, Serialize};

use super::{GeometryError, Vec3, Witness};

/// Degenerate-direction threshold on the witness distance, mm.
const DEGENERATE_DISTANCE: f64 = 1e-9;

/// Contact synthesized from a witness that lies inside the safety margin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contact {
    #[serde(with = "crate::serde_vec3")]
    pub point: Vec3,
    /// Unit normal pointing from the environment (B side) toward the moved entity (A side).
    #[serde(with = "crate::serde_vec3")]
    pub normal: Vec3,
    /// `margin - distance`, in `(0, margin]`.
    pub depth: f64,
}

/// Direction `point_a - point_b`, or `fallback` when the witness is degenerate.
pub fn witness_normal(w: &Witness, fallback: &Vec3) -> Vec3 {
    if w.distance < DEGENERATE_DISTANCE {
        return *fallback;
    }
    let d = w.point_a - w.point_b;
    let n = d.norm();
    if n < DEGENERATE_DISTANCE {
        *fallback
    } else {
        d / n
    }
}

/// Turn a witness inside the safety zone into a contact point and normal.
///
/// Returns `None` when the witness is at or beyond `margin`.
pub fn contact_estimate(w: &Witness, margin: f64, fallback_normal: &Vec3) -> Result<Option<Contact>, GeometryError> {
    if !(margin > 0.0) || !margin.is_finite() {
        return Err(GeometryError::InvalidMargin(margin));
    }
    if (fallback_normal.norm() - 1.0).abs() > 1e-9 || !fallback_normal.iter().all(|c| c.is_finite()) {
        return Err(GeometryError::NonUnitNormal);
    }
    if w.distance >= margin {
        return Ok(None);
    }
    Ok(Some(Contact {
        point: (w.point_a + w.point_b) / 2.0,
        normal: witness_normal(w, fallback_normal),
        depth: (margin - w.distance).clamp(0.0, margin),
    }))
}
