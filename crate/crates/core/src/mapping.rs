//! Device-space to scene-space motion mapping.
//!
//! Translation is scaled by the active sensitivity level, then rotated into
//! world axes by the frame mode. Orientation changes are never scaled but do
//! follow the frame rotation. Clutching re-anchors the device against the
//! scene so the small device workspace can cover a large scene.
//!
//! Screen-frame convention: camera-local +x is the screen normal pointing at
//! the viewer, +y is screen-right and +z is screen-up. The device axes are
//! read directly in that frame.

use nalgebra::UnitQuaternion;
use serde::{Deserialize, Serialize};

use crate::device::{DeviceLimits, StylusState};
use crate::geometry::{Pose, PoseDelta, Vec3};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MappingError {
    #[error("viewport world span must be positive, got {0} mm")]
    NonPositiveSpan(f64),
    #[error("scale factors must be positive and ordered fine <= medium <= rough")]
    BadFactors,
    #[error("zoom factor must be positive, got {0}")]
    BadZoom(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleLevel {
    Rough,
    Medium,
    Fine,
    Screen,
}

/// Scene millimetres per device millimetre for the fixed levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleFactors {
    pub rough: f64,
    pub medium: f64,
    pub fine: f64,
}

impl Default for ScaleFactors {
    fn default() -> Self {
        ScaleFactors {
            rough: 10.0,
            medium: 3.0,
            fine: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameMode {
    Screen,
    World,
    User,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Viewport {
    pub camera_pose: Pose,
    /// Width of the scene visible on screen, mm.
    pub world_span_mm: f64,
}

impl Default for Viewport {
    fn default() -> Self {
        Viewport {
            camera_pose: Pose::identity(),
            world_span_mm: 1600.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MappingConfig {
    pub scale_level: ScaleLevel,
    pub scale_factors: ScaleFactors,
    pub frame_mode: FrameMode,
    pub user_frame: Pose,
    pub viewport: Viewport,
    /// Device workspace width the screen level stretches over the viewport.
    pub device_width_mm: f64,
}

impl Default for MappingConfig {
    fn default() -> Self {
        MappingConfig {
            scale_level: ScaleLevel::Fine,
            scale_factors: ScaleFactors::default(),
            frame_mode: FrameMode::World,
            user_frame: Pose::identity(),
            viewport: Viewport::default(),
            device_width_mm: DeviceLimits::PHANTOM_DESKTOP.workspace_mm.x,
        }
    }
}

impl MappingConfig {
    pub fn validate(&self) -> Result<(), MappingError> {
        let f = &self.scale_factors;
        if !(f.fine > 0.0 && f.fine <= f.medium && f.medium <= f.rough && f.rough.is_finite()) {
            return Err(MappingError::BadFactors);
        }
        if !(self.viewport.world_span_mm > 0.0) {
            return Err(MappingError::NonPositiveSpan(self.viewport.world_span_mm));
        }
        Ok(())
    }

    /// Current scene-mm per device-mm.
    pub fn scale_factor(&self) -> Result<f64, MappingError> {
        Ok(match self.scale_level {
            ScaleLevel::Rough => self.scale_factors.rough,
            ScaleLevel::Medium => self.scale_factors.medium,
            ScaleLevel::Fine => self.scale_factors.fine,
            ScaleLevel::Screen => {
                let span = self.viewport.world_span_mm;
                if !(span > 0.0) || !span.is_finite() {
                    return Err(MappingError::NonPositiveSpan(span));
                }
                span / self.device_width_mm
            }
        })
    }

    /// Zoom in by `factor` (> 1 shows less of the scene).
    pub fn zoom(&mut self, factor: f64) -> Result<(), MappingError> {
        if !(factor > 0.0) || !factor.is_finite() {
            return Err(MappingError::BadZoom(factor));
        }
        self.viewport.world_span_mm /= factor;
        Ok(())
    }

    /// Rotation taking device axes to world axes under the current frame mode.
    pub fn frame_rotation(&self) -> UnitQuaternion<f64> {
        match self.frame_mode {
            FrameMode::World => UnitQuaternion::identity(),
            FrameMode::Screen => self.viewport.camera_pose.orientation,
            FrameMode::User => self.user_frame.orientation,
        }
    }
}

pub fn map_translation(delta_device: &Vec3, cfg: &MappingConfig) -> Result<Vec3, MappingError> {
    Ok(delta_device * cfg.scale_factor()?)
}

pub fn map_frame(delta_scene: &Vec3, cfg: &MappingConfig) -> Vec3 {
    cfg.frame_rotation() * delta_scene
}

/// Inverse of the full mapping for a direction: world unit vector to device unit vector.
pub fn world_direction_to_device(dir_world: &Vec3, cfg: &MappingConfig) -> Vec3 {
    cfg.frame_rotation().inverse() * dir_world
}

/// Device-to-scene coupling anchors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[derive(Default)]
pub struct ClutchState {
    pub engaged: bool,
    pub device_anchor: Pose,
    pub scene_anchor: Pose,
}


impl ClutchState {
    /// Couple the current stylus pose to the current scene handle pose.
    pub fn engage(&mut self, stylus: &StylusState, scene_pose: &Pose) {
        *self = ClutchState {
            engaged: true,
            device_anchor: stylus.pose,
            scene_anchor: *scene_pose,
        };
    }

    pub fn disengage(&mut self) {
        self.engaged = false;
    }
}

/// Scene displacement since the clutch engaged, or `None` while disengaged.
pub fn apply_clutch(stylus: &StylusState, clutch: &ClutchState, cfg: &MappingConfig) -> Result<Option<PoseDelta>, MappingError> {
    if !clutch.engaged {
        return Ok(None);
    }
    let d_dev = stylus.pose.position - clutch.device_anchor.position;
    let translation = map_frame(&map_translation(&d_dev, cfg)?, cfg);
    let r = cfg.frame_rotation();
    let rot_dev = stylus.pose.orientation * clutch.device_anchor.orientation.inverse();
    let rotation = r * rot_dev * r.inverse();
    Ok(Some(PoseDelta { translation, rotation }))
}
