use serde::{Deserialize, Serialize};

use crate::geometry::Pose;
use crate::mapping::{FrameMode, MappingConfig, ScaleFactors, ScaleLevel, Viewport};
use crate::servo::ForceLaw;

use super::SessionError;

/// Operator settings: the config file schema, also embeddable in a scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub scale_factors: ScaleFactors,
    pub default_level: ScaleLevel,
    pub frame_mode: FrameMode,
    pub user_frame: Pose,
    pub safety_margin_mm: f64,
    pub force_law: ForceLaw,
    pub viewport: Viewport,
    pub scene_rate_hz: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            scale_factors: ScaleFactors::default(),
            default_level: ScaleLevel::Fine,
            frame_mode: FrameMode::World,
            user_frame: Pose::identity(),
            safety_margin_mm: 10.0,
            force_law: ForceLaw::default(),
            viewport: Viewport::default(),
            scene_rate_hz: 30.0,
        }
    }
}

impl SessionConfig {
    pub fn mapping(&self) -> MappingConfig {
        MappingConfig {
            scale_level: self.default_level,
            scale_factors: self.scale_factors,
            frame_mode: self.frame_mode,
            user_frame: self.user_frame,
            viewport: self.viewport,
            ..MappingConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        self.mapping().validate()?;
        self.force_law.validate()?;
        if !(self.safety_margin_mm > 0.0) || !self.safety_margin_mm.is_finite() {
            return Err(SessionError::Config(format!("safety_margin_mm must be positive, got {}", self.safety_margin_mm)));
        }
        if !(self.scene_rate_hz >= 10.0 && self.scene_rate_hz <= 1000.0) {
            return Err(SessionError::Config(format!("scene_rate_hz must be in [10, 1000], got {}", self.scene_rate_hz)));
        }
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, SessionError> {
        let cfg: SessionConfig = super::read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_schema() {
        let text = r#"{
            "scale_factors": {"rough": 20, "medium": 5, "fine": 1},
            "default_level": "medium",
            "frame_mode": "user",
            "user_frame": {"position_mm": [0, 0, 0], "quat_wxyz": [1, 0, 0, 0]},
            "safety_margin_mm": 8,
            "force_law": {"class": "constant", "f0_n": 2.0}
        }"#;
        let cfg: SessionConfig = serde_json::from_str(text).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.mapping().scale_factor().unwrap(), 5.0);
        assert_eq!(cfg.safety_margin_mm, 8.0);
        assert!(serde_json::from_str::<SessionConfig>(r#"{"bogus": 1}"#).is_err());
        let bad = SessionConfig {
            safety_margin_mm: 0.0,
            ..SessionConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
