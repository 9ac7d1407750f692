use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geometry::Pose;

use super::SessionError;

/// Distance slack when comparing accumulated path length to the spacing, mm.
const DISTANCE_EPS: f64 = 1e-9;
/// Time slack so step times accumulated in floating point still land on the interval, ms.
const TIME_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum RecordMode {
    Manual,
    AutoTime { dt_ms: f64 },
    AutoDistance { d_mm: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub t_ms: f64,
    pub pose: Pose,
}

/// Waypoints are only ever copies of committed poses; nothing is interpolated.
#[derive(Debug, Clone, PartialEq)]
pub struct Recorder {
    mode: RecordMode,
    waypoints: Vec<Waypoint>,
    last_t: f64,
    last_position: Option<crate::geometry::Vec3>,
    path_since_last: f64,
}

impl Recorder {
    pub fn new(mode: RecordMode) -> Result<Self, SessionError> {
        let ok = match mode {
            RecordMode::Manual => true,
            RecordMode::AutoTime { dt_ms } => dt_ms > 0.0 && dt_ms.is_finite(),
            RecordMode::AutoDistance { d_mm } => d_mm > 0.0 && d_mm.is_finite(),
        };
        if !ok {
            return Err(SessionError::Config(format!("invalid recording mode {mode:?}")));
        }
        Ok(Recorder {
            mode,
            waypoints: Vec::new(),
            last_t: f64::NEG_INFINITY,
            last_position: None,
            path_since_last: 0.0,
        })
    }

    pub fn mode(&self) -> RecordMode {
        self.mode
    }

    pub fn waypoints(&self) -> &[Waypoint] {
        &self.waypoints
    }

    pub fn into_waypoints(self) -> Vec<Waypoint> {
        self.waypoints
    }

    fn push(&mut self, pose: &Pose, t_ms: f64) {
        self.waypoints.push(Waypoint { t_ms, pose: *pose });
        self.last_t = t_ms;
        self.path_since_last = 0.0;
    }

    /// Feed the committed handle pose at time `t_ms`; `event` is an explicit
    /// user request (only meaningful in manual mode). Returns whether a
    /// waypoint was appended.
    pub fn update(&mut self, pose: &Pose, t_ms: f64, event: bool) -> bool {
        if let Some(prev) = self.last_position {
            self.path_since_last += (pose.position - prev).norm();
        }
        self.last_position = Some(pose.position);
        let first = self.waypoints.is_empty();
        let append = match self.mode {
            RecordMode::Manual => event,
            RecordMode::AutoTime { dt_ms } => first || t_ms - self.last_t >= dt_ms - TIME_EPS,
            RecordMode::AutoDistance { d_mm } => first || self.path_since_last >= d_mm - DISTANCE_EPS,
        };
        if append {
            self.push(pose, t_ms);
        }
        append
    }
}

pub fn save_trajectory(waypoints: &[Waypoint], path: &Path) -> Result<(), SessionError> {
    let text = serde_json::to_string_pretty(waypoints).expect("waypoints serialize");
    std::fs::write(path, text).map_err(|source| SessionError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_trajectory(path: &Path) -> Result<Vec<Waypoint>, SessionError> {
    super::read_json(path)
}
