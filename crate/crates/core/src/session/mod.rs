//! The scene loop: poll the stylus, map motion, move the selected entity,
//! test collision pairs, commit or reject, and push force models.

pub mod config;
pub mod log;
pub mod recorder;
pub mod scene;

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::device::StylusState;
use crate::geometry::{closest_pair, witness_normal, GeometryError, Pose, Vec3, Witness};
use crate::kinematics::{move_entity, DlsParams, Entity, HandleAnchor, HandleMode, KinematicsError, PivotMode};
use crate::mapping::{apply_clutch, ClutchState, FrameMode, MappingConfig, MappingError, ScaleLevel};
use crate::par;
use crate::protocol::{HapticClient, ProtocolError};
use crate::servo::{servo_tick, ConstraintModel, ServoError};

pub use self::config::SessionConfig;
pub use self::log::{read_log, replay, LogRecord, ReplayReport, StateLog, StepOutcome, StepRecord, Violation};
pub use self::recorder::{load_trajectory, save_trajectory, RecordMode, Recorder, Waypoint};
pub use self::scene::{CollisionPair, EntitySpec, Scene, SceneFile};

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("step aborted: {0}")]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Mapping(#[from] MappingError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Servo(#[from] ServoError),
    #[error("invalid scene: {0}")]
    Scene(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("cannot access {path}: {source}")]
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

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, SessionError> {
    let text = std::fs::read_to_string(path).map_err(|source| SessionError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|source| SessionError::Parse {
        path: path.display().to_string(),
        source,
    })
}

/// How the session talks to the servo.
pub trait HapticLink {
    fn get_pose(&mut self) -> Result<StylusState, ProtocolError>;
    fn set_force_model(&mut self, model: &ConstraintModel) -> Result<(), ProtocolError>;
}

impl HapticLink for HapticClient {
    fn get_pose(&mut self) -> Result<StylusState, ProtocolError> {
        HapticClient::get_pose(self)
    }

    fn set_force_model(&mut self, model: &ConstraintModel) -> Result<(), ProtocolError> {
        HapticClient::set_force_model(self, model)
    }
}

/// In-process link with no servo behind it; the caller sets the stylus.
#[derive(Debug, Clone, Default)]
pub struct LocalLink {
    pub stylus: StylusState,
    pub model: ConstraintModel,
    pub models_sent: u64,
}

impl HapticLink for LocalLink {
    fn get_pose(&mut self) -> Result<StylusState, ProtocolError> {
        Ok(self.stylus)
    }

    fn set_force_model(&mut self, model: &ConstraintModel) -> Result<(), ProtocolError> {
        self.model = *model;
        self.models_sent += 1;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepReport {
    pub outcome: StepOutcome,
    pub witness: Option<Witness>,
    pub model: ConstraintModel,
    pub stylus: StylusState,
    /// Mesh-pair queries run during this step.
    pub queries: u64,
}

pub struct Session {
    scene: Scene,
    mapping: MappingConfig,
    clutch: ClutchState,
    anchor: Option<HandleAnchor>,
    /// Device position at the last commit and the witness that came with it.
    commit_stylus: Option<Vec3>,
    commit_witness: Option<Witness>,
    model: ConstraintModel,
    model_dirty: bool,
    recorder: Option<Recorder>,
    prev_button: bool,
    step_index: u64,
    queries: AtomicU64,
    dls: DlsParams,
    log: Option<StateLog>,
}

impl Session {
    pub fn new(scene: Scene) -> Self {
        Session {
            mapping: scene.config.mapping(),
            scene,
            clutch: ClutchState::default(),
            anchor: None,
            commit_stylus: None,
            commit_witness: None,
            model: ConstraintModel::inactive(),
            model_dirty: false,
            recorder: None,
            prev_button: false,
            step_index: 0,
            queries: AtomicU64::new(0),
            dls: DlsParams::default(),
            log: None,
        }
    }

    pub fn with_log(mut self, log: StateLog) -> Self {
        self.log = Some(log);
        self
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn mapping(&self) -> &MappingConfig {
        &self.mapping
    }

    pub fn clutch(&self) -> &ClutchState {
        &self.clutch
    }

    pub fn model(&self) -> &ConstraintModel {
        &self.model
    }

    pub fn recorder(&self) -> Option<&Recorder> {
        self.recorder.as_ref()
    }

    /// Total mesh-pair queries since start.
    pub fn query_count(&self) -> u64 {
        self.queries.load(Ordering::Relaxed)
    }

    pub fn selected(&self) -> Option<&Entity> {
        self.scene.selected.map(|i| &self.scene.entities[i])
    }

    fn log(&mut self, rec: LogRecord) -> Result<(), SessionError> {
        match self.log.as_mut() {
            Some(l) => l.write(&rec),
            None => Ok(()),
        }
    }

    pub fn flush_log(&mut self) -> Result<(), SessionError> {
        match self.log.as_mut() {
            Some(l) => l.flush(),
            None => Ok(()),
        }
    }

    fn set_model(&mut self, model: ConstraintModel) {
        if model != self.model {
            self.model = model;
            self.model_dirty = true;
        }
    }

    /// Drop the anchors; the next step re-captures them from the stylus it
    /// polls, so the first mapped delta after any change is zero.
    fn reanchor(&mut self) {
        self.anchor = None;
        self.commit_witness = None;
    }

    fn capture_anchor(&mut self, stylus: &StylusState) {
        if let Some(e) = self.selected() {
            let (anchor, handle) = (e.anchor(), e.handle_pose());
            self.clutch.engage(stylus, &handle);
            self.anchor = Some(anchor);
            self.commit_stylus = Some(stylus.pose.position);
        }
    }

    pub fn set_clutch(&mut self, engaged: bool) {
        if engaged == self.clutch.engaged {
            return;
        }
        if engaged {
            self.clutch.engaged = true;
            self.reanchor();
        } else {
            self.clutch.disengage();
            self.anchor = None;
            self.set_model(ConstraintModel::inactive());
        }
    }

    pub fn select(&mut self, name: Option<&str>) -> Result<(), SessionError> {
        self.scene.selected = name.map(|n| self.scene.index_of(n)).transpose()?;
        self.set_model(ConstraintModel::inactive());
        self.reanchor();
        Ok(())
    }

    fn selected_mut(&mut self) -> Result<&mut Entity, SessionError> {
        let i = self.scene.selected.ok_or_else(|| SessionError::Scene("no entity selected".into()))?;
        Ok(&mut self.scene.entities[i])
    }

    pub fn set_handle_mode(&mut self, mode: HandleMode) -> Result<(), SessionError> {
        self.selected_mut()?.set_handle_mode(mode)?;
        self.reanchor();
        Ok(())
    }

    pub fn set_pivot(&mut self, mode: PivotMode, user: Option<Pose>) -> Result<(), SessionError> {
        self.selected_mut()?.set_pivot(mode, user)?;
        self.reanchor();
        Ok(())
    }

    pub fn set_trunk_locked(&mut self, locked: bool) -> Result<(), SessionError> {
        self.selected_mut()?.set_trunk_locked(locked)?;
        Ok(())
    }

    pub fn set_scale_level(&mut self, level: ScaleLevel) {
        self.mapping.scale_level = level;
        self.reanchor();
    }

    pub fn set_frame_mode(&mut self, mode: FrameMode, user_frame: Option<Pose>) {
        self.mapping.frame_mode = mode;
        if let Some(f) = user_frame {
            self.mapping.user_frame = f;
        }
        self.reanchor();
    }

    pub fn set_camera(&mut self, camera: Pose) {
        self.mapping.viewport.camera_pose = camera;
        self.reanchor();
    }

    pub fn zoom(&mut self, factor: f64) -> Result<(), SessionError> {
        self.mapping.zoom(factor)?;
        self.reanchor();
        Ok(())
    }

    pub fn set_collision_pairs(&mut self, pairs: Vec<CollisionPair>) -> Result<(), SessionError> {
        self.scene.set_collision_pairs(pairs.clone())?;
        self.commit_witness = None;
        let step = self.step_index;
        self.log(LogRecord::Pairs { step, pairs })
    }

    pub fn start_recording(&mut self, mode: RecordMode) -> Result<(), SessionError> {
        self.recorder = Some(Recorder::new(mode)?);
        Ok(())
    }

    pub fn stop_recording(&mut self) -> Option<Vec<Waypoint>> {
        self.recorder.take().map(Recorder::into_waypoints)
    }

    /// Minimum witness between `candidate` (A side) and every active partner (B side).
    fn min_witness(&self, moved: usize, candidate: &Entity) -> Result<Option<Witness>, SessionError> {
        let ours = candidate.posed_meshes();
        let mut pairs = Vec::new();
        for p in self.scene.partners_of(moved) {
            for theirs in self.scene.entities[p].posed_meshes() {
                for mine in &ours {
                    pairs.push((mine.clone(), theirs.clone()));
                }
            }
        }
        self.queries.fetch_add(pairs.len() as u64, Ordering::Relaxed);
        let best = par::min_by_key(
            pairs.len(),
            |i| {
                let (a, b) = &pairs[i];
                closest_pair(&a.mesh, &a.pose, &b.mesh, &b.pose)
            },
            |r| r.as_ref().map_or(f64::NEG_INFINITY, |w| w.distance),
        );
        Ok(best.transpose()?)
    }

    fn scale(&self) -> Result<f64, SessionError> {
        Ok(self.mapping.scale_factor()?)
    }

    fn to_device(&self, world: &Vec3) -> Vec3 {
        self.mapping.frame_rotation().inverse() * world
    }

    /// Graded pre-contact model for a committed pose `d` mm from the environment.
    fn margin_model(&self, stylus: &Vec3, w: &Witness, fallback_world: &Vec3) -> Result<ConstraintModel, SessionError> {
        let margin = self.scene.config.safety_margin_mm;
        if w.distance >= margin {
            return Ok(ConstraintModel::inactive());
        }
        let n = self.to_device(&witness_normal(w, fallback_world));
        let anchor = stylus + n * ((margin - w.distance) / self.scale()?);
        Ok(ConstraintModel::plane(anchor, n, self.scene.config.force_law))
    }

    /// Contact model after a rejected candidate. The plane comes from the last
    /// pre-contact witness; the current stylus sits at least a full margin deep.
    fn contact_model(&self, stylus: &Vec3, motion_dev: &Vec3) -> Result<ConstraintModel, SessionError> {
        let margin = self.scene.config.safety_margin_mm;
        let scale = self.scale()?;
        let back = if motion_dev.norm() > 0.0 { -motion_dev.normalize() } else { Vec3::z() };
        let back_world = self.mapping.frame_rotation() * back;
        let (n, d_last) = match &self.commit_witness {
            Some(w) => (self.to_device(&witness_normal(w, &back_world)), w.distance),
            None => (back, 0.0),
        };
        let s_c = self.commit_stylus.unwrap_or(*stylus);
        let extrapolated = (margin - d_last) / scale + (s_c - stylus).dot(&n);
        let depth = extrapolated.max(margin / scale);
        Ok(ConstraintModel::plane(stylus + n * depth, n, self.scene.config.force_law))
    }

    /// One scene-loop iteration at virtual time `t_ms`.
    pub fn step(&mut self, link: &mut dyn HapticLink, t_ms: f64) -> Result<StepReport, SessionError> {
        let stylus = link.get_pose()?;
        let button_event = stylus.button && !self.prev_button;
        self.prev_button = stylus.button;
        let queries_before = self.query_count();

        let mut witness = None;
        let outcome = match (self.scene.selected, self.clutch.engaged) {
            (Some(sel), true) => {
                if self.anchor.is_none() {
                    self.capture_anchor(&stylus);
                }
                let anchor = self.anchor.clone().expect("anchor captured on engage");
                let delta = apply_clutch(&stylus, &self.clutch, &self.mapping)?.expect("clutch engaged");
                let s = stylus.pose.position;
                let s_c = self.commit_stylus.unwrap_or(s);
                match move_entity(&self.scene.entities[sel], &anchor, &delta, &self.dls) {
                    Ok(candidate) => {
                        witness = self.min_witness(sel, &candidate)?;
                        match witness {
                            Some(w) if w.distance <= 0.0 => {
                                let m = self.contact_model(&s, &(s - s_c))?;
                                self.set_model(m);
                                StepOutcome::RejectedCollision
                            }
                            _ => {
                                self.scene.entities[sel] = candidate;
                                self.commit_stylus = Some(s);
                                self.commit_witness = witness;
                                let m = match &witness {
                                    Some(w) => {
                                        let fallback = self.mapping.frame_rotation() * Vec3::z();
                                        self.margin_model(&s, w, &fallback)?
                                    }
                                    None => ConstraintModel::inactive(),
                                };
                                self.set_model(m);
                                StepOutcome::Committed
                            }
                        }
                    }
                    Err(KinematicsError::OutOfWorkspace | KinematicsError::TargetUnreachable { .. }) => {
                        let motion = s - s_c;
                        if motion.norm() > 0.0 {
                            let n = -motion.normalize();
                            self.set_model(ConstraintModel::plane(s_c, n, self.scene.config.force_law));
                        }
                        StepOutcome::RejectedWorkspace
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            _ => {
                self.set_model(ConstraintModel::inactive());
                StepOutcome::Idle
            }
        };

        if self.model_dirty {
            link.set_force_model(&self.model)?;
            self.model_dirty = false;
        }

        let handle = self.selected().map(|e| e.handle_pose());
        if let (Some(rec), Some(pose)) = (self.recorder.as_mut(), handle) {
            rec.update(&pose, t_ms, button_event);
        }

        let report = StepReport {
            outcome,
            witness,
            model: self.model,
            stylus,
            queries: self.query_count() - queries_before,
        };
        let record = StepRecord {
            step: self.step_index,
            t_ms,
            stylus_mm: stylus.pose.position,
            entity: self.selected().map(|e| e.name.clone()),
            outcome,
            distance_mm: witness.map(|w| w.distance),
            state: (outcome == StepOutcome::Committed).then(|| self.selected().expect("committed entity").state()),
            model: self.model,
            force_n: servo_tick(&stylus, &self.model).force,
        };
        self.log(LogRecord::Step(Box::new(record)))?;
        self.step_index += 1;
        Ok(report)
    }
}
