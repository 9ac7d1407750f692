//! Committed-state log (JSON lines) and its offline safety replay.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geometry::{closest_pair_exhaustive, Vec3};
use crate::kinematics::EntityState;
use crate::servo::ConstraintModel;

use super::scene::{CollisionPair, Scene};
use super::SessionError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepOutcome {
    /// No selection or clutch disengaged.
    Idle,
    Committed,
    RejectedCollision,
    RejectedWorkspace,
}

impl StepOutcome {
    pub fn is_rejection(self) -> bool {
        matches!(self, StepOutcome::RejectedCollision | StepOutcome::RejectedWorkspace)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub t_ms: f64,
    #[serde(with = "crate::serde_vec3")]
    pub stylus_mm: Vec3,
    pub entity: Option<String>,
    pub outcome: StepOutcome,
    /// Minimum witness distance of the candidate, when any pair was tested.
    pub distance_mm: Option<f64>,
    /// Entity configuration after the step (only on commits).
    pub state: Option<EntityState>,
    pub model: ConstraintModel,
    /// Force the servo renders for this stylus sample under `model`.
    #[serde(with = "crate::serde_vec3")]
    pub force_n: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogRecord {
    Pairs { step: u64, pairs: Vec<CollisionPair> },
    Step(Box<StepRecord>),
}

pub struct StateLog {
    out: Box<dyn Write + Send>,
}

impl StateLog {
    pub fn new(out: Box<dyn Write + Send>) -> Self {
        StateLog { out }
    }

    pub fn create(path: &Path) -> Result<Self, SessionError> {
        let f = std::fs::File::create(path).map_err(|source| SessionError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(StateLog::new(Box::new(std::io::BufWriter::new(f))))
    }

    pub fn write(&mut self, rec: &LogRecord) -> Result<(), SessionError> {
        let line = serde_json::to_string(rec).expect("log record serializes");
        writeln!(self.out, "{line}").map_err(|source| SessionError::Io {
            path: "state log".into(),
            source,
        })
    }

    pub fn flush(&mut self) -> Result<(), SessionError> {
        self.out.flush().map_err(|source| SessionError::Io {
            path: "state log".into(),
            source,
        })
    }
}

pub fn read_log(path: &Path) -> Result<Vec<LogRecord>, SessionError> {
    let f = std::fs::File::open(path).map_err(|source| SessionError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|source| SessionError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| SessionError::Scene(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub step: u64,
    pub a: String,
    pub b: String,
    pub distance_mm: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub steps: u64,
    pub committed: u64,
    pub rejected: u64,
    /// Rejections whose logged force is nonzero.
    pub rejected_with_force: u64,
    pub pair_checks: u64,
    pub min_distance_mm: Option<f64>,
    pub violations: Vec<Violation>,
}

/// Re-apply every committed state to `scene` and check all active pairs with
/// the exhaustive triangle-pair query.
pub fn replay(mut scene: Scene, records: &[LogRecord]) -> Result<ReplayReport, SessionError> {
    let mut report = ReplayReport::default();
    let check = |scene: &Scene, step: u64, report: &mut ReplayReport| -> Result<(), SessionError> {
        for (ia, ib) in scene.active_entity_pairs() {
            let (ea, eb) = (&scene.entities[ia], &scene.entities[ib]);
            for ma in ea.posed_meshes() {
                for mb in eb.posed_meshes() {
                    let w = closest_pair_exhaustive(&ma.mesh, &ma.pose, &mb.mesh, &mb.pose)?;
                    report.pair_checks += 1;
                    report.min_distance_mm = Some(report.min_distance_mm.map_or(w.distance, |m| m.min(w.distance)));
                    if w.distance <= 0.0 {
                        report.violations.push(Violation {
                            step,
                            a: ea.name.clone(),
                            b: eb.name.clone(),
                            distance_mm: w.distance,
                        });
                    }
                }
            }
        }
        Ok(())
    };
    for rec in records {
        match rec {
            LogRecord::Pairs { pairs, .. } => scene.set_collision_pairs(pairs.clone())?,
            LogRecord::Step(s) => {
                report.steps += 1;
                if s.outcome.is_rejection() {
                    report.rejected += 1;
                    if s.force_n.norm() > 0.0 {
                        report.rejected_with_force += 1;
                    }
                }
                if let (StepOutcome::Committed, Some(name), Some(state)) = (s.outcome, &s.entity, &s.state) {
                    report.committed += 1;
                    let i = scene.index_of(name)?;
                    scene.entities[i].set_state(state)?;
                    check(&scene, s.step, &mut report)?;
                }
            }
        }
    }
    Ok(report)
}
