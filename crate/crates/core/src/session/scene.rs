use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::geometry::{MeshRef, Pose};
use crate::kinematics::{Entity, EntityKind, HandleMode, MannequinEntity, PivotMode, RobotEntity, RobotFile, Skeleton, SolidEntity};

use super::config::SessionConfig;
use super::SessionError;

/// Two entity-name groups tested against each other.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollisionPair {
    pub a: Vec<String>,
    pub b: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PivotSpec {
    pub mode: PivotMode,
    #[serde(default)]
    pub user: Pose,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KinematicsRef {
    File(PathBuf),
    Robot(Box<RobotFile>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EntitySpec {
    Solid {
        name: String,
        mesh: MeshRef,
        #[serde(default)]
        pose: Pose,
        #[serde(default)]
        pivot: PivotSpec,
    },
    Robot {
        name: String,
        kinematics: KinematicsRef,
        #[serde(default)]
        pose: Pose,
        #[serde(default)]
        q: Option<Vec<f64>>,
        #[serde(default)]
        handle: Option<HandleMode>,
    },
    Mannequin {
        name: String,
        /// Skeleton file; the bundled 56-DOF skeleton when absent.
        #[serde(default)]
        kinematics: Option<PathBuf>,
        #[serde(default)]
        pose: Option<Pose>,
        #[serde(default)]
        handle: Option<HandleMode>,
        #[serde(default)]
        trunk_locked: bool,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneFile {
    pub entities: Vec<EntitySpec>,
    #[serde(default)]
    pub collision_pairs: Vec<CollisionPair>,
    #[serde(default)]
    pub selected: Option<String>,
    #[serde(default)]
    pub config: SessionConfig,
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub entities: Vec<Entity>,
    pub collision_pairs: Vec<CollisionPair>,
    pub selected: Option<usize>,
    pub config: SessionConfig,
}

fn entity_from_spec(spec: EntitySpec, base_dir: &Path) -> Result<Entity, SessionError> {
    let (name, kind) = match spec {
        EntitySpec::Solid { name, mesh, pose, pivot } => {
            let mut s = SolidEntity::new(Arc::new(mesh.resolve(base_dir)?), pose);
            s.pivot_mode = pivot.mode;
            s.user_pivot = pivot.user;
            (name, EntityKind::Solid(s))
        }
        EntitySpec::Robot { name, kinematics, pose, q, handle } => {
            let mut robot = match kinematics {
                KinematicsRef::File(p) => {
                    let path = base_dir.join(p);
                    RobotEntity::load(&path, pose)?
                }
                KinematicsRef::Robot(file) => RobotEntity::from_file(*file, base_dir, pose)?,
            };
            if let Some(q) = q {
                robot.chain.check_q(&q)?;
                robot.q = q;
            }
            let mut e = Entity {
                name,
                kind: EntityKind::Robot(robot),
            };
            if let Some(h) = handle {
                e.set_handle_mode(h)?;
            }
            return Ok(e);
        }
        EntitySpec::Mannequin {
            name,
            kinematics,
            pose,
            handle,
            trunk_locked,
        } => {
            let skeleton = match kinematics {
                Some(p) => Skeleton::load(&base_dir.join(p))?,
                None => Skeleton::default_mannequin(),
            };
            let mut m = MannequinEntity::new(Arc::new(skeleton))?;
            if let Some(p) = pose {
                m.root_pose = p;
            }
            m.trunk_locked = trunk_locked;
            let mut e = Entity {
                name,
                kind: EntityKind::Mannequin(m),
            };
            if let Some(h) = handle {
                e.set_handle_mode(h)?;
            }
            return Ok(e);
        }
    };
    Ok(Entity { name, kind })
}

impl Scene {
    pub fn from_file(file: SceneFile, base_dir: &Path) -> Result<Scene, SessionError> {
        file.config.validate()?;
        let entities = file
            .entities
            .into_iter()
            .map(|s| entity_from_spec(s, base_dir))
            .collect::<Result<Vec<_>, _>>()?;
        let mut seen = HashSet::new();
        for e in &entities {
            if !seen.insert(e.name.as_str()) {
                return Err(SessionError::Scene(format!("duplicate entity name {:?}", e.name)));
            }
        }
        let mut scene = Scene {
            entities,
            collision_pairs: Vec::new(),
            selected: None,
            config: file.config,
        };
        scene.set_collision_pairs(file.collision_pairs)?;
        if let Some(sel) = file.selected {
            scene.selected = Some(scene.index_of(&sel)?);
        }
        Ok(scene)
    }

    /// Load a scene file; relative mesh and kinematics paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Scene, SessionError> {
        let file: SceneFile = super::read_json(path)?;
        Scene::from_file(file, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn index_of(&self, name: &str) -> Result<usize, SessionError> {
        self.entities
            .iter()
            .position(|e| e.name == name)
            .ok_or_else(|| SessionError::Scene(format!("unknown entity {name:?}")))
    }

    pub fn entity(&self, name: &str) -> Result<&Entity, SessionError> {
        Ok(&self.entities[self.index_of(name)?])
    }

    pub fn set_collision_pairs(&mut self, pairs: Vec<CollisionPair>) -> Result<(), SessionError> {
        for p in &pairs {
            for n in p.a.iter().chain(&p.b) {
                self.index_of(n)?;
            }
        }
        self.collision_pairs = pairs;
        Ok(())
    }

    /// Unordered entity index pairs under test. Same-entity pairs are skipped.
    pub fn active_entity_pairs(&self) -> BTreeSet<(usize, usize)> {
        let mut out = BTreeSet::new();
        for p in &self.collision_pairs {
            for a in &p.a {
                for b in &p.b {
                    let (ia, ib) = (self.index_of(a).unwrap(), self.index_of(b).unwrap());
                    if ia != ib {
                        out.insert((ia.min(ib), ia.max(ib)));
                    }
                }
            }
        }
        out
    }

    /// Entities tested against `moved`.
    pub fn partners_of(&self, moved: usize) -> Vec<usize> {
        self.active_entity_pairs()
            .into_iter()
            .filter_map(|(a, b)| match (a == moved, b == moved) {
                (true, _) => Some(b),
                (_, true) => Some(a),
                _ => None,
            })
            .collect()
    }
}
