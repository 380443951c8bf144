use std::collections::BTreeSet;

use nalgebra::{Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::arm::{ArmModel, Pose, PoseSpec};
use crate::error::{Error, Result};
use crate::geometry::Primitive;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObstacleSpec {
    #[serde(flatten)]
    pub shape: Primitive,
    #[serde(default)]
    pub pose: PoseSpec,
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableSpec {
    pub normal: [f64; 3],
    pub offset: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalSpec {
    pub center: [f64; 3],
    pub half_extents: [f64; 3],
}

/// On-disk scene description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneDescription {
    #[serde(default)]
    pub obstacles: Vec<ObstacleSpec>,
    pub table: TableSpec,
    pub goal_region: GoalSpec,
    #[serde(default)]
    pub non_colliding_labels: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct Obstacle {
    pub shape: Primitive,
    pub pose: Pose,
    pub label: String,
}

/// Table surface as the solid half-space below it.
#[derive(Clone, Debug)]
pub struct Table {
    pub normal: Unit<Vector3<f64>>,
    pub offset: f64,
}

impl Table {
    pub fn primitive(&self) -> Primitive {
        Primitive::HalfSpace {
            normal: [self.normal.x, self.normal.y, self.normal.z],
            offset: self.offset,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GoalRegion {
    pub center: Vector3<f64>,
    pub half_extents: Vector3<f64>,
}

impl GoalRegion {
    /// Closed-box membership test.
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (p - self.center)
            .iter()
            .zip(self.half_extents.iter())
            .all(|(d, h)| d.abs() <= *h)
    }
}

#[derive(Clone, Debug)]
pub struct Scene {
    pub obstacles: Vec<Obstacle>,
    pub table: Table,
    pub goal_region: GoalRegion,
    pub non_colliding_labels: BTreeSet<String>,
}

impl Scene {
    pub fn from_description(d: &SceneDescription) -> Result<Self> {
        let mut labels = BTreeSet::new();
        let mut obstacles = Vec::with_capacity(d.obstacles.len());
        for (i, o) in d.obstacles.iter().enumerate() {
            let field = format!("obstacles[{i}]");
            o.shape.validate().map_err(|m| Error::load(&field, m))?;
            if matches!(o.shape, Primitive::HalfSpace { .. }) {
                return Err(Error::load(&field, "half-space obstacles are not supported; use `table`"));
            }
            if !labels.insert(o.label.clone()) {
                return Err(Error::load(format!("{field}.label"), format!("duplicate label `{}`", o.label)));
            }
            obstacles.push(Obstacle {
                shape: o.shape.clone(),
                pose: o.pose.to_pose(&format!("{field}.pose"))?,
                label: o.label.clone(),
            });
        }
        let normal = Vector3::from(d.table.normal);
        if (normal.norm() - 1.0).abs() > 1e-9 || !d.table.offset.is_finite() {
            return Err(Error::load("table.normal", "must be a unit vector with finite offset"));
        }
        let half = Vector3::from(d.goal_region.half_extents);
        if half.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
            return Err(Error::load("goal_region.half_extents", "must be positive"));
        }
        let mut non_colliding = BTreeSet::new();
        for label in &d.non_colliding_labels {
            non_colliding.insert(label.clone());
        }
        Ok(Self {
            obstacles,
            table: Table {
                normal: Unit::new_normalize(normal),
                offset: d.table.offset,
            },
            goal_region: GoalRegion {
                center: Vector3::from(d.goal_region.center),
                half_extents: half,
            },
            non_colliding_labels: non_colliding,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let d: SceneDescription = serde_json::from_str(text)?;
        Self::from_description(&d)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_description(&self) -> SceneDescription {
        SceneDescription {
            obstacles: self
                .obstacles
                .iter()
                .map(|o| ObstacleSpec {
                    shape: o.shape.clone(),
                    pose: PoseSpec::from_pose(&o.pose),
                    label: o.label.clone(),
                })
                .collect(),
            table: TableSpec {
                normal: [self.table.normal.x, self.table.normal.y, self.table.normal.z],
                offset: self.table.offset,
            },
            goal_region: GoalSpec {
                center: self.goal_region.center.into(),
                half_extents: self.goal_region.half_extents.into(),
            },
            non_colliding_labels: self.non_colliding_labels.iter().cloned().collect(),
        }
    }

    /// An empty scene: only a table at height `table_z`.
    pub fn open_table(table_z: f64) -> Self {
        Self {
            obstacles: Vec::new(),
            table: Table {
                normal: Vector3::z_axis(),
                offset: table_z,
            },
            goal_region: GoalRegion {
                center: Vector3::new(0.35, 0.0, 0.15),
                half_extents: Vector3::new(0.02, 0.02, 0.02),
            },
            non_colliding_labels: BTreeSet::new(),
        }
    }

    pub fn is_colliding_label(&self, label: &str) -> bool {
        !self.non_colliding_labels.contains(label)
    }

    /// Rejects arm/scene combinations that would need an unsupported
    /// primitive pair at query time.
    pub fn check_compatible(&self, model: &ArmModel) -> Result<()> {
        for body in model.bodies() {
            if matches!(body.shape, Primitive::Box { .. }) {
                if let Some(o) = self.obstacles.iter().find(|o| matches!(o.shape, Primitive::Box { .. })) {
                    return Err(Error::load(
                        format!("obstacle `{}`", o.label),
                        "box obstacles cannot be checked against box-shaped arm bodies",
                    ));
                }
            }
        }
        for (i, j) in crate::geometry::self_pairs(model) {
            let (a, b) = (&model.bodies()[i].shape, &model.bodies()[j].shape);
            if matches!((a, b), (Primitive::Box { .. }, Primitive::Box { .. })) {
                return Err(Error::load(format!("collision_bodies[{j}]"), "box/box self pairs are unsupported"));
            }
        }
        Ok(())
    }
}
