//! Signed distances between the arm's collision primitives and the scene.

mod scene;
mod shapes;

use nalgebra::{DVector, Vector3};

pub use scene::{GoalRegion, GoalSpec, Obstacle, ObstacleSpec, Scene, SceneDescription, Table, TableSpec};
pub use shapes::Primitive;

use crate::arm::{ArmModel, JointVector, Kinematics, Pose};
use crate::error::Result;
use shapes::{contact, Contact};

/// Identifies one side of a proximity pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BodyRef {
    /// Index into `ArmModel::bodies()`.
    Robot(usize),
    /// Index into `Scene::obstacles`.
    Obstacle(usize),
    Table,
}

/// Closest pair between two bodies. Negative distance means penetration.
#[derive(Clone, Debug, PartialEq)]
pub struct ProximityReport {
    pub distance: f64,
    pub witness_a: Vector3<f64>,
    pub witness_b: Vector3<f64>,
    /// Unit direction from `b` toward `a`; moving `a` along it increases the distance.
    pub normal: Vector3<f64>,
    /// `None` only for the vacuous report (no candidate pairs).
    pub pair: Option<(BodyRef, BodyRef)>,
}

impl ProximityReport {
    /// Sentinel for "no pairs to check": infinitely far.
    pub fn vacuous() -> Self {
        Self {
            distance: f64::INFINITY,
            witness_a: Vector3::zeros(),
            witness_b: Vector3::zeros(),
            normal: Vector3::z(),
            pair: None,
        }
    }

    fn from_contact(c: Contact, a: BodyRef, b: BodyRef) -> Self {
        Self {
            distance: c.distance,
            witness_a: c.point_a,
            witness_b: c.point_b,
            normal: c.normal,
            pair: Some((a, b)),
        }
    }

    fn closer(self, other: Self) -> Self {
        if other.distance < self.distance {
            other
        } else {
            self
        }
    }
}

/// Signed distance between two posed primitives.
pub fn primitive_distance(a: &Primitive, pose_a: &Pose, b: &Primitive, pose_b: &Pose) -> Result<ProximityReport> {
    let c = contact(&a.place(pose_a), &b.place(pose_b))?;
    Ok(ProximityReport {
        distance: c.distance,
        witness_a: c.point_a,
        witness_b: c.point_b,
        normal: c.normal,
        pair: None,
    })
}

/// Body index pairs that are checked for self-collision: bodies on links at
/// least two apart (links sharing a joint are exempt).
pub fn self_pairs(model: &ArmModel) -> Vec<(usize, usize)> {
    let bodies = model.bodies();
    let mut pairs = Vec::new();
    for i in 0..bodies.len() {
        for j in (i + 1)..bodies.len() {
            if bodies[i].link.abs_diff(bodies[j].link) >= 2 {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

/// Every robot-vs-environment pair at the given kinematics: each body
/// against each colliding obstacle, then against the table.
pub fn robot_env_reports(model: &ArmModel, kin: &Kinematics, scene: &Scene) -> Result<Vec<ProximityReport>> {
    let poses = model.body_poses(kin);
    let table = scene.table.primitive();
    let identity = Pose::identity();
    let mut out = Vec::with_capacity(model.bodies().len() * (scene.obstacles.len() + 1));
    for (i, (body, pose)) in model.bodies().iter().zip(&poses).enumerate() {
        let placed = body.shape.place(pose);
        for (k, o) in scene.obstacles.iter().enumerate() {
            if !scene.is_colliding_label(&o.label) {
                continue;
            }
            let c = contact(&placed, &o.shape.place(&o.pose))?;
            out.push(ProximityReport::from_contact(c, BodyRef::Robot(i), BodyRef::Obstacle(k)));
        }
        let c = contact(&placed, &table.place(&identity))?;
        out.push(ProximityReport::from_contact(c, BodyRef::Robot(i), BodyRef::Table));
    }
    Ok(out)
}

/// Every non-adjacent robot body pair.
pub fn self_reports(model: &ArmModel, kin: &Kinematics) -> Result<Vec<ProximityReport>> {
    let poses = model.body_poses(kin);
    let bodies = model.bodies();
    self_pairs(model)
        .into_iter()
        .map(|(i, j)| {
            let c = contact(&bodies[i].shape.place(&poses[i]), &bodies[j].shape.place(&poses[j]))?;
            Ok(ProximityReport::from_contact(c, BodyRef::Robot(i), BodyRef::Robot(j)))
        })
        .collect()
}

fn minimum(reports: Vec<ProximityReport>) -> ProximityReport {
    reports.into_iter().fold(ProximityReport::vacuous(), ProximityReport::closer)
}

/// Closest robot/environment pair, ignoring non-colliding labels but always
/// including the table.
pub fn min_robot_env_distance(model: &ArmModel, q: &JointVector, scene: &Scene) -> Result<ProximityReport> {
    let kin = model.forward_kinematics(q)?;
    Ok(minimum(robot_env_reports(model, &kin, scene)?))
}

/// Closest pair of non-adjacent robot bodies; infinite when none exist.
pub fn min_self_distance(model: &ArmModel, q: &JointVector) -> Result<ProximityReport> {
    let kin = model.forward_kinematics(q)?;
    Ok(minimum(self_reports(model, &kin)?))
}

/// `min(d_robot,env, d_robot,robot)` at `q`.
pub fn min_clearance(model: &ArmModel, q: &JointVector, scene: &Scene) -> Result<ProximityReport> {
    let kin = model.forward_kinematics(q)?;
    clearance_at(model, &kin, scene)
}

pub(crate) fn clearance_at(model: &ArmModel, kin: &Kinematics, scene: &Scene) -> Result<ProximityReport> {
    let env = minimum(robot_env_reports(model, kin, scene)?);
    let own = minimum(self_reports(model, kin)?);
    Ok(env.closer(own))
}

/// Gradient of a pair distance with respect to the joint vector.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceGradient {
    pub gradient: DVector<f64>,
    /// Set when the distance is too small for the witness direction to be
    /// well defined; the gradient then uses the primitive's fallback normal.
    pub degenerate: bool,
}

/// `∂d/∂q` for a pair reported at `q`: the pair normal pulled back through
/// the Jacobian of each robot-side witness point.
pub fn distance_gradient(model: &ArmModel, q: &JointVector, report: &ProximityReport) -> Result<DistanceGradient> {
    let kin = model.forward_kinematics(q)?;
    gradient_at(model, &kin, report)
}

pub(crate) fn gradient_at(model: &ArmModel, kin: &Kinematics, report: &ProximityReport) -> Result<DistanceGradient> {
    let mut gradient = DVector::zeros(model.dof());
    if let Some((a, b)) = report.pair {
        if let BodyRef::Robot(i) = a {
            let jac = model.jacobian_at(kin, &report.witness_a, model.bodies()[i].link)?;
            gradient += jac.transpose() * report.normal;
        }
        if let BodyRef::Robot(j) = b {
            let jac = model.jacobian_at(kin, &report.witness_b, model.bodies()[j].link)?;
            gradient -= jac.transpose() * report.normal;
        }
    }
    Ok(DistanceGradient {
        gradient,
        degenerate: report.distance.abs() < 1e-9,
    })
}
