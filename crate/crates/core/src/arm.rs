//! Serial revolute arm: kinematic chain, forward kinematics, Jacobians and
//! joint limits.
//!
//! Link `0` is the immobile base. Joint `j` (1-based) sits at the origin of
//! link `j`, placed at `offset_j` in the frame of link `j - 1`, and rotates
//! link `j` and everything distal to it about `axis_j`.

use nalgebra::{DVector, Isometry3, Matrix3xX, Point3, Translation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::geometry::Primitive;

pub type Pose = Isometry3<f64>;
pub type JointVector = DVector<f64>;

const DESK_ARM_JSON: &str = include_str!("../assets/desk_arm.json");

/// Position plus optional orientation, as written in description files.
///
/// Orientation is either a quaternion `[w, x, y, z]` or roll/pitch/yaw in
/// radians; neither means identity.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PoseSpec {
    pub position: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orientation: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rpy: Option<[f64; 3]>,
}

impl PoseSpec {
    pub fn at(position: [f64; 3]) -> Self {
        Self {
            position,
            ..Self::default()
        }
    }

    pub fn to_pose(&self, field: &str) -> Result<Pose> {
        let rotation = match (self.orientation, self.rpy) {
            (Some(_), Some(_)) => {
                return Err(Error::load(field, "give either `orientation` or `rpy`, not both"))
            }
            (Some([w, x, y, z]), None) => {
                let q = nalgebra::Quaternion::new(w, x, y, z);
                let norm = q.norm();
                if !norm.is_finite() || (norm - 1.0).abs() > 1e-3 {
                    return Err(Error::load(field, format!("quaternion norm {norm} is not 1")));
                }
                UnitQuaternion::from_quaternion(q)
            }
            (None, Some([r, p, y])) => UnitQuaternion::from_euler_angles(r, p, y),
            (None, None) => UnitQuaternion::identity(),
        };
        if self.position.iter().any(|v| !v.is_finite()) {
            return Err(Error::load(field, "non-finite position"));
        }
        Ok(Isometry3::from_parts(Translation3::from(Vector3::from(self.position)), rotation))
    }

    pub fn from_pose(pose: &Pose) -> Self {
        let q = pose.rotation.quaternion();
        let t = pose.translation.vector;
        Self {
            position: [t.x, t.y, t.z],
            orientation: Some([q.w, q.i, q.j, q.k]),
            rpy: None,
        }
    }
}

/// One revolute joint and the rigid offset that places it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub axis: [f64; 3],
    pub offset: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodySpec {
    pub link: usize,
    pub shape: Primitive,
    #[serde(default)]
    pub pose: PoseSpec,
}

/// On-disk arm description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmDescription {
    pub dof: usize,
    #[serde(default)]
    pub base: PoseSpec,
    pub links: Vec<LinkSpec>,
    #[serde(default)]
    pub tool_offset: [f64; 3],
    pub q_min: Vec<f64>,
    pub q_max: Vec<f64>,
    pub qdot_max: Vec<f64>,
    #[serde(default)]
    pub collision_bodies: Vec<BodySpec>,
}

#[derive(Clone, Debug)]
pub struct Link {
    pub axis: Unit<Vector3<f64>>,
    pub offset: Vector3<f64>,
}

/// A collision primitive rigidly attached to a link.
#[derive(Clone, Debug)]
pub struct CollisionBody {
    pub link: usize,
    pub shape: Primitive,
    pub local: Pose,
}

/// Joint position and velocity.
#[derive(Clone, Debug, PartialEq)]
pub struct JointState {
    pub q: JointVector,
    pub qdot: JointVector,
}

impl JointState {
    pub fn new(q: JointVector, qdot: JointVector) -> Result<Self> {
        check_dim(q.len(), qdot.len())?;
        Ok(Self { q, qdot })
    }

    pub fn at_rest(q: JointVector) -> Self {
        let qdot = JointVector::zeros(q.len());
        Self { q, qdot }
    }
}

/// World poses of every link (index 0 is the base) and of the tool frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Kinematics {
    pub links: Vec<Pose>,
    pub end_effector: Pose,
}

impl Kinematics {
    pub fn end_effector_position(&self) -> Vector3<f64> {
        self.end_effector.translation.vector
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LimitKind {
    Position,
    Velocity,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LimitViolation {
    /// Zero-based joint index.
    pub joint: usize,
    pub kind: LimitKind,
    /// Amount by which the bound is exceeded (always positive).
    pub magnitude: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LimitReport {
    pub violations: Vec<LimitViolation>,
}

impl LimitReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Immutable kinematic model of a serial revolute arm.
#[derive(Clone, Debug)]
pub struct ArmModel {
    base: Pose,
    links: Vec<Link>,
    tool_offset: Vector3<f64>,
    q_min: JointVector,
    q_max: JointVector,
    qdot_max: JointVector,
    bodies: Vec<CollisionBody>,
}

impl ArmModel {
    /// The bundled 3-DOF desk arm (yaw, pitch, pitch; 0.30/0.30/0.15 m).
    pub fn desk_arm() -> Self {
        Self::from_json(DESK_ARM_JSON).expect("bundled desk arm description is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let description: ArmDescription = serde_json::from_str(text)?;
        Self::from_description(&description)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_description(d: &ArmDescription) -> Result<Self> {
        let dof = d.dof;
        if dof == 0 {
            return Err(Error::load("dof", "must be at least 1"));
        }
        for (field, len) in [
            ("links", d.links.len()),
            ("q_min", d.q_min.len()),
            ("q_max", d.q_max.len()),
            ("qdot_max", d.qdot_max.len()),
        ] {
            if len != dof {
                return Err(Error::load(field, format!("expected {dof} entries, found {len}")));
            }
        }
        let mut links = Vec::with_capacity(dof);
        for (i, spec) in d.links.iter().enumerate() {
            let axis = Vector3::from(spec.axis);
            if axis.norm().is_nan() || axis.norm() <= 1e-12 || spec.offset.iter().any(|v| !v.is_finite()) {
                return Err(Error::load(format!("links[{i}]"), "axis must be a finite non-zero vector"));
            }
            links.push(Link {
                axis: Unit::new_normalize(axis),
                offset: Vector3::from(spec.offset),
            });
        }
        for j in 0..dof {
            let (lo, hi) = (d.q_min[j], d.q_max[j]);
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::load(
                    format!("q_min[{j}]"),
                    format!("lower limit {lo} must be below upper limit {hi}"),
                ));
            }
            if !(d.qdot_max[j].is_finite() && d.qdot_max[j] > 0.0) {
                return Err(Error::load(format!("qdot_max[{j}]"), "velocity limit must be positive"));
            }
        }
        let mut bodies = Vec::with_capacity(d.collision_bodies.len());
        for (i, body) in d.collision_bodies.iter().enumerate() {
            let field = format!("collision_bodies[{i}]");
            if body.link > dof {
                return Err(Error::load(
                    format!("{field}.link"),
                    format!("link {} does not exist (chain has links 0..={dof})", body.link),
                ));
            }
            body.shape.validate().map_err(|m| Error::load(format!("{field}.shape"), m))?;
            if matches!(body.shape, Primitive::HalfSpace { .. }) {
                return Err(Error::load(format!("{field}.shape"), "half-spaces cannot be attached to links"));
            }
            bodies.push(CollisionBody {
                link: body.link,
                shape: body.shape.clone(),
                local: body.pose.to_pose(&format!("{field}.pose"))?,
            });
        }
        Ok(Self {
            base: d.base.to_pose("base")?,
            links,
            tool_offset: Vector3::from(d.tool_offset),
            q_min: JointVector::from_column_slice(&d.q_min),
            q_max: JointVector::from_column_slice(&d.q_max),
            qdot_max: JointVector::from_column_slice(&d.qdot_max),
            bodies,
        })
    }

    pub fn to_description(&self) -> ArmDescription {
        ArmDescription {
            dof: self.dof(),
            base: PoseSpec::from_pose(&self.base),
            links: self
                .links
                .iter()
                .map(|l| LinkSpec {
                    axis: [l.axis.x, l.axis.y, l.axis.z],
                    offset: [l.offset.x, l.offset.y, l.offset.z],
                })
                .collect(),
            tool_offset: [self.tool_offset.x, self.tool_offset.y, self.tool_offset.z],
            q_min: self.q_min.iter().copied().collect(),
            q_max: self.q_max.iter().copied().collect(),
            qdot_max: self.qdot_max.iter().copied().collect(),
            collision_bodies: self
                .bodies
                .iter()
                .map(|b| BodySpec {
                    link: b.link,
                    shape: b.shape.clone(),
                    pose: PoseSpec::from_pose(&b.local),
                })
                .collect(),
        }
    }

    pub fn dof(&self) -> usize {
        self.links.len()
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn base(&self) -> &Pose {
        &self.base
    }

    pub fn tool_offset(&self) -> &Vector3<f64> {
        &self.tool_offset
    }

    pub fn q_min(&self) -> &JointVector {
        &self.q_min
    }

    pub fn q_max(&self) -> &JointVector {
        &self.q_max
    }

    pub fn qdot_max(&self) -> &JointVector {
        &self.qdot_max
    }

    pub fn bodies(&self) -> &[CollisionBody] {
        &self.bodies
    }

    pub fn forward_kinematics(&self, q: &JointVector) -> Result<Kinematics> {
        check_dim(self.dof(), q.len())?;
        let mut poses = Vec::with_capacity(self.dof() + 1);
        let mut current = self.base;
        poses.push(current);
        for (link, &angle) in self.links.iter().zip(q.iter()) {
            let joint = Isometry3::from_parts(
                Translation3::from(link.offset),
                UnitQuaternion::from_axis_angle(&link.axis, angle),
            );
            current *= joint;
            poses.push(current);
        }
        let end_effector = current * Translation3::from(self.tool_offset);
        Ok(Kinematics {
            links: poses,
            end_effector,
        })
    }

    /// World poses of every collision body, in `bodies()` order.
    pub fn body_poses(&self, kin: &Kinematics) -> Vec<Pose> {
        self.bodies.iter().map(|b| kin.links[b.link] * b.local).collect()
    }

    /// Jacobian (3 × dof) of a world point rigidly attached to `link`.
    pub fn jacobian(&self, q: &JointVector, point: &Vector3<f64>, link: usize) -> Result<Matrix3xX<f64>> {
        let kin = self.forward_kinematics(q)?;
        self.jacobian_at(&kin, point, link)
    }

    /// Same as [`ArmModel::jacobian`] but reuses already computed kinematics.
    pub fn jacobian_at(&self, kin: &Kinematics, point: &Vector3<f64>, link: usize) -> Result<Matrix3xX<f64>> {
        if link > self.dof() {
            return Err(Error::InvalidLink {
                index: link,
                max: self.dof(),
            });
        }
        let mut jac = Matrix3xX::zeros(self.dof());
        for j in 1..=link {
            let frame = &kin.links[j];
            let axis = frame.rotation * self.links[j - 1].axis.into_inner();
            let lever = point - frame.translation.vector;
            jac.set_column(j - 1, &axis.cross(&lever));
        }
        Ok(jac)
    }

    /// Per-joint position and velocity breaches. Bounds are closed.
    pub fn check_joint_limits(&self, state: &JointState) -> Result<LimitReport> {
        check_dim(self.dof(), state.q.len())?;
        check_dim(self.dof(), state.qdot.len())?;
        let mut violations = Vec::new();
        for j in 0..self.dof() {
            let q = state.q[j];
            let over = if q > self.q_max[j] {
                q - self.q_max[j]
            } else if q < self.q_min[j] {
                self.q_min[j] - q
            } else {
                0.0
            };
            if over > 0.0 {
                violations.push(LimitViolation {
                    joint: j,
                    kind: LimitKind::Position,
                    magnitude: over,
                });
            }
            let speed_over = state.qdot[j].abs() - self.qdot_max[j];
            if speed_over > 0.0 {
                violations.push(LimitViolation {
                    joint: j,
                    kind: LimitKind::Velocity,
                    magnitude: speed_over,
                });
            }
        }
        Ok(LimitReport { violations })
    }

    pub fn within_position_limits(&self, q: &JointVector) -> bool {
        q.len() == self.dof()
            && q
                .iter()
                .enumerate()
                .all(|(j, &v)| v >= self.q_min[j] && v <= self.q_max[j])
    }

    pub fn clamp_to_limits(&self, q: &JointVector) -> JointVector {
        JointVector::from_iterator(
            q.len(),
            q.iter()
                .enumerate()
                .map(|(j, &v)| v.clamp(self.q_min[j], self.q_max[j])),
        )
    }

    /// Upper bound on how far any collision-body point can travel in one
    /// interval of length `dt` when every joint moves at its velocity limit.
    ///
    /// The lever arm of joint `j` for a body on link `L >= j` is bounded by the
    /// summed offsets from joint `j` to link `L` plus the body's own extent.
    pub fn max_body_displacement(&self, dt: f64) -> f64 {
        let mut worst: f64 = 0.0;
        for body in &self.bodies {
            let extent = body.local.translation.vector.norm() + body.shape.bounding_radius();
            let mut travel = 0.0;
            for j in 1..=body.link {
                let lever: f64 = self.links[j..body.link].iter().map(|l| l.offset.norm()).sum::<f64>() + extent;
                travel += self.qdot_max[j - 1] * dt * lever;
            }
            worst = worst.max(travel);
        }
        worst
    }

    pub fn point_on_link(kin: &Kinematics, link: usize, local: &Point3<f64>) -> Vector3<f64> {
        (kin.links[link] * local).coords
    }

    /// Damped least-squares search for a configuration whose end effector
    /// sits at `target`, starting from `seed` and staying within limits.
    /// Returns the configuration and the remaining position error (m).
    pub fn solve_position(&self, target: &Vector3<f64>, seed: &JointVector) -> Result<(JointVector, f64)> {
        let mut q = self.clamp_to_limits(seed);
        let damping = 1e-4;
        for _ in 0..200 {
            let kin = self.forward_kinematics(&q)?;
            let tip = kin.end_effector_position();
            let err = target - tip;
            if err.norm() < 1e-10 {
                break;
            }
            let j = self.jacobian_at(&kin, &tip, self.dof())?;
            let jjt = &j * j.transpose() + nalgebra::Matrix3::identity() * damping;
            let Some(inv) = jjt.try_inverse() else { break };
            q = self.clamp_to_limits(&(&q + j.transpose() * (inv * err)));
        }
        let tip = self.forward_kinematics(&q)?.end_effector_position();
        Ok((q, (target - tip).norm()))
    }
}
