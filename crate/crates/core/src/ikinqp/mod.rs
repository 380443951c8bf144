//! Runtime trajectory correction: turns a requested joint target into a
//! short sequence of collision-free, limit-respecting waypoints by solving
//! one small QP per interval.

mod spline;
mod step;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use spline::{build_spline, HermiteSpline};
pub use step::{step_qp, StepOutcome, StepStatus, StepTarget};

use crate::arm::{ArmModel, JointState, JointVector};
use crate::error::{check_dim, Error, Result};
use crate::geometry::{self, Scene};
use crate::qp::QpSettings;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostWeights {
    pub w_track: f64,
    pub w_drift: f64,
    pub w_smooth: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            w_track: 1.0,
            w_drift: 0.01,
            w_smooth: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrectorParams {
    /// Time allowed to reach the requested target (s).
    pub t1: f64,
    /// Interval between waypoints (s).
    pub dt: f64,
    /// Minimum clearance kept between any collision body pair (m).
    pub d_coll_buff: f64,
    pub weights: CostWeights,
    /// Joint-space distance (rad) above which the reference is splined.
    pub interpolate_threshold: f64,
    /// Step halvings tried before holding position when the exact
    /// clearance check rejects a linearized step.
    pub max_halvings: u32,
}

impl Default for CorrectorParams {
    fn default() -> Self {
        Self {
            t1: 0.5,
            dt: 0.05,
            d_coll_buff: 0.015,
            weights: CostWeights::default(),
            interpolate_threshold: 0.02,
            max_halvings: 3,
        }
    }
}

impl CorrectorParams {
    /// Waypoints per correction: `round(t1 / dt) + 1`.
    pub fn num_points(&self) -> usize {
        (self.t1 / self.dt).round() as usize + 1
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        let ok = self.dt > 0.0
            && self.dt <= self.t1
            && self.t1.is_finite()
            && self.d_coll_buff > 0.0
            && w.w_track > 0.0
            && w.w_drift >= 0.0
            && w.w_smooth >= 0.0
            && self.interpolate_threshold >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::load("corrector", "need 0 < dt <= t1, d_coll_buff > 0, w_track > 0, other weights >= 0"))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryPoint {
    pub q: JointVector,
    pub qdot: JointVector,
    pub t: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrectedTrajectory {
    pub points: Vec<TrajectoryPoint>,
    /// The start was inside the buffer, so the failsafe replaced the target.
    pub used_failsafe: bool,
    /// Exact clearance at each point.
    pub per_point_min_distance: Vec<f64>,
    /// Target actually pursued (the request or the failsafe).
    pub target: JointVector,
    /// First point from which the QP had no solution; later points hold.
    pub infeasible_from: Option<usize>,
    /// Points where the exact clearance check forced a shorter step or a hold.
    pub guarded_steps: usize,
}

impl CorrectedTrajectory {
    pub fn min_distance(&self) -> f64 {
        self.per_point_min_distance.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Anything that maps a requested target to executable waypoints.
pub trait Corrector: Send {
    fn correct(
        &mut self,
        q0: &JointVector,
        qdot0: &JointVector,
        q1: &JointVector,
        qdot1: &JointVector,
        q_last_safe: &JointVector,
    ) -> Result<CorrectedTrajectory>;

    fn params(&self) -> &CorrectorParams;
}

/// The QP-based corrector.
#[derive(Clone, Debug)]
pub struct QpCorrector {
    model: Arc<ArmModel>,
    scene: Arc<Scene>,
    params: CorrectorParams,
    radius: f64,
    settings: QpSettings,
}

impl QpCorrector {
    pub fn new(model: Arc<ArmModel>, scene: Arc<Scene>, params: CorrectorParams) -> Result<Self> {
        params.validate()?;
        let radius = step::activation_radius(&model, &params);
        Ok(Self {
            model,
            scene,
            params,
            radius,
            settings: QpSettings::default(),
        })
    }

    /// Pairs closer than this get a linearized constraint.
    pub fn activation_radius(&self) -> f64 {
        self.radius
    }
}

impl Corrector for QpCorrector {
    fn correct(
        &mut self,
        q0: &JointVector,
        qdot0: &JointVector,
        q1: &JointVector,
        qdot1: &JointVector,
        q_last_safe: &JointVector,
    ) -> Result<CorrectedTrajectory> {
        let request = Request::new(&self.model, &self.scene, &self.params, q0, qdot0, q1, qdot1, q_last_safe)?;
        let n = self.model.dof();
        let dt = self.params.dt;
        let mut state = JointState::new(q0.clone(), qdot0.clone())?;
        let mut drift = JointVector::zeros(n);
        let mut previous_ref = q0.clone();
        let mut out = request.empty_trajectory(self.params.num_points());

        for i in 0..self.params.num_points() {
            let t = i as f64 * dt;
            if out.infeasible_from.is_some() {
                out.push(state.q.clone(), JointVector::zeros(n), t, *out.per_point_min_distance.last().unwrap());
                continue;
            }
            let target = match &request.spline {
                Some(spline) => {
                    let r = spline.position(t);
                    let v = if i == 0 { JointVector::zeros(n) } else { (&r - &previous_ref) / dt };
                    previous_ref = r.clone();
                    StepTarget {
                        q: r,
                        qdot: v,
                        drift: drift.clone(),
                    }
                }
                None => StepTarget::reach(&state.q, &out.target, dt),
            };
            let step = step::step_with_radius(
                &self.model,
                &self.scene,
                &state,
                &target,
                &self.params,
                self.radius,
                &self.settings,
            )?;
            match step.status {
                StepStatus::Solved => {}
                StepStatus::Shortened(_) | StepStatus::Held => out.guarded_steps += 1,
                StepStatus::Infeasible => out.infeasible_from = Some(i),
            }
            if request.spline.is_some() {
                drift += &step.q - &target.q;
            }
            out.push(step.q.clone(), step.qdot.clone(), t, step.min_distance);
            state = JointState {
                q: step.q,
                qdot: step.qdot,
            };
        }
        Ok(out)
    }

    fn params(&self) -> &CorrectorParams {
        &self.params
    }
}

/// Baseline without collision handling: follows the same reference as
/// `QpCorrector` (clamped to joint position limits) and never engages the
/// failsafe. Clearances are still measured for reporting.
#[derive(Clone, Debug)]
pub struct PassThrough {
    model: Arc<ArmModel>,
    scene: Arc<Scene>,
    params: CorrectorParams,
}

impl PassThrough {
    pub fn new(model: Arc<ArmModel>, scene: Arc<Scene>, params: CorrectorParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { model, scene, params })
    }
}

impl Corrector for PassThrough {
    fn correct(
        &mut self,
        q0: &JointVector,
        qdot0: &JointVector,
        q1: &JointVector,
        qdot1: &JointVector,
        q_last_safe: &JointVector,
    ) -> Result<CorrectedTrajectory> {
        let request = Request::new(&self.model, &self.scene, &self.params, q0, qdot0, q1, qdot1, q_last_safe)?;
        let target = self.model.clamp_to_limits(q1);
        let spline = if (&target - q0).norm() > self.params.interpolate_threshold {
            Some(build_spline(q0, qdot0, &target, qdot1, self.params.t1)?)
        } else {
            None
        };
        let dt = self.params.dt;
        let mut out = request.empty_trajectory(self.params.num_points());
        out.used_failsafe = false;
        out.target = target.clone();
        let mut previous = q0.clone();
        for i in 0..self.params.num_points() {
            let t = i as f64 * dt;
            let q = match &spline {
                Some(s) => self.model.clamp_to_limits(&s.position(t)),
                None => target.clone(),
            };
            let qdot = (&q - &previous) / dt;
            let d = geometry::min_clearance(&self.model, &q, &self.scene)?.distance;
            out.push(q.clone(), qdot, t, d);
            previous = q;
        }
        Ok(out)
    }

    fn params(&self) -> &CorrectorParams {
        &self.params
    }
}

/// Validated inputs shared by both correctors.
struct Request {
    target: JointVector,
    used_failsafe: bool,
    spline: Option<HermiteSpline>,
}

impl Request {
    #[allow(clippy::too_many_arguments)]
    fn new(
        model: &ArmModel,
        scene: &Scene,
        params: &CorrectorParams,
        q0: &JointVector,
        qdot0: &JointVector,
        q1: &JointVector,
        qdot1: &JointVector,
        q_last_safe: &JointVector,
    ) -> Result<Self> {
        let n = model.dof();
        for v in [q0, qdot0, q1, qdot1, q_last_safe] {
            check_dim(n, v.len())?;
        }
        if !model.within_position_limits(q0) {
            return Err(Error::Usage("start configuration violates joint position limits".into()));
        }
        let start = geometry::min_clearance(model, q0, scene)?.distance;
        let used_failsafe = start < params.d_coll_buff;
        let target = model.clamp_to_limits(if used_failsafe { q_last_safe } else { q1 });
        let spline = if (&target - q0).norm() > params.interpolate_threshold {
            Some(build_spline(q0, qdot0, &target, qdot1, params.t1)?)
        } else {
            None
        };
        Ok(Self {
            target,
            used_failsafe,
            spline,
        })
    }

    fn empty_trajectory(&self, m: usize) -> CorrectedTrajectory {
        CorrectedTrajectory {
            points: Vec::with_capacity(m),
            used_failsafe: self.used_failsafe,
            per_point_min_distance: Vec::with_capacity(m),
            target: self.target.clone(),
            infeasible_from: None,
            guarded_steps: 0,
        }
    }
}

impl CorrectedTrajectory {
    fn push(&mut self, q: JointVector, qdot: JointVector, t: f64, distance: f64) {
        self.points.push(TrajectoryPoint { q, qdot, t });
        self.per_point_min_distance.push(distance);
    }
}

/// One-shot correction with the QP corrector.
#[allow(clippy::too_many_arguments)]
pub fn correct(
    model: &ArmModel,
    scene: &Scene,
    q0: &JointVector,
    qdot0: &JointVector,
    q1: &JointVector,
    qdot1: &JointVector,
    q_last_safe: &JointVector,
    params: &CorrectorParams,
) -> Result<CorrectedTrajectory> {
    let mut corrector = QpCorrector::new(Arc::new(model.clone()), Arc::new(scene.clone()), params.clone())?;
    corrector.correct(q0, qdot0, q1, qdot1, q_last_safe)
}
