use nalgebra::{DMatrix, DVector};

use super::CorrectorParams;
use crate::arm::{ArmModel, JointState, JointVector};
use crate::error::{check_dim, Error, Result};
use crate::geometry::{self, Scene};
use crate::qp::{solve_qp, QpProblem, QpSettings, QpStatus};

/// What one QP step should aim for.
#[derive(Clone, Debug, PartialEq)]
pub struct StepTarget {
    /// Reference position for the end of the step.
    pub q: JointVector,
    /// Reference velocity over the step.
    pub qdot: JointVector,
    /// Tracking error accumulated over earlier steps of the same trajectory.
    pub drift: JointVector,
}

impl StepTarget {
    /// Reference that moves from `current` to `desired` in one interval.
    pub fn reach(current: &JointVector, desired: &JointVector, dt: f64) -> Self {
        Self {
            q: desired.clone(),
            qdot: (desired - current) / dt,
            drift: JointVector::zeros(current.len()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepStatus {
    /// Full step accepted on the first solve.
    Solved,
    /// Accepted after the given number of step-size halvings.
    Shortened(u32),
    /// Every halving failed the exact clearance check; position held.
    Held,
    /// The QP had no solution even with relaxed constraints; position held.
    Infeasible,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub q: JointVector,
    pub qdot: JointVector,
    pub status: StepStatus,
    /// Exact clearance at `q`.
    pub min_distance: f64,
}

/// Distance below which a pair gets a linearized constraint. Pairs further
/// away cannot close the gap to the buffer within one interval even when
/// both sides move at the arm's velocity limits.
pub(crate) fn activation_radius(model: &ArmModel, params: &CorrectorParams) -> f64 {
    let buff = params.d_coll_buff;
    (5.0 * buff).max(buff + 2.0 * model.max_body_displacement(params.dt))
}

/// One corrective QP: chooses the increment `dq` for the next interval.
///
/// The cost is
/// `w_track |q + dq - r|^2 + w_smooth |dq - v dt|^2 + w_drift |e + q + dq - r|^2`
/// where `r`, `v` and `e` come from `target`. The increment is boxed by the
/// joint limits and `qdot_max * dt`, and every pair closer than the
/// activation radius must satisfy `d + grad(d) . dq >= d_coll_buff`.
///
/// The linearized result is re-checked with exact distances; a step that
/// ends closer than `min(d_coll_buff, d(q))` is halved and re-solved.
pub fn step_qp(
    model: &ArmModel,
    scene: &Scene,
    current: &JointState,
    target: &StepTarget,
    params: &CorrectorParams,
) -> Result<StepOutcome> {
    let radius = activation_radius(model, params);
    step_with_radius(model, scene, current, target, params, radius, &QpSettings::default())
}

struct Linearized {
    gradient: DVector<f64>,
    distance: f64,
}

pub(crate) fn step_with_radius(
    model: &ArmModel,
    scene: &Scene,
    current: &JointState,
    target: &StepTarget,
    params: &CorrectorParams,
    radius: f64,
    settings: &QpSettings,
) -> Result<StepOutcome> {
    let n = model.dof();
    check_dim(n, current.q.len())?;
    check_dim(n, current.qdot.len())?;
    check_dim(n, target.q.len())?;
    check_dim(n, target.qdot.len())?;
    check_dim(n, target.drift.len())?;
    if !model.within_position_limits(&current.q) {
        return Err(Error::Usage("corrector state outside joint position limits".into()));
    }
    let q = &current.q;
    let buff = params.d_coll_buff;

    let kin = model.forward_kinematics(q)?;
    let mut reports = geometry::robot_env_reports(model, &kin, scene)?;
    reports.extend(geometry::self_reports(model, &kin)?);
    let d_now = reports.iter().map(|r| r.distance).fold(f64::INFINITY, f64::min);
    let mut pairs = Vec::new();
    for r in reports.iter().filter(|r| r.distance < radius) {
        let g = geometry::gradient_at(model, &kin, r)?;
        // pairs the joints cannot move (e.g. base bodies) carry no constraint
        if g.gradient.amax() > 1e-12 {
            pairs.push(Linearized {
                gradient: g.gradient,
                distance: r.distance,
            });
        }
    }

    let w = &params.weights;
    let w_sum = w.w_track + w.w_smooth + w.w_drift;
    let to_ref = &target.q - q;
    let centre = (&to_ref * w.w_track + &target.qdot * (params.dt * w.w_smooth) + (&to_ref - &target.drift) * w.w_drift)
        / w_sum;
    let h = DMatrix::identity(n, n) * (2.0 * w_sum);
    let g = -&centre * (2.0 * w_sum);

    let hold = |status| StepOutcome {
        q: q.clone(),
        qdot: JointVector::zeros(n),
        status,
        min_distance: d_now,
    };

    let mut scale = 1.0;
    for halvings in 0..=params.max_halvings {
        let vel = model.qdot_max() * (params.dt * scale);
        let lb = (model.q_min() - q).sup(&-&vel);
        let ub = (model.q_max() - q).inf(&vel);

        let dq = match solve_step(&h, &g, &lb, &ub, &pairs, buff, false, settings)? {
            Some(dq) => dq,
            None => match solve_step(&h, &g, &lb, &ub, &pairs, buff, true, settings)? {
                Some(dq) => dq,
                None => return Ok(hold(StepStatus::Infeasible)),
            },
        };
        let q_next = model.clamp_to_limits(&(q + dq));
        let kin_next = model.forward_kinematics(&q_next)?;
        let d_next = geometry::clearance_at(model, &kin_next, scene)?.distance;
        if d_next >= buff.min(d_now) {
            let qdot = (&q_next - q) / params.dt;
            let status = if halvings == 0 { StepStatus::Solved } else { StepStatus::Shortened(halvings) };
            return Ok(StepOutcome {
                q: q_next,
                qdot,
                status,
                min_distance: d_next,
            });
        }
        scale *= 0.5;
    }
    Ok(hold(StepStatus::Held))
}

/// Solves the step QP; `None` when it has no solution. Pairs already inside
/// the buffer ask for partial recovery, or with `relaxed` only for no
/// further approach.
#[allow(clippy::too_many_arguments)]
fn solve_step(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    lb: &DVector<f64>,
    ub: &DVector<f64>,
    pairs: &[Linearized],
    buff: f64,
    relaxed: bool,
    settings: &QpSettings,
) -> Result<Option<DVector<f64>>> {
    let n = g.len();
    if relaxed && pairs.iter().all(|p| p.distance >= buff) {
        return Ok(None);
    }
    let mut a = DMatrix::zeros(pairs.len(), n);
    let mut lower = DVector::zeros(pairs.len());
    for (i, p) in pairs.iter().enumerate() {
        a.set_row(i, &p.gradient.transpose());
        let need = buff - p.distance;
        lower[i] = if need <= 0.0 {
            need
        } else if relaxed {
            0.0
        } else {
            // largest first-order gain available inside the box
            let reach: f64 = p
                .gradient
                .iter()
                .zip(lb.iter().zip(ub.iter()))
                .map(|(gj, (lo, hi))| (gj * lo).max(gj * hi))
                .sum();
            need.min(0.5 * reach)
        };
    }
    let upper = DVector::from_element(pairs.len(), f64::INFINITY);
    let problem = QpProblem::new(h.clone(), g.clone())
        .with_constraints(a, lower, upper)
        .with_bounds(lb.clone(), ub.clone());
    let sol = solve_qp(&problem, settings)?;
    Ok((sol.status == QpStatus::Optimal).then_some(sol.x))
}
