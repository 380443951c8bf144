//! The safe execution loop: query the policy, clip, correct, send the first
//! `n` corrected waypoints, and stop a batch early when the arm gets close.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::arm::{ArmModel, JointVector};
use crate::error::{check_dim, Error, Result};
use crate::geometry::{self, Scene};
use crate::ikinqp::Corrector;
use crate::policy::Policy;
use crate::sim::SimEnv;

/// Elementwise clamp to `[-limit, limit]`.
pub fn clip_action(a: &JointVector, limit: f64) -> JointVector {
    a.map(|v| v.clamp(-limit, limit))
}

/// How many corrected waypoints to execute before re-querying the policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NRule {
    /// `ceil(m / 2)`.
    Formula,
    Fixed(usize),
}

pub fn select_n(m: usize, rule: NRule) -> usize {
    match rule {
        NRule::Formula => m.div_ceil(2),
        NRule::Fixed(k) => k.min(m),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecutorParams {
    /// Per-joint clip on policy actions (rad).
    pub action_clip: f64,
    pub n_rule: NRule,
    /// Extra distance beyond the collision buffer that counts as "close" (m).
    pub proximity_margin: f64,
    pub max_policy_queries: usize,
}

impl Default for ExecutorParams {
    fn default() -> Self {
        Self {
            action_clip: 0.2,
            n_rule: NRule::Formula,
            proximity_margin: 0.005,
            max_policy_queries: 200,
        }
    }
}

impl ExecutorParams {
    pub fn validate(&self, m: usize) -> Result<()> {
        if !(self.action_clip > 0.0 && self.action_clip.is_finite()) {
            return Err(Error::load("executor.action_clip", "must be positive"));
        }
        if !(self.proximity_margin >= 0.0 && self.proximity_margin.is_finite()) {
            return Err(Error::load("executor.proximity_margin", "must be non-negative"));
        }
        if let NRule::Fixed(k) = self.n_rule {
            if k == 0 || k > m {
                return Err(Error::load("executor.n_rule", format!("fixed n must be in 1..={m}")));
            }
        }
        if self.max_policy_queries == 0 {
            return Err(Error::load("executor.max_policy_queries", "must be at least 1"));
        }
        Ok(())
    }
}

/// Retreat configurations, one per lateral third of the table. Left is +y.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailsafeBank {
    pub left: Vec<f64>,
    pub center: Vec<f64>,
    pub right: Vec<f64>,
    /// Table width along y (m).
    pub table_width: f64,
}

impl Default for FailsafeBank {
    fn default() -> Self {
        Self {
            left: vec![0.6, -0.2, 0.5],
            center: vec![0.0, -0.2, 0.5],
            right: vec![-0.6, -0.2, 0.5],
            table_width: 0.6,
        }
    }
}

impl FailsafeBank {
    fn presets(&self) -> [(&'static str, &Vec<f64>); 3] {
        [("left", &self.left), ("center", &self.center), ("right", &self.right)]
    }

    /// Checks every preset against the limits and against `scene`, requiring
    /// at least `2 * d_coll_buff` of clearance.
    pub fn verify(&self, model: &ArmModel, scene: &Scene, d_coll_buff: f64) -> Result<()> {
        if !(self.table_width > 0.0 && self.table_width.is_finite()) {
            return Err(Error::load("failsafe.table_width", "must be positive"));
        }
        for (name, q) in self.presets() {
            let field = format!("failsafe.{name}");
            check_dim(model.dof(), q.len()).map_err(|e| Error::load(&field, e.to_string()))?;
            let q = JointVector::from_column_slice(q);
            if !model.within_position_limits(&q) {
                return Err(Error::load(field, "outside joint position limits"));
            }
            let d = geometry::min_clearance(model, &q, scene)?.distance;
            if d < 2.0 * d_coll_buff {
                return Err(Error::load(field, format!("clearance {d:.4} m is below twice the buffer")));
            }
        }
        Ok(())
    }
}

/// The position to fall back on: the current one while the arm is clear,
/// otherwise the bank preset for the table third under the end effector.
/// A lateral coordinate exactly on a third boundary picks the center.
pub fn select_failsafe(
    bank: &FailsafeBank,
    model: &ArmModel,
    q_current: &JointVector,
    near_collision: bool,
) -> Result<JointVector> {
    if !near_collision {
        return Ok(q_current.clone());
    }
    let y = model.forward_kinematics(q_current)?.end_effector_position().y;
    let edge = bank.table_width / 6.0;
    let preset = if y > edge {
        &bank.left
    } else if y < -edge {
        &bank.right
    } else {
        &bank.center
    };
    check_dim(model.dof(), preset.len())?;
    Ok(JointVector::from_column_slice(preset))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub collided: bool,
    /// Smallest clearance seen, including every simulation substep (m).
    #[serde(with = "infinite_as_null")]
    pub min_proximity: f64,
    pub success: bool,
    pub policy_queries: usize,
    pub env_steps: usize,
    /// Simulated episode duration (s).
    pub wall_time: f64,
    pub corrector_calls: usize,
    /// Host time per corrector call (s).
    pub mean_corrector_time: f64,
    /// Corrections that replaced the policy target with the failsafe.
    pub failsafe_uses: usize,
    /// Batches cut short because the arm came close.
    pub early_stops: usize,
    pub error: Option<String>,
}

impl EpisodeRecord {
    fn new(episode: usize) -> Self {
        Self {
            episode,
            collided: false,
            min_proximity: f64::INFINITY,
            success: false,
            policy_queries: 0,
            env_steps: 0,
            wall_time: 0.0,
            corrector_calls: 0,
            mean_corrector_time: 0.0,
            failsafe_uses: 0,
            early_stops: 0,
            error: None,
        }
    }

    /// Record for an episode that could not start.
    pub fn failed(episode: usize, error: &Error) -> Self {
        Self {
            error: Some(error.to_string()),
            ..Self::new(episode)
        }
    }
}

/// Runs one episode on an already reset `env`. Errors from the environment
/// end the episode and are kept in `EpisodeRecord::error`.
///
/// Without a corrector the policy runs unshielded: each clipped action is
/// sent directly as one command, with no early stop and no failsafe.
pub fn run_episode(
    episode: usize,
    policy: &mut dyn Policy,
    env: &mut SimEnv,
    corrector: Option<&mut dyn Corrector>,
    bank: &FailsafeBank,
    params: &ExecutorParams,
) -> EpisodeRecord {
    let mut record = EpisodeRecord::new(episode);
    let mut corrector_seconds = 0.0;
    let outcome = match corrector {
        Some(c) => drive(policy, env, c, bank, params, &mut record, &mut corrector_seconds),
        None => drive_unshielded(policy, env, params, &mut record),
    };
    if let Err(e) = outcome {
        record.error = Some(e.to_string());
    }
    record.collided = env.collided();
    record.success = !record.collided && env.is_success();
    record.wall_time = env.state().time;
    if record.corrector_calls > 0 {
        record.mean_corrector_time = corrector_seconds / record.corrector_calls as f64;
    }
    record
}

fn drive_unshielded(policy: &mut dyn Policy, env: &mut SimEnv, params: &ExecutorParams, record: &mut EpisodeRecord) -> Result<()> {
    let n = env.model().dof();
    let mut obs = env.observe();
    record.min_proximity = obs.min_distance;
    while record.policy_queries < params.max_policy_queries && !env.state().done {
        let action = policy.act(&obs);
        record.policy_queries += 1;
        check_dim(n, action.joint_delta.len())?;
        env.set_gripper(action.gripper_open);
        let target = env.model().clamp_to_limits(&(&obs.q + clip_action(&action.joint_delta, params.action_clip)));
        let report = env.step(&target)?;
        record.env_steps += 1;
        record.min_proximity = record.min_proximity.min(report.min_distance);
        obs = report.observation;
    }
    Ok(())
}

fn drive(
    policy: &mut dyn Policy,
    env: &mut SimEnv,
    corrector: &mut dyn Corrector,
    bank: &FailsafeBank,
    params: &ExecutorParams,
    record: &mut EpisodeRecord,
    corrector_seconds: &mut f64,
) -> Result<()> {
    let model = env.model().clone();
    let close = corrector.params().d_coll_buff + params.proximity_margin;
    let n = model.dof();
    let rest = JointVector::zeros(n);

    let mut obs = env.observe();
    record.min_proximity = obs.min_distance;
    let mut q_last_safe = select_failsafe(bank, &model, &obs.q, obs.min_distance < close)?;
    let mut retreat = false;

    while record.policy_queries < params.max_policy_queries && !env.state().done {
        let action = policy.act(&obs);
        record.policy_queries += 1;
        check_dim(n, action.joint_delta.len())?;
        env.set_gripper(action.gripper_open);
        // close to contact: plan to the failsafe instead of the policy's action
        let q1 = if retreat || obs.min_distance < close {
            q_last_safe.clone()
        } else {
            &obs.q + clip_action(&action.joint_delta, params.action_clip)
        };
        retreat = false;

        let started = Instant::now();
        let corrected = corrector.correct(&obs.q, &obs.qdot, &q1, &rest, &q_last_safe);
        *corrector_seconds += started.elapsed().as_secs_f64();
        record.corrector_calls += 1;
        let trajectory = match corrected {
            Ok(t) => t,
            Err(_) => {
                // hold for one cycle, then head for the failsafe
                let report = env.step(&obs.q)?;
                record.env_steps += 1;
                record.min_proximity = record.min_proximity.min(report.min_distance);
                obs = report.observation;
                q_last_safe = select_failsafe(bank, &model, &obs.q, true)?;
                retreat = true;
                continue;
            }
        };
        if trajectory.used_failsafe {
            record.failsafe_uses += 1;
        }

        // waypoint 0 is the start itself; the batch is the n that follow it
        let batch = select_n(trajectory.points.len(), params.n_rule);
        for point in trajectory.points.iter().skip(1).take(batch) {
            let report = env.step(&point.q)?;
            record.env_steps += 1;
            record.min_proximity = record.min_proximity.min(report.min_distance);
            obs = report.observation;
            if report.done {
                return Ok(());
            }
            let near = obs.min_distance < close;
            q_last_safe = select_failsafe(bank, &model, &obs.q, near)?;
            if near {
                record.early_stops += 1;
                break;
            }
        }
    }
    Ok(())
}

/// JSON has no infinity; an empty minimum is written as `null`.
pub(crate) mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}
