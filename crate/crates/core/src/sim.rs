//! Deterministic joint-space simulation: a damped per-joint plant driven by a
//! PD position controller, with collision and goal bookkeeping.

use std::sync::Arc;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arm::{ArmModel, JointState, JointVector};
use crate::error::{check_dim, Error, Result};
use crate::geometry::{self, Scene};

/// Reward with the gripper closed, the peg on the object and y aligned.
pub const MAX_REWARD: f64 = 1.5;
/// Fraction of `MAX_REWARD` at which the task counts as solved.
pub const SUCCESS_FRACTION: f64 = 0.975;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerGains {
    pub kp: f64,
    pub kd: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self { kp: 50.0, kd: 0.25 }
    }
}

/// Per-joint plant `I q'' = tau - b q'`, integrated with semi-implicit Euler.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantParams {
    /// kg m^2
    pub inertia: f64,
    /// N m s / rad
    pub damping: f64,
    /// N m
    pub tau_max: f64,
    pub substeps: usize,
    /// s
    pub substep_dt: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            inertia: 0.01,
            damping: 1.25,
            tau_max: 20.0,
            substeps: 25,
            substep_dt: 0.002,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvParams {
    pub gains: ControllerGains,
    pub plant: PlantParams,
    /// Half-width of the uniform start perturbation per joint (rad).
    pub start_perturbation: f64,
    /// Perturbed starts closer than this to anything are resampled (m).
    pub start_clearance: f64,
    pub reset_attempts: usize,
    /// Peg position in the tool frame (m).
    pub peg_offset: [f64; 3],
}

impl Default for EnvParams {
    fn default() -> Self {
        Self {
            gains: ControllerGains::default(),
            plant: PlantParams::default(),
            start_perturbation: 0.05,
            start_clearance: 0.015,
            reset_attempts: 100,
            peg_offset: [0.0; 3],
        }
    }
}

impl EnvParams {
    pub fn validate(&self) -> Result<()> {
        let p = &self.plant;
        if !(self.gains.kp > 0.0 && self.gains.kd >= 0.0) {
            return Err(Error::load("gains", "need kp > 0 and kd >= 0"));
        }
        if !(p.inertia > 0.0 && p.damping >= 0.0 && p.tau_max > 0.0 && p.substeps > 0 && p.substep_dt > 0.0) {
            return Err(Error::load("plant", "inertia, tau_max, substeps and substep_dt must be positive"));
        }
        if !(self.start_perturbation >= 0.0 && self.reset_attempts > 0) {
            return Err(Error::load("start_perturbation", "must be non-negative with at least one reset attempt"));
        }
        Ok(())
    }

    /// Simulated time covered by one command.
    pub fn command_period(&self) -> f64 {
        self.plant.substeps as f64 * self.plant.substep_dt
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub joint: JointState,
    pub time: f64,
    pub peg_position: Vector3<f64>,
    pub gripper_open: bool,
    pub done: bool,
}

/// What a policy and the executor get to see.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub q: JointVector,
    pub qdot: JointVector,
    pub peg_position: Vector3<f64>,
    pub goal_center: Vector3<f64>,
    pub time: f64,
    /// Exact clearance (robot/scene and robot/robot) at `q`.
    pub min_distance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardBreakdown {
    pub r_reach: f64,
    pub r_y_align: f64,
    pub r_gripper: f64,
    pub total: f64,
}

/// Shaped reward: `r_reach + 0.5 r_y_align + r_gripper` with
/// `r_reach = 1 - tanh(10 |p - o|)`, `r_y_align = 1 - tanh(10 |y_g - y_o|)`
/// and a `-100` penalty while the gripper is open.
pub fn reward(peg: &Vector3<f64>, object: &Vector3<f64>, y_g: f64, y_obj: f64, gripper_open: bool) -> RewardBreakdown {
    let r_reach = 1.0 - (10.0 * (peg - object).norm()).tanh();
    let r_y_align = 1.0 - (10.0 * (y_g - y_obj).abs()).tanh();
    let r_gripper = if gripper_open { -100.0 } else { 0.0 };
    RewardBreakdown {
        r_reach,
        r_y_align,
        r_gripper,
        total: r_reach + 0.5 * r_y_align + r_gripper,
    }
}

/// Closed threshold on the reward fraction.
pub fn reward_meets_success(total: f64) -> bool {
    total >= SUCCESS_FRACTION * MAX_REWARD
}

/// `tau = kp (q_des - q) - kd qdot`, saturated elementwise at `tau_max`.
pub fn pd_torque(gains: &ControllerGains, tau_max: f64, q_des: &JointVector, state: &JointState) -> Result<JointVector> {
    check_dim(state.q.len(), q_des.len())?;
    check_dim(state.q.len(), state.qdot.len())?;
    let tau = (q_des - &state.q) * gains.kp - &state.qdot * gains.kd;
    Ok(tau.map(|t| t.clamp(-tau_max, tau_max)))
}

/// Outcome of one command.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub observation: Observation,
    pub done: bool,
    pub collided: bool,
    pub success: bool,
    /// Smallest clearance seen at any substep of this command.
    pub min_distance: f64,
    pub reward: RewardBreakdown,
}

pub struct SimEnv {
    model: Arc<ArmModel>,
    scene: Arc<Scene>,
    params: EnvParams,
    nominal_start: JointVector,
    state: EnvState,
    min_distance: f64,
    collided: bool,
}

impl SimEnv {
    pub fn new(model: Arc<ArmModel>, scene: Arc<Scene>, start: JointVector, params: EnvParams) -> Result<Self> {
        params.validate()?;
        check_dim(model.dof(), start.len())?;
        if !model.within_position_limits(&start) {
            return Err(Error::load("start_pose", "outside joint position limits"));
        }
        let mut env = Self {
            state: EnvState {
                joint: JointState::at_rest(start.clone()),
                time: 0.0,
                peg_position: Vector3::zeros(),
                gripper_open: false,
                done: false,
            },
            model,
            scene,
            params,
            nominal_start: start,
            min_distance: f64::INFINITY,
            collided: false,
        };
        env.state.peg_position = env.peg_at(&env.nominal_start)?;
        env.min_distance = env.clearance(&env.nominal_start)?;
        Ok(env)
    }

    pub fn model(&self) -> &Arc<ArmModel> {
        &self.model
    }

    pub fn scene(&self) -> &Arc<Scene> {
        &self.scene
    }

    pub fn params(&self) -> &EnvParams {
        &self.params
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn collided(&self) -> bool {
        self.collided
    }

    /// Places the arm at rest at the nominal start plus a seeded uniform
    /// perturbation, resampling starts that violate limits or clearance.
    pub fn reset(&mut self, seed: u64) -> Result<Observation> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = self.params.start_perturbation;
        let n = self.model.dof();
        for _ in 0..self.params.reset_attempts {
            let offset = JointVector::from_fn(n, |_, _| if w > 0.0 { rng.gen_range(-w..=w) } else { 0.0 });
            let q = &self.nominal_start + offset;
            if !self.model.within_position_limits(&q) {
                continue;
            }
            let d = self.clearance(&q)?;
            if d < self.params.start_clearance {
                continue;
            }
            self.state = EnvState {
                joint: JointState::at_rest(q.clone()),
                time: 0.0,
                peg_position: self.peg_at(&q)?,
                gripper_open: false,
                done: false,
            };
            self.min_distance = d;
            self.collided = false;
            return Ok(self.observe());
        }
        Err(Error::Reset(format!(
            "no start within {w} rad of the nominal pose clears {} m after {} attempts",
            self.params.start_clearance, self.params.reset_attempts
        )))
    }

    pub fn set_gripper(&mut self, open: bool) {
        self.state.gripper_open = open;
    }

    pub fn observe(&self) -> Observation {
        Observation {
            q: self.state.joint.q.clone(),
            qdot: self.state.joint.qdot.clone(),
            peg_position: self.state.peg_position,
            goal_center: self.scene.goal_region.center,
            time: self.state.time,
            min_distance: self.min_distance,
        }
    }

    pub fn reward(&self) -> RewardBreakdown {
        let goal = &self.scene.goal_region.center;
        let peg = &self.state.peg_position;
        reward(peg, goal, peg.y, goal.y, self.state.gripper_open)
    }

    pub fn is_success(&self) -> bool {
        reward_meets_success(self.reward().total) || self.scene.goal_region.contains(&self.state.peg_position)
    }

    /// Holds `q_command` for one command period, checking for contact after
    /// every substep. Contact freezes the arm and ends the episode.
    pub fn step(&mut self, q_command: &JointVector) -> Result<StepReport> {
        if self.state.done {
            return Err(Error::EnvDone);
        }
        check_dim(self.model.dof(), q_command.len())?;
        let plant = self.params.plant;
        let h = plant.substep_dt;
        let mut step_min = f64::INFINITY;
        for _ in 0..plant.substeps {
            let tau = pd_torque(&self.params.gains, plant.tau_max, q_command, &self.state.joint)?;
            let joint = &mut self.state.joint;
            let qdd = (tau - &joint.qdot * plant.damping) / plant.inertia;
            joint.qdot += qdd * h;
            let free = &joint.q + &joint.qdot * h;
            // hard stops at the position limits
            for j in 0..free.len() {
                let (lo, hi) = (self.model.q_min()[j], self.model.q_max()[j]);
                joint.q[j] = free[j].clamp(lo, hi);
                if free[j] != joint.q[j] {
                    joint.qdot[j] = 0.0;
                }
            }
            self.state.time += h;
            let q = self.state.joint.q.clone();
            let d = self.clearance(&q)?;
            step_min = step_min.min(d);
            self.min_distance = d;
            if d < 0.0 {
                self.collided = true;
                self.state.joint.qdot.fill(0.0);
                break;
            }
        }
        let q = self.state.joint.q.clone();
        self.state.peg_position = self.peg_at(&q)?;
        let success = !self.collided && self.is_success();
        self.state.done = self.collided || success;
        Ok(StepReport {
            observation: self.observe(),
            done: self.state.done,
            collided: self.collided,
            success,
            min_distance: step_min,
            reward: self.reward(),
        })
    }

    fn clearance(&self, q: &JointVector) -> Result<f64> {
        Ok(geometry::min_clearance(&self.model, q, &self.scene)?.distance)
    }

    fn peg_at(&self, q: &JointVector) -> Result<Vector3<f64>> {
        let kin = self.model.forward_kinematics(q)?;
        Ok(kin.end_effector.transform_point(&Vector3::from(self.params.peg_offset).into()).coords)
    }
}

/// One command on `env`: returns the new observation and the done flag.
pub fn env_step(env: &mut SimEnv, q_command: &JointVector) -> Result<(Observation, bool)> {
    let report = env.step(q_command)?;
    Ok((report.observation, report.done))
}

pub fn is_success(env: &SimEnv) -> bool {
    env.is_success()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{GoalRegion, Obstacle, Primitive, Table};
    use std::collections::BTreeSet;

    fn v(x: &[f64]) -> JointVector {
        JointVector::from_column_slice(x)
    }

    fn open_env(start: JointVector) -> SimEnv {
        let scene = Scene::open_table(-0.5);
        SimEnv::new(Arc::new(ArmModel::desk_arm()), Arc::new(scene), start, EnvParams::default()).unwrap()
    }

    /// Fixed-step RK4 on the same ODE, with the PD law evaluated continuously.
    fn rk4_oracle(params: &EnvParams, q0: f64, target: f64, duration: f64) -> f64 {
        let p = params.plant;
        let g = params.gains;
        let f = |q: f64, v: f64| {
            let tau = (g.kp * (target - q) - g.kd * v).clamp(-p.tau_max, p.tau_max);
            (v, (tau - p.damping * v) / p.inertia)
        };
        let steps = 100_000;
        let h = duration / steps as f64;
        let (mut q, mut v) = (q0, 0.0);
        for _ in 0..steps {
            let (k1q, k1v) = f(q, v);
            let (k2q, k2v) = f(q + 0.5 * h * k1q, v + 0.5 * h * k1v);
            let (k3q, k3v) = f(q + 0.5 * h * k2q, v + 0.5 * h * k2v);
            let (k4q, k4v) = f(q + h * k3q, v + h * k3v);
            q += h / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q);
            v += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
        }
        q
    }

    #[test]
    fn pd_law() {
        let g = ControllerGains::default();
        let rest = JointState::at_rest(v(&[0.2, 0.3]));
        assert_eq!(pd_torque(&g, 20.0, &v(&[0.2, 0.3]), &rest).unwrap(), v(&[0.0, 0.0]));
        let tau = pd_torque(&g, 20.0, &v(&[0.3, 0.3]), &rest).unwrap();
        assert!((tau[0] - 5.0).abs() < 1e-12 && tau[1] == 0.0);
        let moving = JointState::new(v(&[0.0]), v(&[1.0])).unwrap();
        assert!((pd_torque(&g, 20.0, &v(&[0.0]), &moving).unwrap()[0] + 0.25).abs() < 1e-15);
        let far = pd_torque(&g, 20.0, &v(&[5.0]), &JointState::at_rest(v(&[0.0]))).unwrap();
        assert_eq!(far[0], 20.0);
    }

    #[test]
    fn holding_position_from_rest_stays_put() {
        let q = v(&[0.1, 0.4, 0.9]);
        let mut env = open_env(q.clone());
        let (obs, done) = env_step(&mut env, &q).unwrap();
        assert!((obs.q - q).amax() <= 1e-6);
        assert!(!done);
        assert!((obs.time - 0.05).abs() < 1e-12);
    }

    #[test]
    fn small_step_tracks_within_one_command() {
        let q = v(&[0.1, 0.4, 0.9]);
        let mut env = open_env(q.clone());
        let cmd = v(&[0.15, 0.4, 0.9]);
        let (obs, _) = env_step(&mut env, &cmd).unwrap();
        assert!((obs.q[0] - 0.15).abs() <= 0.01, "{}", obs.q[0]);
        assert!((obs.q[0] - 0.15).abs() > 1e-4, "a first-order lag must remain");
        let oracle = rk4_oracle(env.params(), 0.1, 0.15, 0.05);
        assert!((obs.q[0] - oracle).abs() < 5e-4, "env {} oracle {oracle}", obs.q[0]);
    }

    #[test]
    fn regulation_is_monotone_and_converges() {
        for target in [0.02, 0.3, 1.0] {
            let q0 = v(&[0.0, 0.3, 0.6]);
            let mut env = open_env(q0.clone());
            let cmd = v(&[target, 0.3, 0.6]);
            let mut last = f64::INFINITY;
            let mut substep = 0;
            // drive substeps individually through a one-substep plant
            env.params.plant.substeps = 1;
            while env.state().time < 1.0 - 1e-9 {
                let (obs, _) = env_step(&mut env, &cmd).unwrap();
                let err = (target - obs.q[0]).abs();
                if substep > 0 {
                    assert!(err <= last + 1e-15, "error rose at substep {substep}");
                }
                last = err;
                substep += 1;
            }
            assert!(last < 1e-4, "target {target}: residual {last}");
        }
    }

    #[test]
    fn kinetic_energy_never_grows_without_torque() {
        let mut params = EnvParams {
            gains: ControllerGains { kp: 1e-300, kd: 0.0 },
            ..EnvParams::default()
        };
        params.plant.substeps = 1;
        let scene = Scene::open_table(-0.5);
        let mut env = SimEnv::new(Arc::new(ArmModel::desk_arm()), Arc::new(scene), v(&[0.0, 0.3, 0.6]), params).unwrap();
        env.state.joint.qdot = v(&[1.0, -0.5, 0.7]);
        let mut energy = f64::INFINITY;
        for _ in 0..200 {
            let hold = env.state().joint.q.clone();
            let (obs, _) = env_step(&mut env, &hold).unwrap();
            let e = 0.5 * env.params().plant.inertia * obs.qdot.norm_squared();
            assert!(e <= energy);
            energy = e;
        }
    }

    #[test]
    fn driving_into_table_ends_episode() {
        let scene = Scene::open_table(0.2);
        let start = v(&[0.0, 0.3, 0.6]);
        let mut env =
            SimEnv::new(Arc::new(ArmModel::desk_arm()), Arc::new(scene), start, EnvParams::default()).unwrap();
        let mut report = None;
        for _ in 0..40 {
            let r = env.step(&v(&[0.0, 1.6, 1.5])).unwrap();
            let done = r.done;
            report = Some(r);
            if done {
                break;
            }
        }
        let r = report.unwrap();
        assert!(r.done && r.collided && !r.success);
        assert!(r.min_distance < 0.0);
        assert!(matches!(env.step(&v(&[0.0, 0.0, 0.0])), Err(Error::EnvDone)));
    }

    #[test]
    fn observation_distance_is_the_geometry_query() {
        let mut env = open_env(v(&[0.2, 0.5, 1.0]));
        let (obs, _) = env_step(&mut env, &v(&[0.3, 0.6, 1.1])).unwrap();
        let direct = geometry::min_clearance(env.model(), &obs.q, env.scene()).unwrap().distance;
        assert_eq!(obs.min_distance.to_bits(), direct.to_bits());
    }

    #[test]
    fn reward_values() {
        let o = Vector3::new(0.3, 0.1, 0.2);
        let best = reward(&o, &o, 0.1, 0.1, false);
        assert_eq!(best.total, MAX_REWARD);
        let p = o + Vector3::new(0.0, 0.0, 0.1);
        let r = reward(&p, &o, 0.2, 0.1, false);
        let expected = 1.0 - 1f64.tanh();
        assert!((r.r_reach - expected).abs() < 1e-9);
        assert!((r.r_y_align - expected).abs() < 1e-9);
        assert!((r.total - 0.357609).abs() < 1e-6);
        assert_eq!(r.total, r.r_reach + 0.5 * r.r_y_align + r.r_gripper);
        let open = reward(&o, &o, 0.1, 0.1, true);
        assert_eq!(open.r_gripper, -100.0);
        assert!(open.total < -98.0);
    }

    #[test]
    fn reach_reward_decreases_with_distance() {
        let o = Vector3::zeros();
        let mut last = f64::INFINITY;
        for k in 0..=500 {
            let d = k as f64 * 0.002;
            let r = reward(&Vector3::new(d, 0.0, 0.0), &o, 0.0, 0.3, false);
            assert!(r.r_reach < last);
            assert!(r.total > 0.0 && r.total <= MAX_REWARD);
            last = r.r_reach;
        }
    }

    #[test]
    fn success_threshold_is_closed() {
        let threshold = SUCCESS_FRACTION * MAX_REWARD;
        assert!(reward_meets_success(threshold));
        assert!(!reward_meets_success(threshold - 1e-12));
    }

    #[test]
    fn success_from_goal_region_or_reward() {
        let model = Arc::new(ArmModel::desk_arm());
        let q = v(&[0.0, 0.6, 1.2]);
        let tool = model.forward_kinematics(&q).unwrap().end_effector_position();
        let mut scene = Scene::open_table(-0.5);
        scene.goal_region = GoalRegion {
            center: tool,
            half_extents: Vector3::repeat(0.02),
        };
        let env = SimEnv::new(model.clone(), Arc::new(scene.clone()), q.clone(), EnvParams::default()).unwrap();
        assert!(is_success(&env));
        scene.goal_region.center = tool + Vector3::new(0.5, 0.2, 0.0);
        let env = SimEnv::new(model, Arc::new(scene), q, EnvParams::default()).unwrap();
        assert!(!is_success(&env));
    }

    #[test]
    fn reset_is_seeded_and_bounded() {
        let nominal = v(&[0.0, 0.5, 1.0]);
        let mut env = open_env(nominal.clone());
        let a = env.reset(7).unwrap();
        let b = env.reset(7).unwrap();
        let c = env.reset(8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.q, c.q);
        for obs in [&a, &c] {
            assert!((&obs.q - &nominal).amax() <= 0.05);
            assert_eq!(obs.qdot.amax(), 0.0);
            assert_eq!(obs.time, 0.0);
        }
    }

    #[test]
    fn reset_rejects_starts_inside_the_buffer() {
        let model = Arc::new(ArmModel::desk_arm());
        let nominal = v(&[0.0, 0.6, 1.2]);
        let tool = model.forward_kinematics(&nominal).unwrap().end_effector_position();
        let ball = |gap: f64| Scene {
            obstacles: vec![Obstacle {
                shape: Primitive::Sphere { radius: 0.04 },
                pose: crate::arm::Pose::translation(tool.x, tool.y, tool.z + 0.07 + gap),
                label: "ball".into(),
            }],
            table: Table {
                normal: Vector3::z_axis(),
                offset: -0.5,
            },
            goal_region: GoalRegion {
                center: Vector3::new(0.3, 0.0, 0.1),
                half_extents: Vector3::repeat(0.02),
            },
            non_colliding_labels: BTreeSet::new(),
        };
        // nominal start sits 0.02 m below the ball: some perturbations breach the buffer
        let mut env = SimEnv::new(model.clone(), Arc::new(ball(0.02)), nominal.clone(), EnvParams::default()).unwrap();
        for seed in 0..50 {
            let obs = env.reset(seed).unwrap();
            let d = geometry::min_clearance(&model, &obs.q, env.scene()).unwrap().distance;
            assert!(d >= 0.015);
        }
        // nominal start already touching: no perturbation within 0.05 rad escapes
        let mut env = SimEnv::new(model, Arc::new(ball(-0.06)), nominal, EnvParams::default()).unwrap();
        assert!(matches!(env.reset(1), Err(Error::Reset(_))));
    }
}
