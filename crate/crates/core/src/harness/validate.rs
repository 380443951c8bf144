use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{run_experiment, ScenarioConfig};
use crate::arm::{ArmModel, JointVector};
use crate::error::Result;
use crate::geometry::{self, BodyRef};
use crate::ikinqp::{Corrector, QpCorrector};
use crate::qp::{kkt_residual, solve_qp, QpProblem, QpSettings, QpStatus};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.checks {
            writeln!(f, "{} {:<22} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
        }
        Ok(())
    }
}

/// Invariant self-test on the configured arm and scene. Every check runs
/// even when an earlier one fails.
pub fn validate(config: &ScenarioConfig, seed: u64) -> Result<ValidationReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let checks = vec![
        qp_kkt(&mut rng),
        jacobian_fd(&config.model, &mut rng)?,
        gradient_fd(config, &mut rng)?,
        corrector_buffer(config, &mut rng)?,
        failsafe_bank(config),
        smoke_run(config)?,
    ];
    Ok(ValidationReport { checks })
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check {
        name: name.into(),
        passed,
        detail,
    }
}

fn random_q(model: &ArmModel, rng: &mut ChaCha8Rng) -> JointVector {
    JointVector::from_fn(model.dof(), |j, _| rng.gen_range(model.q_min()[j]..model.q_max()[j]))
}

fn qp_kkt(rng: &mut ChaCha8Rng) -> Check {
    let mut worst: f64 = 0.0;
    let mut not_optimal = 0;
    for _ in 0..50 {
        let n = rng.gen_range(2..=6);
        let c = rng.gen_range(1..=5);
        let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let h = &m * m.transpose() + DMatrix::identity(n, n) * 0.1;
        let g = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
        let a = DMatrix::from_fn(c, n, |_, _| rng.gen_range(-1.0..1.0));
        // bounds around a known feasible point
        let x0 = DVector::from_fn(n, |_, _| rng.gen_range(-0.5..0.5));
        let ax = &a * &x0;
        let l = ax.map(|v| v - rng.gen_range(0.0..0.5));
        let u = ax.map(|v| v + rng.gen_range(0.0..0.5));
        let p = QpProblem::new(h, g)
            .with_constraints(a, l, u)
            .with_bounds(DVector::from_element(n, -1.0), DVector::from_element(n, 1.0));
        match solve_qp(&p, &QpSettings::default()) {
            Ok(s) if s.status == QpStatus::Optimal => worst = worst.max(kkt_residual(&p, &s.x).max()),
            _ => not_optimal += 1,
        }
    }
    check(
        "qp_kkt",
        not_optimal == 0 && worst <= 1e-6,
        format!("worst KKT residual {worst:.2e}, {not_optimal} non-optimal of 50"),
    )
}

fn jacobian_fd(model: &ArmModel, rng: &mut ChaCha8Rng) -> Result<Check> {
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let q = random_q(model, rng);
        let kin = model.forward_kinematics(&q)?;
        let tip = kin.end_effector_position();
        let jac = model.jacobian_at(&kin, &tip, model.dof())?;
        for j in 0..model.dof() {
            let mut plus = q.clone();
            let mut minus = q.clone();
            plus[j] += h;
            minus[j] -= h;
            let fd: Vector3<f64> = (model.forward_kinematics(&plus)?.end_effector_position()
                - model.forward_kinematics(&minus)?.end_effector_position())
                / (2.0 * h);
            worst = worst.max((fd - jac.column(j)).amax());
        }
    }
    Ok(check("jacobian_fd", worst <= 1e-4, format!("worst column error {worst:.2e}")))
}

fn gradient_fd(config: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Result<Check> {
    let (model, scene) = (&*config.model, &*config.scene);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut tested = 0;
    while tested < 50 {
        let q = random_q(model, rng);
        let kin = model.forward_kinematics(&q)?;
        let reports = geometry::robot_env_reports(model, &kin, scene)?;
        let Some((k, r)) = reports
            .iter()
            .enumerate()
            .filter(|(_, r)| matches!(r.pair, Some((BodyRef::Robot(_), BodyRef::Obstacle(_)))) && r.distance > 1e-3)
            .min_by(|a, b| a.1.distance.total_cmp(&b.1.distance))
        else {
            break;
        };
        let g = geometry::distance_gradient(model, &q, r)?;
        for j in 0..model.dof() {
            let mut plus = q.clone();
            let mut minus = q.clone();
            plus[j] += h;
            minus[j] -= h;
            let at = |x: &JointVector| -> Result<f64> {
                let kin = model.forward_kinematics(x)?;
                Ok(geometry::robot_env_reports(model, &kin, scene)?[k].distance)
            };
            let fd = (at(&plus)? - at(&minus)?) / (2.0 * h);
            worst = worst.max((fd - g.gradient[j]).abs());
        }
        tested += 1;
    }
    Ok(check(
        "distance_gradient_fd",
        worst <= 1e-4,
        format!("worst entry error {worst:.2e} over {tested} configurations"),
    ))
}

fn corrector_buffer(config: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Result<Check> {
    let (model, scene) = (&config.model, &config.scene);
    let params = &config.corrector;
    let buff = params.d_coll_buff;
    let mut corrector = QpCorrector::new(model.clone(), scene.clone(), params.clone())?;
    let n = model.dof();
    let mut worst = f64::INFINITY;
    let mut limit_breaks = 0;
    let mut calls = 0;
    while calls < 100 {
        let q0 = random_q(model, rng);
        if geometry::min_clearance(model, &q0, scene)?.distance < buff {
            continue;
        }
        let q1 = &q0 + JointVector::from_fn(n, |_, _| rng.gen_range(-0.3..0.3));
        let zero = JointVector::zeros(n);
        let t = corrector.correct(&q0, &zero, &q1, &zero, &q0)?;
        worst = worst.min(t.min_distance());
        for p in &t.points {
            let fast = p.qdot.iter().zip(model.qdot_max().iter()).any(|(v, m)| v.abs() > m + 1e-9);
            if !model.within_position_limits(&p.q) || fast {
                limit_breaks += 1;
            }
        }
        calls += 1;
    }
    Ok(check(
        "corrector_buffer",
        worst >= buff - 1e-4 && limit_breaks == 0,
        format!("closest waypoint {worst:.4} m, {limit_breaks} limit violations over {calls} calls"),
    ))
}

fn failsafe_bank(config: &ScenarioConfig) -> Check {
    match config.failsafe.verify(&config.model, &config.scene, config.corrector.d_coll_buff) {
        Ok(()) => check("failsafe_bank", true, "all presets clear twice the buffer".into()),
        Err(e) => check("failsafe_bank", false, e.to_string()),
    }
}

fn smoke_run(config: &ScenarioConfig) -> Result<Check> {
    let mut c = config.clone();
    c.episodes = c.episodes.min(5);
    c.corrector_enabled = true;
    let s = run_experiment(&c, 1)?;
    Ok(check(
        "corrected_episodes",
        s.collisions == 0 && s.min_proximity_overall >= s.buffer_m && s.failed_episodes == 0,
        format!(
            "{} episodes, {} collisions, closest {:.4} m, {} failed",
            s.episodes, s.collisions, s.min_proximity_overall, s.failed_episodes
        ),
    ))
}
