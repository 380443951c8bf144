//! Acceptance criteria. Each test writes one PASS/FAIL line to stderr
//! (bypassing output capture) before asserting.

use std::io::Write;
use std::path::PathBuf;
use std::process::Command;
use std::sync::Arc;

use kinshield::arm::{ArmModel, JointVector, PoseSpec};
use kinshield::executor::NRule;
use kinshield::geometry::{self, ObstacleSpec, Primitive, Scene};
use kinshield::harness::{n_sweep, run_experiment, ExperimentSummary, Scenario, ScenarioConfig};
use kinshield::ikinqp::{build_spline, Corrector, CorrectorParams, QpCorrector};
use kinshield::qp::{kkt_residual, solve_qp, QpProblem, QpSettings, QpStatus};
use kinshield::sim::{reward, reward_meets_success, MAX_REWARD, SUCCESS_FRACTION};
use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BUFFER: f64 = 0.015;
const JOBS: usize = 4;

fn report(id: u32, passed: bool, detail: String) {
    let line = format!("{} criterion {id}: {detail}\n", if passed { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(passed, "criterion {id}: {detail}");
}

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn scenario(s: Scenario) -> ScenarioConfig {
    ScenarioConfig::load(configs_dir().join(format!("{}.json", s.name()))).unwrap()
}

fn run(s: Scenario, corrected: bool) -> ExperimentSummary {
    let mut c = scenario(s);
    c.episodes = 100;
    c.corrector_enabled = corrected;
    let summary = run_experiment(&c, JOBS).unwrap();
    assert_eq!(summary.failed_episodes, 0);
    summary
}

#[test]
fn criterion_1_no_collisions_with_correction() {
    let mut ok = true;
    let mut parts = Vec::new();
    for s in Scenario::ALL {
        let r = run(s, true);
        ok &= r.collision_rate == 0.0 && r.min_proximity_overall >= BUFFER;
        parts.push(format!(
            "{} collisions {:.0}% closest {:.4} m",
            s.name(),
            r.collision_rate,
            r.min_proximity_overall
        ));
    }
    report(1, ok, parts.join("; "));
}

#[test]
fn criterion_2_baseline_collides() {
    let middle = run(Scenario::Middle, false);
    let far = run(Scenario::Far, false);
    let ok = middle.collision_rate >= 80.0 && far.collision_rate < middle.collision_rate;
    report(
        2,
        ok,
        format!(
            "uncorrected collisions: middle {:.0}%, far {:.0}%",
            middle.collision_rate, far.collision_rate
        ),
    );
}

#[test]
fn criterion_3_task_success_with_correction() {
    let middle = run(Scenario::Middle, true).success_rate;
    let partial = run(Scenario::Partial, true).success_rate;
    let far = run(Scenario::Far, true).success_rate;
    let ok = middle >= 75.0 && partial >= 95.0 && far >= 95.0;
    report(
        3,
        ok,
        format!("success middle {middle:.0}%, partial {partial:.0}%, far {far:.0}%"),
    );
}

#[test]
fn criterion_4_batch_size_trends() {
    let mut c = scenario(Scenario::Middle);
    c.episodes = 100;
    let m = c.corrector.num_points();
    let half = m.div_ceil(2);
    let rows = n_sweep(&c, &[3, half, m], JOBS).unwrap();
    let (small, mid, all) = (&rows[0], &rows[1], &rows[2]);

    // independent recount of buffer violations for the send-everything case
    let mut full = c.clone();
    full.executor.n_rule = NRule::Fixed(m);
    let recount = run_experiment(&full, JOBS)
        .unwrap()
        .records
        .iter()
        .filter(|r| r.min_proximity < BUFFER)
        .count();

    let a = mid.collision_rate == 0.0;
    let b = mid.mean_episode_time < small.mean_episode_time;
    let cc = all.risk && all.buffer_violations == recount;
    report(
        4,
        a && b && cc,
        format!(
            "n={half}: collisions {:.0}%; mean time n=3 {:.3} s > n={half} {:.3} s: {b}; n={m}: flagged {} with {} buffer violations reported ({} recounted)",
            mid.collision_rate, small.mean_episode_time, mid.mean_episode_time, all.risk, all.buffer_violations, recount
        ),
    );
}

fn middle_world() -> (Arc<ArmModel>, Arc<Scene>) {
    let c = scenario(Scenario::Middle);
    (c.model, c.scene)
}

fn clearance(model: &ArmModel, scene: &Scene, q: &JointVector) -> f64 {
    geometry::min_clearance(model, q, scene).unwrap().distance
}

/// (a) randomized calls near the obstacle keep every waypoint outside the buffer and inside the limits.
fn randomized_corrections() -> (bool, String) {
    let (model, scene) = middle_world();
    let params = CorrectorParams::default();
    let mut corrector = QpCorrector::new(model.clone(), scene.clone(), params.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let start = JointVector::from_column_slice(&kinshield::harness::START_POSE);
    let goal = JointVector::from_column_slice(&kinshield::harness::GOAL_POSE);
    let n = model.dof();
    let (mut calls, mut closest, mut limit_breaks, mut would_hit) = (0, f64::INFINITY, 0, 0);
    while calls < 500 {
        let u: f64 = rng.gen_range(0.0..1.0);
        let q0 = model.clamp_to_limits(
            &(&start * (1.0 - u) + &goal * u + JointVector::from_fn(n, |_, _| rng.gen_range(-0.15..0.15))),
        );
        if clearance(&model, &scene, &q0) < BUFFER {
            continue;
        }
        let qdot0 = JointVector::from_fn(n, |_, _| rng.gen_range(-0.5..0.5));
        let q1 = &q0 + JointVector::from_fn(n, |_, _| rng.gen_range(-0.2..0.2));
        let zero = JointVector::zeros(n);
        let t = corrector.correct(&q0, &qdot0, &q1, &zero, &q0).unwrap();
        let spline = build_spline(&q0, &qdot0, &q1, &zero, params.t1).unwrap();
        if t.points.iter().any(|p| clearance(&model, &scene, &spline.position(p.t)) < BUFFER) {
            would_hit += 1;
        }
        let mut previous = q0.clone();
        for p in &t.points {
            closest = closest.min(clearance(&model, &scene, &p.q));
            let speed = (&p.q - &previous) / params.dt;
            let fast = speed.iter().zip(model.qdot_max().iter()).any(|(v, m)| v.abs() > m + 1e-9);
            if !model.within_position_limits(&p.q) || fast {
                limit_breaks += 1;
            }
            previous = p.q.clone();
        }
        calls += 1;
    }
    (
        closest >= BUFFER - 1e-4 && limit_breaks == 0 && would_hit > 25,
        format!("(a) {calls} calls, {would_hit} with an unsafe raw spline, closest waypoint {closest:.5} m, {limit_breaks} limit breaks"),
    )
}

/// (c) with nothing nearby the corrected waypoints are the spline samples.
fn obstacle_free_matches_spline() -> (bool, String) {
    let model = Arc::new(ArmModel::desk_arm());
    let scene = Arc::new(Scene::open_table(-0.5));
    let params = CorrectorParams::default();
    let mut corrector = QpCorrector::new(model.clone(), scene.clone(), params.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = model.dof();
    let (mut worst, mut cases, mut attempts): (f64, usize, usize) = (0.0, 0, 0);
    while cases < 50 && attempts < 10_000 {
        attempts += 1;
        let q0 = JointVector::from_fn(n, |j, _| [rng.gen_range(-2.0..2.0), rng.gen_range(-0.6..0.6), rng.gen_range(-0.8..0.8)][j]);
        let q1 = &q0 + JointVector::from_fn(n, |_, _| rng.gen_range(-0.2..0.2));
        let zero = JointVector::zeros(n);
        let spline = build_spline(&q0, &zero, &q1, &zero, params.t1).unwrap();
        let far = (0..params.num_points())
            .all(|i| clearance(&model, &scene, &spline.position(i as f64 * params.dt)) >= 0.05);
        if !far {
            continue;
        }
        let t = corrector.correct(&q0, &zero, &q1, &zero, &q0).unwrap();
        for p in &t.points {
            worst = worst.max((&p.q - spline.position(p.t)).amax());
        }
        cases += 1;
    }
    (worst <= 1e-4 && cases == 50, format!("(c) worst spline deviation {worst:.2e} rad over {cases} calls"))
}

/// (d) the failsafe target is used exactly when the start is inside the buffer.
fn failsafe_boundary() -> (bool, String) {
    let model = Arc::new(ArmModel::desk_arm());
    let q0 = JointVector::from_column_slice(&[0.0, 0.5, 1.0]);
    let q1 = JointVector::from_column_slice(&[0.1, 0.5, 1.0]);
    let q_safe = JointVector::from_column_slice(&[0.0, 0.0, 0.5]);
    let kin = model.forward_kinematics(&q0).unwrap();
    let tip = kin.end_effector_position();
    let axis = kin.end_effector.rotation * Vector3::z();
    let (tool_r, ball_r) = (0.03, 0.02);
    let mut ok = true;
    let mut seen = Vec::new();
    for gap in [0.005, 0.0149, 0.0151, 0.05] {
        let mut d = Scene::open_table(-0.5).to_description();
        let c = tip + axis * (tool_r + ball_r + gap);
        d.obstacles.push(ObstacleSpec {
            shape: Primitive::Sphere { radius: ball_r },
            pose: PoseSpec::at([c.x, c.y, c.z]),
            label: "ball".into(),
        });
        let scene = Arc::new(Scene::from_description(&d).unwrap());
        let measured = clearance(&model, &scene, &q0);
        let mut corrector = QpCorrector::new(model.clone(), scene, CorrectorParams::default()).unwrap();
        let zero = JointVector::zeros(3);
        let t = corrector.correct(&q0, &zero, &q1, &zero, &q_safe).unwrap();
        let expect = gap < BUFFER;
        ok &= (measured - gap).abs() < 1e-9 && t.used_failsafe == expect && (t.target == q_safe) == expect;
        seen.push(format!("{gap}->{}", t.used_failsafe));
    }
    (ok, format!("(d) failsafe by start gap {}", seen.join(" ")))
}

#[test]
fn criterion_5_corrector_guarantees() {
    let params = CorrectorParams::default();
    let (model, scene) = middle_world();
    let mut corrector = QpCorrector::new(model, scene, params.clone()).unwrap();
    let q = JointVector::from_column_slice(&kinshield::harness::START_POSE);
    let points = corrector.correct(&q, &JointVector::zeros(3), &q, &JointVector::zeros(3), &q).unwrap().points.len();
    let b = params.num_points() == 11 && points == 11;

    let (a, da) = randomized_corrections();
    let (c, dc) = obstacle_free_matches_spline();
    let (d, dd) = failsafe_boundary();
    report(5, a && b && c && d, format!("{da}; (b) m = {points}; {dc}; {dd}"));
}

fn qp_random_problems() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut worst_kkt, mut beaten, mut sampled): (f64, usize, usize) = (0.0, 0, 0);
    for _ in 0..100 {
        let n = rng.gen_range(2..=5);
        let c = rng.gen_range(1..=4);
        let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let h = &m * m.transpose() + DMatrix::identity(n, n) * 0.05;
        let g = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
        let a = DMatrix::from_fn(c, n, |_, _| rng.gen_range(-1.0..1.0));
        let x0 = DVector::from_fn(n, |_, _| rng.gen_range(-0.5..0.5));
        let ax = &a * &x0;
        let l = ax.map(|v| v - rng.gen_range(0.2..1.0));
        let u = ax.map(|v| v + rng.gen_range(0.2..1.0));
        let (lb, ub) = (DVector::from_element(n, -1.0), DVector::from_element(n, 1.0));
        let p = QpProblem::new(h, g).with_constraints(a.clone(), l.clone(), u.clone()).with_bounds(lb, ub);
        let s = solve_qp(&p, &QpSettings::default()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        worst_kkt = worst_kkt.max(kkt_residual(&p, &s.x).max());
        let best = p.objective(&s.x);
        let mut accepted = 0;
        while accepted < 1000 {
            let x = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            let ax = &a * &x;
            if (0..c).all(|i| ax[i] >= l[i] && ax[i] <= u[i]) {
                accepted += 1;
                if p.objective(&x) < best - 1e-8 {
                    beaten += 1;
                }
            }
        }
        sampled += accepted;
    }
    (
        worst_kkt <= 1e-6 && beaten == 0,
        format!("QP: worst KKT residual {worst_kkt:.2e}, {beaten} of {sampled} feasible samples beat the solver"),
    )
}

#[test]
fn criterion_6_numerical_oracles() {
    let (model, scene) = middle_world();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-6;
    let (mut jac_err, mut grad_err): (f64, f64) = (0.0, 0.0);
    let mut pairs = 0;
    for _ in 0..200 {
        let q = JointVector::from_fn(3, |j, _| rng.gen_range(model.q_min()[j]..model.q_max()[j]));
        let kin = model.forward_kinematics(&q).unwrap();
        let tip = kin.end_effector_position();
        let jac = model.jacobian_at(&kin, &tip, model.dof()).unwrap();
        let reports = geometry::robot_env_reports(&model, &kin, &scene).unwrap();
        for j in 0..3 {
            let mut plus = q.clone();
            let mut minus = q.clone();
            plus[j] += h;
            minus[j] -= h;
            let (kp, km) = (model.forward_kinematics(&plus).unwrap(), model.forward_kinematics(&minus).unwrap());
            let fd = (kp.end_effector_position() - km.end_effector_position()) / (2.0 * h);
            jac_err = jac_err.max((fd - jac.column(j)).amax());
            let (rp, rm) = (
                geometry::robot_env_reports(&model, &kp, &scene).unwrap(),
                geometry::robot_env_reports(&model, &km, &scene).unwrap(),
            );
            for (k, r) in reports.iter().enumerate() {
                if r.distance <= 1e-3 {
                    continue;
                }
                let g = geometry::distance_gradient(&model, &q, r).unwrap();
                let fd = (rp[k].distance - rm[k].distance) / (2.0 * h);
                grad_err = grad_err.max((fd - g.gradient[j]).abs());
                pairs += 1;
            }
        }
    }
    let (qp_ok, qp_detail) = qp_random_problems();
    report(
        6,
        jac_err <= 1e-4 && grad_err <= 1e-4 && qp_ok,
        format!("Jacobian FD error {jac_err:.2e}, distance gradient FD error {grad_err:.2e} ({pairs} entries); {qp_detail}"),
    );
}

#[test]
fn criterion_7_reward_formula() {
    let o = Vector3::new(0.35, 0.0, 0.15);
    let p = o + Vector3::new(0.06, 0.08, 0.0);
    let r = reward(&p, &o, p.y, o.y, false);
    let direct = 1.0 - 1.0_f64.tanh();
    let reach_ok = (r.r_reach - direct).abs() <= 1e-9;

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut composed = true;
    for _ in 0..1000 {
        let p = Vector3::from_fn(|_, _| rng.gen_range(-0.5..0.5));
        let r = reward(&p, &o, rng.gen_range(-0.5..0.5), o.y, rng.gen_bool(0.5));
        composed &= r.total == r.r_reach + 0.5 * r.r_y_align + r.r_gripper;
    }

    let threshold = SUCCESS_FRACTION * MAX_REWARD;
    let just_below = f64::from_bits(threshold.to_bits() - 1);
    let threshold_ok = reward_meets_success(threshold) && !reward_meets_success(just_below) && threshold == 0.975 * 1.5;
    report(
        7,
        reach_ok && composed && threshold_ok,
        format!(
            "reach at 0.1 m {:.12} vs {direct:.12}; composition exact {composed}; threshold {threshold} fires exactly {threshold_ok}",
            r.r_reach
        ),
    );
}

#[test]
fn criterion_8_cli_reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = configs_dir().join("middle.json");
    let mut outputs = Vec::new();
    for (k, jobs) in ["1", "1", "4", "4"].into_iter().enumerate() {
        let out = dir.path().join(format!("run{k}.csv"));
        let status = Command::new(env!("CARGO_BIN_EXE_kinshield"))
            .args(["run", "--seed", "42", "--jobs", jobs, "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success());
        outputs.push(std::fs::read(&out).unwrap());
    }
    let identical = outputs.windows(2).all(|w| w[0] == w[1]);
    report(
        8,
        identical && !outputs[0].is_empty(),
        format!("4 runs with seed 42 (jobs 1, 1, 4, 4) byte-identical: {identical} ({} bytes)", outputs[0].len()),
    );
}
