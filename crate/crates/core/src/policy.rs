//! Scripted policies producing raw (unclipped) joint-delta actions.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arm::JointVector;
use crate::error::{Error, Result};
use crate::sim::Observation;

#[derive(Clone, Debug, PartialEq)]
pub struct Action {
    /// Requested joint increment (rad), before clipping.
    pub joint_delta: JointVector,
    /// Carried through to the environment untouched.
    pub gripper_open: bool,
}

impl Action {
    pub fn hold(dof: usize) -> Self {
        Self {
            joint_delta: JointVector::zeros(dof),
            gripper_open: false,
        }
    }
}

pub trait Policy: Send {
    fn act(&mut self, obs: &Observation) -> Action;
}

/// Always requests no motion.
#[derive(Clone, Debug, Default)]
pub struct ZeroPolicy;

impl Policy for ZeroPolicy {
    fn act(&mut self, obs: &Observation) -> Action {
        Action::hold(obs.q.len())
    }
}

/// Straight-line joint-space pursuit of a goal configuration, ignoring
/// obstacles. The step is capped at `saturation` in Euclidean norm.
#[derive(Clone, Debug)]
pub struct GreedyPolicy {
    q_goal: JointVector,
    saturation: f64,
}

pub fn make_greedy(q_goal: JointVector, saturation: f64) -> Result<GreedyPolicy> {
    if !(saturation > 0.0 && saturation.is_finite()) || q_goal.iter().any(|v| !v.is_finite()) {
        return Err(Error::Usage("greedy policy needs a finite goal and positive saturation".into()));
    }
    Ok(GreedyPolicy { q_goal, saturation })
}

impl Policy for GreedyPolicy {
    fn act(&mut self, obs: &Observation) -> Action {
        let delta = &self.q_goal - &obs.q;
        let norm = delta.norm();
        let joint_delta = if norm <= self.saturation { delta } else { delta * (self.saturation / norm) };
        Action {
            joint_delta,
            gripper_open: false,
        }
    }
}

/// Emits a recorded action list in order, then zeros.
#[derive(Clone, Debug)]
pub struct ReplayPolicy {
    trace: Vec<JointVector>,
    next: usize,
}

pub fn make_replay(trace: Vec<JointVector>) -> Result<ReplayPolicy> {
    let Some(first) = trace.first() else {
        return Err(Error::load("trace", "empty action trace"));
    };
    let dof = first.len();
    for (i, a) in trace.iter().enumerate() {
        if a.len() != dof || a.iter().any(|v| !v.is_finite()) {
            return Err(Error::load(format!("trace line {}", i + 1), "inconsistent length or non-finite value"));
        }
    }
    Ok(ReplayPolicy { trace, next: 0 })
}

impl Policy for ReplayPolicy {
    fn act(&mut self, obs: &Observation) -> Action {
        let joint_delta = match self.trace.get(self.next) {
            Some(a) => a.clone(),
            None => JointVector::zeros(obs.q.len()),
        };
        self.next += 1;
        Action {
            joint_delta,
            gripper_open: false,
        }
    }
}

/// Parses an action trace: one action per line, values separated by
/// whitespace or commas. Blank lines and `#` comments are skipped.
pub fn parse_trace(text: &str) -> Result<Vec<JointVector>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let values: std::result::Result<Vec<f64>, _> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(str::parse::<f64>)
            .collect();
        let values = values.map_err(|e| Error::load(format!("trace line {}", i + 1), e.to_string()))?;
        out.push(JointVector::from_vec(values));
    }
    Ok(out)
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<Vec<JointVector>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trace(&text)
}

/// Seeded uniform deltas in `[-magnitude, magnitude]` per joint.
#[derive(Clone, Debug)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
    magnitude: f64,
}

pub fn make_random(seed: u64, magnitude: f64) -> Result<RandomPolicy> {
    if !(magnitude > 0.0 && magnitude.is_finite()) {
        return Err(Error::Usage("random policy magnitude must be positive".into()));
    }
    Ok(RandomPolicy {
        rng: ChaCha8Rng::seed_from_u64(seed),
        magnitude,
    })
}

impl Policy for RandomPolicy {
    fn act(&mut self, obs: &Observation) -> Action {
        let m = self.magnitude;
        let joint_delta = JointVector::from_fn(obs.q.len(), |_, _| self.rng.gen_range(-m..=m));
        Action {
            joint_delta,
            gripper_open: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn obs(q: &[f64]) -> Observation {
        Observation {
            q: JointVector::from_column_slice(q),
            qdot: JointVector::zeros(q.len()),
            peg_position: Vector3::zeros(),
            goal_center: Vector3::zeros(),
            time: 0.0,
            min_distance: 1.0,
        }
    }

    #[test]
    fn greedy_at_goal_is_still() {
        let mut p = make_greedy(JointVector::from_column_slice(&[0.1, 0.2, 0.3]), 1.0).unwrap();
        assert_eq!(p.act(&obs(&[0.1, 0.2, 0.3])).joint_delta.amax(), 0.0);
    }

    #[test]
    fn greedy_saturates_far_away() {
        let mut p = make_greedy(JointVector::from_column_slice(&[2.0, 0.0, 0.0]), 1.0).unwrap();
        let a = p.act(&obs(&[0.0, 0.0, 0.0]));
        assert_eq!(a.joint_delta, JointVector::from_column_slice(&[1.0, 0.0, 0.0]));
        let mut p = make_greedy(JointVector::from_column_slice(&[2.0, -1.0, 2.0]), 1.0).unwrap();
        let a = p.act(&obs(&[0.0, 0.0, 0.0]));
        assert!((a.joint_delta.norm() - 1.0).abs() < 1e-12);
        assert!((a.joint_delta - JointVector::from_column_slice(&[2.0, -1.0, 2.0]) / 3.0).amax() < 1e-12);
        assert!(!a.gripper_open);
    }

    #[test]
    fn replay_then_zeros() {
        let trace = parse_trace("# three steps\n0.1 0.2\n0.3, 0.4\n\n-0.5\t0.6  # tail\n").unwrap();
        let mut p = make_replay(trace.clone()).unwrap();
        let o = obs(&[0.0, 0.0]);
        let got: Vec<_> = (0..5).map(|_| p.act(&o).joint_delta).collect();
        assert_eq!(&got[..3], &trace[..]);
        assert_eq!(got[3], JointVector::zeros(2));
        assert_eq!(got[4], JointVector::zeros(2));
        assert_eq!(trace[2], JointVector::from_column_slice(&[-0.5, 0.6]));
    }

    #[test]
    fn malformed_traces_are_rejected() {
        assert!(matches!(parse_trace("0.1 abc"), Err(Error::Load { .. })));
        assert!(make_replay(vec![]).is_err());
        let ragged = parse_trace("0.1 0.2\n0.3").unwrap();
        assert!(make_replay(ragged).is_err());
        assert!(matches!(load_trace("/nonexistent/trace.txt"), Err(Error::Io { .. })));
    }

    #[test]
    fn random_is_seeded_and_bounded() {
        let o = obs(&[0.0; 3]);
        let mut a = make_random(4, 1.0).unwrap();
        let mut b = make_random(4, 1.0).unwrap();
        let mut biggest: f64 = 0.0;
        for _ in 0..10_000 {
            let x = a.act(&o).joint_delta;
            assert_eq!(x, b.act(&o).joint_delta);
            biggest = biggest.max(x.amax());
        }
        assert!(biggest <= 1.0 && biggest > 0.99);
        assert!(make_random(1, 0.0).is_err());
    }
}
