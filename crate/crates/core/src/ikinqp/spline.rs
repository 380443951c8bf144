use crate::arm::JointVector;
use crate::error::{check_dim, Error, Result};

/// Per-joint cubic Hermite segment on `[0, t1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct HermiteSpline {
    q0: JointVector,
    qdot0: JointVector,
    q1: JointVector,
    qdot1: JointVector,
    t1: f64,
}

impl HermiteSpline {
    /// Position at `t`, clamped to the segment.
    pub fn position(&self, t: f64) -> JointVector {
        let s = (t / self.t1).clamp(0.0, 1.0);
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        &self.q0 * h00 + &self.qdot0 * (h10 * self.t1) + &self.q1 * h01 + &self.qdot1 * (h11 * self.t1)
    }

    /// Velocity at `t`, clamped to the segment.
    pub fn velocity(&self, t: f64) -> JointVector {
        let s = (t / self.t1).clamp(0.0, 1.0);
        let s2 = s * s;
        let d00 = 6.0 * s2 - 6.0 * s;
        let d10 = 3.0 * s2 - 4.0 * s + 1.0;
        let d01 = -6.0 * s2 + 6.0 * s;
        let d11 = 3.0 * s2 - 2.0 * s;
        (&self.q0 * d00 + &self.q1 * d01) / self.t1 + &self.qdot0 * d10 + &self.qdot1 * d11
    }

    pub fn duration(&self) -> f64 {
        self.t1
    }
}

/// Spline with `r(0) = q0`, `r(t1) = q1`, `r'(0) = qdot0`, `r'(t1) = qdot1`.
pub fn build_spline(
    q0: &JointVector,
    qdot0: &JointVector,
    q1: &JointVector,
    qdot1: &JointVector,
    t1: f64,
) -> Result<HermiteSpline> {
    let n = q0.len();
    check_dim(n, qdot0.len())?;
    check_dim(n, q1.len())?;
    check_dim(n, qdot1.len())?;
    if !(t1 > 0.0 && t1.is_finite()) {
        return Err(Error::Usage(format!("spline duration must be positive, got {t1}")));
    }
    Ok(HermiteSpline {
        q0: q0.clone(),
        qdot0: qdot0.clone(),
        q1: q1.clone(),
        qdot1: qdot1.clone(),
        t1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> JointVector {
        JointVector::from_column_slice(x)
    }

    #[test]
    fn constant_when_endpoints_coincide() {
        let q = v(&[0.3, -1.0, 2.0]);
        let z = JointVector::zeros(3);
        let s = build_spline(&q, &z, &q, &z, 0.5).unwrap();
        for k in 0..=20 {
            let t = 0.5 * k as f64 / 20.0;
            assert!((s.position(t) - &q).amax() < 1e-15);
        }
    }

    #[test]
    fn rest_to_rest_passes_midpoint_halfway() {
        let (a, b) = (v(&[0.0, 1.0]), v(&[1.0, -1.0]));
        let z = JointVector::zeros(2);
        let s = build_spline(&a, &z, &b, &z, 0.5).unwrap();
        assert!((s.position(0.25) - (&a + &b) / 2.0).amax() < 1e-15);
    }

    #[test]
    fn boundary_conditions_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let r = |rng: &mut ChaCha8Rng| JointVector::from_fn(4, |_, _| rng.gen_range(-2.0..2.0));
            let (q0, qd0, q1, qd1) = (r(&mut rng), r(&mut rng), r(&mut rng), r(&mut rng));
            let t1 = rng.gen_range(0.1..2.0);
            let s = build_spline(&q0, &qd0, &q1, &qd1, t1).unwrap();
            assert!((s.position(0.0) - &q0).amax() <= 1e-12);
            assert!((s.position(t1) - &q1).amax() <= 1e-12);
            assert!((s.velocity(0.0) - &qd0).amax() <= 1e-12);
            assert!((s.velocity(t1) - &qd1).amax() <= 1e-12);
        }
    }

    #[test]
    fn velocity_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let h = 1e-6;
        for _ in 0..20 {
            let r = |rng: &mut ChaCha8Rng| JointVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0));
            let (q0, qd0, q1, qd1) = (r(&mut rng), r(&mut rng), r(&mut rng), r(&mut rng));
            let s = build_spline(&q0, &qd0, &q1, &qd1, 0.5).unwrap();
            for k in 1..100 {
                let t = 0.5 * k as f64 / 100.0;
                let fd = (s.position(t + h) - s.position(t - h)) / (2.0 * h);
                assert!((fd - s.velocity(t)).amax() <= 1e-5);
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        let z = JointVector::zeros(2);
        assert!(build_spline(&z, &z, &z, &z, 0.0).is_err());
        assert!(build_spline(&z, &JointVector::zeros(3), &z, &z, 1.0).is_err());
    }
}
