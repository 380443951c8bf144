//! Closest-point routines for world-placed primitives.
//!
//! Every routine returns a [`Contact`] whose `normal` points from body `b`
//! toward body `a`: translating `a` along it increases the distance.

use nalgebra::{Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::arm::Pose;
use crate::error::{Error, Result};

/// Collision primitive in its local frame. Capsules run along local z.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Primitive {
    Sphere { radius: f64 },
    Capsule { half_length: f64, radius: f64 },
    Box { half_extents: [f64; 3] },
    /// Solid region `{x : normal · x <= offset}`.
    HalfSpace { normal: [f64; 3], offset: f64 },
}

impl Primitive {
    pub fn kind(&self) -> &'static str {
        match self {
            Primitive::Sphere { .. } => "sphere",
            Primitive::Capsule { .. } => "capsule",
            Primitive::Box { .. } => "box",
            Primitive::HalfSpace { .. } => "half_space",
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(format!("{name} must be positive, got {v}"))
            }
        };
        match self {
            Primitive::Sphere { radius } => positive("radius", *radius),
            Primitive::Capsule { half_length, radius } => {
                positive("half_length", *half_length)?;
                positive("radius", *radius)
            }
            Primitive::Box { half_extents } => half_extents.iter().try_for_each(|&h| positive("half_extents", h)),
            Primitive::HalfSpace { normal, offset } => {
                let n = Vector3::from(*normal).norm();
                if (n - 1.0).abs() > 1e-9 {
                    return Err(format!("normal must be unit length, norm is {n}"));
                }
                if !offset.is_finite() {
                    return Err("offset must be finite".into());
                }
                Ok(())
            }
        }
    }

    /// Radius of a ball about the local origin that contains the primitive.
    /// Infinite for half-spaces.
    pub fn bounding_radius(&self) -> f64 {
        match self {
            Primitive::Sphere { radius } => *radius,
            Primitive::Capsule { half_length, radius } => half_length + radius,
            Primitive::Box { half_extents } => Vector3::from(*half_extents).norm(),
            Primitive::HalfSpace { .. } => f64::INFINITY,
        }
    }

    pub(crate) fn place(&self, pose: &Pose) -> Placed {
        match self {
            Primitive::Sphere { radius } => Placed::Sphere {
                center: pose.translation.vector,
                radius: *radius,
            },
            Primitive::Capsule { half_length, radius } => {
                let axis = pose.rotation * Vector3::new(0.0, 0.0, *half_length);
                let c = pose.translation.vector;
                Placed::Capsule {
                    a: c - axis,
                    b: c + axis,
                    radius: *radius,
                }
            }
            Primitive::Box { half_extents } => Placed::Box {
                pose: *pose,
                half: Vector3::from(*half_extents),
            },
            Primitive::HalfSpace { normal, offset } => {
                let n = Unit::new_normalize(pose.rotation * Vector3::from(*normal));
                Placed::HalfSpace {
                    offset: offset + n.dot(&pose.translation.vector),
                    normal: n,
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Placed {
    Sphere { center: Vector3<f64>, radius: f64 },
    Capsule { a: Vector3<f64>, b: Vector3<f64>, radius: f64 },
    Box { pose: Pose, half: Vector3<f64> },
    HalfSpace { normal: Unit<Vector3<f64>>, offset: f64 },
}

impl Placed {
    fn kind(&self) -> &'static str {
        match self {
            Placed::Sphere { .. } => "sphere",
            Placed::Capsule { .. } => "capsule",
            Placed::Box { .. } => "box",
            Placed::HalfSpace { .. } => "half_space",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Contact {
    pub distance: f64,
    pub point_a: Vector3<f64>,
    pub point_b: Vector3<f64>,
    pub normal: Vector3<f64>,
}

impl Contact {
    fn flipped(self) -> Self {
        Contact {
            distance: self.distance,
            point_a: self.point_b,
            point_b: self.point_a,
            normal: -self.normal,
        }
    }
}

const FALLBACK_NORMAL: Vector3<f64> = Vector3::new(0.0, 0.0, 1.0);

/// Signed distance between two placed primitives.
pub(crate) fn contact(a: &Placed, b: &Placed) -> Result<Contact> {
    use Placed::*;
    match (a, b) {
        (Sphere { center: ca, radius: ra }, Sphere { center: cb, radius: rb }) => Ok(inflate(ca, *ra, cb, *rb)),
        (Sphere { center, radius: ra }, Capsule { a: s0, b: s1, radius: rb }) => {
            let p = closest_on_segment(center, s0, s1);
            Ok(inflate(center, *ra, &p, *rb))
        }
        (Capsule { a: a0, b: a1, radius: ra }, Capsule { a: b0, b: b1, radius: rb }) => {
            let (pa, pb) = closest_between_segments(a0, a1, b0, b1);
            Ok(inflate(&pa, *ra, &pb, *rb))
        }
        (Sphere { center, radius }, Box { pose, half }) => {
            let (sd, surface, normal) = point_box(center, pose, half);
            Ok(Contact {
                distance: sd - radius,
                point_a: center - normal * *radius,
                point_b: surface,
                normal,
            })
        }
        (Capsule { a: s0, b: s1, radius }, Box { pose, half }) => {
            let (p, lower_bound) = segment_box(s0, s1, pose, half);
            let (_, surface, normal) = point_box(&p, pose, half);
            Ok(Contact {
                distance: lower_bound - radius,
                point_a: p - normal * *radius,
                point_b: surface,
                normal,
            })
        }
        (Sphere { center, radius }, HalfSpace { normal, offset }) => {
            Ok(points_halfspace(std::slice::from_ref(center), *radius, normal, *offset))
        }
        (Capsule { a: s0, b: s1, radius }, HalfSpace { normal, offset }) => {
            Ok(points_halfspace(&[*s0, *s1], *radius, normal, *offset))
        }
        (Box { pose, half }, HalfSpace { normal, offset }) => {
            let corners: Vec<Vector3<f64>> = (0..8)
                .map(|i| {
                    let sx = if i & 1 == 0 { -1.0 } else { 1.0 };
                    let sy = if i & 2 == 0 { -1.0 } else { 1.0 };
                    let sz = if i & 4 == 0 { -1.0 } else { 1.0 };
                    pose * nalgebra::Point3::new(sx * half.x, sy * half.y, sz * half.z)
                })
                .map(|p| p.coords)
                .collect();
            Ok(points_halfspace(&corners, 0.0, normal, *offset))
        }
        (Box { .. }, Box { .. }) | (HalfSpace { .. }, HalfSpace { .. }) => {
            Err(Error::UnsupportedPair(a.kind(), b.kind()))
        }
        _ => contact(b, a).map(Contact::flipped),
    }
}

/// Two rounded points: cores `pa`, `pb` inflated by `ra`, `rb`.
fn inflate(pa: &Vector3<f64>, ra: f64, pb: &Vector3<f64>, rb: f64) -> Contact {
    let diff = pa - pb;
    let core = diff.norm();
    let normal = if core > 1e-12 { diff / core } else { FALLBACK_NORMAL };
    Contact {
        distance: core - ra - rb,
        point_a: pa - normal * ra,
        point_b: pb + normal * rb,
        normal,
    }
}

pub(crate) fn closest_on_segment(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> Vector3<f64> {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 <= f64::EPSILON {
        return *a;
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    a + ab * t
}

/// Closest points between segments `p1q1` and `p2q2`. For parallel
/// overlapping segments the midpoint of the overlap is returned so the
/// witness does not jump between endpoints.
pub(crate) fn closest_between_segments(
    p1: &Vector3<f64>,
    q1: &Vector3<f64>,
    p2: &Vector3<f64>,
    q2: &Vector3<f64>,
) -> (Vector3<f64>, Vector3<f64>) {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);
    let eps = 1e-14;

    if a <= eps && e <= eps {
        return (*p1, *p2);
    }
    if a <= eps {
        let t = (f / e).clamp(0.0, 1.0);
        return (*p1, p2 + d2 * t);
    }
    let c = d1.dot(&r);
    if e <= eps {
        let s = (-c / a).clamp(0.0, 1.0);
        return (p1 + d1 * s, *p2);
    }
    let b = d1.dot(&d2);
    let denom = a * e - b * b;
    if denom <= 1e-12 * a * e {
        // Parallel: project the second segment onto the first and use the
        // middle of the overlapping interval.
        let s0 = (-c / a).clamp(0.0, 1.0);
        let s1 = ((q2 - p1).dot(&d1) / a).clamp(0.0, 1.0);
        let s = 0.5 * (s0 + s1);
        let pa = p1 + d1 * s;
        let pb = closest_on_segment(&pa, p2, q2);
        return (pa, pb);
    }
    let mut s = ((b * f - c * e) / denom).clamp(0.0, 1.0);
    let mut t = (b * s + f) / e;
    if t < 0.0 {
        t = 0.0;
        s = (-c / a).clamp(0.0, 1.0);
    } else if t > 1.0 {
        t = 1.0;
        s = ((b - c) / a).clamp(0.0, 1.0);
    }
    (p1 + d1 * s, p2 + d2 * t)
}

/// Signed distance from a point to an oriented box, the closest surface
/// point, and the outward unit normal at that point.
pub(crate) fn point_box(p: &Vector3<f64>, pose: &Pose, half: &Vector3<f64>) -> (f64, Vector3<f64>, Vector3<f64>) {
    let local = pose.inverse_transform_vector(&(p - pose.translation.vector));
    let clamped = Vector3::new(
        local.x.clamp(-half.x, half.x),
        local.y.clamp(-half.y, half.y),
        local.z.clamp(-half.z, half.z),
    );
    let diff = local - clamped;
    let outside = diff.norm();
    let (sd, surface, normal_local) = if outside > 0.0 {
        (outside, clamped, diff / outside)
    } else {
        let margins = half - local.abs();
        let k = margins.imin();
        let sign = if local[k] >= 0.0 { 1.0 } else { -1.0 };
        let mut surface = local;
        surface[k] = sign * half[k];
        let mut n = Vector3::zeros();
        n[k] = sign;
        (-margins[k], surface, n)
    };
    let surface_world = pose.rotation * surface + pose.translation.vector;
    (sd, surface_world, pose.rotation * normal_local)
}

/// Minimizes the box signed distance along a segment. Returns the best
/// segment point and a lower bound on the minimum.
///
/// The signed distance to a convex set is convex and 1-Lipschitz, so golden
/// section search brackets the minimizer and the bracket width times the
/// segment length bounds the remaining error.
pub(crate) fn segment_box(a: &Vector3<f64>, b: &Vector3<f64>, pose: &Pose, half: &Vector3<f64>) -> (Vector3<f64>, f64) {
    let ab = b - a;
    let len = ab.norm();
    let f = |t: f64| point_box(&(a + ab * t), pose, half).0;
    let inv_phi = 0.5 * (5f64.sqrt() - 1.0);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..90 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    let mut best_t = if f1 <= f2 { x1 } else { x2 };
    let mut best = f1.min(f2);
    for t in [0.0, 1.0] {
        let v = f(t);
        if v < best {
            best = v;
            best_t = t;
        }
    }
    (a + ab * best_t, best - len * (hi - lo))
}

/// Lowest of a set of rounded points against a half-space. Ties are averaged
/// so that e.g. a box resting flat reports its face center.
fn points_halfspace(points: &[Vector3<f64>], radius: f64, normal: &Unit<Vector3<f64>>, offset: f64) -> Contact {
    let heights: Vec<f64> = points.iter().map(|p| normal.dot(p) - offset).collect();
    let lowest = heights.iter().copied().fold(f64::INFINITY, f64::min);
    let mut sum = Vector3::zeros();
    let mut count = 0.0;
    for (p, h) in points.iter().zip(&heights) {
        if *h - lowest <= 1e-12 {
            sum += p;
            count += 1.0;
        }
    }
    let core = sum / count;
    let n = normal.into_inner();
    Contact {
        distance: lowest - radius,
        point_a: core - n * radius,
        point_b: core - n * lowest,
        normal: n,
    }
}
