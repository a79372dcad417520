use nalgebra::{Matrix2x3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmModel {
    pub lengths: [f64; 3],
    pub base: [f64; 2],
    /// Capsule radius around each link segment.
    pub radii: [f64; 3],
    /// Symmetric joint velocity bound (rad/s).
    pub qdot_max: [f64; 3],
}

impl Default for ArmModel {
    fn default() -> Self {
        Self { lengths: [0.5, 0.45, 0.3], base: [0.0, 0.0], radii: [0.05, 0.04, 0.03], qdot_max: [1.5; 3] }
    }
}

/// Forward kinematics of the planar chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmPose {
    /// Base, the two inner joints and the end effector.
    pub joints: [Vector2<f64>; 4],
    pub heading: f64,
}

impl ArmPose {
    pub fn ee(&self) -> Vector2<f64> {
        self.joints[3]
    }

    pub fn segment(&self, link: usize) -> (Vector2<f64>, Vector2<f64>) {
        (self.joints[link], self.joints[link + 1])
    }
}

pub(crate) fn perp(v: &Vector2<f64>) -> Vector2<f64> {
    Vector2::new(-v.y, v.x)
}

fn cross(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

impl ArmModel {
    pub fn validate(&self) -> Result<()> {
        let all = self.lengths.iter().chain(&self.radii).chain(&self.qdot_max);
        if all.clone().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return invalid("link lengths, capsule radii and joint speed bounds must be positive");
        }
        Ok(())
    }

    pub fn forward_kinematics(&self, q: &Vector3<f64>) -> ArmPose {
        let mut joints = [Vector2::new(self.base[0], self.base[1]); 4];
        let mut angle = 0.0;
        for i in 0..3 {
            angle += q[i];
            joints[i + 1] = joints[i] + self.lengths[i] * Vector2::new(angle.cos(), angle.sin());
        }
        ArmPose { joints, heading: angle }
    }

    /// Position Jacobian of the end effector; column `j` is the
    /// perpendicular of the lever arm from joint `j` to the end effector.
    pub fn jacobian(&self, q: &Vector3<f64>) -> Matrix2x3<f64> {
        let pose = self.forward_kinematics(q);
        let mut j = Matrix2x3::zeros();
        for k in 0..3 {
            j.set_column(k, &perp(&(pose.ee() - pose.joints[k])));
        }
        j
    }

    /// `√det(J Jᵀ)`.
    pub fn manipulability(&self, q: &Vector3<f64>) -> f64 {
        let j = self.jacobian(q);
        (j * j.transpose()).determinant().max(0.0).sqrt()
    }

    /// μ and its gradient. By Cauchy-Binet `μ² = Σ_{i<j} (a_i × a_j)²`
    /// with lever arms `a_i = p_ee − p_i`, and `∂a_i/∂q_k = perp(a_max(i,k))`.
    /// The gradient is zero where μ vanishes.
    pub fn manipulability_with_gradient(&self, q: &Vector3<f64>) -> (f64, Vector3<f64>) {
        let pose = self.forward_kinematics(q);
        let a: [Vector2<f64>; 3] = std::array::from_fn(|i| pose.ee() - pose.joints[i]);
        let pairs = [(0, 1), (0, 2), (1, 2)];
        let c: Vec<f64> = pairs.iter().map(|&(i, j)| cross(&a[i], &a[j])).collect();
        let mu = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut grad = Vector3::zeros();
        if mu < 1e-12 {
            return (mu, grad);
        }
        for k in 0..3 {
            let mut s = 0.0;
            for (p, &(i, j)) in pairs.iter().enumerate() {
                let dc = -a[i.max(k)].dot(&a[j]) + a[i].dot(&a[j.max(k)]);
                s += c[p] * dc;
            }
            grad[k] = s / mu;
        }
        (mu, grad)
    }

    /// Joint angles placing the end effector at `position` with the given
    /// heading, or `None` when the wrist point is out of reach.
    pub fn inverse_kinematics(&self, position: &Vector2<f64>, heading: f64, elbow_up: bool) -> Option<Vector3<f64>> {
        let base = Vector2::new(self.base[0], self.base[1]);
        let wrist = position - base - self.lengths[2] * Vector2::new(heading.cos(), heading.sin());
        let (l1, l2) = (self.lengths[0], self.lengths[1]);
        let c2 = (wrist.norm_squared() - l1 * l1 - l2 * l2) / (2.0 * l1 * l2);
        if !(-1.0..=1.0).contains(&c2) {
            return None;
        }
        let q2 = if elbow_up { c2.acos() } else { -c2.acos() };
        let q1 = wrist.y.atan2(wrist.x) - (l2 * q2.sin()).atan2(l1 + l2 * q2.cos());
        Some(Vector3::new(q1, q2, heading - q1 - q2))
    }

    /// Velocity of a point rigidly attached to `link` under unit rate of
    /// each joint.
    fn point_jacobian(&self, pose: &ArmPose, link: usize, x: &Vector2<f64>) -> Matrix2x3<f64> {
        let mut j = Matrix2x3::zeros();
        for k in 0..=link {
            j.set_column(k, &perp(&(x - pose.joints[k])));
        }
        j
    }
}

/// Closest point on segment `[a, b]` to `p`, as (parameter, point).
pub fn closest_on_segment(a: &Vector2<f64>, b: &Vector2<f64>, p: &Vector2<f64>) -> (f64, Vector2<f64>) {
    let d = b - a;
    let len2 = d.norm_squared();
    let t = if len2 > 0.0 { ((p - a).dot(&d) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (t, a + t * d)
}

pub fn point_segment_distance(a: &Vector2<f64>, b: &Vector2<f64>, p: &Vector2<f64>) -> f64 {
    (p - closest_on_segment(a, b, p).1).norm()
}

fn segments_intersect(a: &Vector2<f64>, b: &Vector2<f64>, c: &Vector2<f64>, d: &Vector2<f64>) -> bool {
    let d1 = cross(&(b - a), &(c - a));
    let d2 = cross(&(b - a), &(d - a));
    let d3 = cross(&(d - c), &(a - c));
    let d4 = cross(&(d - c), &(b - c));
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

/// Closest points between segments `[a, b]` and `[c, d]`. The minimum is
/// searched over the four endpoint-to-segment candidates in order, first
/// strict minimum wins; crossing segments return the crossing point twice.
pub fn segment_segment_closest(
    a: &Vector2<f64>,
    b: &Vector2<f64>,
    c: &Vector2<f64>,
    d: &Vector2<f64>,
) -> (Vector2<f64>, Vector2<f64>) {
    if segments_intersect(a, b, c, d) {
        let r = b - a;
        let s = d - c;
        let t = cross(&(c - a), &s) / cross(&r, &s);
        let x = a + t * r;
        return (x, x);
    }
    let candidates = [
        (*a, closest_on_segment(c, d, a).1),
        (*b, closest_on_segment(c, d, b).1),
        (closest_on_segment(a, b, c).1, *c),
        (closest_on_segment(a, b, d).1, *d),
    ];
    let mut best = candidates[0];
    for cand in &candidates[1..] {
        if (cand.0 - cand.1).norm() < (best.0 - best.1).norm() {
            best = *cand;
        }
    }
    best
}

/// A disc obstacle with its effective radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obstacle {
    pub center: Vector2<f64>,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Margins {
    pub eps_sing: f64,
    pub eps_self: f64,
    pub eps_env: f64,
}

/// Barrier values, each with its gradient in joint space.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierSet {
    pub sing: (f64, Vector3<f64>),
    pub self_collision: (f64, Vector3<f64>),
    pub env: Option<[(f64, Vector3<f64>); 3]>,
}

impl BarrierSet {
    pub fn min_env(&self) -> Option<f64> {
        self.env.map(|e| e.iter().map(|v| v.0).fold(f64::INFINITY, f64::min))
    }

    pub fn all(&self) -> Vec<(f64, Vector3<f64>)> {
        let mut v = vec![self.sing, self.self_collision];
        if let Some(e) = self.env {
            v.extend(e);
        }
        v
    }
}

/// Signed clearance of link `link`'s capsule from a point, with gradient.
pub fn link_point_clearance(model: &ArmModel, pose: &ArmPose, link: usize, p: &Vector2<f64>) -> (f64, Vector3<f64>) {
    let (a, b) = pose.segment(link);
    let x = closest_on_segment(&a, &b, p).1;
    let diff = x - p;
    let dist = diff.norm();
    let grad = if dist > 1e-12 {
        (self_jac(model, pose, link, &x).transpose() * (diff / dist)).into()
    } else {
        Vector3::zeros()
    };
    (dist - model.radii[link], grad)
}

fn self_jac(model: &ArmModel, pose: &ArmPose, link: usize, x: &Vector2<f64>) -> Matrix2x3<f64> {
    model.point_jacobian(pose, link, x)
}

/// Clearance between the capsules of links 1 and 3 (the only
/// non-adjacent pair), with gradient.
pub fn self_clearance(model: &ArmModel, pose: &ArmPose) -> (f64, Vector3<f64>) {
    let (a, b) = pose.segment(0);
    let (c, d) = pose.segment(2);
    let (x, y) = segment_segment_closest(&a, &b, &c, &d);
    let diff = x - y;
    let dist = diff.norm();
    let grad = if dist > 1e-12 {
        let n = diff / dist;
        let jx = self_jac(model, pose, 0, &x);
        let jy = self_jac(model, pose, 2, &y);
        ((jx - jy).transpose() * n).into()
    } else {
        Vector3::zeros()
    };
    (dist - model.radii[0] - model.radii[2], grad)
}

/// `h_sing = μ − ε_sing`, `h_self = d_self − ε_self` and, when an obstacle
/// is given, `h_env,ℓ = d_env,ℓ − r_obs − ε_env` per link.
pub fn barrier_values(model: &ArmModel, q: &Vector3<f64>, obstacle: Option<&Obstacle>, margins: &Margins) -> BarrierSet {
    let pose = model.forward_kinematics(q);
    let (mu, dmu) = model.manipulability_with_gradient(q);
    let (ds, dds) = self_clearance(model, &pose);
    let env = obstacle.map(|o| {
        std::array::from_fn(|l| {
            let (d, g) = link_point_clearance(model, &pose, l, &o.center);
            (d - o.radius - margins.eps_env, g)
        })
    });
    BarrierSet { sing: (mu - margins.eps_sing, dmu), self_collision: (ds - margins.eps_self, dds), env }
}
