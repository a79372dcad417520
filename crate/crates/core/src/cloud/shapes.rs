use std::f64::consts::TAU;

use nalgebra::Vector3;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{bbox, PointCloud};
use crate::error::{invalid, Result};

const GOLDEN_FRACTION: f64 = 0.618_033_988_749_894_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ShapeKind {
    Helix,
    Torus,
    Knot,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Helix, ShapeKind::Torus, ShapeKind::Knot];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Helix => "helix",
            ShapeKind::Torus => "torus",
            ShapeKind::Knot => "knot",
        }
    }
}

/// Shape constants, in the parametric units used before normalization.
///
/// Helix and knot are sampled as thin tubes around their centerlines so
/// every point has a well-defined surface normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShapeParams {
    pub helix_turns: f64,
    pub helix_pitch: f64,
    pub helix_radius: f64,
    pub torus_major: f64,
    pub torus_minor: f64,
    pub knot_scale: f64,
    pub tube_radius: f64,
    /// Tangential jitter as a fraction of one sampling stratum.
    pub jitter: f64,
}

impl Default for ShapeParams {
    fn default() -> Self {
        Self {
            helix_turns: 3.0,
            helix_pitch: 0.2,
            helix_radius: 0.3,
            torus_major: 0.35,
            torus_minor: 0.15,
            knot_scale: 0.1,
            tube_radius: 0.04,
            jitter: 1.0,
        }
    }
}

/// Sample `n_points` on the surface of `kind`, centered on the shape's
/// parametric center and scaled so the bounding-box diagonal is 1.
pub fn generate_shape(kind: ShapeKind, n_points: usize, seed: u64, params: &ShapeParams) -> Result<PointCloud> {
    if n_points < 100 {
        return invalid(format!("n_points = {n_points} < 100"));
    }
    let mut rng = crate::rng_from_seed(seed);
    let mut points = Vec::with_capacity(n_points);
    let mut normals = Vec::with_capacity(n_points);
    for i in 0..n_points {
        let t = (i as f64 + params.jitter * rng.random::<f64>()) / n_points as f64;
        let phi = TAU * (i as f64 * GOLDEN_FRACTION + 0.1 * params.jitter * rng.random::<f64>()).fract();
        let (p, n) = match kind {
            ShapeKind::Torus => torus_point(params, TAU * t, phi),
            ShapeKind::Helix => tube_point(|t| helix_center(params, t), t, phi, params.tube_radius),
            ShapeKind::Knot => tube_point(|t| knot_center(params, t), t, phi, params.tube_radius),
        };
        points.push(p);
        normals.push(n);
    }
    let center = parametric_center(kind, params);
    for p in &mut points {
        *p -= center;
    }
    let (lo, hi) = bbox(&points);
    let scale = 1.0 / (hi - lo).norm();
    for p in &mut points {
        *p *= scale;
    }
    PointCloud::with_normals(points, normals)
}

/// Center subtracted before scaling; the origin of the normalized cloud.
pub fn parametric_center(kind: ShapeKind, params: &ShapeParams) -> Vector3<f64> {
    match kind {
        ShapeKind::Helix => Vector3::new(0.0, 0.0, 0.5 * params.helix_turns * params.helix_pitch),
        ShapeKind::Torus | ShapeKind::Knot => Vector3::zeros(),
    }
}

fn torus_point(params: &ShapeParams, u: f64, v: f64) -> (Vector3<f64>, Vector3<f64>) {
    let radial = Vector3::new(u.cos(), u.sin(), 0.0);
    let n = radial * v.cos() + Vector3::z() * v.sin();
    (radial * params.torus_major + n * params.torus_minor, n)
}

fn helix_center(params: &ShapeParams, t: f64) -> Vector3<f64> {
    let a = TAU * params.helix_turns * t;
    Vector3::new(
        params.helix_radius * a.cos(),
        params.helix_radius * a.sin(),
        params.helix_pitch * params.helix_turns * t,
    )
}

fn knot_center(params: &ShapeParams, t: f64) -> Vector3<f64> {
    let a = TAU * t;
    params.knot_scale
        * Vector3::new(
            a.sin() + 2.0 * (2.0 * a).sin(),
            a.cos() - 2.0 * (2.0 * a).cos(),
            -(3.0 * a).sin(),
        )
}

fn tube_point(
    center: impl Fn(f64) -> Vector3<f64>,
    t: f64,
    phi: f64,
    radius: f64,
) -> (Vector3<f64>, Vector3<f64>) {
    const H: f64 = 1e-6;
    let c = center(t);
    let tangent = (center(t + H) - center(t - H)).normalize();
    // any axis far from the tangent gives a valid perpendicular frame
    let axis = [Vector3::x(), Vector3::y(), Vector3::z()]
        .into_iter()
        .min_by(|a, b| tangent.dot(a).abs().total_cmp(&tangent.dot(b).abs()))
        .expect("three axes");
    let u = tangent.cross(&axis).normalize();
    let w = tangent.cross(&u);
    let n = u * phi.cos() + w * phi.sin();
    (c + n * radius, n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let p = ShapeParams::default();
        let a = generate_shape(ShapeKind::Helix, 1000, 42, &p).unwrap();
        let b = generate_shape(ShapeKind::Helix, 1000, 42, &p).unwrap();
        assert_eq!(a.len(), 1000);
        assert_eq!(a, b);
        let c = generate_shape(ShapeKind::Helix, 1000, 43, &p).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn torus_points_satisfy_implicit_equation() {
        let p = ShapeParams::default();
        let cloud = generate_shape(ShapeKind::Torus, 500, 7, &p).unwrap();
        // the normalization is a pure scale for the torus; estimate it from the rim
        let scale = {
            let r_xy: f64 = cloud.points().iter().map(|q| q.xy().norm()).fold(0.0, f64::max);
            r_xy / (p.torus_major + p.torus_minor)
        };
        let (big, small) = (p.torus_major * scale, p.torus_minor * scale);
        for q in cloud.points() {
            let f = (q.xy().norm() - big).powi(2) + q.z * q.z - small * small;
            // outermost sample sits within one stratum of the true rim
            assert!(f.abs() < 1e-4, "implicit residual {f}");
        }
    }

    #[test]
    fn torus_implicit_exact_with_known_scale() {
        let p = ShapeParams::default();
        let cloud = generate_shape(ShapeKind::Torus, 500, 7, &p).unwrap();
        // recompute the scale the generator used from the raw parametric samples
        let raw_diag = {
            let mut rng = crate::rng_from_seed(7);
            let pts: Vec<_> = (0..500)
                .map(|i| {
                    let t = (i as f64 + p.jitter * rng.random::<f64>()) / 500.0;
                    let phi = TAU * (i as f64 * GOLDEN_FRACTION + 0.1 * p.jitter * rng.random::<f64>()).fract();
                    let (u, v) = (TAU * t, phi);
                    Vector3::new(
                        (p.torus_major + p.torus_minor * v.cos()) * u.cos(),
                        (p.torus_major + p.torus_minor * v.cos()) * u.sin(),
                        p.torus_minor * v.sin(),
                    )
                })
                .collect();
            let (lo, hi) = bbox(&pts);
            (hi - lo).norm()
        };
        let k = 1.0 / raw_diag;
        for q in cloud.points() {
            let f = (q.xy().norm() - k * p.torus_major).powi(2) + q.z * q.z - (k * p.torus_minor).powi(2);
            assert!(f.abs() < 1e-12, "implicit residual {f}");
        }
    }

    #[test]
    fn knot_is_unit_diameter() {
        let cloud = generate_shape(ShapeKind::Knot, 2000, 1, &ShapeParams::default()).unwrap();
        assert!((cloud.bbox_diameter() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn too_few_points_rejected() {
        assert!(generate_shape(ShapeKind::Knot, 99, 1, &ShapeParams::default()).is_err());
    }

    #[test]
    fn analytic_normals_are_unit() {
        for kind in ShapeKind::ALL {
            let cloud = generate_shape(kind, 300, 2, &ShapeParams::default()).unwrap();
            for n in cloud.normals().unwrap() {
                assert!((n.norm() - 1.0).abs() < 1e-12);
            }
        }
    }
}
