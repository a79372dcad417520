use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Result};

/// Rigid motion `p ↦ R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Checks orthonormality and orientation to 1e-9.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).norm();
        if ortho > 1e-9 || (rotation.determinant() - 1.0).abs() > 1e-9 {
            return invalid("rotation is not a proper orthonormal matrix");
        }
        Ok(Self { rotation, translation })
    }

    pub fn from_parts(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation: *rotation.matrix(), translation }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform { rotation: rt, translation: -(rt * self.translation) }
    }

    pub fn rotation_angle(&self) -> f64 {
        ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }

    /// Left-multiplies the increment `(Exp(ω), δt)` and re-projects the
    /// rotation onto SO(3).
    pub fn retract(&self, omega: &Vector3<f64>, delta_t: &Vector3<f64>) -> RigidTransform {
        let step = Rotation3::new(*omega);
        let rotation = orthonormalize(&(step * self.rotation));
        RigidTransform { rotation, translation: step * self.translation + delta_t }
    }

    /// Frobenius norm of `RᵀR − I`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).norm()
    }

    /// Rotation angle and translation distance between two transforms.
    pub fn distance(&self, other: &RigidTransform) -> (f64, f64) {
        let delta = self.inverse().compose(other);
        (delta.rotation_angle(), (self.translation - other.translation).norm())
    }
}

/// Closest rotation matrix (polar decomposition via SVD).
pub fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut d = Matrix3::identity();
    d[(2, 2)] = (u * v_t).determinant().signum();
    u * d * v_t
}

#[derive(Serialize, Deserialize)]
struct TransformRepr {
    rotation: [f64; 9],
    translation: [f64; 3],
}

impl Serialize for RigidTransform {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let r = &self.rotation;
        TransformRepr {
            rotation: [r[(0, 0)], r[(0, 1)], r[(0, 2)], r[(1, 0)], r[(1, 1)], r[(1, 2)], r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            translation: [self.translation.x, self.translation.y, self.translation.z],
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = TransformRepr::deserialize(d)?;
        let rotation = Matrix3::from_row_slice(&repr.rotation);
        RigidTransform::new(rotation, Vector3::from(repr.translation)).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compose_with_inverse_is_identity() {
        let t = RigidTransform::from_parts(
            Rotation3::from_axis_angle(&Vector3::y_axis(), 0.7),
            Vector3::new(0.1, -0.2, 0.3),
        );
        let (angle, dist) = t.compose(&t.inverse()).distance(&RigidTransform::identity());
        assert!(angle < 1e-12 && dist < 1e-12);
    }

    #[test]
    fn retract_keeps_rotation_orthonormal() {
        let mut t = RigidTransform::identity();
        for i in 0..200 {
            let w = Vector3::new(0.01 * i as f64, -0.02, 0.03).map(|x| x.sin());
            t = t.retract(&w, &Vector3::new(0.001, 0.0, 0.0));
            assert!(t.orthonormality_error() < 1e-9);
        }
    }

    #[test]
    fn rejects_improper_rotation() {
        let mut m = Matrix3::identity();
        m[(2, 2)] = -1.0;
        assert!(RigidTransform::new(m, Vector3::zeros()).is_err());
    }

    #[test]
    fn json_uses_row_major_rotation() {
        let t = RigidTransform::from_parts(Rotation3::from_axis_angle(&Vector3::z_axis(), 0.5), Vector3::new(1.0, 2.0, 3.0));
        let v = serde_json::to_value(t).unwrap();
        let rot: Vec<f64> = serde_json::from_value(v["rotation"].clone()).unwrap();
        assert_eq!(rot[1], t.rotation()[(0, 1)]);
        let back: RigidTransform = serde_json::from_value(v).unwrap();
        assert_eq!(back, t);
    }
}
