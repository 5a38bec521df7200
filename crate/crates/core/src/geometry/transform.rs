use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Proper rigid motion `p ↦ R·p + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vec3,
}

const ORTHO_TOL: f64 = 1e-9;

impl RigidTransform {
    /// Fails unless `rotation` is orthonormal with determinant +1 (within 1e-9).
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        let err = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if !(err <= ORTHO_TOL) {
            return Err(Error::InvalidInput(format!(
                "rotation is not orthonormal (max |RᵀR − I| = {err:e})"
            )));
        }
        let det = rotation.determinant();
        if !((det - 1.0).abs() <= ORTHO_TOL) {
            return Err(Error::InvalidInput(format!("rotation determinant {det} ≠ 1")));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("translation".into()));
        }
        Ok(RigidTransform {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn translation(t: Vec3) -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation by `angle` radians about `axis` (any non-zero vector).
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let r = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle);
        RigidTransform {
            rotation: *r.matrix(),
            translation: Vec3::zeros(),
        }
    }

    /// Camera-to-world pose of a camera at `eye` looking at `target`.
    ///
    /// Camera axes: +z forward, +x right, +y down in the image, so `up`
    /// maps to −y.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Result<Self> {
        let fwd = target - eye;
        if fwd.norm() < 1e-12 {
            return Err(Error::InvalidInput("look_at eye coincides with target".into()));
        }
        let z = fwd.normalize();
        let x = z.cross(&up);
        if x.norm() < 1e-9 {
            return Err(Error::InvalidInput("look_at up vector parallel to view direction".into()));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let r = Matrix3::from_columns(&[x, y, z]);
        RigidTransform::new(r, eye)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation_vector(&self) -> &Vec3 {
        &self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    #[inline]
    pub fn apply_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }
}

/// Geometry that can be moved by a rigid transform.
pub trait Transformable: Sized {
    fn transformed(&self, t: &RigidTransform) -> Self;
}

/// Applies `t` to a point cloud or mesh (points and normals; connectivity untouched).
pub fn apply_rigid_transform<G: Transformable>(g: &G, t: &RigidTransform) -> G {
    g.transformed(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn quarter_turn_about_z() {
        let t = RigidTransform::from_axis_angle(Vec3::z(), FRAC_PI_2);
        let p = t.apply_point(&Vec3::new(1.0, 0.0, 0.0));
        assert!((p - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn rejects_non_orthonormal() {
        let m = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(RigidTransform::new(m, Vec3::zeros()).is_err());
        let reflect = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(RigidTransform::new(reflect, Vec3::zeros()).is_err());
    }

    #[test]
    fn look_at_points_forward_axis_at_target() {
        let pose = RigidTransform::look_at(Vec3::new(0.0, 0.0, -2.0), Vec3::zeros(), Vec3::y()).unwrap();
        // target sits on the camera's +z axis at distance 2
        let in_cam = pose.inverse().apply_point(&Vec3::zeros());
        assert!((in_cam - Vec3::new(0.0, 0.0, 2.0)).norm() < 1e-12);
        // world up appears as image-up (−y)
        let up_cam = pose.inverse().apply_vector(&Vec3::y());
        assert!(up_cam.y < -0.99);
    }
}
