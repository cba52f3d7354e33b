//! Similarity transforms `x -> s R x + t`.

use nalgebra::{Rotation3, SVector, Vector3};
use serde::{Deserialize, Serialize};

use super::so3;

pub type Vector7 = SVector<f64, 7>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sim3 {
    pub scale: f64,
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Sim3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Sim3 {
    pub fn new(scale: f64, rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self { scale, rotation, translation }
    }

    pub fn identity() -> Self {
        Self::new(1.0, Rotation3::identity(), Vector3::zeros())
    }

    pub fn transform_point(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x * self.scale + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Sim3) -> Sim3 {
        Sim3 {
            scale: self.scale * other.scale,
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation * self.scale + self.translation,
        }
    }

    pub fn inverse(&self) -> Sim3 {
        let r_inv = self.rotation.inverse();
        let s_inv = 1.0 / self.scale;
        Sim3 {
            scale: s_inv,
            rotation: r_inv,
            translation: -(r_inv * self.translation) * s_inv,
        }
    }

    /// Local chart `(log R, t, ln s)` used for residuals and updates.
    pub fn log(&self) -> Vector7 {
        let w = so3::log_rotation(&self.rotation);
        let t = self.translation;
        Vector7::from_column_slice(&[w.x, w.y, w.z, t.x, t.y, t.z, self.scale.ln()])
    }

    /// Inverse of [`Sim3::log`].
    pub fn exp(v: &Vector7) -> Sim3 {
        Sim3 {
            scale: v[6].exp(),
            rotation: so3::exp(&Vector3::new(v[0], v[1], v[2])),
            translation: Vector3::new(v[3], v[4], v[5]),
        }
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        self.scale > 0.0
            && self.scale.is_finite()
            && so3::check_rotation(self.rotation.matrix(), tol).is_ok()
            && self.translation.iter().all(|v| v.is_finite())
    }
}
