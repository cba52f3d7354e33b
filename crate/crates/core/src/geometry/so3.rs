//! Rotation group helpers: Rodrigues exponential and principal logarithm.

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use super::GeometryError;

/// Axis-angle element of so(3): `omega = angle * axis`, radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationVector(pub Vector3<f64>);

impl RotationVector {
    pub fn zero() -> Self {
        Self(Vector3::zeros())
    }

    pub fn angle(&self) -> f64 {
        self.0.norm()
    }

    /// Maps the vector onto the ball of radius pi, flipping to the antipodal
    /// representative when needed.
    pub fn canonicalize(self) -> Self {
        let theta = self.0.norm();
        if theta <= std::f64::consts::PI {
            return self;
        }
        let two_pi = 2.0 * std::f64::consts::PI;
        let axis = self.0 / theta;
        let mut wrapped = theta % two_pi;
        if wrapped > std::f64::consts::PI {
            wrapped -= two_pi;
        }
        Self(axis * wrapped)
    }
}

pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Rodrigues formula. Exact (identity) for a zero vector.
pub fn exp(omega: &Vector3<f64>) -> Rotation3<f64> {
    let theta2 = omega.norm_squared();
    let k = hat(omega);
    let (a, b) = if theta2 < 1e-16 {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Rotation3::from_matrix_unchecked(Matrix3::identity() + k * a + k * k * b)
}

/// Principal logarithm of a rotation known to be valid.
pub fn log_rotation(r: &Rotation3<f64>) -> Vector3<f64> {
    log_unchecked(r.matrix())
}

fn log_unchecked(r: &Matrix3<f64>) -> Vector3<f64> {
    let skew = vee(&(r - r.transpose())) * 0.5;
    let sin_theta = skew.norm();
    let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = sin_theta.atan2(cos_theta);

    if theta < 1e-6 {
        // first-order series: theta / sin(theta) ~ 1 + theta^2 / 6
        return skew * (1.0 + theta * theta / 6.0);
    }
    if std::f64::consts::PI - theta < 1e-3 {
        // near pi: n n^T = (sym - cos I) / (1 - cos); use the largest diagonal column
        let sym = (r + r.transpose()) * 0.5;
        let nnt = (sym - Matrix3::identity() * cos_theta) / (1.0 - cos_theta);
        let mut best = 0;
        for i in 1..3 {
            if nnt[(i, i)] > nnt[(best, best)] {
                best = i;
            }
        }
        let mut axis: Vector3<f64> = nnt.column(best).into_owned();
        axis /= axis.norm();
        if axis.dot(&skew) < 0.0 {
            axis = -axis;
        }
        return axis * theta;
    }
    skew * (theta / sin_theta)
}

/// Principal logarithm with input validation.
pub fn log(r: &Matrix3<f64>) -> Result<RotationVector, GeometryError> {
    check_rotation(r, 1e-6)?;
    Ok(RotationVector(log_unchecked(r)))
}

pub fn check_rotation(r: &Matrix3<f64>, tol: f64) -> Result<(), GeometryError> {
    let err = (r.transpose() * r - Matrix3::identity()).abs().max();
    if !err.is_finite() || err > tol {
        return Err(GeometryError::NotOrthonormal { deviation: err });
    }
    if r.determinant() <= 0.0 {
        return Err(GeometryError::Reflection);
    }
    Ok(())
}

/// Rotation angle of `r` in radians, in [0, pi].
pub fn angle(r: &Rotation3<f64>) -> f64 {
    let m = r.matrix();
    let sin_theta = (vee(&(m - m.transpose())) * 0.5).norm();
    let cos_theta = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    sin_theta.atan2(cos_theta)
}

/// Angle of `a * b^-1` in radians.
pub fn angle_between(a: &Rotation3<f64>, b: &Rotation3<f64>) -> f64 {
    angle(&(a * b.inverse()))
}

/// Re-orthonormalizes a nearly-orthonormal matrix via SVD.
pub fn project_to_rotation(m: &Matrix3<f64>) -> Rotation3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.unwrap();
    let v_t = svd.v_t.unwrap();
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u2 = u;
        u2.column_mut(2).neg_mut();
        r = u2 * v_t;
    }
    Rotation3::from_matrix_unchecked(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn random_rotation(rng: &mut ChaCha8Rng) -> Rotation3<f64> {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
        .normalize();
        exp(&(axis * rng.random_range(0.0..PI)))
    }

    #[test]
    fn exp_of_zero_is_identity() {
        assert_eq!(exp(&Vector3::zeros()).into_inner(), Matrix3::identity());
    }

    #[test]
    fn quarter_turn_about_z_maps_x_to_y() {
        let r = exp(&Vector3::new(0.0, 0.0, FRAC_PI_2));
        let y = r * Vector3::x();
        assert_relative_eq!(y, Vector3::y(), epsilon = 1e-15);
    }

    #[test]
    fn log_identity_is_zero() {
        let w = log(&Matrix3::identity()).unwrap();
        assert_eq!(w.0, Vector3::zeros());
    }

    #[test]
    fn log_half_turn_about_z() {
        let r = Rotation3::from_axis_angle(&Vector3::z_axis(), PI);
        let w = log(r.matrix()).unwrap().0;
        assert_relative_eq!(w.x, 0.0, epsilon = 1e-12);
        assert_relative_eq!(w.y, 0.0, epsilon = 1e-12);
        assert_relative_eq!(w.z.abs(), PI, epsilon = 1e-12);
    }

    #[test]
    fn log_rejects_non_orthonormal() {
        let m = Matrix3::identity() * 1.01;
        assert!(log(&m).is_err());
        let reflect = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(matches!(log(&reflect), Err(GeometryError::Reflection)));
    }

    #[test]
    fn round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let r = random_rotation(&mut rng);
            let back = exp(&log(r.matrix()).unwrap().0);
            assert!((back.matrix() - r.matrix()).abs().max() < 1e-12);
        }
    }

    #[test]
    fn round_trip_near_pi_and_zero() {
        for theta in [1e-9, 1e-7, 1e-5, PI - 1e-2, PI - 1e-4, PI - 1e-7, PI] {
            let axis = Vector3::new(0.3, -0.5, 0.8).normalize();
            let r = exp(&(axis * theta));
            let w = log(r.matrix()).unwrap().0;
            let back = exp(&w);
            assert!((back.matrix() - r.matrix()).abs().max() < 1e-12, "theta {theta}");
        }
    }

    #[test]
    fn log_norm_matches_trace_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let r = random_rotation(&mut rng);
            let expected = ((r.matrix().trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
            let got = log(r.matrix()).unwrap().angle();
            assert!((got - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn canonicalize_wraps_long_vectors() {
        let w = RotationVector(Vector3::new(0.0, 0.0, 1.5 * PI)).canonicalize();
        assert_relative_eq!(w.0.z, -0.5 * PI, epsilon = 1e-12);
        assert!(w.angle() <= PI);
    }
}
