use nalgebra::{Matrix2x3, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

/// Pinhole intrinsics in pixels. No distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self { fx, fy, cx, cy }
    }

    /// Projects a point given in camera coordinates. `None` when not in front.
    pub fn project(&self, p_cam: &Vector3<f64>) -> Option<Vector2<f64>> {
        if p_cam.z <= 1e-12 {
            return None;
        }
        Some(Vector2::new(
            self.fx * p_cam.x / p_cam.z + self.cx,
            self.fy * p_cam.y / p_cam.z + self.cy,
        ))
    }

    /// Unit bearing vector of a pixel in camera coordinates.
    pub fn bearing(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new(
            (pixel.x - self.cx) / self.fx,
            (pixel.y - self.cy) / self.fy,
            1.0,
        )
        .normalize()
    }

    /// Jacobian of the projection with respect to the camera-frame point.
    pub fn projection_jacobian(&self, p_cam: &Vector3<f64>) -> Matrix2x3<f64> {
        let iz = 1.0 / p_cam.z;
        let iz2 = iz * iz;
        Matrix2x3::new(
            self.fx * iz,
            0.0,
            -self.fx * p_cam.x * iz2,
            0.0,
            self.fy * iz,
            -self.fy * p_cam.y * iz2,
        )
    }
}

/// World-to-camera rotation plus camera center in world coordinates:
/// `x_cam = R (X - c)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub rotation: Rotation3<f64>,
    pub center: Vector3<f64>,
}

impl CameraPose {
    pub fn new(rotation: Rotation3<f64>, center: Vector3<f64>) -> Self {
        Self { rotation, center }
    }

    pub fn identity() -> Self {
        Self::new(Rotation3::identity(), Vector3::zeros())
    }

    /// Pose of a camera at `center` looking at `target` with the given world up direction.
    /// Camera axes: x right, y down, z forward.
    pub fn look_at(center: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Self {
        let z = (target - center).normalize();
        let x = z.cross(&up).normalize();
        let y = z.cross(&x);
        let m = nalgebra::Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        Self::new(Rotation3::from_matrix_unchecked(m), center)
    }

    pub fn to_camera(&self, x_world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * (x_world - self.center)
    }

    /// Translation `t = -R c` of the `x_cam = R X + t` form.
    pub fn translation(&self) -> Vector3<f64> {
        -(self.rotation * self.center)
    }

    pub fn from_rotation_translation(rotation: Rotation3<f64>, t: Vector3<f64>) -> Self {
        Self::new(rotation, -(rotation.inverse() * t))
    }

    pub fn project(&self, intr: &Intrinsics, x_world: &Vector3<f64>) -> Option<Vector2<f64>> {
        intr.project(&self.to_camera(x_world))
    }

    /// Optical axis in world coordinates.
    pub fn viewing_direction(&self) -> Vector3<f64> {
        self.rotation.inverse() * Vector3::z()
    }

    /// Relative rotation and unit translation direction mapping frame `self` to frame `other`:
    /// `x_other = R x_self + t`.
    pub fn relative_to(&self, other: &CameraPose) -> (Rotation3<f64>, Vector3<f64>) {
        let r = other.rotation * self.rotation.inverse();
        let t = other.rotation * (self.center - other.center);
        let n = t.norm();
        let dir = if n > 0.0 { t / n } else { Vector3::z() };
        (r, dir)
    }
}
