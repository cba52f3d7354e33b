pub mod camera;
pub mod sim3;
pub mod so3;

pub use camera::{CameraPose, Intrinsics};
pub use sim3::{Sim3, Vector7};
pub use so3::RotationVector;

use nalgebra::{Quaternion, Rotation3, UnitQuaternion};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("matrix is not orthonormal (max deviation {deviation:.3e})")]
    NotOrthonormal { deviation: f64 },
    #[error("matrix has negative determinant")]
    Reflection,
}

/// Rotation as a `[w, x, y, z]` quaternion.
pub fn rotation_to_wxyz(r: &Rotation3<f64>) -> [f64; 4] {
    let q = UnitQuaternion::from_rotation_matrix(r);
    let q = if q.w < 0.0 { -q.into_inner() } else { q.into_inner() };
    [q.w, q.i, q.j, q.k]
}

pub fn rotation_from_wxyz(q: [f64; 4]) -> Rotation3<f64> {
    UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3])).to_rotation_matrix()
}
