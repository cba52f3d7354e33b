//! Scoring a model against ground truth with the outlier-camera metric.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::scene::Scene;
use crate::registration::estimate_sim3_closed_form;

/// Counts reported per timestep.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub clusters_raw: usize,
    pub clusters_effective: usize,
    pub registered_cameras: usize,
    pub outlier_cameras: usize,
    /// Registered cameras in components too small to align.
    pub unaligned_cameras: usize,
    pub recoveries: usize,
    pub rmse_to_truth: f64,
}

/// Cameras placed in one common frame: `(scene camera index, center)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelComponent {
    pub cameras: Vec<(u32, Vector3<f64>)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub registered: usize,
    pub outliers: usize,
    pub unaligned: usize,
    /// Over aligned cameras, in scene units.
    pub rmse: f64,
    /// Half the smallest ground-truth camera distance.
    pub outlier_radius: f64,
    /// Outlier scene camera indices, ascending.
    pub outlier_ids: Vec<u32>,
}

/// Aligns each component to the truth by a similarity on camera centers and counts
/// cameras whose aligned error exceeds half the smallest true inter-camera distance.
pub fn evaluate(components: &[ModelComponent], scene: &Scene) -> Evaluation {
    let radius = 0.5 * scene.min_camera_distance();
    let mut ev = Evaluation { outlier_radius: radius, ..Default::default() };
    let mut sq = 0.0;
    let mut aligned = 0usize;
    for comp in components {
        ev.registered += comp.cameras.len();
        let pairs: Vec<(Vector3<f64>, Vector3<f64>)> = comp
            .cameras
            .iter()
            .map(|(c, p)| (*p, scene.cameras[*c as usize].pose.center))
            .collect();
        let Ok(t) = estimate_sim3_closed_form(&pairs) else {
            ev.unaligned += comp.cameras.len();
            continue;
        };
        for ((cam, _), (x, y)) in comp.cameras.iter().zip(&pairs) {
            let e = (t.transform_point(x) - y).norm();
            sq += e * e;
            aligned += 1;
            if e > radius {
                ev.outliers += 1;
                ev.outlier_ids.push(*cam);
            }
        }
    }
    ev.outlier_ids.sort_unstable();
    ev.rmse = if aligned > 0 { (sq / aligned as f64).sqrt() } else { 0.0 };
    ev
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Sim3;
    use crate::simulator::scene::{generate_temple, symmetry_rotation, SceneParams};
    use nalgebra::{Matrix3, Rotation3};

    fn scene() -> Scene {
        generate_temple(&SceneParams::default(), 3).unwrap()
    }

    fn truth_component(scene: &Scene, t: &Sim3) -> ModelComponent {
        ModelComponent {
            cameras: scene.cameras.iter().enumerate().map(|(i, c)| (i as u32, t.transform_point(&c.pose.center))).collect(),
        }
    }

    #[test]
    fn exact_model_has_no_outliers() {
        let s = scene();
        let t = Sim3::new(0.3, Rotation3::from_euler_angles(0.1, 0.2, 0.3), Vector3::new(1.0, 2.0, 3.0));
        let ev = evaluate(&[truth_component(&s, &t)], &s);
        assert_eq!(ev.outliers, 0);
        assert_eq!(ev.registered, 60);
        assert!(ev.rmse < 1e-9);
    }

    #[test]
    fn one_displaced_camera_is_one_outlier() {
        let s = scene();
        let mut c = truth_component(&s, &Sim3::identity());
        c.cameras[17].1 += Vector3::new(0.0, 0.0, 10.0 * 0.5 * s.min_camera_distance());
        let ev = evaluate(&[c], &s);
        assert_eq!(ev.outliers, 1);
        assert_eq!(ev.outlier_ids, vec![17]);
    }

    #[test]
    fn small_components_are_unaligned() {
        let s = scene();
        let c = ModelComponent { cameras: vec![(0, Vector3::zeros()), (1, Vector3::x())] };
        let ev = evaluate(&[c], &s);
        assert_eq!((ev.registered, ev.unaligned, ev.outliers), (2, 2, 0));
    }

    /// Independent least-squares alignment: rigid part from an SVD of the centered
    /// cross-covariance, scale from the projected spread.
    fn brute_force_outliers(model: &[(u32, Vector3<f64>)], s: &Scene) -> usize {
        let n = model.len() as f64;
        let xs: Vec<Vector3<f64>> = model.iter().map(|m| m.1).collect();
        let ys: Vec<Vector3<f64>> = model.iter().map(|m| s.cameras[m.0 as usize].pose.center).collect();
        let mx = xs.iter().sum::<Vector3<f64>>() / n;
        let my = ys.iter().sum::<Vector3<f64>>() / n;
        let mut h = Matrix3::zeros();
        for (x, y) in xs.iter().zip(&ys) {
            h += (x - mx) * (y - my).transpose();
        }
        let svd = h.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut d = Matrix3::identity();
        if (vt.transpose() * u.transpose()).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        let r = vt.transpose() * d * u.transpose();
        let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - my).dot(&(r * (x - mx)))).sum();
        let den: f64 = xs.iter().map(|x| (x - mx).norm_squared()).sum();
        let scale = num / den;
        let radius = 0.5 * s.min_camera_distance();
        xs.iter().zip(&ys).filter(|(x, y)| (scale * r * (*x - mx) + my - *y).norm() > radius).count()
    }

    #[test]
    fn symmetry_flipped_part_is_counted() {
        let s = scene();
        // the last symmetry sector folded one step back onto its neighbor; least squares
        // alignment spreads part of that error onto the correct cameras
        let flip = symmetry_rotation(6, -1);
        let c = ModelComponent {
            cameras: s
                .cameras
                .iter()
                .enumerate()
                .map(|(i, cam)| (i as u32, if i >= 50 { flip * cam.pose.center } else { cam.pose.center }))
                .collect(),
        };
        let ev = evaluate(&[c.clone()], &s);
        assert_eq!(ev.outliers, brute_force_outliers(&c.cameras, &s));
        assert!(ev.outliers >= 10 && ev.outliers < 60, "{}", ev.outliers);
    }
}
