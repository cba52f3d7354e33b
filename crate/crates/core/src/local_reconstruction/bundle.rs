//! Levenberg-Marquardt bundle adjustment over poses and points, with the points
//! eliminated through the Schur complement.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix2x6, Matrix3, Matrix6, Matrix6x3, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::LocalReconstruction;
use crate::geometry::{so3, CameraPose, Intrinsics};
use crate::viewgraph::ViewId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BundleConfig {
    pub max_iterations: usize,
    /// Stop once an accepted step lowers the cost by less than this fraction.
    pub relative_tolerance: f64,
    pub initial_lambda: f64,
}

impl Default for BundleConfig {
    fn default() -> Self {
        Self { max_iterations: 50, relative_tolerance: 1e-8, initial_lambda: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BundleScope {
    Full,
    /// These cameras and every point they observe; other cameras stay fixed.
    Local(BTreeSet<ViewId>),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BundleReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Accepted steps.
    pub iterations: usize,
    /// Cost after every accepted step, starting with the initial cost.
    pub costs: Vec<f64>,
    pub observations: usize,
}

/// Projection of `x` and its Jacobians with respect to the camera update
/// `(w, dc)` (`R <- exp(w) R`, `c <- c + dc`) and the point.
pub fn observation_jacobian(
    pose: &CameraPose,
    intr: &Intrinsics,
    x: &Vector3<f64>,
) -> Option<(Vector2<f64>, Matrix2x6<f64>, Matrix2x3<f64>)> {
    let p = pose.to_camera(x);
    if p.z <= 1e-9 {
        return None;
    }
    let proj = intr.project(&p)?;
    let jp = intr.projection_jacobian(&p);
    let r = pose.rotation.matrix();
    let mut jc = Matrix2x6::zeros();
    jc.fixed_view_mut::<2, 3>(0, 0).copy_from(&(jp * -so3::hat(&p)));
    jc.fixed_view_mut::<2, 3>(0, 3).copy_from(&(jp * -r));
    Some((proj, jc, jp * r))
}

/// Applies a camera update in the parametrization of [`observation_jacobian`].
pub fn apply_camera_update(pose: &CameraPose, d: &Vector6<f64>) -> CameraPose {
    CameraPose::new(
        so3::exp(&d.fixed_rows::<3>(0).into_owned()) * pose.rotation,
        pose.center + d.fixed_rows::<3>(3),
    )
}

struct Obs {
    cam: ViewId,
    point: usize,
    pixel: Vector2<f64>,
}

struct FreeCamera {
    view: ViewId,
    /// Maps the reduced parameters to `(w, dc)`; zero columns are unused.
    basis: Matrix6<f64>,
    padded: Vec<usize>,
}

fn total_cost(
    poses: &BTreeMap<ViewId, CameraPose>,
    intrinsics: &BTreeMap<ViewId, Intrinsics>,
    points: &[Vector3<f64>],
    obs: &[Obs],
) -> f64 {
    let mut c = 0.0;
    for o in obs {
        let p = poses[&o.cam].to_camera(&points[o.point]);
        if p.z <= 1e-9 {
            return f64::INFINITY;
        }
        c += (intrinsics[&o.cam].project(&p).unwrap() - o.pixel).norm_squared();
    }
    c
}

/// Minimizes the summed squared pixel reprojection error of the triangulated tracks.
///
/// Gauge: the reconstruction's fixed camera never moves and the scale camera's center
/// only moves orthogonally to the baseline, which is then renormalized to its length.
pub fn bundle_adjust(recon: &mut LocalReconstruction, scope: &BundleScope, cfg: &BundleConfig) -> BundleReport {
    let gauge = recon.gauge;
    let free_views: Vec<ViewId> = match scope {
        BundleScope::Full => recon.poses.keys().copied().collect(),
        BundleScope::Local(s) => s.iter().filter(|v| recon.poses.contains_key(v)).copied().collect(),
    };
    let free_views: Vec<ViewId> = free_views.into_iter().filter(|v| gauge.map_or(true, |g| g.fixed != *v)).collect();
    let free_set: BTreeSet<ViewId> = free_views.iter().copied().collect();

    // point slots
    let mut track_of: Vec<usize> = Vec::new();
    let mut points: Vec<Vector3<f64>> = Vec::new();
    let mut obs: Vec<Obs> = Vec::new();
    for (ti, t) in recon.tracks.iter().enumerate() {
        let Some(x) = t.point.filter(|_| t.is_triangulated()) else { continue };
        let in_scope = match scope {
            BundleScope::Full => true,
            BundleScope::Local(_) => t.observations.keys().any(|v| free_set.contains(v)),
        };
        if !in_scope {
            continue;
        }
        let slot = points.len();
        let mut any = false;
        for (v, o) in &t.observations {
            let Some(pose) = recon.poses.get(v) else { continue };
            if pose.to_camera(&x).z <= 1e-9 {
                continue;
            }
            obs.push(Obs { cam: *v, point: slot, pixel: o.pixel });
            any = true;
        }
        if any {
            track_of.push(ti);
            points.push(x);
        }
    }

    let baseline = gauge.and_then(|g| Some((g, recon.poses.get(&g.scale)?.center - recon.poses.get(&g.fixed)?.center)));
    let cams: Vec<FreeCamera> = free_views
        .iter()
        .map(|v| {
            let mut basis = Matrix6::identity();
            let mut padded = Vec::new();
            if let Some((g, b)) = baseline {
                if g.scale == *v && b.norm() > 0.0 {
                    let n = b.normalize();
                    let a = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
                    let e1 = n.cross(&a).normalize();
                    let e2 = n.cross(&e1);
                    let mut block = Matrix3::zeros();
                    block.set_column(0, &e1);
                    block.set_column(1, &e2);
                    basis.fixed_view_mut::<3, 3>(3, 3).copy_from(&block);
                    padded.push(5);
                }
            }
            FreeCamera { view: *v, basis, padded }
        })
        .collect();
    let cam_slot: BTreeMap<ViewId, usize> = cams.iter().enumerate().map(|(k, c)| (c.view, k)).collect();
    let nc = cams.len();

    let mut poses = recon.poses.clone();
    let mut cost = total_cost(&poses, &recon.intrinsics, &points, &obs);
    let mut report = BundleReport { initial_cost: cost, final_cost: cost, costs: vec![cost], observations: obs.len(), ..Default::default() };
    if obs.is_empty() || !(cost > 1e-24) {
        return report;
    }
    let mut by_point: Vec<Vec<usize>> = vec![Vec::new(); points.len()];
    for (k, o) in obs.iter().enumerate() {
        by_point[o.point].push(k);
    }

    let mut lambda = cfg.initial_lambda;
    for _ in 0..cfg.max_iterations {
        // linearize
        let mut u = DMatrix::<f64>::zeros(6 * nc, 6 * nc);
        let mut gc = DVector::<f64>::zeros(6 * nc);
        let mut vblocks: Vec<Matrix3<f64>> = vec![Matrix3::zeros(); points.len()];
        let mut gp: Vec<Vector3<f64>> = vec![Vector3::zeros(); points.len()];
        let mut w: Vec<Vec<(usize, Matrix6x3<f64>)>> = vec![Vec::new(); points.len()];
        for (pi, list) in by_point.iter().enumerate() {
            for k in list {
                let o = &obs[*k];
                let (proj, jc, jx) = observation_jacobian(&poses[&o.cam], &recon.intrinsics[&o.cam], &points[pi]).unwrap();
                let r = proj - o.pixel;
                vblocks[pi] += jx.transpose() * jx;
                gp[pi] += jx.transpose() * r;
                if let Some(&s) = cam_slot.get(&o.cam) {
                    let jr = jc * cams[s].basis;
                    let mut ublk = u.fixed_view_mut::<6, 6>(6 * s, 6 * s);
                    ublk += jr.transpose() * jr;
                    let mut gblk = gc.fixed_rows_mut::<6>(6 * s);
                    gblk += jr.transpose() * r;
                    w[pi].push((s, jr.transpose() * jx));
                }
            }
        }

        let mut accepted = false;
        for _ in 0..10 {
            let mut s_mat = u.clone();
            for d in 0..6 * nc {
                s_mat[(d, d)] += lambda * u[(d, d)] + 1e-12;
            }
            for (k, c) in cams.iter().enumerate() {
                for p in &c.padded {
                    s_mat[(6 * k + p, 6 * k + p)] += 1.0;
                }
            }
            let mut rhs = -gc.clone();
            let mut vinv: Vec<Matrix3<f64>> = Vec::with_capacity(points.len());
            let mut ok = true;
            for pi in 0..points.len() {
                let mut v = vblocks[pi];
                for d in 0..3 {
                    v[(d, d)] += lambda * v[(d, d)] + 1e-9;
                }
                let Some(vi) = v.try_inverse() else {
                    ok = false;
                    break;
                };
                for (s1, w1) in &w[pi] {
                    let wv = w1 * vi;
                    let mut r = rhs.fixed_rows_mut::<6>(6 * s1);
                    r += wv * gp[pi];
                    for (s2, w2) in &w[pi] {
                        let mut blk = s_mat.fixed_view_mut::<6, 6>(6 * s1, 6 * s2);
                        blk -= wv * w2.transpose();
                    }
                }
                vinv.push(vi);
            }
            let dc = if !ok {
                None
            } else if nc == 0 {
                Some(DVector::zeros(0))
            } else {
                s_mat.cholesky().map(|ch| ch.solve(&rhs))
            };
            let Some(dc) = dc else {
                lambda *= 10.0;
                continue;
            };
            let mut trial_poses = poses.clone();
            for (k, c) in cams.iter().enumerate() {
                let d = c.basis * dc.fixed_rows::<6>(6 * k);
                let p = trial_poses.get_mut(&c.view).unwrap();
                *p = apply_camera_update(p, &d);
            }
            if let Some((g, b)) = baseline {
                if let (Some(f), Some(s)) = (trial_poses.get(&g.fixed).copied(), trial_poses.get_mut(&g.scale)) {
                    let cur = s.center - f.center;
                    if cur.norm() > 0.0 {
                        s.center = f.center + cur * (b.norm() / cur.norm());
                    }
                }
            }
            let mut trial_points = points.clone();
            for pi in 0..points.len() {
                let mut acc = -gp[pi];
                for (s, wm) in &w[pi] {
                    acc -= wm.transpose() * dc.fixed_rows::<6>(6 * s);
                }
                trial_points[pi] += vinv[pi] * acc;
            }
            let c = total_cost(&trial_poses, &recon.intrinsics, &trial_points, &obs);
            if c < cost {
                let rel = (cost - c) / cost;
                poses = trial_poses;
                points = trial_points;
                cost = c;
                report.costs.push(c);
                report.iterations += 1;
                lambda = (lambda * 0.3).max(1e-12);
                accepted = rel >= cfg.relative_tolerance && c > 1e-24;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    report.final_cost = cost;
    recon.poses = poses;
    for (slot, ti) in track_of.iter().enumerate() {
        recon.tracks[*ti].point = Some(points[slot]);
    }
    report
}
