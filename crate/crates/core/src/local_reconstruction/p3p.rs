//! Camera pose from 2D-3D correspondences: the three-point solver and its RANSAC wrapper.

use nalgebra::{Matrix3, Matrix6, Rotation3, Vector2, Vector3, Vector6};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{so3, CameraPose, Intrinsics};
use crate::registration::estimate::ransac_iterations;

/// Real roots of `c[0] + c[1] x + ... + c[n] x^n`, polished by Newton steps.
pub fn real_roots(c: &[f64]) -> Vec<f64> {
    let mut c = c.to_vec();
    let scale = c.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    while c.len() > 1 && c.last().unwrap().abs() <= 1e-14 * scale {
        c.pop();
    }
    let n = c.len() - 1;
    match n {
        0 => return Vec::new(),
        1 => return vec![-c[0] / c[1]],
        _ => {}
    }
    let lead = c[n];
    let mut comp = nalgebra::DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        comp[(0, k)] = -c[n - 1 - k] / lead;
        if k + 1 < n {
            comp[(k + 1, k)] = 1.0;
        }
    }
    let eval = |x: f64| c.iter().rev().fold(0.0, |acc, a| acc * x + a);
    let deriv = |x: f64| c.iter().enumerate().skip(1).rev().fold(0.0, |acc, (k, a)| acc * x + k as f64 * a);
    comp.complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() <= 1e-6 * (1.0 + z.re.abs()))
        .map(|z| {
            let mut x = z.re;
            for _ in 0..4 {
                let d = deriv(x);
                if d.abs() < 1e-300 {
                    break;
                }
                x -= eval(x) / d;
            }
            x
        })
        .collect()
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_add(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len().max(b.len())];
    for (k, x) in a.iter().enumerate() {
        out[k] += x;
    }
    for (k, x) in b.iter().enumerate() {
        out[k] += x;
    }
    out
}

/// Rigid `R, t` with `y ~ R x + t` (Kabsch).
pub fn rigid_align(x: &[Vector3<f64>], y: &[Vector3<f64>]) -> Option<(Rotation3<f64>, Vector3<f64>)> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<Vector3<f64>>() / n;
    let my = y.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (a, b) in x.iter().zip(y) {
        h += (b - my) * (a - mx).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * vt;
    if !r.iter().all(|v| v.is_finite()) {
        return None;
    }
    let r = Rotation3::from_matrix_unchecked(r);
    Some((r, my - r * mx))
}

/// Newton steps on the three side-length equations `|d_i f_i - d_j f_j|^2 = l_ij^2`;
/// the quartic's roots lose accuracy near double roots.
fn polish_depths(mut d: [f64; 3], f: &[Vector3<f64>; 3], sides: [f64; 3]) -> [f64; 3] {
    // sides: a2 = |x1 - x2|^2, b2 = |x0 - x2|^2, c2 = |x0 - x1|^2
    let pairs = [(1, 2), (0, 2), (0, 1)];
    for _ in 0..5 {
        let mut jac = nalgebra::Matrix3::zeros();
        let mut res = Vector3::zeros();
        for (row, (i, j)) in pairs.iter().enumerate() {
            let cij = f[*i].dot(&f[*j]);
            res[row] = d[*i] * d[*i] + d[*j] * d[*j] - 2.0 * d[*i] * d[*j] * cij - sides[row];
            jac[(row, *i)] = 2.0 * d[*i] - 2.0 * d[*j] * cij;
            jac[(row, *j)] = 2.0 * d[*j] - 2.0 * d[*i] * cij;
        }
        let Some(step) = jac.lu().solve(&res) else { break };
        let next = [d[0] - step[0], d[1] - step[1], d[2] - step[2]];
        if next.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            break;
        }
        d = next;
        if step.norm() < 1e-15 * (d[0] + d[1] + d[2]) {
            break;
        }
    }
    d
}

/// All poses consistent with three unit bearings `f` observing world points `x`.
///
/// Depths along the bearings are `s1, u s1, v s1`; the law of cosines on the three
/// triangle sides gives `u` as a rational function of `v` and a quartic in `v`.
pub fn p3p(f: &[Vector3<f64>; 3], x: &[Vector3<f64>; 3]) -> Vec<CameraPose> {
    let a2 = (x[1] - x[2]).norm_squared();
    let b2 = (x[0] - x[2]).norm_squared();
    let c2 = (x[0] - x[1]).norm_squared();
    if a2 < 1e-24 || b2 < 1e-24 || c2 < 1e-24 {
        return Vec::new();
    }
    let ca = f[1].dot(&f[2]);
    let cb = f[0].dot(&f[2]);
    let cg = f[0].dot(&f[1]);
    let k = (a2 - c2) / b2;
    // u = N(v) / D(v)
    let num = [1.0 + k, -2.0 * k * cb, k - 1.0];
    let den = [2.0 * cg, -2.0 * ca];
    // 1 + u^2 - 2u cg = (c2/b2)(1 + v^2 - 2 v cb), multiplied by D^2
    let q = [1.0, -2.0 * cb, 1.0];
    let rhs: Vec<f64> = q.iter().map(|t| -t * c2 / b2).collect();
    let d2 = poly_mul(&den, &den);
    let quartic = poly_add(
        &poly_add(&poly_mul(&num, &num), &poly_mul(&poly_mul(&num, &den), &[-2.0 * cg])),
        &poly_mul(&d2, &poly_add(&[1.0], &rhs)),
    );
    let mut out = Vec::new();
    for v in real_roots(&quartic) {
        let d = den[0] + den[1] * v;
        if d.abs() < 1e-12 {
            continue;
        }
        let u = (num[0] + num[1] * v + num[2] * v * v) / d;
        let denom = 1.0 + v * v - 2.0 * v * cb;
        if !(denom > 0.0) || u <= 0.0 || v <= 0.0 {
            continue;
        }
        let s1 = (b2 / denom).sqrt();
        let d = polish_depths([s1, u * s1, v * s1], f, [a2, b2, c2]);
        let cam = [f[0] * d[0], f[1] * d[1], f[2] * d[2]];
        let Some((r, t)) = rigid_align(x, &cam) else { continue };
        out.push(CameraPose::from_rotation_translation(r, t));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbsolutePoseConfig {
    pub threshold_px: f64,
    pub confidence: f64,
    pub max_iterations: usize,
    /// Below this inlier ratio the view is rejected.
    pub min_inlier_ratio: f64,
    pub min_inliers: usize,
}

impl Default for AbsolutePoseConfig {
    fn default() -> Self {
        Self { threshold_px: 4.0, confidence: 0.999, max_iterations: 1000, min_inlier_ratio: 0.5, min_inliers: 6 }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error, Serialize, Deserialize)]
pub enum RegistrationError {
    #[error("only {0} usable 2D-3D matches")]
    Deferred(usize),
    #[error("inlier ratio {ratio:.2} with {inliers} inliers")]
    Rejected { ratio: f64, inliers: usize },
}

fn inliers(pose: &CameraPose, intr: &Intrinsics, corr: &[(Vector2<f64>, Vector3<f64>)], thr: f64) -> Vec<usize> {
    corr.iter()
        .enumerate()
        .filter(|(_, (px, x))| {
            let p = pose.to_camera(x);
            p.z > 1e-9 && intr.project(&p).is_some_and(|q| (q - px).norm() < thr)
        })
        .map(|(k, _)| k)
        .collect()
}

/// Gauss-Newton on reprojection error of one camera with fixed points.
pub fn refine_pose(pose: &CameraPose, intr: &Intrinsics, corr: &[(Vector2<f64>, Vector3<f64>)]) -> CameraPose {
    let cost = |p: &CameraPose| -> f64 {
        corr.iter()
            .map(|(px, x)| {
                let c = p.to_camera(x);
                if c.z <= 1e-9 {
                    return 1e12;
                }
                (intr.project(&c).unwrap() - px).norm_squared()
            })
            .sum()
    };
    let mut best = *pose;
    let mut best_cost = cost(&best);
    let mut lambda = 1e-3;
    for _ in 0..20 {
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        for (px, x) in corr {
            let c = best.to_camera(x);
            if c.z <= 1e-9 {
                continue;
            }
            let r = intr.project(&c).unwrap() - px;
            let jp = intr.projection_jacobian(&c);
            let mut j = nalgebra::Matrix2x6::zeros();
            j.fixed_view_mut::<2, 3>(0, 0).copy_from(&(jp * -so3::hat(&c)));
            j.fixed_view_mut::<2, 3>(0, 3).copy_from(&(jp * -best.rotation.matrix()));
            h += j.transpose() * j;
            g += j.transpose() * r;
        }
        let mut improved = false;
        for _ in 0..5 {
            let mut hd = h;
            for k in 0..6 {
                hd[(k, k)] += lambda * h[(k, k)] + 1e-12;
            }
            let Some(step) = hd.cholesky().map(|c| c.solve(&(-g))) else {
                lambda *= 10.0;
                continue;
            };
            let trial = CameraPose::new(
                so3::exp(&step.fixed_rows::<3>(0).into_owned()) * best.rotation,
                best.center + step.fixed_rows::<3>(3),
            );
            let c = cost(&trial);
            if c < best_cost {
                let rel = (best_cost - c) / best_cost.max(1e-300);
                best = trial;
                best_cost = c;
                lambda = (lambda * 0.3).max(1e-9);
                improved = rel > 1e-12;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    best
}

/// RANSAC over minimal three-point samples, then refinement on the consensus set.
pub fn ransac_absolute_pose(
    corr: &[(Vector2<f64>, Vector3<f64>)],
    intr: &Intrinsics,
    cfg: &AbsolutePoseConfig,
    seed: u64,
) -> Result<(CameraPose, Vec<usize>), RegistrationError> {
    if corr.len() < 4 {
        return Err(RegistrationError::Deferred(corr.len()));
    }
    let bearings: Vec<Vector3<f64>> = corr.iter().map(|(px, _)| intr.bearing(px)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: (Vec<usize>, CameraPose) = (Vec::new(), CameraPose::identity());
    let mut needed = cfg.max_iterations;
    let mut it = 0;
    while it < needed {
        it += 1;
        let idx = sample(&mut rng, corr.len(), 3);
        let f = [bearings[idx.index(0)], bearings[idx.index(1)], bearings[idx.index(2)]];
        let x = [corr[idx.index(0)].1, corr[idx.index(1)].1, corr[idx.index(2)].1];
        for pose in p3p(&f, &x) {
            let inl = inliers(&pose, intr, corr, cfg.threshold_px);
            if inl.len() > best.0.len() {
                best = (inl, pose);
                let ratio = best.0.len() as f64 / corr.len() as f64;
                needed = ransac_iterations(ratio, 3, cfg.confidence, cfg.max_iterations);
            }
        }
    }
    let mut pose = best.1;
    let mut inl = best.0;
    for _ in 0..3 {
        if inl.len() < 3 {
            break;
        }
        let sub: Vec<_> = inl.iter().map(|k| corr[*k]).collect();
        pose = refine_pose(&pose, intr, &sub);
        let next = inliers(&pose, intr, corr, cfg.threshold_px);
        if next == inl {
            break;
        }
        inl = next;
    }
    let ratio = inl.len() as f64 / corr.len() as f64;
    if ratio < cfg.min_inlier_ratio || inl.len() < cfg.min_inliers.max(3) {
        return Err(RegistrationError::Rejected { ratio, inliers: inl.len() });
    }
    Ok((pose, inl))
}
