//! Sim(3) from 3D-3D correspondences: closed form and RANSAC.

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geometry::Sim3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Sim3Error {
    #[error("need at least 3 correspondences, got {0}")]
    TooFew(usize),
    #[error("degenerate configuration (singular values {0:e}, {1:e})")]
    Degenerate(f64, f64),
    #[error("no model with at least 3 inliers")]
    NoConsensus,
}

/// Least-squares similarity with `y ~ s R x + t` (Umeyama), with a reflection guard.
pub fn estimate_sim3_closed_form(pairs: &[(Vector3<f64>, Vector3<f64>)]) -> Result<Sim3, Sim3Error> {
    let n = pairs.len();
    if n < 3 {
        return Err(Sim3Error::TooFew(n));
    }
    let nf = n as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<Vector3<f64>>() / nf;
    let my = pairs.iter().map(|p| p.1).sum::<Vector3<f64>>() / nf;
    let mut cov = Matrix3::zeros();
    let mut var_x = 0.0;
    for (x, y) in pairs {
        let dx = x - mx;
        cov += (y - my) * dx.transpose();
        var_x += dx.norm_squared();
    }
    cov /= nf;
    var_x /= nf;
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut order = [0usize, 1, 2];
    order.sort_by(|a, b| svd.singular_values[*b].total_cmp(&svd.singular_values[*a]));
    let (s1, s2) = (svd.singular_values[order[0]], svd.singular_values[order[1]]);
    if !(s1 > 0.0) || s2 < 1e-12 * s1 || var_x <= 0.0 {
        return Err(Sim3Error::Degenerate(s1, s2));
    }
    let mut d = Matrix3::identity();
    if (u.determinant() * v_t.determinant()) < 0.0 {
        // flip the axis with the smallest singular value
        d[(order[2], order[2])] = -1.0;
    }
    let r = u * d * v_t;
    let trace: f64 = (0..3).map(|k| svd.singular_values[k] * d[(k, k)]).sum();
    let scale = trace / var_x;
    let rotation = Rotation3::from_matrix_unchecked(r);
    let translation = my - rotation * mx * scale;
    Ok(Sim3 { scale, rotation, translation })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    pub threshold: f64,
    pub confidence: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

impl RansacConfig {
    pub fn new(threshold: f64, seed: u64) -> Self {
        Self { threshold, confidence: 0.999, max_iterations: 1000, seed }
    }
}

fn inliers_of(t: &Sim3, pairs: &[(Vector3<f64>, Vector3<f64>)], threshold: f64) -> Vec<usize> {
    pairs
        .iter()
        .enumerate()
        .filter(|(_, (x, y))| (t.transform_point(x) - y).norm() < threshold)
        .map(|(k, _)| k)
        .collect()
}

/// Standard adaptive iteration bound for a minimal sample of size `m`.
pub fn ransac_iterations(inlier_ratio: f64, m: i32, confidence: f64, cap: usize) -> usize {
    let w = inlier_ratio.powi(m);
    if w <= 0.0 {
        return cap;
    }
    if w >= 1.0 {
        return 1;
    }
    let k = (1.0 - confidence).ln() / (1.0 - w).ln();
    (k.ceil() as usize).clamp(1, cap)
}

/// Minimal 3-pair hypotheses, scored by inlier count, refit on the best consensus set.
pub fn ransac_sim3(
    pairs: &[(Vector3<f64>, Vector3<f64>)],
    cfg: &RansacConfig,
) -> Result<(Sim3, Vec<usize>), Sim3Error> {
    if pairs.len() < 3 {
        return Err(Sim3Error::TooFew(pairs.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Vec<usize> = Vec::new();
    let mut needed = cfg.max_iterations;
    let mut it = 0;
    while it < needed.min(cfg.max_iterations) {
        it += 1;
        let idx = sample(&mut rng, pairs.len(), 3);
        let sample: Vec<_> = idx.iter().map(|k| pairs[k]).collect();
        let Ok(t) = estimate_sim3_closed_form(&sample) else { continue };
        let inl = inliers_of(&t, pairs, cfg.threshold);
        if inl.len() > best.len() {
            best = inl;
            let ratio = best.len() as f64 / pairs.len() as f64;
            needed = ransac_iterations(ratio, 3, cfg.confidence, cfg.max_iterations);
        }
    }
    if best.len() < 3 {
        return Err(Sim3Error::NoConsensus);
    }
    // refit until the consensus set stops changing
    let mut model = estimate_sim3_closed_form(&best.iter().map(|k| pairs[*k]).collect::<Vec<_>>())?;
    for _ in 0..5 {
        let inl = inliers_of(&model, pairs, cfg.threshold);
        if inl.len() < 3 {
            return Err(Sim3Error::NoConsensus);
        }
        if inl == best {
            break;
        }
        best = inl;
        model = estimate_sim3_closed_form(&best.iter().map(|k| pairs[*k]).collect::<Vec<_>>())?;
    }
    Ok((model, best))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::so3;
    use proptest::prelude::*;
    use rand::Rng;

    fn planted() -> Sim3 {
        Sim3::new(2.0, Rotation3::from_axis_angle(&Vector3::z_axis(), 30f64.to_radians()), Vector3::new(1.0, 0.0, 0.0))
    }

    fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn identity_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pairs: Vec<_> = cloud(&mut rng, 10).into_iter().map(|x| (x, x)).collect();
        let t = estimate_sim3_closed_form(&pairs).unwrap();
        assert!((t.scale - 1.0).abs() < 1e-12);
        assert!(so3::angle(&t.rotation) < 1e-12);
        assert!(t.translation.norm() < 1e-12);
    }

    #[test]
    fn recovers_known_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = planted();
        let pairs: Vec<_> = cloud(&mut rng, 12).into_iter().map(|x| (x, g.transform_point(&x))).collect();
        let t = estimate_sim3_closed_form(&pairs).unwrap();
        assert!((t.scale - 2.0).abs() < 1e-9);
        assert!(so3::angle_between(&t.rotation, &g.rotation) < 1e-9);
        assert!((t.translation - g.translation).norm() < 1e-9);
    }

    #[test]
    fn collinear_is_degenerate() {
        let pairs: Vec<_> = (0..3).map(|k| Vector3::new(k as f64, 0.0, 0.0)).map(|x| (x, x * 2.0)).collect();
        assert!(matches!(estimate_sim3_closed_form(&pairs), Err(Sim3Error::Degenerate(..))));
    }

    #[test]
    fn reflection_is_not_returned() {
        // mirrored target: best proper rotation, never det -1
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pairs: Vec<_> = cloud(&mut rng, 10).into_iter().map(|x| (x, Vector3::new(x.x, x.y, -x.z))).collect();
        let t = estimate_sim3_closed_form(&pairs).unwrap();
        assert!((t.rotation.matrix().determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ransac_exact_pairs_all_inliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = planted();
        let pairs: Vec<_> = cloud(&mut rng, 20).into_iter().map(|x| (x, g.transform_point(&x))).collect();
        let (t, inl) = ransac_sim3(&pairs, &RansacConfig::new(0.01, 0)).unwrap();
        assert_eq!(inl.len(), 20);
        assert!((t.scale - 2.0).abs() < 1e-9);
    }

    #[test]
    fn ransac_needs_three() {
        let pairs = vec![(Vector3::zeros(), Vector3::zeros()); 2];
        assert_eq!(ransac_sim3(&pairs, &RansacConfig::new(0.1, 0)).unwrap_err(), Sim3Error::TooFew(2));
    }

    #[test]
    fn ransac_rejects_planted_outliers() {
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let g = planted();
            let mut pairs: Vec<_> = cloud(&mut rng, 50).into_iter().map(|x| (x, g.transform_point(&x))).collect();
            let outliers: Vec<usize> = (0..15).collect();
            for k in &outliers {
                pairs[*k].1 += Vector3::new(rng.random_range(0.5..2.0), rng.random_range(-2.0..2.0), 1.0);
            }
            let (t, inl) = ransac_sim3(&pairs, &RansacConfig::new(0.04, seed)).unwrap();
            assert!(inl.iter().all(|k| *k >= 15), "seed {seed}");
            assert_eq!(inl.len(), 35);
            assert!(so3::angle_between(&t.rotation, &g.rotation) < 1e-9);
        }
    }

    fn arb_rigid() -> impl Strategy<Value = (Rotation3<f64>, Vector3<f64>)> {
        (prop::array::uniform3(-3.0..3.0f64), prop::array::uniform3(-5.0..5.0f64))
            .prop_map(|(w, t)| (so3::exp(&Vector3::from(w)), Vector3::from(t)))
    }

    proptest! {
        /// Moving both clouds by the same rigid motion G conjugates the estimate: G T G^-1.
        #[test]
        fn closed_form_is_equivariant(seed in 0u64..1000, (r, t) in arb_rigid()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let truth = Sim3::new(rng.random_range(0.5..3.0), so3::exp(&Vector3::new(0.3, -0.2, 1.0)), Vector3::new(0.5, 1.0, -2.0));
            let xs = cloud(&mut rng, 8);
            let pairs: Vec<_> = xs.iter().map(|x| (*x, truth.transform_point(x) + Vector3::new(rng.random_range(-0.01..0.01), 0.0, 0.0))).collect();
            let g = Sim3::new(1.0, r, t);
            let moved: Vec<_> = pairs.iter().map(|(x, y)| (g.transform_point(x), g.transform_point(y))).collect();
            let a = estimate_sim3_closed_form(&pairs).unwrap();
            let b = estimate_sim3_closed_form(&moved).unwrap();
            let expected = g.compose(&a).compose(&g.inverse());
            prop_assert!((b.scale - expected.scale).abs() < 1e-9);
            prop_assert!(so3::angle_between(&b.rotation, &expected.rotation) < 1e-9);
            prop_assert!((b.translation - expected.translation).norm() < 1e-8);
        }
    }
}
