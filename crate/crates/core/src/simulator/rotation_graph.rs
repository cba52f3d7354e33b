//! Random rotation graphs with planted outlier edges.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Rotation3, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::geometry::so3;
use crate::viewgraph::{RelativeGeometry, SubGraph, ViewId, ViewPair};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationGraphParams {
    pub views: usize,
    /// Probability of each non-ring pair becoming an edge.
    pub chord_probability: f64,
    pub outlier_fraction: f64,
    pub outlier_min_deg: f64,
    pub noise_deg: f64,
}

impl Default for RotationGraphParams {
    fn default() -> Self {
        Self { views: 20, chord_probability: 0.5, outlier_fraction: 0.2, outlier_min_deg: 60.0, noise_deg: 0.5 }
    }
}

#[derive(Debug, Clone)]
pub struct RotationGraphTrial {
    pub subgraph: SubGraph,
    pub truth: BTreeMap<ViewId, Rotation3<f64>>,
    pub outliers: BTreeSet<ViewPair>,
}

pub fn uniform_rotation<R: Rng>(rng: &mut R) -> Rotation3<f64> {
    let q = nalgebra::Quaternion::new(
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    );
    nalgebra::UnitQuaternion::from_quaternion(q).to_rotation_matrix()
}

pub fn random_axis<R: Rng>(rng: &mut R) -> Vector3<f64> {
    let v: Vector3<f64> = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
    v.normalize()
}

/// Isotropic tangent-space noise with per-axis standard deviation `sigma_deg`.
pub fn rotation_noise<R: Rng>(rng: &mut R, sigma_deg: f64) -> Rotation3<f64> {
    let v: Vector3<f64> = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
    so3::exp(&(v * sigma_deg.to_radians()))
}

/// A ring plus random chords over uniformly random rotations. Outliers are drawn
/// so that the inlier graph stays connected and every view keeps at least two
/// thirds of its edges as inliers (otherwise the outliers are not identifiable).
pub fn generate_rotation_graph(params: &RotationGraphParams, seed: u64) -> RotationGraphTrial {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = params.views as u32;
    let truth: BTreeMap<ViewId, Rotation3<f64>> = (0..n).map(|k| (ViewId(k), uniform_rotation(&mut rng))).collect();

    let mut pairs = BTreeSet::new();
    for a in 0..n {
        pairs.insert(ViewPair::new(ViewId(a), ViewId((a + 1) % n)));
    }
    for a in 0..n {
        for b in a + 2..n {
            if rng.random_bool(params.chord_probability) {
                pairs.insert(ViewPair::new(ViewId(a), ViewId(b)));
            }
        }
    }
    let target = (params.outlier_fraction * pairs.len() as f64).round() as usize;
    let mut candidates: Vec<ViewPair> = pairs.iter().copied().collect();
    candidates.shuffle(&mut rng);
    let mut outliers = BTreeSet::new();
    for p in candidates {
        if outliers.len() == target {
            break;
        }
        let degree = |v: ViewId| pairs.iter().filter(|q| q.contains(v)).count();
        let bad = |v: ViewId| outliers.iter().filter(|q: &&ViewPair| q.contains(v)).count();
        if 3 * (bad(p.a) + 1) > degree(p.a) || 3 * (bad(p.b) + 1) > degree(p.b) {
            continue;
        }
        outliers.insert(p);
        let inliers: BTreeSet<ViewPair> = pairs.difference(&outliers).copied().collect();
        if !connected(n, &inliers) {
            outliers.remove(&p);
        }
    }

    let mut edges = BTreeMap::new();
    for p in &pairs {
        let rel = truth[&p.b] * truth[&p.a].inverse();
        let measured = if outliers.contains(p) {
            let angle = rng.random_range(params.outlier_min_deg..180.0).to_radians();
            so3::exp(&(random_axis(&mut rng) * angle)) * rel
        } else {
            rotation_noise(&mut rng, params.noise_deg) * rel
        };
        let inliers = rng.random_range(50..200);
        let geom = RelativeGeometry::new(measured.into_inner(), random_axis(&mut rng), inliers)
            .expect("valid synthetic geometry");
        edges.insert(*p, geom);
    }
    RotationGraphTrial {
        subgraph: SubGraph { views: (0..n).map(ViewId).collect(), edges },
        truth,
        outliers,
    }
}

fn connected(n: u32, edges: &BTreeSet<ViewPair>) -> bool {
    let mut seen = vec![false; n as usize];
    let mut stack = vec![0usize];
    seen[0] = true;
    while let Some(v) = stack.pop() {
        for p in edges {
            let w = if p.a.index() == v {
                p.b.index()
            } else if p.b.index() == v {
                p.a.index()
            } else {
                continue;
            };
            if !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Per-view angular errors (radians) after removing the best right-multiplied gauge.
pub fn rotation_errors_after_gauge(
    estimate: &BTreeMap<ViewId, Rotation3<f64>>,
    truth: &BTreeMap<ViewId, Rotation3<f64>>,
) -> BTreeMap<ViewId, f64> {
    let mut sum = nalgebra::Matrix3::zeros();
    for (v, r) in estimate {
        if let Some(t) = truth.get(v) {
            sum += (t.inverse() * r).into_inner();
        }
    }
    let gauge = so3::project_to_rotation(&sum);
    estimate
        .iter()
        .filter_map(|(v, r)| truth.get(v).map(|t| (*v, so3::angle_between(r, &(t * gauge)))))
        .collect()
}
