//! Noisy Sim(3) pose graphs on a ring of cluster frames.

use std::collections::BTreeMap;

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::clustering::ClusterId;
use crate::geometry::{so3, Sim3, Vector7};
use crate::registration::pose_graph::ClusterGraph;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterRingParams {
    pub clusters: usize,
    pub radius: f64,
    /// Standard deviation of every chart component of the constraint noise
    /// (translation components relative to `radius`).
    pub sigma: f64,
    /// Add chords `(k, k + n/2)` so that loops overlap.
    pub chords: bool,
    /// Replace one ring constraint by a gross outlier.
    pub outlier: bool,
}

impl Default for ClusterRingParams {
    fn default() -> Self {
        Self { clusters: 6, radius: 10.0, sigma: 0.01, chords: true, outlier: true }
    }
}

#[derive(Debug, Clone)]
pub struct ClusterRing {
    pub graph: ClusterGraph,
    /// World-from-cluster ground truth with cluster 0 at the identity.
    pub truth: BTreeMap<ClusterId, Sim3>,
    pub outlier_edge: Option<(ClusterId, ClusterId)>,
}

fn noise(rng: &mut ChaCha8Rng, sigma: f64, baseline: f64) -> Sim3 {
    let mut v = Vector7::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal) * sigma);
    for k in 3..6 {
        v[k] *= baseline;
    }
    Sim3::exp(&v)
}

pub fn generate_cluster_ring(params: &ClusterRingParams, seed: u64) -> ClusterRing {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = params.clusters;
    let mut truth = BTreeMap::new();
    for k in 0..n {
        let pose = if k == 0 {
            Sim3::identity()
        } else {
            let phi = std::f64::consts::TAU * k as f64 / n as f64;
            Sim3::new(
                rng.random_range(0.5..2.0),
                so3::exp(&Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), phi)),
                Vector3::new(params.radius * (phi.cos() - 1.0), params.radius * phi.sin(), rng.random_range(-1.0..1.0)),
            )
        };
        truth.insert(ClusterId(k as u32), pose);
    }
    let mut pairs: Vec<(usize, usize)> = (0..n).map(|k| (k, (k + 1) % n)).collect();
    if params.chords {
        pairs.extend((0..n / 2).map(|k| (k, k + n / 2)));
    }
    let outlier_edge = params.outlier.then(|| (ClusterId(2), ClusterId(3)));
    let mut graph = ClusterGraph::default();
    for (a, b) in pairs {
        let (ca, cb) = (ClusterId(a as u32), ClusterId(b as u32));
        let exact = truth[&ca].inverse().compose(&truth[&cb]);
        let mut measured = exact.compose(&noise(&mut rng, params.sigma, params.radius));
        if outlier_edge == Some((ca.min(cb), ca.max(cb))) {
            let gross = Sim3::new(0.5, Rotation3::from_axis_angle(&Vector3::x_axis(), 0.8), Vector3::new(0.5, -0.3, 0.2) * params.radius);
            measured = measured.compose(&gross);
        }
        graph.add_constraint(ca, cb, measured, 100);
    }
    ClusterRing { graph, truth, outlier_edge }
}

/// Chart distance between estimated and true poses, translation relative to `radius`.
pub fn pose_error(estimate: &Sim3, truth: &Sim3, radius: f64) -> f64 {
    let mut e = truth.inverse().compose(estimate).log();
    for k in 3..6 {
        e[k] /= radius;
    }
    e.norm()
}
