//! Pairwise cluster constraints from inter-cluster edges, filtered by neighborhood
//! similarity in two stages: per edge, then per cluster pair on the pooled support.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::estimate::{ransac_sim3, RansacConfig};
use super::pose_graph::ClusterGraph;
use super::similarity::neighborhood_similarity;
use crate::clustering::{inter_cluster_edges, ClusterId, Partition};
use crate::features::FeatureStore;
use crate::geometry::Sim3;
use crate::local_reconstruction::transfer::{diameter, point_index};
use crate::local_reconstruction::LocalReconstruction;
use crate::par::{self, Execution};
use crate::viewgraph::{ViewGraph, ViewId, ViewPair};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintConfig {
    pub lambda_c: f64,
    /// Inlier distance as a fraction of the destination model's diameter.
    pub threshold_ratio: f64,
    /// Fewest 3D-3D inliers an edge or cluster pair needs.
    pub min_support: usize,
    pub seed: u64,
}

impl Default for ConstraintConfig {
    fn default() -> Self {
        Self { lambda_c: 0.9, threshold_ratio: 0.02, min_support: 6, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeVerdict {
    pub pair: ViewPair,
    pub clusters: (ClusterId, ClusterId),
    /// 3D-3D pairs available on the edge.
    pub support: usize,
    pub inliers: usize,
    pub similarity: Option<f64>,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairVerdict {
    pub a: ClusterId,
    pub b: ClusterId,
    pub edges: usize,
    pub inliers: usize,
    pub similarity: Option<f64>,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub edges: Vec<EdgeVerdict>,
    pub pairs: Vec<PairVerdict>,
}

struct ClusterFrame<'a> {
    points: BTreeMap<(ViewId, u32), Vector3<f64>>,
    centers: Vec<(ViewId, Vector3<f64>)>,
    diameter: f64,
    recon: &'a LocalReconstruction,
}

impl<'a> ClusterFrame<'a> {
    fn new(recon: &'a LocalReconstruction) -> Self {
        let points = point_index(recon, None);
        let pts: Vec<Vector3<f64>> = recon.points().collect();
        Self {
            points,
            centers: recon.poses.iter().map(|(v, p)| (*v, p.center)).collect(),
            diameter: diameter(&pts),
            recon,
        }
    }
}

type PointPairs = Vec<(Vector3<f64>, Vector3<f64>)>;

fn seed_of(base: u64, pair: &ViewPair) -> u64 {
    crate::local_reconstruction::derive_seed(base, ClusterId(pair.a.0), pair.b)
}

/// Fits `a`-from-`b` on `(x_b, x_a)` pairs and scores it; `None` when no consensus.
fn fit(pairs: &PointPairs, fa: &ClusterFrame, fb: &ClusterFrame, cfg: &ConstraintConfig, seed: u64) -> Option<(Sim3, PointPairs, f64)> {
    if pairs.len() < cfg.min_support.max(3) {
        return None;
    }
    let (t, inl) = ransac_sim3(pairs, &RansacConfig::new(cfg.threshold_ratio * fa.diameter, seed)).ok()?;
    if inl.len() < cfg.min_support.max(3) {
        return None;
    }
    let s = neighborhood_similarity(&fb.centers, &fa.centers, &t).s;
    Some((t, inl.iter().map(|k| pairs[*k]).collect(), s))
}

/// Builds the cluster graph over non-empty reconstructions. Every such cluster becomes
/// a node; pairs whose pooled constraint passes the similarity test become edges.
pub fn collect_constraints(
    recons: &BTreeMap<ClusterId, LocalReconstruction>,
    partition: &Partition,
    graph: &ViewGraph,
    features: &FeatureStore,
    cfg: &ConstraintConfig,
    exec: Execution,
) -> (ClusterGraph, ConstraintReport) {
    let frames: BTreeMap<ClusterId, ClusterFrame> =
        recons.iter().filter(|(_, r)| r.poses.len() >= 2).map(|(c, r)| (*c, ClusterFrame::new(r))).collect();
    let mut cg = ClusterGraph::default();
    for c in frames.keys() {
        cg.nodes.insert(*c, Sim3::identity());
    }
    let mut jobs: Vec<(ClusterId, ClusterId, ViewPair)> = Vec::new();
    for ((a, b), pairs) in inter_cluster_edges(partition, graph) {
        if !frames.contains_key(&a) || !frames.contains_key(&b) {
            continue;
        }
        jobs.extend(pairs.into_iter().map(|p| (a, b, p)));
    }

    // stage 1: every edge on its own
    let stage1 = par::map(exec, &jobs, |(a, b, pair)| {
        let (fa, fb) = (&frames[a], &frames[b]);
        let (va, vb) = if fa.recon.poses.contains_key(&pair.a) || partition.cluster_of(pair.a) == Some(*a) {
            (pair.a, pair.b)
        } else {
            (pair.b, pair.a)
        };
        let pairs: PointPairs = features
            .matches_between(va, vb)
            .iter()
            .filter_map(|(f1, f2)| Some((*fb.points.get(&(vb, *f2))?, *fa.points.get(&(va, *f1))?)))
            .collect();
        let res = fit(&pairs, fa, fb, cfg, seed_of(cfg.seed, pair));
        let verdict = EdgeVerdict {
            pair: *pair,
            clusters: (*a, *b),
            support: pairs.len(),
            inliers: res.as_ref().map_or(0, |r| r.1.len()),
            similarity: res.as_ref().map(|r| r.2),
            accepted: res.as_ref().is_some_and(|r| r.2 >= cfg.lambda_c),
        };
        (verdict, res.map(|r| r.1).unwrap_or_default())
    });

    // stage 2: one refit per cluster pair on the pooled inliers of surviving edges
    let mut pooled: BTreeMap<(ClusterId, ClusterId), (usize, PointPairs)> = BTreeMap::new();
    let mut report = ConstraintReport::default();
    for (verdict, inliers) in stage1 {
        if verdict.accepted {
            let e = pooled.entry(verdict.clusters).or_default();
            e.0 += 1;
            e.1.extend(inliers);
        }
        report.edges.push(verdict);
    }
    for ((a, b), (n_edges, pairs)) in pooled {
        let seed = crate::local_reconstruction::derive_seed(cfg.seed, a, ViewId(b.0));
        let res = fit(&pairs, &frames[&a], &frames[&b], cfg, seed);
        let accepted = res.as_ref().is_some_and(|r| r.2 >= cfg.lambda_c);
        if let (true, Some((t, inl, _))) = (accepted, &res) {
            cg.add_constraint(a, b, *t, inl.len());
        }
        report.pairs.push(PairVerdict {
            a,
            b,
            edges: n_edges,
            inliers: res.as_ref().map_or(0, |r| r.1.len()),
            similarity: res.as_ref().map(|r| r.2),
            accepted,
        });
    }
    (cg, report)
}
