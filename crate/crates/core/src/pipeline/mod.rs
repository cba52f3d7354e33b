//! The per-timestep loop: ingest a view, recluster, rebuild changed clusters, place
//! the cluster models in one frame, and report.

pub mod config;
pub mod export;
pub mod run;

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::clustering::{cluster_incremental, ClusterId, Partition};
use crate::features::FeatureStore;
use crate::geometry::{rotation_to_wxyz, Sim3};
use crate::local_reconstruction::{reconstruct_cluster, BuildPath, ClusterContext, LocalReconstruction, TransferSource};
use crate::par;
use crate::registration::{collect_constraints, optimize_cluster_poses, ClusterGraph};
use crate::rotation_averaging::average_rotations;
use crate::simulator::{evaluate, MatchEvent, Metrics, ModelComponent, Scene};
use crate::viewgraph::{Admission, RelativeGeometry, ViewGraph, ViewId};

pub use config::{PipelineConfig, Scenario};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PipelineError {
    #[error("event for view {got} but the next view id is {expected}")]
    OutOfOrder { expected: u32, got: u32 },
    #[error("edge to view {0}, which has not arrived yet")]
    UnknownView(ViewId),
    #[error("edge to view {other}: {reason}")]
    BadEdge { other: ViewId, reason: String },
    #[error("invalid intrinsics")]
    BadIntrinsics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub cluster: ClusterId,
    pub members: Vec<ViewId>,
    pub registered: usize,
    pub points: usize,
    pub reprojection_rmse_px: f64,
    pub rho_l_deg: f64,
    pub resets: usize,
    pub path: BuildPath,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sim3Record {
    pub scale: f64,
    pub quaternion_wxyz: [f64; 4],
    pub translation: [f64; 3],
}

impl From<&Sim3> for Sim3Record {
    fn from(t: &Sim3) -> Self {
        Self { scale: t.scale, quaternion_wxyz: rotation_to_wxyz(&t.rotation), translation: t.translation.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub cluster: ClusterId,
    /// World-from-cluster.
    pub pose: Sim3Record,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintRecord {
    pub a: ClusterId,
    pub b: ClusterId,
    /// a-from-b.
    pub constraint: Sim3Record,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ClusterGraphSummary {
    pub nodes: Vec<NodeRecord>,
    pub edges: Vec<ConstraintRecord>,
    /// Effective clusters: connected components of the filtered cluster graph.
    pub components: Vec<Vec<ClusterId>>,
}

/// Pipeline state after one event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: usize,
    pub view: ViewId,
    pub clusters: Vec<ClusterSummary>,
    pub cluster_graph: ClusterGraphSummary,
    pub metrics: Metrics,
    pub recoveries_this_step: usize,
    /// Clusters whose reconstruction step ran at this timestep.
    pub reconstructed: Vec<ClusterId>,
}

pub struct Pipeline {
    cfg: PipelineConfig,
    graph: ViewGraph,
    features: FeatureStore,
    partition: Partition,
    recons: BTreeMap<ClusterId, LocalReconstruction>,
    cluster_graph: ClusterGraph,
    cluster_poses: BTreeMap<ClusterId, Sim3>,
    camera_of: BTreeMap<ViewId, u32>,
    truth: Option<Scene>,
    t: usize,
    recoveries: usize,
}

fn validate(ev: &MatchEvent, graph: &ViewGraph, features: &FeatureStore) -> Result<(), PipelineError> {
    let expected = graph.num_views() as u32;
    if ev.view.0 != expected {
        return Err(PipelineError::OutOfOrder { expected, got: ev.view.0 });
    }
    let k = &ev.intrinsics;
    if !(k.fx > 0.0 && k.fy > 0.0 && k.cx.is_finite() && k.cy.is_finite()) {
        return Err(PipelineError::BadIntrinsics);
    }
    let n_kp = ev.keypoints.len() as u32;
    for e in &ev.edges {
        if !graph.contains(e.other) {
            return Err(PipelineError::UnknownView(e.other));
        }
        let bad = |reason: String| PipelineError::BadEdge { other: e.other, reason };
        RelativeGeometry::new(*e.geometry.rotation.matrix(), e.geometry.translation_direction, e.geometry.inlier_count)
            .map_err(|err| bad(err.to_string()))?;
        let n_other = features.keypoints(e.other).len() as u32;
        if e.matches.iter().any(|(fo, f)| *f >= n_kp || *fo >= n_other) {
            return Err(bad("match refers to a missing keypoint".into()));
        }
    }
    Ok(())
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, truth: Option<Scene>) -> Self {
        Self {
            graph: ViewGraph::new(cfg.min_correspondences),
            cfg,
            features: FeatureStore::default(),
            partition: Partition::default(),
            recons: BTreeMap::new(),
            cluster_graph: ClusterGraph::default(),
            cluster_poses: BTreeMap::new(),
            camera_of: BTreeMap::new(),
            truth,
            t: 0,
            recoveries: 0,
        }
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn graph(&self) -> &ViewGraph {
        &self.graph
    }

    pub fn features(&self) -> &FeatureStore {
        &self.features
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn reconstructions(&self) -> &BTreeMap<ClusterId, LocalReconstruction> {
        &self.recons
    }

    pub fn cluster_graph(&self) -> &ClusterGraph {
        &self.cluster_graph
    }

    /// World-from-cluster poses of the clusters in the cluster graph.
    pub fn cluster_poses(&self) -> &BTreeMap<ClusterId, Sim3> {
        &self.cluster_poses
    }

    pub fn camera_of(&self, v: ViewId) -> Option<u32> {
        self.camera_of.get(&v).copied()
    }

    /// Effective clusters with camera centers and points in their common frame.
    pub fn components(&self) -> Vec<ComponentModel> {
        self.cluster_graph
            .components()
            .into_iter()
            .map(|clusters| {
                let mut m = ComponentModel { clusters: clusters.clone(), ..Default::default() };
                for c in &clusters {
                    let (Some(r), Some(p)) = (self.recons.get(c), self.cluster_poses.get(c)) else { continue };
                    for (v, pose) in &r.poses {
                        m.cameras.push((*v, self.camera_of(*v), p.transform_point(&pose.center)));
                    }
                    m.points.extend(r.points().map(|x| p.transform_point(&x)));
                }
                m
            })
            .collect()
    }

    /// Feeds one event through the pipeline. A rejected event leaves the state untouched.
    pub fn process_event(&mut self, ev: &MatchEvent) -> Result<Snapshot, PipelineError> {
        validate(ev, &self.graph, &self.features)?;
        let view = self.graph.add_view(ev.intrinsics);
        self.camera_of.insert(view, ev.camera);
        self.features.set_keypoints(view, ev.keypoints.clone());
        for e in &ev.edges {
            if let Ok(Admission::Admitted) = self.graph.add_edge(e.other, view, e.geometry) {
                self.features.set_matches(e.other, view, e.matches.clone());
            }
        }
        let (partition, delta) = cluster_incremental(&self.partition, &self.graph, view, self.cfg.eta);
        self.partition = partition;

        let changed: Vec<ClusterId> =
            self.partition.clusters.keys().filter(|c| !delta.unchanged_clusters.contains(c)).copied().collect();
        let recon_cfg = self.cfg.reconstruction();
        let avg_cfg = self.cfg.averaging();
        let intrinsics: BTreeMap<ViewId, crate::Intrinsics> =
            self.graph.views().map(|v| (v, *self.graph.intrinsics(v).unwrap())).collect();
        let (graph, features, partition, recons) = (&self.graph, &self.features, &self.partition, &self.recons);
        let rebuilt: Vec<LocalReconstruction> = par::map(self.cfg.execution, &changed, |c| {
            let members = &partition.clusters[c];
            if members.len() < recon_cfg.mu_min {
                let mut r = LocalReconstruction::empty(*c);
                r.resets = recons.get(c).map_or(0, |p| p.resets);
                return r;
            }
            let sub = graph.subgraph(members);
            let averaged = average_rotations(&sub, &avg_cfg).ok();
            let (rotations, filtered) = match &averaged {
                Some((rot, _, filtered)) => (Some(rot), filtered),
                None => (None, &sub),
            };
            let transfers: Vec<TransferSource> = delta
                .transfers_into(*c)
                .filter(|t| t.source != *c)
                .filter_map(|t| Some(TransferSource { recon: recons.get(&t.source)?, views: &t.views }))
                .collect();
            let ctx = ClusterContext { cluster: *c, subgraph: filtered, rotations, intrinsics: &intrinsics, features };
            reconstruct_cluster(&ctx, recons.get(c), &transfers, &recon_cfg)
        });

        let mut recoveries_this_step = 0;
        let mut next: BTreeMap<ClusterId, LocalReconstruction> = BTreeMap::new();
        for r in rebuilt {
            let before = self.recons.get(&r.cluster).map_or(0, |p| p.resets);
            recoveries_this_step += r.resets.saturating_sub(before);
            next.insert(r.cluster, r);
        }
        for c in &delta.unchanged_clusters {
            if let Some(r) = self.recons.remove(c) {
                next.insert(*c, r);
            }
        }
        self.recons = next;
        self.recoveries += recoveries_this_step;

        let (cg, _) = collect_constraints(
            &self.recons,
            &self.partition,
            &self.graph,
            &self.features,
            &self.cfg.constraints(),
            self.cfg.execution,
        );
        let (poses, _) = optimize_cluster_poses(&cg, &self.cfg.pose_graph());
        self.cluster_graph = cg;
        self.cluster_poses = poses;
        let snap = self.snapshot(view, recoveries_this_step, changed);
        self.t += 1;
        Ok(snap)
    }

    fn metrics(&self) -> Metrics {
        let components = self.components();
        let mut m = Metrics {
            clusters_raw: self.partition.clusters.values().filter(|m| m.len() >= self.cfg.mu_min).count(),
            clusters_effective: components.len(),
            registered_cameras: components.iter().map(|c| c.cameras.len()).sum(),
            recoveries: self.recoveries,
            ..Default::default()
        };
        if let Some(scene) = &self.truth {
            let models: Vec<ModelComponent> = components
                .iter()
                .map(|c| ModelComponent { cameras: c.cameras.iter().filter_map(|(_, cam, x)| Some(((*cam)?, *x))).collect() })
                .collect();
            let ev = evaluate(&models, scene);
            m.outlier_cameras = ev.outliers;
            m.unaligned_cameras = ev.unaligned;
            m.rmse_to_truth = ev.rmse;
        }
        m
    }

    fn snapshot(&self, view: ViewId, recoveries_this_step: usize, reconstructed: Vec<ClusterId>) -> Snapshot {
        let clusters = self
            .partition
            .clusters
            .iter()
            .map(|(c, members)| {
                let r = self.recons.get(c);
                ClusterSummary {
                    cluster: *c,
                    members: members.iter().copied().collect(),
                    registered: r.map_or(0, |r| r.poses.len()),
                    points: r.map_or(0, |r| r.num_points()),
                    reprojection_rmse_px: r.map_or(0.0, |r| r.reprojection_rmse()),
                    rho_l_deg: r.map_or(0.0, |r| r.rho_l_deg),
                    resets: r.map_or(0, |r| r.resets),
                    path: r.map_or(BuildPath::Empty, |r| r.path),
                }
            })
            .collect();
        let cluster_graph = ClusterGraphSummary {
            nodes: self.cluster_poses.iter().map(|(c, p)| NodeRecord { cluster: *c, pose: p.into() }).collect(),
            edges: self
                .cluster_graph
                .edges
                .iter()
                .map(|e| ConstraintRecord { a: e.a, b: e.b, constraint: (&e.constraint).into(), support: e.weight })
                .collect(),
            components: self.cluster_graph.components(),
        };
        Snapshot { t: self.t, view, clusters, cluster_graph, metrics: self.metrics(), recoveries_this_step, reconstructed }
    }
}

/// One effective cluster in its common frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ComponentModel {
    pub clusters: Vec<ClusterId>,
    /// `(view, ground-truth camera if known, center)`.
    pub cameras: Vec<(ViewId, Option<u32>, Vector3<f64>)>,
    pub points: Vec<Vector3<f64>>,
}

impl ComponentModel {
    pub fn views(&self) -> BTreeSet<ViewId> {
        self.cameras.iter().map(|c| c.0).collect()
    }
}
