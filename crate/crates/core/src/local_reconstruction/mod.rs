//! Per-cluster structure and poses, kept alive across topology changes.

pub mod bundle;
pub mod init;
pub mod p3p;
#[cfg(test)]
pub(crate) mod testutil;
pub mod tracks;
pub mod transfer;

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::features::FeatureStore;
use crate::geometry::{so3, CameraPose, Intrinsics};
use crate::rotation_averaging::GlobalRotations;
use crate::viewgraph::{SubGraph, ViewId, ViewPair};
use crate::ClusterId;

pub use bundle::{bundle_adjust, BundleConfig, BundleReport, BundleScope};
pub use init::{global_initialize, initialize_two_view, select_seed_pair, solve_centers};
pub use p3p::{ransac_absolute_pose, AbsolutePoseConfig, RegistrationError};
pub use tracks::{build_tracks, triangulate_track, Observation, Track, TrackState, TriangulationConfig};
pub use transfer::{transfer_submodel, TransferOutcome};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReconError {
    #[error("subgraph has no usable edges")]
    NoEdges,
    #[error("seed pair has only {0} correspondences")]
    TooFewCorrespondences(usize),
    #[error("camera centers are underdetermined; free component {0:?}")]
    RankDeficient(Vec<ViewId>),
}

/// Fixed camera and the camera whose distance to it sets the scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gauge {
    pub fixed: ViewId,
    pub scale: ViewId,
}

/// How the current model came about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuildPath {
    #[default]
    Empty,
    Incremental,
    Global,
    Extended,
    /// Both attempts failed the rotation consistency check.
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconConfig {
    pub mu_min: usize,
    pub mu_max: usize,
    pub eta_grow: f64,
    pub rho_lmax_deg: f64,
    pub min_seed_angle_deg: f64,
    /// Similarity inlier threshold for transfers, as a fraction of the model diameter.
    pub transfer_threshold: f64,
    pub triangulation: TriangulationConfig,
    pub absolute_pose: AbsolutePoseConfig,
    pub bundle: BundleConfig,
    pub seed: u64,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            mu_min: 5,
            mu_max: 50,
            eta_grow: 0.15,
            rho_lmax_deg: 10.0,
            min_seed_angle_deg: 2.0,
            transfer_threshold: 0.02,
            triangulation: TriangulationConfig::default(),
            absolute_pose: AbsolutePoseConfig::default(),
            bundle: BundleConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LocalReconstruction {
    pub cluster: ClusterId,
    /// Registered views.
    pub poses: BTreeMap<ViewId, CameraPose>,
    pub intrinsics: BTreeMap<ViewId, Intrinsics>,
    pub tracks: Vec<Track>,
    pub gauge: Option<Gauge>,
    pub seed_pair: Option<ViewPair>,
    /// Registered count at the last full bundle adjustment.
    pub registered_at_full_ba: usize,
    /// Rotation inconsistency against the averaged rotations at the last check, degrees.
    pub rho_l_deg: f64,
    /// Resets performed on this cluster so far.
    pub resets: usize,
    pub path: BuildPath,
}

impl LocalReconstruction {
    pub fn empty(cluster: ClusterId) -> Self {
        Self { cluster, ..Default::default() }
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn registered(&self) -> BTreeSet<ViewId> {
        self.poses.keys().copied().collect()
    }

    /// Registered views added since the last full bundle adjustment, relative to the
    /// count at that time.
    pub fn dirty_growth(&self) -> f64 {
        if self.registered_at_full_ba == 0 {
            return if self.poses.is_empty() { 0.0 } else { f64::INFINITY };
        }
        (self.poses.len() as f64 - self.registered_at_full_ba as f64) / self.registered_at_full_ba as f64
    }

    pub fn needs_full_ba(&self, eta_grow: f64) -> bool {
        self.dirty_growth() > eta_grow
    }

    pub fn num_points(&self) -> usize {
        self.tracks.iter().filter(|t| t.is_triangulated()).count()
    }

    pub fn points(&self) -> impl Iterator<Item = Vector3<f64>> + '_ {
        self.tracks.iter().filter(|t| t.is_triangulated()).filter_map(|t| t.point)
    }

    /// Pixel RMSE over every observation of a triangulated track in a registered view.
    pub fn reprojection_rmse(&self) -> f64 {
        let (mut sq, mut n) = (0.0, 0usize);
        for t in self.tracks.iter().filter(|t| t.is_triangulated()) {
            let x = t.point.unwrap();
            for (v, o) in &t.observations {
                let Some(p) = self.poses.get(v) else { continue };
                let e = tracks::reprojection_error(p, &self.intrinsics[v], &x, &o.pixel).unwrap_or(f64::INFINITY);
                sq += e * e;
                n += 1;
            }
        }
        if n == 0 { 0.0 } else { (sq / n as f64).sqrt() }
    }

    pub fn retriangulate_all(&mut self, cfg: &TriangulationConfig) {
        let (poses, intr) = (&self.poses, &self.intrinsics);
        for t in self.tracks.iter_mut() {
            triangulate_track(t, poses, intr, cfg);
        }
    }

    /// Drops observations of triangulated tracks that reproject worse than `max_px` or
    /// lie behind their camera; tracks left with fewer than two are untriangulated.
    /// Returns the number of dropped observations.
    pub fn enforce_reprojection_bound(&mut self, max_px: f64) -> usize {
        let mut dropped = 0;
        for t in self.tracks.iter_mut().filter(|t| t.is_triangulated()) {
            let x = t.point.unwrap();
            let bad: Vec<ViewId> = t
                .observations
                .iter()
                .filter(|(v, o)| {
                    self.poses.get(v).is_some_and(|p| {
                        !tracks::reprojection_error(p, &self.intrinsics[v], &x, &o.pixel).is_some_and(|e| e < max_px)
                    })
                })
                .map(|(v, _)| *v)
                .collect();
            dropped += bad.len();
            for v in bad {
                t.observations.remove(&v);
            }
            if t.observations.keys().filter(|v| self.poses.contains_key(v)).count() < 2 {
                t.untriangulate();
            }
        }
        dropped
    }

    /// 2D-3D matches of an unregistered view: `(pixel, point)` and the track index.
    pub fn correspondences(&self, view: ViewId) -> (Vec<(Vector2<f64>, Vector3<f64>)>, Vec<usize>) {
        let mut corr = Vec::new();
        let mut idx = Vec::new();
        for (k, t) in self.tracks.iter().enumerate() {
            if !t.is_triangulated() {
                continue;
            }
            if let Some(o) = t.observations.get(&view) {
                corr.push((o.pixel, t.point.unwrap()));
                idx.push(k);
            }
        }
        (corr, idx)
    }

    /// Keeps only poses of `members`; the gauge moves to remaining views if needed.
    pub fn restricted_to(&self, members: &BTreeSet<ViewId>) -> LocalReconstruction {
        let mut r = self.clone();
        r.poses.retain(|v, _| members.contains(v));
        r.intrinsics.retain(|v, _| members.contains(v));
        if r.gauge.is_some_and(|g| !r.poses.contains_key(&g.fixed) || !r.poses.contains_key(&g.scale)) {
            let mut it = r.poses.keys();
            r.gauge = match (it.next(), it.next()) {
                (Some(a), Some(b)) => Some(Gauge { fixed: *a, scale: *b }),
                _ => None,
            };
        }
        if r.seed_pair.is_some_and(|p| !members.contains(&p.a) || !members.contains(&p.b)) {
            r.seed_pair = None;
        }
        r.registered_at_full_ba = r.registered_at_full_ba.min(r.poses.len());
        r
    }

    /// Removes observations in unregistered views and tracks left with fewer than two.
    pub fn strip_unregistered(&mut self) {
        let poses = &self.poses;
        for t in self.tracks.iter_mut() {
            t.observations.retain(|v, _| poses.contains_key(v));
        }
        self.tracks.retain(|t| t.observations.len() >= 2);
    }

    fn full_bundle(&mut self, cfg: &ReconConfig) -> BundleReport {
        let rep = bundle_adjust(self, &BundleScope::Full, &cfg.bundle);
        self.enforce_reprojection_bound(cfg.triangulation.max_reprojection_px);
        self.registered_at_full_ba = self.poses.len();
        rep
    }
}

/// Deterministic per-(cluster, view) seed.
pub fn derive_seed(base: u64, cluster: ClusterId, view: ViewId) -> u64 {
    let mut z = base ^ ((cluster.0 as u64) << 32 | view.0 as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Adds one view: robust absolute pose, removal of its outlier observations, new
/// tracks, local bundle adjustment, and a full one once the model has grown enough.
pub fn register_view(
    r: &mut LocalReconstruction,
    view: ViewId,
    intr: &Intrinsics,
    cfg: &ReconConfig,
) -> Result<usize, RegistrationError> {
    let (corr, idx) = r.correspondences(view);
    if corr.len() < 4 {
        return Err(RegistrationError::Deferred(corr.len()));
    }
    let seed = derive_seed(cfg.seed, r.cluster, view);
    let (pose, inliers) = ransac_absolute_pose(&corr, intr, &cfg.absolute_pose, seed)?;
    r.poses.insert(view, pose);
    r.intrinsics.insert(view, *intr);
    let inlier_set: BTreeSet<usize> = inliers.iter().copied().collect();
    for (k, ti) in idx.iter().enumerate() {
        if !inlier_set.contains(&k) {
            r.tracks[*ti].observations.remove(&view);
        }
    }
    init::triangulate_untriangulated(r, &BTreeSet::from([view]), &cfg.triangulation);
    bundle_adjust(r, &BundleScope::Local(BTreeSet::from([view])), &cfg.bundle);
    r.enforce_reprojection_bound(cfg.triangulation.max_reprojection_px);
    if r.needs_full_ba(cfg.eta_grow) {
        r.full_bundle(cfg);
    }
    Ok(inliers.len())
}

/// Registers unregistered members, most 2D-3D matches first, until none can be added.
/// A view that fails is retried only after some other view succeeded. Returns the
/// number of views added.
pub fn grow(r: &mut LocalReconstruction, members: &[ViewId], intrinsics: &BTreeMap<ViewId, Intrinsics>, cfg: &ReconConfig) -> usize {
    let mut failed: BTreeSet<ViewId> = BTreeSet::new();
    let mut added = 0;
    loop {
        let mut counts: BTreeMap<ViewId, usize> = BTreeMap::new();
        for t in r.tracks.iter().filter(|t| t.is_triangulated()) {
            for v in t.observations.keys() {
                if !r.poses.contains_key(v) && !failed.contains(v) {
                    *counts.entry(*v).or_default() += 1;
                }
            }
        }
        let best = members
            .iter()
            .filter_map(|v| Some((*v, *counts.get(v)?)))
            .filter(|(_, n)| *n >= 4)
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)));
        let Some((view, _)) = best else { break };
        match register_view(r, view, &intrinsics[&view], cfg) {
            Ok(_) => {
                added += 1;
                failed.clear();
            }
            Err(e) => {
                log::debug!("cluster {}: view {view} not registered: {e}", r.cluster.0);
                failed.insert(view);
            }
        }
    }
    added
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfigurationCheck {
    pub rho_l_deg: f64,
    pub reset_required: bool,
}

/// Largest angle between the model's relative rotation and the averaged one over edges
/// whose endpoints are both registered and averaged.
pub fn detect_bad_configuration(
    r: &LocalReconstruction,
    sub: &SubGraph,
    rotations: &GlobalRotations,
    rho_lmax_deg: f64,
) -> ConfigurationCheck {
    let mut rho: f64 = 0.0;
    for p in sub.edges.keys() {
        let (Some(pa), Some(pb)) = (r.poses.get(&p.a), r.poses.get(&p.b)) else { continue };
        let Some(avg) = rotations.relative(p.a, p.b) else { continue };
        let model = pb.rotation * pa.rotation.inverse();
        rho = rho.max(so3::angle(&(avg * model.inverse())).to_degrees());
    }
    ConfigurationCheck { rho_l_deg: rho, reset_required: rho > rho_lmax_deg }
}

/// Everything a cluster's reconstruction step reads.
#[derive(Debug, Clone, Copy)]
pub struct ClusterContext<'a> {
    pub cluster: ClusterId,
    /// Rotation-filtered subgraph over the cluster's members.
    pub subgraph: &'a SubGraph,
    pub rotations: Option<&'a GlobalRotations>,
    pub intrinsics: &'a BTreeMap<ViewId, Intrinsics>,
    pub features: &'a FeatureStore,
}

/// Views that moved into this cluster together with their previous reconstruction.
#[derive(Debug, Clone, Copy)]
pub struct TransferSource<'a> {
    pub recon: &'a LocalReconstruction,
    pub views: &'a BTreeSet<ViewId>,
}

fn inherit_points(
    tracks: &mut [Track],
    index: &BTreeMap<(ViewId, u32), Vector3<f64>>,
    poses: &BTreeMap<ViewId, CameraPose>,
    intrinsics: &BTreeMap<ViewId, Intrinsics>,
    cfg: &TriangulationConfig,
) {
    for t in tracks.iter_mut() {
        if let Some(x) = transfer::lookup(t, index) {
            let consistent = t.observations.iter().filter(|(v, _)| poses.contains_key(v)).all(|(v, o)| {
                tracks::reprojection_error(&poses[v], &intrinsics[v], &x, &o.pixel).is_some_and(|e| e < cfg.max_reprojection_px)
            });
            if consistent {
                t.point = Some(x);
                t.state = TrackState::Triangulated;
                continue;
            }
        }
        if t.observations.keys().filter(|v| poses.contains_key(v)).count() >= 2 {
            triangulate_track(t, poses, intrinsics, cfg);
        }
    }
}

/// A model from scratch: global for large clusters with rotations, otherwise from the
/// best seed pair not in `excluded`.
fn build_new(ctx: &ClusterContext, tracks: &[Track], cfg: &ReconConfig, excluded: &BTreeSet<ViewPair>) -> Option<LocalReconstruction> {
    if ctx.subgraph.views.len() >= cfg.mu_max && excluded.is_empty() {
        if let Some(rot) = ctx.rotations {
            match global_initialize(ctx.cluster, ctx.subgraph, rot, tracks.to_vec(), ctx.intrinsics, cfg) {
                Ok(r) => return Some(r),
                Err(e) => log::debug!("cluster {}: global initialization failed: {e}", ctx.cluster.0),
            }
        }
    }
    let mut excluded = excluded.clone();
    for _ in 0..5 {
        let pair = select_seed_pair(ctx.subgraph, ctx.features, ctx.intrinsics, &excluded, cfg.min_seed_angle_deg).ok()?;
        match initialize_two_view(ctx.cluster, pair, &ctx.subgraph.edges[&pair], tracks.to_vec(), ctx.intrinsics, cfg) {
            Ok(r) if r.num_points() >= 8 => return Some(r),
            _ => {
                excluded.insert(pair);
            }
        }
    }
    None
}

fn assemble(
    ctx: &ClusterContext,
    prior: Option<&LocalReconstruction>,
    transfers: &[TransferSource],
    tracks: &[Track],
    cfg: &ReconConfig,
    excluded: &BTreeSet<ViewPair>,
) -> Option<LocalReconstruction> {
    let members: BTreeSet<ViewId> = ctx.subgraph.views.iter().copied().collect();
    let mut r = match prior {
        Some(p) if p.poses.len() >= 2 => p.restricted_to(&members),
        _ => LocalReconstruction::empty(ctx.cluster),
    };
    r.cluster = ctx.cluster;
    let mut index = transfer::point_index(&r, None);
    let mut moved = false;
    for src in transfers {
        let group: BTreeSet<ViewId> =
            src.views.iter().filter(|v| members.contains(v) && src.recon.poses.contains_key(v)).copied().collect();
        if group.len() < cfg.mu_min {
            continue;
        }
        let seed = derive_seed(cfg.seed, ctx.cluster, *group.first().unwrap());
        let outcome = transfer_submodel(src.recon, &group, &mut r, tracks, cfg.transfer_threshold, seed);
        log::debug!("cluster {}: transfer of {} views: {outcome:?}", ctx.cluster.0, group.len());
        let src_points = transfer::point_index(src.recon, Some(&group));
        match outcome {
            TransferOutcome::Grafted(_) => {
                index.extend(src_points);
                moved = true;
            }
            TransferOutcome::Aligned { transform, .. } => {
                for (k, x) in src_points {
                    index.entry(k).or_insert_with(|| transform.transform_point(&x));
                }
                moved = true;
            }
            TransferOutcome::Deferred(_) => {}
        }
    }
    if r.poses.len() >= 2 {
        r.tracks = tracks.to_vec();
        inherit_points(&mut r.tracks, &index, &r.poses, &r.intrinsics, &cfg.triangulation);
        r.path = BuildPath::Extended;
        if moved {
            r.full_bundle(cfg);
        }
    } else {
        r = build_new(ctx, tracks, cfg, excluded)?;
    }
    grow(&mut r, &ctx.subgraph.views, ctx.intrinsics, cfg);
    Some(r)
}

/// One timestep of a cluster's reconstruction: restrict the prior model to the current
/// members, take over transferred sub-models, start a new model when there is none,
/// register new views, then check rotations against the averaged ones. A failed check
/// triggers one rebuild from scratch with the previous seed pair excluded; if that fails
/// as well the cluster is left without a model.
pub fn reconstruct_cluster(
    ctx: &ClusterContext,
    prior: Option<&LocalReconstruction>,
    transfers: &[TransferSource],
    cfg: &ReconConfig,
) -> LocalReconstruction {
    let resets = prior.map_or(0, |p| p.resets);
    let mut empty = LocalReconstruction::empty(ctx.cluster);
    empty.resets = resets;
    if ctx.subgraph.views.len() < cfg.mu_min {
        return empty;
    }
    let tracks = build_tracks(ctx.subgraph, ctx.features);
    let Some(mut r) = assemble(ctx, prior, transfers, &tracks, cfg, &BTreeSet::new()) else {
        return empty;
    };
    r.resets = resets;
    let Some(rot) = ctx.rotations else {
        r.strip_unregistered();
        return r;
    };
    let check = detect_bad_configuration(&r, ctx.subgraph, rot, cfg.rho_lmax_deg);
    r.rho_l_deg = check.rho_l_deg;
    if !check.reset_required {
        r.strip_unregistered();
        return r;
    }
    log::debug!("cluster {}: rho_l {:.1} deg, resetting", ctx.cluster.0, check.rho_l_deg);
    let excluded: BTreeSet<ViewPair> = r.seed_pair.into_iter().collect();
    let rebuilt = build_new(ctx, &tracks, cfg, &excluded).map(|mut r2| {
        grow(&mut r2, &ctx.subgraph.views, ctx.intrinsics, cfg);
        r2
    });
    let mut failed = empty;
    failed.resets = resets + 1;
    failed.path = BuildPath::Failed;
    failed.rho_l_deg = check.rho_l_deg;
    let Some(mut r2) = rebuilt else { return failed };
    let check2 = detect_bad_configuration(&r2, ctx.subgraph, rot, cfg.rho_lmax_deg);
    if check2.reset_required {
        failed.rho_l_deg = check2.rho_l_deg;
        return failed;
    }
    r2.resets = resets + 1;
    r2.rho_l_deg = check2.rho_l_deg;
    r2.strip_unregistered();
    r2
}
