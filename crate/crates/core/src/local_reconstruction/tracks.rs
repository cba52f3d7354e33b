//! Feature tracks: building them from pairwise matches and triangulating them.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use nalgebra::{Matrix4, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::features::FeatureStore;
use crate::geometry::{CameraPose, Intrinsics};
use crate::viewgraph::{SubGraph, ViewId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub feature: u32,
    pub pixel: Vector2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackState {
    Untriangulated,
    Triangulated,
    /// Observations that no single point explains.
    Conflicted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub observations: BTreeMap<ViewId, Observation>,
    pub point: Option<Vector3<f64>>,
    pub state: TrackState,
}

impl Track {
    pub fn new(observations: BTreeMap<ViewId, Observation>) -> Self {
        Self { observations, point: None, state: TrackState::Untriangulated }
    }

    pub fn is_triangulated(&self) -> bool {
        self.state == TrackState::Triangulated && self.point.is_some()
    }

    pub fn untriangulate(&mut self) {
        self.point = None;
        self.state = TrackState::Untriangulated;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriangulationConfig {
    pub max_reprojection_px: f64,
    pub min_angle_deg: f64,
}

impl Default for TriangulationConfig {
    fn default() -> Self {
        Self { max_reprojection_px: 4.0, min_angle_deg: 1.0 }
    }
}

struct Dsu {
    parent: Vec<usize>,
    views: Vec<BTreeSet<ViewId>>,
}

impl Dsu {
    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }
}

/// Joins the matches of `sub`'s edges into tracks. Edges are taken heaviest first; a match
/// that would put two features of one view into the same track is dropped, so every
/// track holds at most one observation per view.
pub fn build_tracks(sub: &SubGraph, features: &FeatureStore) -> Vec<Track> {
    let mut edges: Vec<_> = sub.edges.iter().collect();
    edges.sort_by(|a, b| b.1.inlier_count.cmp(&a.1.inlier_count).then(a.0.cmp(b.0)));
    let mut ids: HashMap<(ViewId, u32), usize> = HashMap::new();
    let mut keys: Vec<(ViewId, u32)> = Vec::new();
    let mut dsu = Dsu { parent: Vec::new(), views: Vec::new() };
    let mut node = |k: (ViewId, u32), dsu: &mut Dsu, keys: &mut Vec<(ViewId, u32)>| {
        *ids.entry(k).or_insert_with(|| {
            dsu.parent.push(dsu.parent.len());
            dsu.views.push(BTreeSet::from([k.0]));
            keys.push(k);
            keys.len() - 1
        })
    };
    for (pair, _) in edges {
        for (fa, fb) in features.matches(pair) {
            let a = node((pair.a, *fa), &mut dsu, &mut keys);
            let b = node((pair.b, *fb), &mut dsu, &mut keys);
            let (ra, rb) = (dsu.find(a), dsu.find(b));
            if ra == rb || !dsu.views[ra].is_disjoint(&dsu.views[rb]) {
                continue;
            }
            let (big, small) = if dsu.views[ra].len() >= dsu.views[rb].len() { (ra, rb) } else { (rb, ra) };
            let moved = std::mem::take(&mut dsu.views[small]);
            dsu.views[big].extend(moved);
            dsu.parent[small] = big;
        }
    }
    let mut groups: BTreeMap<usize, BTreeMap<ViewId, Observation>> = BTreeMap::new();
    for (k, key) in keys.iter().enumerate() {
        let Some(pixel) = features.keypoint(key.0, key.1) else { continue };
        let r = dsu.find(k);
        groups.entry(r).or_default().insert(key.0, Observation { feature: key.1, pixel });
    }
    let mut tracks: Vec<Track> = groups.into_values().filter(|o| o.len() >= 2).map(Track::new).collect();
    tracks.sort_by_key(|t| t.observations.iter().next().map(|(v, o)| (*v, o.feature)));
    tracks
}

/// Homogeneous least-squares point from normalized image rays.
pub fn triangulate_dlt(obs: &[(CameraPose, Intrinsics, Vector2<f64>)]) -> Option<Vector3<f64>> {
    if obs.len() < 2 {
        return None;
    }
    let mut ata = Matrix4::zeros();
    for (pose, intr, px) in obs {
        let u = (px.x - intr.cx) / intr.fx;
        let v = (px.y - intr.cy) / intr.fy;
        let r = pose.rotation.matrix();
        let t = -(r * pose.center);
        let row = |k: usize| nalgebra::RowVector4::new(r[(k, 0)], r[(k, 1)], r[(k, 2)], t[k]);
        let (p1, p2, p3) = (row(0), row(1), row(2));
        for eq in [p3 * u - p1, p3 * v - p2] {
            ata += eq.transpose() * eq;
        }
    }
    let eig = ata.symmetric_eigen();
    let k = eig.eigenvalues.imin();
    let h = eig.eigenvectors.column(k);
    if h[3].abs() < 1e-12 {
        return None;
    }
    let x = Vector3::new(h[0], h[1], h[2]) / h[3];
    x.iter().all(|c| c.is_finite()).then_some(x)
}

/// Largest angle between two viewing rays of `x`, radians.
pub fn max_ray_angle(x: &Vector3<f64>, centers: &[Vector3<f64>]) -> f64 {
    let rays: Vec<Vector3<f64>> = centers.iter().map(|c| (c - x).normalize()).collect();
    let mut best: f64 = 0.0;
    for i in 0..rays.len() {
        for j in i + 1..rays.len() {
            best = best.max(rays[i].dot(&rays[j]).clamp(-1.0, 1.0).acos());
        }
    }
    best
}

/// Pixel error of `x` seen by `pose`; `None` when behind the camera.
pub fn reprojection_error(pose: &CameraPose, intr: &Intrinsics, x: &Vector3<f64>, px: &Vector2<f64>) -> Option<f64> {
    let p = pose.to_camera(x);
    if p.z <= 1e-9 {
        return None;
    }
    Some((intr.project(&p)? - px).norm())
}

/// Triangulates a track from its observations in views that have a pose. Accepted iff every
/// used observation reprojects within the threshold, is in front of its camera, and the
/// rays span more than the minimum angle. Inconsistent observations are dropped one at a time,
/// the one whose removal leaves the most consistent rest first, while at least two remain.
pub fn triangulate_track(
    track: &mut Track,
    poses: &BTreeMap<ViewId, CameraPose>,
    intrinsics: &BTreeMap<ViewId, Intrinsics>,
    cfg: &TriangulationConfig,
) {
    let mut used: Vec<ViewId> = track.observations.keys().filter(|v| poses.contains_key(v)).copied().collect();
    if used.len() < 2 {
        track.untriangulate();
        return;
    }
    loop {
        let obs: Vec<_> = used.iter().map(|v| (poses[v], intrinsics[v], track.observations[v].pixel)).collect();
        let Some(x) = triangulate_dlt(&obs) else {
            track.untriangulate();
            return;
        };
        let centers: Vec<Vector3<f64>> = obs.iter().map(|o| o.0.center).collect();
        if max_ray_angle(&x, &centers) <= cfg.min_angle_deg.to_radians() {
            track.untriangulate();
            return;
        }
        let errors: Vec<f64> = obs.iter().map(|(p, k, px)| reprojection_error(p, k, &x, px).unwrap_or(f64::INFINITY)).collect();
        let (worst, err) = errors.iter().enumerate().fold((0, 0.0), |b, (k, e)| if *e > b.1 { (k, *e) } else { b });
        if err < cfg.max_reprojection_px {
            track.point = Some(x);
            track.state = TrackState::Triangulated;
            return;
        }
        if used.len() <= 2 {
            track.point = None;
            track.state = TrackState::Conflicted;
            return;
        }
        // drop the observation whose removal leaves the most consistent rest
        let mut drop = worst;
        let mut best_rest = f64::INFINITY;
        for k in 0..obs.len() {
            let rest: Vec<_> = obs.iter().enumerate().filter(|(i, _)| *i != k).map(|(_, o)| *o).collect();
            let Some(y) = triangulate_dlt(&rest) else { continue };
            let e = rest.iter().map(|(p, i, px)| reprojection_error(p, i, &y, px).unwrap_or(f64::INFINITY)).fold(0.0, f64::max);
            if e < best_rest {
                best_rest = e;
                drop = k;
            }
        }
        let dropped = used.remove(drop);
        track.observations.remove(&dropped);
    }
}
