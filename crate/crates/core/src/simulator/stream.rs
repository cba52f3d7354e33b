//! Match streams over a scene: arrival orderings, retrieval, verified pairwise geometry
//! and symmetry-confusion edges.

use std::collections::BTreeMap;

use nalgebra::{Rotation3, Vector2, Vector3};
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::scene::{symmetry_rotation, Scene};
use crate::geometry::{so3, Intrinsics};
use crate::viewgraph::{RelativeGeometry, ViewId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Ordering {
    Linear,
    Shuffled { seed: u64 },
    /// Interleaves runs `period` apart: `0, p, 1, p+1, ..., p-1, 2p-1, 2p, 3p, ...`.
    Periodic { period: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseParams {
    pub rot_deg: f64,
    pub dir_deg: f64,
    pub px: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self { rot_deg: 0.3, dir_deg: 0.5, px: 1.0 }
    }
}

impl NoiseParams {
    pub fn zero() -> Self {
        Self { rot_deg: 0.0, dir_deg: 0.0, px: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StreamParams {
    pub ordering: Ordering,
    pub confusion_rate: f64,
    /// Confusion edges join camera `i` to `i +- period + e` for `1 <= |e| <= spread`.
    pub confusion_spread: usize,
    /// Prior views matched per arrival, ranked by shared visibility.
    pub retrieval: usize,
    pub noise: NoiseParams,
    pub seed: u64,
}

impl Default for StreamParams {
    fn default() -> Self {
        Self {
            ordering: Ordering::Linear,
            confusion_rate: 0.0,
            confusion_spread: 2,
            retrieval: 20,
            noise: NoiseParams::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeLabel {
    Genuine,
    SymmetryConfusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventEdge {
    /// An earlier view.
    pub other: ViewId,
    /// Maps frame `other` to the arriving view's frame.
    pub geometry: RelativeGeometry,
    /// `(feature in other, feature in the arriving view)`.
    pub matches: Vec<(u32, u32)>,
    pub label: EdgeLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchEvent {
    pub view: ViewId,
    /// Ground-truth camera index; used for evaluation only.
    pub camera: u32,
    pub intrinsics: Intrinsics,
    pub keypoints: Vec<Vector2<f64>>,
    pub edges: Vec<EventEdge>,
}

/// Arrival order as a list of camera indices.
pub fn arrival_order(n: usize, ordering: Ordering) -> Vec<usize> {
    match ordering {
        Ordering::Linear => (0..n).collect(),
        Ordering::Shuffled { seed } => {
            let mut v: Vec<usize> = (0..n).collect();
            v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            v
        }
        Ordering::Periodic { period } => {
            let p = period.max(1);
            let mut v = Vec::with_capacity(n);
            for block in (0..n).step_by(2 * p) {
                for i in 0..p {
                    for c in [block + i, block + p + i] {
                        if c < n {
                            v.push(c);
                        }
                    }
                }
            }
            v
        }
    }
}

fn pair_rng(seed: u64, salt: u64, a: usize, b: usize) -> ChaCha8Rng {
    let (lo, hi) = (a.min(b) as u64, a.max(b) as u64);
    ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (lo << 32 | hi).wrapping_mul(0xD1B5_4A32_D192_ED03))
}

fn gaussian_vector<R: Rng>(rng: &mut R, sigma: f64) -> Vector3<f64> {
    if sigma <= 0.0 {
        return Vector3::zeros();
    }
    let n = Normal::new(0.0, sigma).unwrap();
    Vector3::new(n.sample(rng), n.sample(rng), n.sample(rng))
}

/// Noisy keypoints of a camera, one per visible point, in visibility order.
pub fn keypoints(scene: &Scene, camera: usize, noise: &NoiseParams, seed: u64) -> Vec<Vector2<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0000 ^ (camera as u64).wrapping_mul(0x2545_F491_4F6C_DD1D));
    let n = (noise.px > 0.0).then(|| Normal::new(0.0, noise.px).unwrap());
    scene.visibility[camera]
        .iter()
        .map(|p| {
            let px = scene.project(camera, *p as usize);
            match &n {
                Some(n) => px + Vector2::new(n.sample(&mut rng), n.sample(&mut rng)),
                None => px,
            }
        })
        .collect()
}

/// Relative geometry from `from` to `to` after applying `shift` symmetry steps to `from`,
/// with rotation and direction noise.
fn noisy_geometry(
    scene: &Scene,
    from: usize,
    to: usize,
    shift: i64,
    count: u32,
    noise: &NoiseParams,
    rng: &mut ChaCha8Rng,
) -> Option<RelativeGeometry> {
    let a = &scene.cameras[from].pose;
    let b = &scene.cameras[to].pose;
    let s = match scene.symmetry {
        Some(sym) => symmetry_rotation(sym.fold, shift),
        None => Rotation3::identity(),
    };
    let r = b.rotation * s * a.rotation.inverse();
    let t = b.rotation * (s * a.center - b.center);
    if t.norm() < 1e-12 {
        return None;
    }
    let rn = so3::exp(&gaussian_vector(rng, noise.rot_deg.to_radians())) * r;
    let tn = so3::exp(&gaussian_vector(rng, noise.dir_deg.to_radians())) * t.normalize();
    let rm = so3::project_to_rotation(rn.matrix());
    RelativeGeometry::new(*rm.matrix(), tn.normalize(), count).ok()
}

struct Candidate {
    count: u32,
    shift: i64,
    label: EdgeLabel,
    /// `(point in earlier camera, point in arriving camera)`.
    points: Vec<(u32, u32)>,
}

fn genuine(scene: &Scene, u: usize, v: usize) -> Candidate {
    let points: Vec<(u32, u32)> = scene.shared(u, v).into_iter().map(|p| (p, p)).collect();
    Candidate { count: points.len() as u32, shift: 0, label: EdgeLabel::Genuine, points }
}

/// Symmetric points of `u` whose copy under `S^shift` is seen by `v`, subsampled by `rate`.
fn confusion(scene: &Scene, u: usize, v: usize, shift: i64, rate: f64, rng: &mut ChaCha8Rng) -> Candidate {
    let seen_v = &scene.visibility[v];
    let all: Vec<(u32, u32)> = scene.visibility[u]
        .iter()
        .filter_map(|p| {
            let q = scene.orbit_partner(*p as usize, shift)? as u32;
            seen_v.binary_search(&q).ok().map(|_| (*p, q))
        })
        .collect();
    let keep = ((rate * all.len() as f64).round() as usize).min(all.len());
    let mut idx: Vec<usize> = sample(rng, all.len(), keep).into_vec();
    idx.sort_unstable();
    let points: Vec<(u32, u32)> = idx.into_iter().map(|k| all[k]).collect();
    Candidate { count: points.len() as u32, shift, label: EdgeLabel::SymmetryConfusion, points }
}

/// Symmetry steps relating `u` to `v` for a confusion edge, if any.
fn confusion_shift(scene: &Scene, u: usize, v: usize, spread: usize) -> Option<i64> {
    let period = scene.symmetry_period()? as i64;
    let n = scene.n_cameras() as i64;
    for s in [1i64, -1] {
        let e = (v as i64 - u as i64 - s * period).rem_euclid(n);
        let e = if e > n / 2 { e - n } else { e };
        if e != 0 && e.unsigned_abs() as usize <= spread {
            return Some(s);
        }
    }
    None
}

pub fn generate_stream(scene: &Scene, params: &StreamParams) -> Vec<MatchEvent> {
    let n = scene.n_cameras();
    let order = arrival_order(n, params.ordering);
    let keypoint_index: Vec<BTreeMap<u32, u32>> = scene
        .visibility
        .iter()
        .map(|vis| vis.iter().enumerate().map(|(k, p)| (*p, k as u32)).collect())
        .collect();
    let mut events = Vec::with_capacity(n);
    for (t, &v) in order.iter().enumerate() {
        let prior = &order[..t];
        let mut ranked: Vec<(usize, usize)> = prior
            .iter()
            .enumerate()
            .map(|(k, u)| (k, scene.shared(*u, v).len()))
            .filter(|(_, c)| *c > 0)
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut chosen: BTreeMap<usize, Candidate> = BTreeMap::new();
        for (k, _) in ranked.into_iter().take(params.retrieval) {
            chosen.insert(k, genuine(scene, prior[k], v));
        }
        if params.confusion_rate > 0.0 {
            for (k, &u) in prior.iter().enumerate() {
                let Some(shift) = confusion_shift(scene, u, v, params.confusion_spread) else { continue };
                let mut rng = pair_rng(params.seed, 1, u, v);
                let c = confusion(scene, u, v, shift, params.confusion_rate, &mut rng);
                let stronger = chosen.get(&k).map_or(true, |g| c.count > g.count);
                if stronger && c.count > 0 {
                    chosen.insert(k, c);
                }
            }
        }
        let mut edges = Vec::new();
        for (k, cand) in chosen {
            let u = prior[k];
            let mut rng = pair_rng(params.seed, 2, u, v);
            // noise is drawn for the canonical orientation so it does not depend on arrival order
            let geometry = if u < v {
                noisy_geometry(scene, u, v, cand.shift, cand.count, &params.noise, &mut rng)
            } else {
                noisy_geometry(scene, v, u, -cand.shift, cand.count, &params.noise, &mut rng).map(|g| g.inverse())
            };
            let Some(geometry) = geometry else { continue };
            let matches = cand
                .points
                .iter()
                .map(|(pu, pv)| (keypoint_index[u][pu], keypoint_index[v][pv]))
                .collect();
            edges.push(EventEdge { other: ViewId(k as u32), geometry, matches, label: cand.label });
        }
        events.push(MatchEvent {
            view: ViewId(t as u32),
            camera: v as u32,
            intrinsics: scene.cameras[v].intrinsics,
            keypoints: keypoints(scene, v, &params.noise, params.seed),
            edges,
        });
    }
    events
}
