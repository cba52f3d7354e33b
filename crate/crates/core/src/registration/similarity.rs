//! Neighborhood similarity of a candidate merge: the share of cameras that keep
//! their nearest neighbor when the two camera sets are put into one frame.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geometry::Sim3;
use crate::viewgraph::ViewId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityScore {
    pub s: f64,
    pub per_camera: BTreeMap<ViewId, u8>,
}

/// Nearest other camera; equidistant candidates resolve to the lowest ViewId.
fn nearest(points: &[(ViewId, Vector3<f64>)], k: usize) -> Option<ViewId> {
    let p = points[k].1;
    let mut best: Option<(f64, ViewId)> = None;
    for (j, (id, q)) in points.iter().enumerate() {
        if j == k {
            continue;
        }
        let d = (q - p).norm_squared();
        best = match best {
            Some((bd, bid)) if bd < d || (bd == d && bid < *id) => Some((bd, bid)),
            _ => Some((d, *id)),
        };
    }
    best.map(|b| b.1)
}

/// `t` maps frame `a` into frame `b`. Camera identities are ViewIds, which are
/// disjoint between clusters.
pub fn neighborhood_similarity(
    pa: &[(ViewId, Vector3<f64>)],
    pb: &[(ViewId, Vector3<f64>)],
    t: &Sim3,
) -> SimilarityScore {
    let mut combined: Vec<(ViewId, Vector3<f64>)> = pb.to_vec();
    combined.extend(pa.iter().map(|(id, p)| (*id, t.transform_point(p))));
    let mut per_camera = BTreeMap::new();
    // rigid transforms preserve nearest neighbors, so NN_a can be taken in frame a
    for k in 0..pa.len() {
        let keep = nearest(pa, k) == nearest(&combined, pb.len() + k);
        per_camera.insert(pa[k].0, keep as u8);
    }
    for k in 0..pb.len() {
        let keep = nearest(pb, k) == nearest(&combined, k);
        per_camera.insert(pb[k].0, keep as u8);
    }
    let s = if per_camera.is_empty() {
        0.0
    } else {
        per_camera.values().map(|v| *v as f64).sum::<f64>() / per_camera.len() as f64
    };
    SimilarityScore { s, per_camera }
}
