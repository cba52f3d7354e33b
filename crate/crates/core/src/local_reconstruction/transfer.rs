//! Moving an estimated sub-model from one cluster's reconstruction into another's.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Vector3;

use super::tracks::Track;
use super::{Gauge, LocalReconstruction};
use crate::geometry::{CameraPose, Sim3};
use crate::registration::{ransac_sim3, RansacConfig};
use crate::viewgraph::ViewId;

#[derive(Debug, Clone, PartialEq)]
pub enum TransferOutcome {
    /// The destination had no cameras; the group's poses were taken as they are.
    Grafted(usize),
    /// Group poses mapped into the destination frame by the estimated similarity.
    Aligned { transform: Sim3, common: usize, inliers: usize },
    /// Too few common points; the group views are left for incremental registration.
    Deferred(usize),
}

/// Pose in the frame `X' = T X`.
pub fn transform_pose(pose: &CameraPose, t: &Sim3) -> CameraPose {
    CameraPose::new(pose.rotation * t.rotation.inverse(), t.transform_point(&pose.center))
}

/// Triangulated points indexed by `(view, feature)`, restricted to `views` when given.
pub fn point_index(r: &LocalReconstruction, views: Option<&BTreeSet<ViewId>>) -> BTreeMap<(ViewId, u32), Vector3<f64>> {
    let mut out = BTreeMap::new();
    for t in r.tracks.iter().filter(|t| t.is_triangulated()) {
        for (v, o) in &t.observations {
            if views.is_none_or(|s| s.contains(v)) {
                out.insert((*v, o.feature), t.point.unwrap());
            }
        }
    }
    out
}

/// First indexed point among a track's observations.
pub fn lookup(track: &Track, index: &BTreeMap<(ViewId, u32), Vector3<f64>>) -> Option<Vector3<f64>> {
    track.observations.iter().find_map(|(v, o)| index.get(&(*v, o.feature)).copied())
}

/// Maximum spread of a point set: twice the RMS distance from the centroid.
pub fn diameter(points: &[Vector3<f64>]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let m = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
    2.0 * (points.iter().map(|p| (p - m).norm_squared()).sum::<f64>() / points.len() as f64).sqrt()
}

/// Moves the poses of `group` (registered in `source`) into `dest`. `tracks` are the
/// destination cluster's tracks after the topology change; a track seen by both a group
/// view with a source point and a destination view with a destination point links the
/// two frames.
pub fn transfer_submodel(
    source: &LocalReconstruction,
    group: &BTreeSet<ViewId>,
    dest: &mut LocalReconstruction,
    tracks: &[Track],
    threshold_ratio: f64,
    seed: u64,
) -> TransferOutcome {
    let moving: BTreeSet<ViewId> = group.iter().filter(|v| source.poses.contains_key(v)).copied().collect();
    if dest.poses.is_empty() {
        for v in &moving {
            dest.poses.insert(*v, source.poses[v]);
            dest.intrinsics.insert(*v, source.intrinsics[v]);
        }
        dest.gauge = source.gauge.filter(|g| moving.contains(&g.fixed) && moving.contains(&g.scale)).or_else(|| {
            let mut it = moving.iter();
            Some(Gauge { fixed: *it.next()?, scale: *it.next()? })
        });
        dest.tracks = source
            .tracks
            .iter()
            .filter_map(|t| {
                let obs: BTreeMap<_, _> = t.observations.iter().filter(|(v, _)| moving.contains(v)).map(|(v, o)| (*v, *o)).collect();
                (obs.len() >= 2).then(|| Track { observations: obs, point: t.point, state: t.state })
            })
            .collect();
        dest.registered_at_full_ba = dest.poses.len();
        return TransferOutcome::Grafted(moving.len());
    }
    let src_index = point_index(source, Some(&moving));
    let dst_views: BTreeSet<ViewId> = dest.poses.keys().copied().collect();
    let dst_index = point_index(dest, Some(&dst_views));
    let pairs: Vec<(Vector3<f64>, Vector3<f64>)> =
        tracks.iter().filter_map(|t| Some((lookup(t, &src_index)?, lookup(t, &dst_index)?))).collect();
    if pairs.len() < 3 {
        return TransferOutcome::Deferred(pairs.len());
    }
    let dst_points: Vec<Vector3<f64>> = dst_index.values().copied().collect();
    let threshold = threshold_ratio * diameter(&dst_points);
    let Ok((t, inliers)) = ransac_sim3(&pairs, &RansacConfig::new(threshold, seed)) else {
        return TransferOutcome::Deferred(pairs.len());
    };
    if inliers.len() < 3 {
        return TransferOutcome::Deferred(pairs.len());
    }
    for v in &moving {
        if !dest.poses.contains_key(v) {
            dest.poses.insert(*v, transform_pose(&source.poses[v], &t));
            dest.intrinsics.insert(*v, source.intrinsics[v]);
        }
    }
    TransferOutcome::Aligned { transform: t, common: pairs.len(), inliers: inliers.len() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Intrinsics;
    use crate::local_reconstruction::tracks::{Observation, TrackState};
    use crate::ClusterId;
    use nalgebra::Rotation3;

    fn intr() -> Intrinsics {
        Intrinsics::new(500.0, 500.0, 320.0, 240.0)
    }

    fn world() -> (Vec<CameraPose>, Vec<Vector3<f64>>) {
        let cams = (0..6)
            .map(|k| {
                let a = 0.2 * k as f64;
                CameraPose::look_at(Vector3::new(8.0 * a.sin(), 0.5, -8.0 * a.cos()), Vector3::zeros(), Vector3::y())
            })
            .collect();
        let pts = (0..80)
            .map(|k| {
                let k = k as f64;
                Vector3::new((k * 0.37).sin() * 2.0, (k * 0.71).cos() * 2.0, (k * 0.13).sin() * 1.5)
            })
            .collect();
        (cams, pts)
    }

    /// Reconstruction of `views` expressed in frame `X' = T X`; feature id = point index.
    fn recon(views: &[usize], t: &Sim3) -> LocalReconstruction {
        let (cams, pts) = world();
        let mut r = LocalReconstruction::empty(ClusterId(0));
        for v in views {
            r.poses.insert(ViewId(*v as u32), transform_pose(&cams[*v], t));
            r.intrinsics.insert(ViewId(*v as u32), intr());
        }
        for (k, x) in pts.iter().enumerate() {
            let obs: BTreeMap<ViewId, Observation> = views
                .iter()
                .filter_map(|v| Some((ViewId(*v as u32), Observation { feature: k as u32, pixel: cams[*v].project(&intr(), x)? })))
                .collect();
            r.tracks.push(Track { observations: obs, point: Some(t.transform_point(x)), state: TrackState::Triangulated });
        }
        r.gauge = Some(Gauge { fixed: ViewId(views[0] as u32), scale: ViewId(views[1] as u32) });
        r
    }

    fn all_tracks() -> Vec<Track> {
        recon(&[0, 1, 2, 3, 4, 5], &Sim3::identity()).tracks
    }

    #[test]
    fn graft_into_empty_is_exact() {
        let t = Sim3::new(2.0, Rotation3::from_euler_angles(0.1, 0.2, 0.3), Vector3::new(1.0, 0.0, 0.0));
        let src = recon(&[0, 1, 2, 3], &t);
        let group = BTreeSet::from([ViewId(2), ViewId(3)]);
        let mut dest = LocalReconstruction::empty(ClusterId(1));
        let out = transfer_submodel(&src, &group, &mut dest, &all_tracks(), 0.02, 0);
        assert_eq!(out, TransferOutcome::Grafted(2));
        for v in &group {
            assert_eq!(dest.poses[v], src.poses[v]);
        }
        assert!(dest.tracks.iter().all(|t| t.observations.keys().all(|v| group.contains(v))));
    }

    #[test]
    fn aligned_transfer_recovers_frame() {
        let t = Sim3::new(0.5, Rotation3::from_euler_angles(0.3, -0.2, 0.9), Vector3::new(3.0, -1.0, 2.0));
        let src = recon(&[3, 4, 5], &t);
        let mut dest = recon(&[0, 1, 2], &Sim3::identity());
        let group = BTreeSet::from([ViewId(3), ViewId(4), ViewId(5)]);
        let out = transfer_submodel(&src, &group, &mut dest, &all_tracks(), 0.02, 0);
        assert!(matches!(out, TransferOutcome::Aligned { common, .. } if common >= 50), "{out:?}");
        let (cams, _) = world();
        for v in [3, 4, 5] {
            let p = dest.poses[&ViewId(v)];
            assert!((p.center - cams[v as usize].center).norm() < 1e-9);
            assert!(crate::geometry::so3::angle_between(&p.rotation, &cams[v as usize].rotation) < 1e-9);
        }
    }

    #[test]
    fn few_common_tracks_defer() {
        let src = recon(&[3, 4, 5], &Sim3::identity());
        let mut dest = recon(&[0, 1, 2], &Sim3::identity());
        let tracks: Vec<Track> = all_tracks().into_iter().take(2).collect();
        let out = transfer_submodel(&src, &BTreeSet::from([ViewId(3)]), &mut dest, &tracks, 0.02, 0);
        assert_eq!(out, TransferOutcome::Deferred(2));
        assert_eq!(dest.poses.len(), 3);
    }
}
