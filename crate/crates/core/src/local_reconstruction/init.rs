//! Starting a reconstruction: two-view seeds for small clusters, rotation-averaged
//! global positions for large ones.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use super::bundle::{bundle_adjust, BundleScope};
use super::tracks::{max_ray_angle, triangulate_dlt, triangulate_track, Track};
use super::{BuildPath, Gauge, LocalReconstruction, ReconConfig, ReconError};
use crate::features::FeatureStore;
use crate::geometry::{CameraPose, Intrinsics};
use crate::rotation_averaging::GlobalRotations;
use crate::viewgraph::{RelativeGeometry, SubGraph, ViewId, ViewPair};
use crate::ClusterId;

/// Poses of a pair from its relative geometry: `a` at the origin, unit baseline.
pub fn two_view_poses(geom: &RelativeGeometry) -> (CameraPose, CameraPose) {
    let r = geom.rotation;
    (CameraPose::identity(), CameraPose::new(r, -(r.inverse() * geom.translation_direction)))
}

/// Median triangulation angle of the pair's matches under its two-view poses, degrees.
/// Matches that triangulate behind either camera count as zero.
pub fn median_triangulation_angle(
    pair: &ViewPair,
    geom: &RelativeGeometry,
    features: &FeatureStore,
    intr_a: &Intrinsics,
    intr_b: &Intrinsics,
) -> f64 {
    let (pa, pb) = two_view_poses(geom);
    let mut angles: Vec<f64> = features
        .matches(pair)
        .iter()
        .filter_map(|(fa, fb)| {
            let xa = features.keypoint(pair.a, *fa)?;
            let xb = features.keypoint(pair.b, *fb)?;
            let x = triangulate_dlt(&[(pa, *intr_a, xa), (pb, *intr_b, xb)]);
            Some(match x {
                Some(x) if pa.to_camera(&x).z > 0.0 && pb.to_camera(&x).z > 0.0 => {
                    max_ray_angle(&x, &[pa.center, pb.center]).to_degrees()
                }
                _ => 0.0,
            })
        })
        .collect();
    if angles.is_empty() {
        return 0.0;
    }
    angles.sort_by(f64::total_cmp);
    angles[angles.len() / 2]
}

/// Heaviest edge whose median triangulation angle exceeds `min_angle_deg`; the heaviest
/// edge overall when none does. Pairs in `excluded` are skipped.
pub fn select_seed_pair(
    sub: &SubGraph,
    features: &FeatureStore,
    intrinsics: &BTreeMap<ViewId, Intrinsics>,
    excluded: &BTreeSet<ViewPair>,
    min_angle_deg: f64,
) -> Result<ViewPair, ReconError> {
    let mut edges: Vec<(&ViewPair, &RelativeGeometry)> =
        sub.edges.iter().filter(|(p, _)| !excluded.contains(p)).collect();
    if edges.is_empty() {
        return Err(ReconError::NoEdges);
    }
    edges.sort_by(|a, b| b.1.inlier_count.cmp(&a.1.inlier_count).then(a.0.cmp(b.0)));
    for (p, g) in &edges {
        let (Some(ia), Some(ib)) = (intrinsics.get(&p.a), intrinsics.get(&p.b)) else { continue };
        if median_triangulation_angle(p, g, features, ia, ib) > min_angle_deg {
            return Ok(**p);
        }
    }
    Ok(*edges[0].0)
}

/// Two-view reconstruction of `pair`. `tracks` are the cluster's tracks; those seen by
/// both views get triangulated.
pub fn initialize_two_view(
    cluster: ClusterId,
    pair: ViewPair,
    geom: &RelativeGeometry,
    tracks: Vec<Track>,
    intrinsics: &BTreeMap<ViewId, Intrinsics>,
    cfg: &ReconConfig,
) -> Result<LocalReconstruction, ReconError> {
    let common = tracks
        .iter()
        .filter(|t| t.observations.contains_key(&pair.a) && t.observations.contains_key(&pair.b))
        .count();
    if common < 8 {
        return Err(ReconError::TooFewCorrespondences(common));
    }
    let (pa, pb) = two_view_poses(geom);
    let mut r = LocalReconstruction::empty(cluster);
    r.tracks = tracks;
    for (v, p) in [(pair.a, pa), (pair.b, pb)] {
        r.poses.insert(v, p);
        r.intrinsics.insert(v, intrinsics[&v]);
    }
    r.gauge = Some(Gauge { fixed: pair.a, scale: pair.b });
    r.seed_pair = Some(pair);
    r.path = BuildPath::Incremental;
    r.retriangulate_all(&cfg.triangulation);
    bundle_adjust(&mut r, &BundleScope::Full, &cfg.bundle);
    r.enforce_reprojection_bound(cfg.triangulation.max_reprojection_px);
    r.registered_at_full_ba = r.poses.len();
    Ok(r)
}

/// Camera centers from averaged rotations and pairwise directions: least squares on
/// `[d]x (c_i - c_j) = 0`, `d` the world direction of edge `(i, j)`, subject to the
/// projected baselines `d . (c_i - c_j)` summing to the edge count. The gauge view sits at
/// the origin; the result is rescaled to a mean edge length of 1.
pub fn solve_centers(sub: &SubGraph, rotations: &GlobalRotations) -> Result<BTreeMap<ViewId, Vector3<f64>>, ReconError> {
    let views: Vec<ViewId> = sub.views.iter().filter(|v| rotations.get(**v).is_some()).copied().collect();
    if views.len() < 2 {
        return Err(ReconError::RankDeficient(views));
    }
    let gauge = if views.contains(&rotations.gauge) { rotations.gauge } else { views[0] };
    let free: Vec<ViewId> = views.iter().filter(|v| **v != gauge).copied().collect();
    let col: BTreeMap<ViewId, usize> = free.iter().enumerate().map(|(k, v)| (*v, 3 * k)).collect();
    let n = 3 * free.len();
    let mut h = DMatrix::<f64>::zeros(n, n);
    let mut b = DVector::<f64>::zeros(n);
    let mut used: Vec<ViewPair> = Vec::new();
    for (p, g) in &sub.edges {
        let (Some(_), Some(rb)) = (rotations.get(p.a), rotations.get(p.b)) else { continue };
        // t_ab is proportional to R_b (c_a - c_b)
        let d = rb.inverse() * g.translation_direction;
        let proj = Matrix3::identity() - d * d.transpose();
        let ends = [(col.get(&p.a).copied(), 1.0), (col.get(&p.b).copied(), -1.0)];
        for (x, sx) in ends {
            let Some(x) = x else { continue };
            let mut bx = b.rows_mut(x, 3);
            bx += d * sx;
            for (y, sy) in ends {
                if let Some(y) = y {
                    let mut blk = h.view_mut((x, y), (3, 3));
                    blk += proj * (sx * sy);
                }
            }
        }
        used.push(*p);
    }
    if used.is_empty() {
        return Err(ReconError::RankDeficient(views));
    }
    // the overall scale is always free; any further null direction is a real ambiguity
    let eig = h.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| eig.eigenvalues[*a].total_cmp(&eig.eigenvalues[*b]));
    let largest = eig.eigenvalues.amax().max(1e-300);
    if n > 1 && eig.eigenvalues[order[1]] < 1e-10 * largest {
        let null = eig.eigenvectors.column(order[1]);
        let loose: Vec<ViewId> =
            free.iter().enumerate().filter(|(i, _)| null.rows(3 * i, 3).norm() > 1e-6).map(|(_, v)| *v).collect();
        return Err(ReconError::RankDeficient(loose));
    }
    let mut kkt = DMatrix::<f64>::zeros(n + 1, n + 1);
    kkt.view_mut((0, 0), (n, n)).copy_from(&h);
    kkt.view_mut((0, n), (n, 1)).copy_from(&b);
    kkt.view_mut((n, 0), (1, n)).copy_from(&b.transpose());
    let mut rhs = DVector::<f64>::zeros(n + 1);
    rhs[n] = used.len() as f64;
    let Some(x) = kkt.lu().solve(&rhs) else {
        return Err(ReconError::RankDeficient(free));
    };
    let mut centers: BTreeMap<ViewId, Vector3<f64>> = BTreeMap::from([(gauge, Vector3::zeros())]);
    for (v, c) in &col {
        centers.insert(*v, Vector3::new(x[*c], x[c + 1], x[c + 2]));
    }
    let mean: f64 = used.iter().map(|p| (centers[&p.a] - centers[&p.b]).norm()).sum::<f64>() / used.len() as f64;
    if !(mean > 0.0) {
        return Err(ReconError::RankDeficient(views));
    }
    for c in centers.values_mut() {
        *c /= mean;
    }
    Ok(centers)
}

/// Reconstruction of a large cluster from its averaged rotations: fixed rotations,
/// least-squares centers, triangulation and a full bundle adjustment.
pub fn global_initialize(
    cluster: ClusterId,
    sub: &SubGraph,
    rotations: &GlobalRotations,
    tracks: Vec<Track>,
    intrinsics: &BTreeMap<ViewId, Intrinsics>,
    cfg: &ReconConfig,
) -> Result<LocalReconstruction, ReconError> {
    let centers = solve_centers(sub, rotations)?;
    let mut r = LocalReconstruction::empty(cluster);
    r.tracks = tracks;
    for (v, c) in &centers {
        r.poses.insert(*v, CameraPose::new(rotations.rotations[v], *c));
        r.intrinsics.insert(*v, intrinsics[v]);
    }
    let fixed = if centers.contains_key(&rotations.gauge) { rotations.gauge } else { *centers.keys().next().unwrap() };
    let scale = sub
        .neighbors(fixed)
        .filter(|(v, _)| centers.contains_key(v))
        .max_by(|a, b| a.1.inlier_count.cmp(&b.1.inlier_count).then(b.0.cmp(&a.0)))
        .map(|(v, _)| v)
        .unwrap_or_else(|| *centers.keys().find(|v| **v != fixed).unwrap());
    r.gauge = Some(Gauge { fixed, scale });
    r.path = BuildPath::Global;
    r.retriangulate_all(&cfg.triangulation);
    bundle_adjust(&mut r, &BundleScope::Full, &cfg.bundle);
    r.enforce_reprojection_bound(cfg.triangulation.max_reprojection_px);
    r.registered_at_full_ba = r.poses.len();
    Ok(r)
}

pub(crate) fn triangulate_untriangulated(r: &mut LocalReconstruction, views: &BTreeSet<ViewId>, cfg: &super::tracks::TriangulationConfig) {
    let (poses, intr) = (&r.poses, &r.intrinsics);
    for t in r.tracks.iter_mut() {
        if !t.is_triangulated() && t.observations.keys().any(|v| views.contains(v)) {
            triangulate_track(t, poses, intr, cfg);
        }
    }
}
