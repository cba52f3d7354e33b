use std::collections::{BTreeMap, BTreeSet};

mod common;

use common::ingest;
use progressive_sfm::local_reconstruction::{build_tracks, global_initialize, initialize_two_view, select_seed_pair, ReconConfig};
use progressive_sfm::registration::estimate_sim3_closed_form;
use progressive_sfm::rotation_averaging::{average_rotations, AveragingConfig};
use progressive_sfm::simulator::{generate_stream, generate_temple, NoiseParams, Scene, SceneParams, StreamParams};
use progressive_sfm::{ClusterId, Intrinsics, ViewGraph, ViewId};
use progressive_sfm::features::FeatureStore;

fn noisy(seed: u64, noise: NoiseParams, n: usize) -> (Scene, ViewGraph, FeatureStore, Vec<u32>) {
    let scene = generate_temple(&SceneParams::default(), seed).unwrap();
    let events = generate_stream(&scene, &StreamParams { noise, seed, ..StreamParams::default() });
    let (g, f, _) = ingest(&events[..n], 16);
    (scene, g, f, events[..n].iter().map(|e| e.camera).collect())
}

fn intrinsics(g: &ViewGraph) -> BTreeMap<ViewId, Intrinsics> {
    g.views().map(|v| (v, *g.intrinsics(v).unwrap())).collect()
}

#[test]
fn two_view_with_pixel_noise_fits_within_noise() {
    let noise = NoiseParams { rot_deg: 0.3, dir_deg: 0.5, px: 1.0 };
    let mut worst: f64 = 0.0;
    for seed in 0..50 {
        let (_, g, f, _) = noisy(seed, noise, 6);
        let sub = g.subgraph(&g.views().collect());
        let intr = intrinsics(&g);
        let pair = select_seed_pair(&sub, &f, &intr, &BTreeSet::new(), 2.0).unwrap();
        let two = g.subgraph(&BTreeSet::from([pair.a, pair.b]));
        let r = initialize_two_view(ClusterId(0), pair, &sub.edges[&pair], build_tracks(&two, &f), &intr, &ReconConfig::default()).unwrap();
        assert!(r.num_points() > 20, "seed {seed}");
        worst = worst.max(r.reprojection_rmse());
    }
    assert!(worst < 1.5, "worst rmse {worst} px");
}

#[test]
fn direction_noise_leaves_centers_within_two_percent() {
    let noise = NoiseParams { rot_deg: 0.0, dir_deg: 0.5, px: 0.0 };
    for seed in 0..20 {
        let (scene, g, f, cams) = noisy(seed, noise, 60);
        let sub = g.subgraph(&g.views().collect());
        let (rot, _, filtered) = average_rotations(&sub, &AveragingConfig::default()).unwrap();
        let r = global_initialize(ClusterId(0), &filtered, &rot, build_tracks(&filtered, &f), &intrinsics(&g), &ReconConfig::default()).unwrap();
        let pairs: Vec<_> = r.poses.iter().map(|(v, p)| (p.center, scene.cameras[cams[v.index()] as usize].pose.center)).collect();
        assert_eq!(pairs.len(), 60);
        let t = estimate_sim3_closed_form(&pairs).unwrap();
        let rmse = (pairs.iter().map(|(x, y)| (t.transform_point(x) - y).norm_squared()).sum::<f64>() / pairs.len() as f64).sqrt();
        assert!(rmse < 0.02 * scene.diameter(), "seed {seed}: {rmse} vs {}", scene.diameter());
    }
}
