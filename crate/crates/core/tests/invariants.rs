use std::collections::BTreeMap;

use progressive_sfm::local_reconstruction::tracks::reprojection_error;
use progressive_sfm::local_reconstruction::{LocalReconstruction, TriangulationConfig};
use progressive_sfm::pipeline::run::generate;
use progressive_sfm::pipeline::{Pipeline, Scenario};
use progressive_sfm::simulator::{NoiseParams, Ordering};
use progressive_sfm::ClusterId;
use proptest::prelude::*;

fn scenario(seed: u64, n_cameras: usize, fold: usize, confusion: f64, ordering: Ordering) -> Scenario {
    let mut s = Scenario::default();
    s.scene.n_cameras = n_cameras;
    s.scene.fold = fold;
    s.scene.points = 900;
    s.stream.confusion_rate = confusion;
    s.stream.ordering = ordering;
    s.with_seed(seed)
}

fn worst_track_error(r: &LocalReconstruction) -> f64 {
    let mut worst: f64 = 0.0;
    for t in r.tracks.iter().filter(|t| t.is_triangulated()) {
        let x = t.point.unwrap();
        for (v, o) in t.observations.iter().filter(|(v, _)| r.poses.contains_key(v)) {
            worst = worst.max(reprojection_error(&r.poses[v], &r.intrinsics[v], &x, &o.pixel).unwrap_or(f64::INFINITY));
        }
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 8, ..ProptestConfig::default() })]

    #[test]
    fn per_step_invariants_hold(seed in 0u64..1000, n in 24usize..40, fold in 1usize..4, confusion in prop::sample::select(vec![0.0, 0.5])) {
        let s = scenario(seed, n, fold, confusion, Ordering::Shuffled { seed });
        let (scene, doc) = generate(&s).unwrap();
        let cfg = s.resolved().3;
        let mut p = Pipeline::new(cfg, Some(scene));
        let mut prev: BTreeMap<ClusterId, LocalReconstruction> = BTreeMap::new();
        let bound = TriangulationConfig::default().max_reprojection_px;
        for ev in &doc.events {
            let snap = p.process_event(ev).unwrap();
            let m = &snap.metrics;
            prop_assert!(m.clusters_effective <= m.clusters_raw);
            prop_assert!(m.outlier_cameras <= m.registered_cameras);
            // no edge across clusters is closer than the cut
            for pair in p.graph().edge_pairs() {
                if p.partition().cluster_of(pair.a) != p.partition().cluster_of(pair.b) {
                    prop_assert!(p.graph().jaccard_distance(pair.a, pair.b).unwrap() >= cfg.eta);
                }
            }
            for (c, r) in p.reconstructions() {
                prop_assert!(worst_track_error(r) < bound, "cluster {c:?}");
                if !snap.reconstructed.contains(c) {
                    prop_assert_eq!(Some(r), prev.get(c));
                }
            }
            prev = p.reconstructions().clone();
        }
    }
}

#[test]
fn noiseless_stream_is_reconstructed_exactly() {
    let mut s = scenario(4, 60, 6, 0.0, Ordering::Linear);
    s.stream.noise = NoiseParams::zero();
    let (scene, doc) = generate(&s).unwrap();
    let mut p = Pipeline::new(s.resolved().3, Some(scene.clone()));
    let mut last = None;
    for ev in &doc.events {
        last = Some(p.process_event(ev).unwrap());
    }
    let m = last.unwrap().metrics;
    assert_eq!(m.registered_cameras, 60);
    assert_eq!(m.clusters_effective, 1);
    assert!(m.rmse_to_truth < 1e-6 * scene.diameter(), "rmse {}", m.rmse_to_truth);
}

#[test]
fn symmetry_free_scenes_pass_the_configuration_check() {
    for seed in 0..4 {
        let s = scenario(seed, 40, 1, 0.0, Ordering::Shuffled { seed });
        let (scene, doc) = generate(&s).unwrap();
        let cfg = s.resolved().3;
        let mut p = Pipeline::new(cfg, Some(scene));
        for ev in &doc.events {
            p.process_event(ev).unwrap();
            for r in p.reconstructions().values().filter(|r| !r.is_empty()) {
                assert!(r.rho_l_deg <= cfg.rho_lmax, "seed {seed}: {}", r.rho_l_deg);
            }
        }
        assert_eq!(p.reconstructions().values().map(|r| r.resets).sum::<usize>(), 0, "seed {seed}");
    }
}

#[test]
fn scaling_the_scene_keeps_center_distance_ratios() {
    let centers = |scale: f64| {
        let mut s = scenario(2, 60, 6, 0.0, Ordering::Linear);
        s.stream.noise = NoiseParams::zero();
        s.scene.radius *= scale;
        s.scene.structure_radius *= scale;
        s.scene.structure_height *= scale;
        s.scene.relief *= scale;
        let (scene, doc) = generate(&s).unwrap();
        let mut p = Pipeline::new(s.resolved().3, Some(scene));
        for ev in &doc.events {
            p.process_event(ev).unwrap();
        }
        let comps = p.components();
        assert_eq!(comps.len(), 1);
        let mut c = comps[0].cameras.clone();
        c.sort_by_key(|x| x.0);
        c.into_iter().map(|x| x.2).collect::<Vec<_>>()
    };
    let (a, b) = (centers(1.0), centers(2.0));
    assert_eq!(a.len(), b.len());
    let (da, db) = ((a[1] - a[0]).norm(), (b[1] - b[0]).norm());
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            let ra = (a[j] - a[i]).norm() / da;
            let rb = (b[j] - b[i]).norm() / db;
            assert!((ra - rb).abs() < 1e-6, "{i} {j}: {ra} vs {rb}");
        }
    }
}
