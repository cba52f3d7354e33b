use crate::features::FeatureStore;
use crate::geometry::CameraPose;
use crate::simulator::{generate_stream, generate_temple, NoiseParams, SceneParams, StreamParams};
use crate::viewgraph::{Admission, ViewGraph};

/// First `n` views of a linear simulator stream with all genuine edges.
pub(crate) fn simulated_with(n: usize, seed: u64, noise: NoiseParams) -> (ViewGraph, FeatureStore, Vec<CameraPose>) {
    let scene = generate_temple(&SceneParams::default(), seed).unwrap();
    let params = StreamParams { noise, seed, ..StreamParams::default() };
    let events = generate_stream(&scene, &params);
    let mut g = ViewGraph::new(16);
    let mut f = FeatureStore::default();
    let mut truth = Vec::new();
    for ev in events.iter().take(n) {
        let v = g.add_view(ev.intrinsics);
        f.set_keypoints(v, ev.keypoints.clone());
        truth.push(scene.cameras[ev.camera as usize].pose);
        for e in &ev.edges {
            if g.add_edge(e.other, v, e.geometry).unwrap() == Admission::Admitted {
                f.set_matches(e.other, v, e.matches.clone());
            }
        }
    }
    (g, f, truth)
}

pub(crate) fn simulated(n: usize, seed: u64) -> (ViewGraph, FeatureStore, Vec<CameraPose>) {
    simulated_with(n, seed, NoiseParams::zero())
}
