#![allow(dead_code)]

use std::collections::BTreeMap;

use progressive_sfm::features::FeatureStore;
use progressive_sfm::simulator::{EdgeLabel, MatchEvent};
use progressive_sfm::viewgraph::Admission;
use progressive_sfm::{ViewGraph, ViewPair};

/// Loads events into a viewgraph and feature store the way the pipeline does,
/// keeping the simulator's label of every admitted edge.
pub fn ingest(events: &[MatchEvent], min_corr: u32) -> (ViewGraph, FeatureStore, BTreeMap<ViewPair, EdgeLabel>) {
    let mut g = ViewGraph::new(min_corr);
    let mut f = FeatureStore::default();
    let mut labels = BTreeMap::new();
    for ev in events {
        let v = g.add_view(ev.intrinsics);
        f.set_keypoints(v, ev.keypoints.clone());
        for e in &ev.edges {
            if let Ok(Admission::Admitted) = g.add_edge(e.other, v, e.geometry) {
                f.set_matches(e.other, v, e.matches.clone());
                labels.insert(ViewPair::new(e.other, v), e.label);
            }
        }
    }
    (g, f, labels)
}
