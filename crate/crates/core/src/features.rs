//! Keypoints per view and verified correspondences per view pair.

use std::collections::BTreeMap;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::viewgraph::{ViewId, ViewPair};

/// `(feature in pair.a, feature in pair.b)`.
pub type Match = (u32, u32);

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureStore {
    keypoints: BTreeMap<ViewId, Vec<Vector2<f64>>>,
    matches: BTreeMap<ViewPair, Vec<Match>>,
}

impl FeatureStore {
    pub fn set_keypoints(&mut self, view: ViewId, keypoints: Vec<Vector2<f64>>) {
        self.keypoints.insert(view, keypoints);
    }

    pub fn keypoints(&self, view: ViewId) -> &[Vector2<f64>] {
        self.keypoints.get(&view).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn keypoint(&self, view: ViewId, feature: u32) -> Option<Vector2<f64>> {
        self.keypoints.get(&view)?.get(feature as usize).copied()
    }

    /// Stores matches given for the oriented pair `(i, j)`; replaces earlier ones.
    pub fn set_matches(&mut self, i: ViewId, j: ViewId, matches: Vec<Match>) {
        let pair = ViewPair::new(i, j);
        let oriented = if pair.a == i { matches } else { matches.into_iter().map(|(x, y)| (y, x)).collect() };
        self.matches.insert(pair, oriented);
    }

    /// Matches oriented as `(feature in pair.a, feature in pair.b)`.
    pub fn matches(&self, pair: &ViewPair) -> &[Match] {
        self.matches.get(pair).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Matches oriented as `(feature in i, feature in j)`.
    pub fn matches_between(&self, i: ViewId, j: ViewId) -> Vec<Match> {
        let pair = ViewPair::new(i, j);
        let m = self.matches(&pair);
        if pair.a == i {
            m.to_vec()
        } else {
            m.iter().map(|(x, y)| (*y, *x)).collect()
        }
    }
}
