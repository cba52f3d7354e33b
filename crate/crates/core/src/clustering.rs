//! Single-linkage clustering of the viewgraph on the weighted Jaccard distance.
//!
//! Single linkage stopped at threshold `eta` equals the connected components of the
//! graph that keeps exactly the edges with `d < eta`, which is what is computed here.
//! Incremental updates only revisit clusters touched by edges whose distance changed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::viewgraph::{ViewGraph, ViewId, ViewPair};

/// Default clustering threshold on the Jaccard distance.
pub const DEFAULT_ETA: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClusterId(pub u32);

impl fmt::Display for ClusterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Partition {
    pub assignment: BTreeMap<ViewId, ClusterId>,
    pub clusters: BTreeMap<ClusterId, BTreeSet<ViewId>>,
    pub generation: u32,
    /// Next unused cluster id; ids are never reused within a run.
    pub next_id: u32,
}

impl Partition {
    pub fn num_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn cluster_of(&self, v: ViewId) -> Option<ClusterId> {
        self.assignment.get(&v).copied()
    }

    pub fn members(&self, c: ClusterId) -> Option<&BTreeSet<ViewId>> {
        self.clusters.get(&c)
    }

    /// Memberships without ids, ordered by lowest member.
    pub fn groups(&self) -> BTreeSet<Vec<ViewId>> {
        self.clusters
            .values()
            .map(|m| m.iter().copied().collect())
            .collect()
    }

    /// Same grouping of views, regardless of cluster ids.
    pub fn same_grouping(&self, other: &Partition) -> bool {
        self.groups() == other.groups()
    }

    fn insert_cluster(&mut self, id: ClusterId, members: BTreeSet<ViewId>) {
        for v in &members {
            self.assignment.insert(*v, id);
        }
        self.next_id = self.next_id.max(id.0 + 1);
        self.clusters.insert(id, members);
    }

    /// Checks bookkeeping consistency and the stopping rule of the clustering.
    pub fn validate(&self, graph: &ViewGraph, eta: f64) -> Result<(), String> {
        let mut seen = BTreeSet::new();
        for (c, members) in &self.clusters {
            if members.is_empty() {
                return Err(format!("cluster {c} is empty"));
            }
            for v in members {
                if self.assignment.get(v) != Some(c) {
                    return Err(format!("{v} listed in {c} but assigned elsewhere"));
                }
                if !seen.insert(*v) {
                    return Err(format!("{v} in two clusters"));
                }
            }
        }
        if seen.len() != self.assignment.len() {
            return Err("assignment has views missing from clusters".into());
        }
        for v in graph.views() {
            if !self.assignment.contains_key(&v) {
                return Err(format!("{v} unassigned"));
            }
        }
        for pair in graph.edge_pairs() {
            if self.assignment[&pair.a] != self.assignment[&pair.b]
                && graph.jaccard_unchecked(pair.a, pair.b) < eta
            {
                return Err(format!("edge {}-{} below eta crosses clusters", pair.a, pair.b));
            }
        }
        Ok(())
    }
}

/// Tracked changes between two consecutive partitions.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TopologyDelta {
    pub added: BTreeMap<ClusterId, BTreeSet<ViewId>>,
    pub removed: BTreeMap<ClusterId, BTreeSet<ViewId>>,
    pub transfers: Vec<Transfer>,
    pub unchanged_clusters: BTreeSet<ClusterId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transfer {
    pub source: ClusterId,
    pub destination: ClusterId,
    pub views: BTreeSet<ViewId>,
}

impl TopologyDelta {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty() && self.transfers.is_empty()
    }

    pub fn transfers_into(&self, c: ClusterId) -> impl Iterator<Item = &Transfer> {
        self.transfers.iter().filter(move |t| t.destination == c)
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Components of `views` linked by edges with `d < eta`, each sorted, ordered by lowest member.
fn threshold_components(graph: &ViewGraph, views: &BTreeSet<ViewId>, eta: f64) -> Vec<BTreeSet<ViewId>> {
    let list: Vec<ViewId> = views.iter().copied().collect();
    let index: BTreeMap<ViewId, usize> = list.iter().enumerate().map(|(k, v)| (*v, k)).collect();
    let mut uf = UnionFind::new(list.len());
    for (k, v) in list.iter().enumerate() {
        for (n, _) in graph.neighbors(*v) {
            if n <= *v {
                continue;
            }
            if let Some(&kn) = index.get(&n) {
                if graph.jaccard_unchecked(*v, n) < eta {
                    uf.union(k, kn);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, BTreeSet<ViewId>> = BTreeMap::new();
    for (k, v) in list.iter().enumerate() {
        let r = uf.find(k);
        groups.entry(r).or_default().insert(*v);
    }
    let mut out: Vec<_> = groups.into_values().collect();
    out.sort_by_key(|g| *g.iter().next().unwrap());
    out
}

/// Batch clustering of the whole graph. Cluster ids are the lowest member view id.
pub fn cluster_full(graph: &ViewGraph, eta: f64) -> Partition {
    let all: BTreeSet<ViewId> = graph.views().collect();
    let mut p = Partition {
        generation: graph.num_views() as u32,
        ..Default::default()
    };
    for comp in threshold_components(graph, &all, eta) {
        let id = ClusterId(comp.iter().next().unwrap().0);
        p.insert_cluster(id, comp);
    }
    p.next_id = p.next_id.max(graph.num_views() as u32);
    p
}

/// Matches `before` clusters to `after` groups by maximal overlap.
/// Ties are broken by lowest view id of the group, then lowest previous cluster id.
fn match_by_overlap(
    before: &BTreeMap<ClusterId, BTreeSet<ViewId>>,
    groups: &[BTreeSet<ViewId>],
) -> BTreeMap<usize, ClusterId> {
    let mut candidates = Vec::new();
    for (gi, g) in groups.iter().enumerate() {
        for (cid, members) in before {
            let overlap = g.intersection(members).count();
            if overlap > 0 {
                candidates.push((overlap, *g.iter().next().unwrap(), *cid, gi));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_groups = BTreeSet::new();
    let mut used_ids = BTreeSet::new();
    let mut out = BTreeMap::new();
    for (_, _, cid, gi) in candidates {
        if used_groups.contains(&gi) || used_ids.contains(&cid) {
            continue;
        }
        used_groups.insert(gi);
        used_ids.insert(cid);
        out.insert(gi, cid);
    }
    out
}

/// Updates `prev` for the insertion of `new_view` (whose edges are already in `graph`).
pub fn cluster_incremental(
    prev: &Partition,
    graph: &ViewGraph,
    new_view: ViewId,
    eta: f64,
) -> (Partition, TopologyDelta) {
    let changed = graph.edges_with_changed_distance(new_view);
    let mut affected_ids: BTreeSet<ClusterId> = BTreeSet::new();
    for pair in &changed {
        for v in [pair.a, pair.b] {
            if let Some(c) = prev.cluster_of(v) {
                affected_ids.insert(c);
            }
        }
    }
    if let Some(c) = prev.cluster_of(new_view) {
        affected_ids.insert(c);
    }

    let mut affected_views: BTreeSet<ViewId> = BTreeSet::new();
    affected_views.insert(new_view);
    for c in &affected_ids {
        affected_views.extend(prev.clusters[c].iter().copied());
    }

    let groups = threshold_components(graph, &affected_views, eta);
    let before: BTreeMap<ClusterId, BTreeSet<ViewId>> = affected_ids
        .iter()
        .map(|c| (*c, prev.clusters[c].clone()))
        .collect();
    let matched = match_by_overlap(&before, &groups);

    let mut next = Partition {
        generation: prev.generation + 1,
        next_id: prev.next_id,
        ..Default::default()
    };
    for (c, members) in &prev.clusters {
        if !affected_ids.contains(c) {
            next.insert_cluster(*c, members.clone());
        }
    }
    for (gi, g) in groups.into_iter().enumerate() {
        let id = match matched.get(&gi) {
            Some(id) => *id,
            None => {
                let id = ClusterId(next.next_id);
                next.next_id += 1;
                id
            }
        };
        next.insert_cluster(id, g);
    }
    let delta = diff_partitions(prev, &next, graph);
    (next, delta)
}

/// Topology changes from `before` to `after`.
///
/// Cluster identity is matched by maximal overlap. Keys of `added` and transfer
/// destinations use `after`'s ids; `removed` and transfer sources use `before`'s ids.
pub fn diff_partitions(before: &Partition, after: &Partition, graph: &ViewGraph) -> TopologyDelta {
    let after_ids: Vec<ClusterId> = after.clusters.keys().copied().collect();
    let after_groups: Vec<BTreeSet<ViewId>> = after.clusters.values().cloned().collect();
    let matched = match_by_overlap(&before.clusters, &after_groups);
    // after id -> matched before id
    let identity: BTreeMap<ClusterId, ClusterId> = matched
        .iter()
        .map(|(gi, before_id)| (after_ids[*gi], *before_id))
        .collect();

    let mut delta = TopologyDelta::default();
    let mut moved: BTreeMap<(ClusterId, ClusterId), BTreeSet<ViewId>> = BTreeMap::new();
    for (aid, members) in &after.clusters {
        let matched_before = identity.get(aid);
        if let Some(bid) = matched_before {
            if before.clusters.get(bid) == Some(members) {
                delta.unchanged_clusters.insert(*aid);
                continue;
            }
        }
        for v in members {
            match before.cluster_of(*v) {
                None => {
                    delta.added.entry(*aid).or_default().insert(*v);
                }
                Some(bid) if Some(&bid) == matched_before => {}
                Some(bid) => {
                    delta.added.entry(*aid).or_default().insert(*v);
                    delta.removed.entry(bid).or_default().insert(*v);
                    moved.entry((bid, *aid)).or_default().insert(*v);
                }
            }
        }
    }

    for ((source, destination), views) in moved {
        for group in connected_subsets(graph, &views) {
            delta.transfers.push(Transfer { source, destination, views: group });
        }
    }
    delta
}

/// Maximal subsets of `views` connected through admitted edges among themselves.
fn connected_subsets(graph: &ViewGraph, views: &BTreeSet<ViewId>) -> Vec<BTreeSet<ViewId>> {
    let list: Vec<ViewId> = views.iter().copied().collect();
    let index: BTreeMap<ViewId, usize> = list.iter().enumerate().map(|(k, v)| (*v, k)).collect();
    let mut uf = UnionFind::new(list.len());
    for (k, v) in list.iter().enumerate() {
        for (n, _) in graph.neighbors(*v) {
            if let Some(&kn) = index.get(&n) {
                uf.union(k, kn);
            }
        }
    }
    let mut groups: BTreeMap<usize, BTreeSet<ViewId>> = BTreeMap::new();
    for (k, v) in list.iter().enumerate() {
        let r = uf.find(k);
        groups.entry(r).or_default().insert(*v);
    }
    let mut out: Vec<_> = groups.into_values().collect();
    out.sort_by_key(|g| *g.iter().next().unwrap());
    out
}

/// Pairs of the partition's clusters joined by at least one admitted edge.
pub fn inter_cluster_edges(partition: &Partition, graph: &ViewGraph) -> BTreeMap<(ClusterId, ClusterId), Vec<ViewPair>> {
    let mut out: BTreeMap<(ClusterId, ClusterId), Vec<ViewPair>> = BTreeMap::new();
    for pair in graph.edge_pairs() {
        let (Some(ca), Some(cb)) = (partition.cluster_of(pair.a), partition.cluster_of(pair.b)) else {
            continue;
        };
        if ca != cb {
            let key = if ca < cb { (ca, cb) } else { (cb, ca) };
            out.entry(key).or_default().push(pair);
        }
    }
    out
}
