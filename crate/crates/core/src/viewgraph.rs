//! Dynamic viewgraph: views, verified two-view geometries and the matching matrix.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{rotation_from_wxyz, rotation_to_wxyz, so3, Intrinsics};

/// Default minimum number of verified correspondences for an edge.
pub const DEFAULT_MIN_CORRESPONDENCES: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ViewId(pub u32);

impl ViewId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ViewId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

/// Unordered view pair, stored with `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ViewPair {
    pub a: ViewId,
    pub b: ViewId,
}

impl ViewPair {
    pub fn new(i: ViewId, j: ViewId) -> Self {
        if i <= j {
            Self { a: i, b: j }
        } else {
            Self { a: j, b: i }
        }
    }

    pub fn contains(&self, v: ViewId) -> bool {
        self.a == v || self.b == v
    }

    pub fn other(&self, v: ViewId) -> ViewId {
        if self.a == v {
            self.b
        } else {
            self.a
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ViewGraphError {
    #[error("unknown view {0}")]
    UnknownView(ViewId),
    #[error("self edge on view {0}")]
    SelfEdge(ViewId),
    #[error("relative rotation is not a proper rotation (deviation {0:.3e})")]
    InvalidRotation(f64),
    #[error("translation direction is not unit length (norm {0})")]
    InvalidDirection(f64),
    #[error("inlier count must be positive")]
    ZeroInliers,
}

/// Two-view geometry of an oriented pair `(i, j)`: `x_j = R x_i + s t` for unknown `s > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeGeometry {
    pub rotation: Rotation3<f64>,
    pub translation_direction: Vector3<f64>,
    pub inlier_count: u32,
}

impl RelativeGeometry {
    pub fn new(
        rotation: Matrix3<f64>,
        translation_direction: Vector3<f64>,
        inlier_count: u32,
    ) -> Result<Self, ViewGraphError> {
        let dev = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if !(dev <= 1e-9) || rotation.determinant() <= 0.0 {
            return Err(ViewGraphError::InvalidRotation(dev));
        }
        let n = translation_direction.norm();
        if !((n - 1.0).abs() <= 1e-9) {
            return Err(ViewGraphError::InvalidDirection(n));
        }
        if inlier_count == 0 {
            return Err(ViewGraphError::ZeroInliers);
        }
        Ok(Self {
            rotation: Rotation3::from_matrix_unchecked(rotation),
            translation_direction,
            inlier_count,
        })
    }

    /// Geometry of the reversed pair `(j, i)`.
    pub fn inverse(&self) -> Self {
        let rt = self.rotation.inverse();
        Self {
            rotation: rt,
            translation_direction: -(rt * self.translation_direction),
            inlier_count: self.inlier_count,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    Admitted,
    RejectedBelowThreshold,
}

/// Cluster-local view of the graph: a vertex subset and every edge between its members.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SubGraph {
    pub views: Vec<ViewId>,
    /// Geometries oriented from `pair.a` to `pair.b`.
    pub edges: BTreeMap<ViewPair, RelativeGeometry>,
}

impl SubGraph {
    pub fn contains(&self, v: ViewId) -> bool {
        self.views.binary_search(&v).is_ok()
    }

    /// Geometry oriented from `i` to `j`.
    pub fn geometry(&self, i: ViewId, j: ViewId) -> Option<RelativeGeometry> {
        let pair = ViewPair::new(i, j);
        self.edges
            .get(&pair)
            .map(|g| if pair.a == i { *g } else { g.inverse() })
    }

    pub fn without_edges(&self, removed: &BTreeSet<ViewPair>) -> SubGraph {
        SubGraph {
            views: self.views.clone(),
            edges: self
                .edges
                .iter()
                .filter(|(p, _)| !removed.contains(p))
                .map(|(p, g)| (*p, *g))
                .collect(),
        }
    }

    pub fn neighbors(&self, v: ViewId) -> impl Iterator<Item = (ViewId, &RelativeGeometry)> + '_ {
        self.edges
            .iter()
            .filter(move |(p, _)| p.contains(v))
            .map(move |(p, g)| (p.other(v), g))
    }

    /// Connected components, each sorted, ordered by lowest member.
    pub fn components(&self) -> Vec<Vec<ViewId>> {
        let index: BTreeMap<ViewId, usize> =
            self.views.iter().enumerate().map(|(k, v)| (*v, k)).collect();
        let mut parent: Vec<usize> = (0..self.views.len()).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for pair in self.edges.keys() {
            let (Some(&a), Some(&b)) = (index.get(&pair.a), index.get(&pair.b)) else {
                continue;
            };
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
        let mut groups: BTreeMap<usize, Vec<ViewId>> = BTreeMap::new();
        for (k, v) in self.views.iter().enumerate() {
            let r = find(&mut parent, k);
            groups.entry(r).or_default().push(*v);
        }
        groups.into_values().collect()
    }
}

#[derive(Debug, Clone)]
pub struct ViewGraph {
    intrinsics: Vec<Intrinsics>,
    edges: BTreeMap<ViewPair, RelativeGeometry>,
    /// Sparse symmetric rows of the matching matrix.
    rows: Vec<BTreeMap<ViewId, u32>>,
    row_sums: Vec<u64>,
    min_correspondences: u32,
}

impl Default for ViewGraph {
    fn default() -> Self {
        Self::new(DEFAULT_MIN_CORRESPONDENCES)
    }
}

impl ViewGraph {
    pub fn new(min_correspondences: u32) -> Self {
        Self {
            intrinsics: Vec::new(),
            edges: BTreeMap::new(),
            rows: Vec::new(),
            row_sums: Vec::new(),
            min_correspondences,
        }
    }

    pub fn min_correspondences(&self) -> u32 {
        self.min_correspondences
    }

    pub fn add_view(&mut self, intrinsics: Intrinsics) -> ViewId {
        let id = ViewId(self.intrinsics.len() as u32);
        self.intrinsics.push(intrinsics);
        self.rows.push(BTreeMap::new());
        self.row_sums.push(0);
        id
    }

    pub fn num_views(&self) -> usize {
        self.intrinsics.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn views(&self) -> impl Iterator<Item = ViewId> {
        (0..self.intrinsics.len() as u32).map(ViewId)
    }

    pub fn contains(&self, v: ViewId) -> bool {
        v.index() < self.intrinsics.len()
    }

    fn check(&self, v: ViewId) -> Result<(), ViewGraphError> {
        if self.contains(v) {
            Ok(())
        } else {
            Err(ViewGraphError::UnknownView(v))
        }
    }

    pub fn intrinsics(&self, v: ViewId) -> Option<&Intrinsics> {
        self.intrinsics.get(v.index())
    }

    /// Inserts or replaces the geometry of `(i, j)` if it clears the admission threshold.
    pub fn add_edge(
        &mut self,
        i: ViewId,
        j: ViewId,
        geom: RelativeGeometry,
    ) -> Result<Admission, ViewGraphError> {
        self.check(i)?;
        self.check(j)?;
        if i == j {
            return Err(ViewGraphError::SelfEdge(i));
        }
        if geom.inlier_count < self.min_correspondences {
            return Ok(Admission::RejectedBelowThreshold);
        }
        let pair = ViewPair::new(i, j);
        let oriented = if pair.a == i { geom } else { geom.inverse() };
        if let Some(old) = self.edges.insert(pair, oriented) {
            self.row_sums[i.index()] -= old.inlier_count as u64;
            self.row_sums[j.index()] -= old.inlier_count as u64;
        }
        let m = geom.inlier_count;
        self.rows[i.index()].insert(j, m);
        self.rows[j.index()].insert(i, m);
        self.row_sums[i.index()] += m as u64;
        self.row_sums[j.index()] += m as u64;
        Ok(Admission::Admitted)
    }

    /// Entry `M_ij` of the matching matrix (0 on the diagonal and for non-edges).
    pub fn matches(&self, i: ViewId, j: ViewId) -> u32 {
        self.rows
            .get(i.index())
            .and_then(|r| r.get(&j))
            .copied()
            .unwrap_or(0)
    }

    pub fn neighbors(&self, v: ViewId) -> impl Iterator<Item = (ViewId, u32)> + '_ {
        self.rows
            .get(v.index())
            .into_iter()
            .flat_map(|r| r.iter().map(|(k, m)| (*k, *m)))
    }

    pub fn degree(&self, v: ViewId) -> usize {
        self.rows.get(v.index()).map_or(0, |r| r.len())
    }

    /// Geometry oriented from `i` to `j`.
    pub fn geometry(&self, i: ViewId, j: ViewId) -> Option<RelativeGeometry> {
        let pair = ViewPair::new(i, j);
        self.edges
            .get(&pair)
            .map(|g| if pair.a == i { *g } else { g.inverse() })
    }

    pub fn edges(&self) -> impl Iterator<Item = (&ViewPair, &RelativeGeometry)> {
        self.edges.iter()
    }

    pub fn edge_pairs(&self) -> impl Iterator<Item = ViewPair> + '_ {
        self.edges.keys().copied()
    }

    /// Weighted Jaccard distance of the neighborhoods of `i` and `j`.
    ///
    /// `1 - sum_{n in N} (M_in + M_nj) / sum_n (M_in + M_nj)`, with `N` the views
    /// matched to both. Exactly 1 when neither view has any match.
    pub fn jaccard_distance(&self, i: ViewId, j: ViewId) -> Result<f64, ViewGraphError> {
        self.check(i)?;
        self.check(j)?;
        Ok(self.jaccard_unchecked(i, j))
    }

    pub(crate) fn jaccard_unchecked(&self, i: ViewId, j: ViewId) -> f64 {
        let denom = self.row_sums[i.index()] + self.row_sums[j.index()];
        if denom == 0 {
            return 1.0;
        }
        let (ri, rj) = (&self.rows[i.index()], &self.rows[j.index()]);
        let (small, large) = if ri.len() <= rj.len() { (ri, rj) } else { (rj, ri) };
        let mut numer: u64 = 0;
        for (n, m_small) in small {
            if let Some(m_large) = large.get(n) {
                numer += (*m_small + *m_large) as u64;
            }
        }
        1.0 - numer as f64 / denom as f64
    }

    /// Edges whose Jaccard distance may differ after `new_view`'s edges were inserted.
    pub fn edges_with_changed_distance(&self, new_view: ViewId) -> BTreeSet<ViewPair> {
        let mut touched: BTreeSet<ViewId> = self.neighbors(new_view).map(|(n, _)| n).collect();
        if touched.is_empty() {
            return BTreeSet::new();
        }
        touched.insert(new_view);
        let mut out = BTreeSet::new();
        for v in &touched {
            for (n, _) in self.neighbors(*v) {
                out.insert(ViewPair::new(*v, n));
            }
        }
        out
    }

    /// Induced subgraph over `members`.
    pub fn subgraph(&self, members: &BTreeSet<ViewId>) -> SubGraph {
        let mut edges = BTreeMap::new();
        for v in members {
            for (n, _) in self.neighbors(*v) {
                if n > *v && members.contains(&n) {
                    let pair = ViewPair::new(*v, n);
                    edges.insert(pair, self.edges[&pair]);
                }
            }
        }
        SubGraph { views: members.iter().copied().collect(), edges }
    }

    /// Rebuilds the matching matrix from the stored edges.
    pub fn recomputed_matching_rows(&self) -> Vec<BTreeMap<ViewId, u32>> {
        let mut rows = vec![BTreeMap::new(); self.intrinsics.len()];
        for (p, g) in &self.edges {
            rows[p.a.index()].insert(p.b, g.inlier_count);
            rows[p.b.index()].insert(p.a, g.inlier_count);
        }
        rows
    }

    pub fn matching_rows(&self) -> &[BTreeMap<ViewId, u32>] {
        &self.rows
    }

    pub fn to_document(&self) -> ViewGraphDocument {
        ViewGraphDocument {
            min_correspondences: self.min_correspondences,
            views: self
                .intrinsics
                .iter()
                .enumerate()
                .map(|(k, c)| ViewRecord { id: k as u32, fx: c.fx, fy: c.fy, cx: c.cx, cy: c.cy })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|(p, g)| EdgeRecord {
                    i: p.a.0,
                    j: p.b.0,
                    quaternion_wxyz: rotation_to_wxyz(&g.rotation),
                    direction_xyz: g.translation_direction.into(),
                    inliers: g.inlier_count,
                })
                .collect(),
        }
    }

    pub fn from_document(doc: &ViewGraphDocument) -> Result<Self, ViewGraphError> {
        let mut g = ViewGraph::new(doc.min_correspondences);
        let mut views = doc.views.clone();
        views.sort_by_key(|v| v.id);
        for (k, v) in views.iter().enumerate() {
            if v.id as usize != k {
                return Err(ViewGraphError::UnknownView(ViewId(v.id)));
            }
            g.add_view(Intrinsics::new(v.fx, v.fy, v.cx, v.cy));
        }
        for e in &doc.edges {
            let r = rotation_from_wxyz(e.quaternion_wxyz);
            let r = so3::project_to_rotation(r.matrix());
            let d = Vector3::from(e.direction_xyz).normalize();
            let geom = RelativeGeometry::new(r.into_inner(), d, e.inliers)?;
            g.add_edge(ViewId(e.i), ViewId(e.j), geom)?;
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord {
    pub id: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub i: u32,
    pub j: u32,
    pub quaternion_wxyz: [f64; 4],
    pub direction_xyz: [f64; 3],
    pub inliers: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewGraphDocument {
    pub min_correspondences: u32,
    pub views: Vec<ViewRecord>,
    pub edges: Vec<EdgeRecord>,
}
