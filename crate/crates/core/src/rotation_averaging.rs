//! Robust l1 rotation averaging inside a cluster subgraph.
//!
//! Global rotations are seeded by chaining relative rotations along a maximum-weight
//! spanning tree, then refined in the tangent space: every sweep linearizes the
//! relative errors (`omega_rel ~ omega_j - omega_i`), solves the weighted l1 problem
//! by IRLS and applies the update through the exponential map. Edges whose final
//! residual exceeds `rho_gmax` are dropped from the cluster-local graph.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use nalgebra::{DMatrix, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::so3;
use crate::viewgraph::{SubGraph, ViewId, ViewPair};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AveragingError {
    #[error("subgraph is disconnected: components {0:?}")]
    Disconnected(Vec<Vec<ViewId>>),
    #[error("subgraph has no views")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AveragingConfig {
    /// IRLS floor on residual norms, radians.
    pub epsilon_irls: f64,
    /// Stop once the largest per-view update is below this, radians.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// IRLS reweighting passes per linearization.
    pub irls_passes: usize,
    /// Edge rejection threshold, degrees.
    pub rho_gmax_deg: f64,
}

impl Default for AveragingConfig {
    fn default() -> Self {
        Self {
            epsilon_irls: 1e-5,
            tolerance: 1e-3,
            max_iterations: 100,
            irls_passes: 20,
            rho_gmax_deg: 10.0,
        }
    }
}

/// World-to-camera rotations `R_i`, with `R_ij = R_j R_i^-1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalRotations {
    pub rotations: BTreeMap<ViewId, Rotation3<f64>>,
    pub gauge: ViewId,
}

impl GlobalRotations {
    pub fn get(&self, v: ViewId) -> Option<&Rotation3<f64>> {
        self.rotations.get(&v)
    }

    /// `R_j R_i^-1`.
    pub fn relative(&self, i: ViewId, j: ViewId) -> Option<Rotation3<f64>> {
        Some(self.rotations.get(&j)? * self.rotations.get(&i)?.inverse())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AveragingReport {
    pub removed_edges: BTreeSet<ViewPair>,
    pub per_edge_residual_deg: BTreeMap<ViewPair, f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl AveragingReport {
    /// Counts of residuals in 1-degree bins, last bin open-ended.
    pub fn residual_histogram(&self, bins: usize) -> Vec<usize> {
        let mut h = vec![0; bins.max(1)];
        for r in self.per_edge_residual_deg.values() {
            let k = (r.floor() as usize).min(h.len() - 1);
            h[k] += 1;
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolveStats {
    pub iterations: usize,
    pub converged: bool,
    /// Weighted sum of residual angles after each accepted sweep (first entry: input).
    pub objective: Vec<f64>,
}

/// Residual angle of edge `(a, b)` in radians: angle of `R_ab (R_b R_a^-1)^-1`.
pub fn edge_residual(rotations: &GlobalRotations, pair: &ViewPair, measured: &Rotation3<f64>) -> f64 {
    let predicted = rotations.relative(pair.a, pair.b).expect("rotation for edge endpoint");
    so3::angle(&(measured * predicted.inverse()))
}

fn edge_weights(sub: &SubGraph) -> BTreeMap<ViewPair, f64> {
    let n = sub.edges.len().max(1) as f64;
    let mean = sub.edges.values().map(|g| g.inlier_count as f64).sum::<f64>() / n;
    sub.edges
        .iter()
        .map(|(p, g)| (*p, if mean > 0.0 { g.inlier_count as f64 / mean } else { 1.0 }))
        .collect()
}

/// Chains relative rotations along a maximum-weight spanning tree rooted at the lowest view.
pub fn mst_initialize(sub: &SubGraph) -> Result<GlobalRotations, AveragingError> {
    let gauge = *sub.views.first().ok_or(AveragingError::Empty)?;
    let tree = max_spanning_tree(sub);
    let mut adjacency: BTreeMap<ViewId, Vec<ViewId>> = BTreeMap::new();
    for p in &tree {
        adjacency.entry(p.a).or_default().push(p.b);
        adjacency.entry(p.b).or_default().push(p.a);
    }
    let mut rotations = BTreeMap::new();
    rotations.insert(gauge, Rotation3::identity());
    let mut queue = VecDeque::from([gauge]);
    while let Some(i) = queue.pop_front() {
        let ri = rotations[&i];
        for j in adjacency.get(&i).cloned().unwrap_or_default() {
            if rotations.contains_key(&j) {
                continue;
            }
            let rij = sub.geometry(i, j).expect("tree edge").rotation;
            rotations.insert(j, rij * ri);
            queue.push_back(j);
        }
    }
    if rotations.len() != sub.views.len() {
        return Err(AveragingError::Disconnected(sub.components()));
    }
    Ok(GlobalRotations { rotations, gauge })
}

/// Kruskal on descending match counts; ties resolved by pair order.
pub fn max_spanning_tree(sub: &SubGraph) -> Vec<ViewPair> {
    let mut edges: Vec<(u32, ViewPair)> =
        sub.edges.iter().map(|(p, g)| (g.inlier_count, *p)).collect();
    edges.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let index: BTreeMap<ViewId, usize> = sub.views.iter().enumerate().map(|(k, v)| (*v, k)).collect();
    let mut parent: Vec<usize> = (0..sub.views.len()).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut tree = Vec::new();
    for (_, p) in edges {
        let (a, b) = (find(&mut parent, index[&p.a]), find(&mut parent, index[&p.b]));
        if a != b {
            parent[a.max(b)] = a.min(b);
            tree.push(p);
        }
    }
    tree
}

fn weighted_objective(sub: &SubGraph, rotations: &GlobalRotations, rho: &BTreeMap<ViewPair, f64>) -> f64 {
    sub.edges
        .iter()
        .map(|(p, g)| rho[p] * edge_residual(rotations, p, &g.rotation))
        .sum()
}

/// Weighted l1 tangent-space solve: `argmin sum_e rho_e |omega_b - omega_a - r_e|`
/// with the gauge view pinned. Returns one update per view index.
fn solve_tangent_l1(
    n: usize,
    gauge: usize,
    rows: &[(usize, usize, Vector3<f64>, f64)],
    cfg: &AveragingConfig,
) -> Vec<Vector3<f64>> {
    let mut delta = vec![Vector3::zeros(); n];
    if n < 2 {
        return delta;
    }
    // reduced index without the gauge
    let map = |k: usize| -> Option<usize> {
        match k.cmp(&gauge) {
            std::cmp::Ordering::Less => Some(k),
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Greater => Some(k - 1),
        }
    };
    for _ in 0..cfg.irls_passes.max(1) {
        let mut lap = DMatrix::<f64>::zeros(n - 1, n - 1);
        let mut rhs = DMatrix::<f64>::zeros(n - 1, 3);
        for (a, b, r, rho) in rows {
            let resid = r - (delta[*b] - delta[*a]);
            let w = rho / resid.norm().max(cfg.epsilon_irls);
            let (ma, mb) = (map(*a), map(*b));
            if let Some(ia) = ma {
                lap[(ia, ia)] += w;
                for c in 0..3 {
                    rhs[(ia, c)] -= w * r[c];
                }
            }
            if let Some(ib) = mb {
                lap[(ib, ib)] += w;
                for c in 0..3 {
                    rhs[(ib, c)] += w * r[c];
                }
            }
            if let (Some(ia), Some(ib)) = (ma, mb) {
                lap[(ia, ib)] -= w;
                lap[(ib, ia)] -= w;
            }
        }
        let Some(chol) = lap.clone().cholesky() else {
            break;
        };
        let sol = chol.solve(&rhs);
        let mut next = vec![Vector3::zeros(); n];
        for (k, slot) in next.iter_mut().enumerate() {
            if let Some(i) = map(k) {
                *slot = Vector3::new(sol[(i, 0)], sol[(i, 1)], sol[(i, 2)]);
            }
        }
        let change = next
            .iter()
            .zip(&delta)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        delta = next;
        if change < cfg.epsilon_irls {
            break;
        }
    }
    delta
}

/// Iterative l1 refinement of `init`. Non-convergence is reported, not an error.
pub fn solve_l1(sub: &SubGraph, init: &GlobalRotations, cfg: &AveragingConfig) -> (GlobalRotations, SolveStats) {
    let views = &sub.views;
    let index: BTreeMap<ViewId, usize> = views.iter().enumerate().map(|(k, v)| (*v, k)).collect();
    let gauge = index[&init.gauge];
    let rho = edge_weights(sub);
    let mut current = init.clone();
    let mut objective = weighted_objective(sub, &current, &rho);
    let mut stats = SolveStats { objective: vec![objective], ..Default::default() };

    for _ in 0..cfg.max_iterations {
        stats.iterations += 1;
        let rows: Vec<(usize, usize, Vector3<f64>, f64)> = sub
            .edges
            .iter()
            .map(|(p, g)| {
                let ra = current.rotations[&p.a];
                let rb = current.rotations[&p.b];
                let d = rb.inverse() * g.rotation * ra;
                (index[&p.a], index[&p.b], so3::log_rotation(&d), rho[p])
            })
            .collect();
        let delta = solve_tangent_l1(views.len(), gauge, &rows, cfg);
        let max_step = delta.iter().map(|d| d.norm()).fold(0.0, f64::max);

        // accept only non-increasing objective; shorten the step otherwise
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..6 {
            let mut candidate = current.clone();
            for (v, k) in &index {
                if *k == gauge {
                    continue;
                }
                let r = candidate.rotations.get_mut(v).unwrap();
                *r = *r * so3::exp(&(delta[*k] * step));
            }
            let obj = weighted_objective(sub, &candidate, &rho);
            if obj <= objective {
                accepted = Some((candidate, obj));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((candidate, obj)) => {
                current = candidate;
                objective = obj;
                stats.objective.push(obj);
                if max_step * step < cfg.tolerance {
                    stats.converged = true;
                    break;
                }
            }
            None => {
                // no descent along the l1 direction: at a (numerical) minimum
                stats.converged = max_step < cfg.tolerance * 10.0;
                break;
            }
        }
    }
    if sub.edges.is_empty() {
        stats.converged = true;
    }
    (current, stats)
}

/// Residuals of every edge; edges strictly above `rho_gmax_deg` are listed as removed.
pub fn filter_edges(sub: &SubGraph, rotations: &GlobalRotations, rho_gmax_deg: f64) -> AveragingReport {
    let mut report = AveragingReport::default();
    for (p, g) in &sub.edges {
        let deg = edge_residual(rotations, p, &g.rotation).to_degrees();
        report.per_edge_residual_deg.insert(*p, deg);
        if deg > rho_gmax_deg {
            report.removed_edges.insert(*p);
        }
    }
    report
}

/// Full averaging step on a cluster subgraph: initialization, l1 refinement, filtering.
/// Disconnected subgraphs are averaged on their largest component; other views get no rotation.
pub fn average_rotations(
    sub: &SubGraph,
    cfg: &AveragingConfig,
) -> Result<(GlobalRotations, AveragingReport, SubGraph), AveragingError> {
    if sub.views.is_empty() {
        return Err(AveragingError::Empty);
    }
    let components = sub.components();
    let largest = components
        .iter()
        .max_by(|a, b| a.len().cmp(&b.len()).then(b[0].cmp(&a[0])))
        .cloned()
        .unwrap();
    let core = if largest.len() == sub.views.len() {
        sub.clone()
    } else {
        let keep: BTreeSet<ViewId> = largest.iter().copied().collect();
        SubGraph {
            views: largest.clone(),
            edges: sub
                .edges
                .iter()
                .filter(|(p, _)| keep.contains(&p.a) && keep.contains(&p.b))
                .map(|(p, g)| (*p, *g))
                .collect(),
        }
    };
    let init = mst_initialize(&core)?;
    let (rotations, stats) = solve_l1(&core, &init, cfg);
    let mut report = filter_edges(&core, &rotations, cfg.rho_gmax_deg);
    report.iterations = stats.iterations;
    report.converged = stats.converged;
    // edges leaving the averaged component cannot be verified
    for p in sub.edges.keys() {
        if !core.edges.contains_key(p) {
            report.removed_edges.insert(*p);
        }
    }
    let filtered = sub.without_edges(&report.removed_edges);
    Ok((rotations, report, filtered))
}
