//! Robust Sim(3) pose graph over cluster frames.
//!
//! Node poses are world-from-cluster transforms `P`. An edge `(a, b)` stores the
//! constraint `T_ab` = a-from-b, so a consistent graph satisfies `P_b = P_a T_ab`.
//! The residual is the 7-vector chart of `T_ab^-1 P_a^-1 P_b` with the translation
//! part divided by the mean constraint baseline; a Huber penalty is applied to its
//! norm (default) or to each component.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use std::ops::AddAssign;

use nalgebra::{DMatrix, DVector, SMatrix};
use serde::{Deserialize, Serialize};

use crate::clustering::ClusterId;
use crate::geometry::{Sim3, Vector7};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterEdge {
    pub a: ClusterId,
    pub b: ClusterId,
    /// a-from-b.
    pub constraint: Sim3,
    pub weight: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ClusterGraph {
    pub nodes: BTreeMap<ClusterId, Sim3>,
    pub edges: Vec<ClusterEdge>,
}

impl ClusterGraph {
    /// Adds or replaces the constraint of a cluster pair. Self-edges are ignored.
    pub fn add_constraint(&mut self, a: ClusterId, b: ClusterId, constraint: Sim3, weight: usize) {
        if a == b {
            return;
        }
        let (a, b, constraint) = if a < b { (a, b, constraint) } else { (b, a, constraint.inverse()) };
        self.nodes.entry(a).or_insert_with(Sim3::identity);
        self.nodes.entry(b).or_insert_with(Sim3::identity);
        self.edges.retain(|e| !(e.a == a && e.b == b));
        self.edges.push(ClusterEdge { a, b, constraint, weight });
        self.edges.sort_by_key(|e| (e.a, e.b));
    }

    /// Connected components over `nodes` (isolated nodes form their own component).
    pub fn components(&self) -> Vec<Vec<ClusterId>> {
        let mut adj: BTreeMap<ClusterId, Vec<ClusterId>> = self.nodes.keys().map(|k| (*k, Vec::new())).collect();
        for e in &self.edges {
            adj.entry(e.a).or_default().push(e.b);
            adj.entry(e.b).or_default().push(e.a);
        }
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for start in adj.keys() {
            if !seen.insert(*start) {
                continue;
            }
            let mut comp = vec![*start];
            let mut queue = VecDeque::from([*start]);
            while let Some(c) = queue.pop_front() {
                for n in &adj[&c] {
                    if seen.insert(*n) {
                        comp.push(*n);
                        queue.push_back(*n);
                    }
                }
            }
            comp.sort();
            out.push(comp);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseGraphConfig {
    pub huber: f64,
    pub mode: HuberMode,
    pub max_iterations: usize,
    /// After the robust solve, edges whose residual norm exceeds `prune_factor * huber`
    /// are dropped (unless that would disconnect the graph) and the rest re-solved.
    pub prune_factor: Option<f64>,
}

/// Where the Huber penalty is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HuberMode {
    /// On each of the 7 chart components separately.
    Componentwise,
    /// On the Euclidean norm of the chart vector (robust kernel on the squared error).
    Norm,
}

impl Default for PoseGraphConfig {
    fn default() -> Self {
        Self { huber: 0.1, mode: HuberMode::Norm, max_iterations: 100, prune_factor: Some(3.0) }
    }
}

impl PoseGraphConfig {
    fn edge_cost(&self, r: &Vector7) -> f64 {
        match self.mode {
            HuberMode::Componentwise => r.iter().map(|x| huber(*x, self.huber)).sum(),
            HuberMode::Norm => huber(r.norm(), self.huber),
        }
    }

    /// IRLS weights per component.
    fn weights(&self, r: &Vector7) -> Vector7 {
        let w = |a: f64| if a <= self.huber { 1.0 } else { self.huber / a };
        match self.mode {
            HuberMode::Componentwise => r.map(|x| w(x.abs())),
            HuberMode::Norm => Vector7::repeat(w(r.norm())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PoseGraphReport {
    pub initial_cost: f64,
    /// Robust cost over the constraints that survived pruning.
    pub final_cost: f64,
    pub iterations: usize,
    /// Robust cost after every accepted step of the first solve, starting with the initial cost.
    pub costs: Vec<f64>,
    /// Constraints dropped by the pruning pass, as `(a, b)`.
    pub pruned: Vec<(ClusterId, ClusterId)>,
}

pub fn huber(x: f64, k: f64) -> f64 {
    let a = x.abs();
    if a <= k {
        0.5 * a * a
    } else {
        k * (a - 0.5 * k)
    }
}

fn residual(constraint: &Sim3, pa: &Sim3, pb: &Sim3, baseline: f64) -> Vector7 {
    let mut r = constraint.inverse().compose(&pa.inverse()).compose(pb).log();
    for k in 3..6 {
        r[k] /= baseline;
    }
    r
}

fn mean_baseline(edges: &[&ClusterEdge]) -> f64 {
    if edges.is_empty() {
        return 1.0;
    }
    let m = edges.iter().map(|e| e.constraint.translation.norm()).sum::<f64>() / edges.len() as f64;
    if m > 1e-12 { m } else { 1.0 }
}

/// Robust cost of `poses` on the edges of `graph` (all edges whose nodes are present).
pub fn robust_cost(graph: &ClusterGraph, poses: &BTreeMap<ClusterId, Sim3>, cfg: &PoseGraphConfig) -> f64 {
    let edges: Vec<&ClusterEdge> = graph.edges.iter().collect();
    let base = mean_baseline(&edges);
    edges
        .iter()
        .filter_map(|e| Some(residual(&e.constraint, poses.get(&e.a)?, poses.get(&e.b)?, base)))
        .map(|r| cfg.edge_cost(&r))
        .sum()
}

/// Spanning-tree composition of constraints from `root`, heaviest edges first.
fn initialize(root: ClusterId, comp: &[ClusterId], edges: &[&ClusterEdge]) -> BTreeMap<ClusterId, Sim3> {
    let mut sorted: Vec<&ClusterEdge> = edges.to_vec();
    sorted.sort_by(|x, y| y.weight.cmp(&x.weight).then((x.a, x.b).cmp(&(y.a, y.b))));
    let mut poses = BTreeMap::from([(root, Sim3::identity())]);
    while poses.len() < comp.len() {
        let mut grew = false;
        for e in &sorted {
            match (poses.get(&e.a).copied(), poses.get(&e.b).copied()) {
                (Some(pa), None) => {
                    poses.insert(e.b, pa.compose(&e.constraint));
                    grew = true;
                    break;
                }
                (None, Some(pb)) => {
                    poses.insert(e.a, pb.compose(&e.constraint.inverse()));
                    grew = true;
                    break;
                }
                _ => {}
            }
        }
        if !grew {
            break;
        }
    }
    poses
}

/// Optimizes every connected component, pinning its lowest ClusterId to the identity.
/// Components share no variables, so they are solved jointly with one cost sequence.
pub fn optimize_cluster_poses(graph: &ClusterGraph, cfg: &PoseGraphConfig) -> (BTreeMap<ClusterId, Sim3>, PoseGraphReport) {
    let all: Vec<&ClusterEdge> = graph.edges.iter().collect();
    let base = mean_baseline(&all);
    let mut poses = BTreeMap::new();
    let mut roots = BTreeSet::new();
    for comp in graph.components() {
        let members: BTreeSet<ClusterId> = comp.iter().copied().collect();
        let edges: Vec<&ClusterEdge> =
            all.iter().copied().filter(|e| members.contains(&e.a) && members.contains(&e.b)).collect();
        roots.insert(comp[0]);
        poses.extend(initialize(comp[0], &comp, &edges));
    }
    let (mut poses, mut report) = solve(&all, base, poses, &roots, cfg);
    let Some(factor) = cfg.prune_factor else {
        return (poses, report);
    };
    let mut kept: Vec<&ClusterEdge> = all.clone();
    let mut ranked: Vec<(f64, usize)> = all
        .iter()
        .enumerate()
        .map(|(k, e)| (residual(&e.constraint, &poses[&e.a], &poses[&e.b], base).norm(), k))
        .filter(|(r, _)| *r > factor * cfg.huber)
        .collect();
    ranked.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    let components = graph.components().len();
    for (_, k) in ranked {
        let trial: Vec<&ClusterEdge> = kept.iter().copied().filter(|e| !std::ptr::eq(*e, all[k])).collect();
        let sub = ClusterGraph { nodes: graph.nodes.clone(), edges: trial.iter().map(|e| (*e).clone()).collect() };
        if sub.components().len() == components {
            kept = trial;
            report.pruned.push((all[k].a, all[k].b));
        }
    }
    if !report.pruned.is_empty() {
        let (refined, second) = solve(&kept, base, poses.clone(), &roots, cfg);
        poses = refined;
        report.iterations += second.iterations;
        report.final_cost = second.final_cost;
    }
    (poses, report)
}

fn solve(
    all: &[&ClusterEdge],
    base: f64,
    mut poses: BTreeMap<ClusterId, Sim3>,
    roots: &BTreeSet<ClusterId>,
    cfg: &PoseGraphConfig,
) -> (BTreeMap<ClusterId, Sim3>, PoseGraphReport) {
    let cost_of = |p: &BTreeMap<ClusterId, Sim3>| -> f64 {
        all.iter()
            .map(|e| residual(&e.constraint, &p[&e.a], &p[&e.b], base))
            .map(|r| cfg.edge_cost(&r))
            .sum()
    };
    let mut cost = cost_of(&poses);
    let mut report = PoseGraphReport { initial_cost: cost, final_cost: cost, iterations: 0, costs: vec![cost], pruned: Vec::new() };
    let free: Vec<ClusterId> = poses.keys().copied().filter(|c| !roots.contains(c)).collect();
    if free.is_empty() || all.is_empty() {
        return (poses, report);
    }
    let index: BTreeMap<ClusterId, usize> = free.iter().enumerate().map(|(k, c)| (*c, k)).collect();
    let n = 7 * free.len();
    let mut lambda = 1e-4;
    let h = 1e-6;
    for _ in 0..cfg.max_iterations {
        report.iterations += 1;
        let mut hess = DMatrix::<f64>::zeros(n, n);
        let mut grad = DVector::<f64>::zeros(n);
        for e in all {
            let r0 = residual(&e.constraint, &poses[&e.a], &poses[&e.b], base);
            // IRLS weights of the componentwise Huber penalty
            let w = cfg.weights(&r0);
            let mut blocks: Vec<(usize, SMatrix<f64, 7, 7>)> = Vec::new();
            for node in [e.a, e.b] {
                let Some(&k) = index.get(&node) else { continue };
                let mut jac = SMatrix::<f64, 7, 7>::zeros();
                for d in 0..7 {
                    let mut delta = Vector7::zeros();
                    delta[d] = h;
                    let plus = poses[&node].compose(&Sim3::exp(&delta));
                    delta[d] = -h;
                    let minus = poses[&node].compose(&Sim3::exp(&delta));
                    let (rp, rm) = if node == e.a {
                        (residual(&e.constraint, &plus, &poses[&e.b], base), residual(&e.constraint, &minus, &poses[&e.b], base))
                    } else {
                        (residual(&e.constraint, &poses[&e.a], &plus, base), residual(&e.constraint, &poses[&e.a], &minus, base))
                    };
                    jac.set_column(d, &((rp - rm) / (2.0 * h)));
                }
                blocks.push((k, jac));
            }
            let wm = SMatrix::<f64, 7, 7>::from_diagonal(&w);
            for (ka, ja) in &blocks {
                let g = ja.transpose() * wm * r0;
                grad.rows_mut(7 * ka, 7).add_assign(&g);
                for (kb, jb) in &blocks {
                    let hb = ja.transpose() * wm * jb;
                    let mut view = hess.view_mut((7 * ka, 7 * kb), (7, 7));
                    view += hb;
                }
            }
        }
        let mut accepted = false;
        for _ in 0..10 {
            let mut damped = hess.clone();
            for d in 0..n {
                damped[(d, d)] += lambda * hess[(d, d)] + 1e-12;
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = chol.solve(&(-&grad));
            let mut trial = poses.clone();
            for (c, k) in &index {
                let d = Vector7::from_iterator(step.rows(7 * k, 7).iter().copied());
                let p = trial.get_mut(c).unwrap();
                *p = p.compose(&Sim3::exp(&d));
            }
            let c = cost_of(&trial);
            if c < cost {
                let rel = (cost - c) / cost.max(1e-300);
                poses = trial;
                cost = c;
                report.costs.push(c);
                lambda = (lambda * 0.3).max(1e-9);
                accepted = !(rel < 1e-12);
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    report.final_cost = cost;
    (poses, report)
}
