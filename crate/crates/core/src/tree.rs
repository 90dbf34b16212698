//! MST pruning, composite path weights, trunk hierarchy and export.
//!
//! High-order aggregation is restricted to the pruned tree, where every pair
//! is joined by at most one simple path. For a pair joined by a path with
//! exactly `s` intermediate nodes, `F^(s)` adds the strengths of every node on
//! that path (endpoints included) to the base term `F_i + F_j`.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{Atlas, Label};
use crate::scoring::NodeScores;
use crate::Matrix;

pub const DEFAULT_QUANTILE: f64 = 0.5;
pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_MAX_ORDER: usize = 2;
pub const DEFAULT_LEVELS: usize = 3;
pub const BRACKET_WIDTH: f64 = 1e-6;

const LEVEL_COLORS: [&str; 3] = ["red", "blue", "darkgreen"];
const DEEP_LEVEL_COLOR: &str = "gray";

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("quantile {0} outside (0, 1)")]
    Quantile(f64),
    #[error("no edges survive thresholding")]
    EmptyGraph,
    #[error("edge ({i}, {j}): {reason}")]
    InvalidEdge { i: usize, j: usize, reason: &'static str },
    #[error("order {s} exceeds max_order {max}")]
    OrderTooHigh { s: usize, max: usize },
    #[error("pair ({0}, {0}) is not distinct")]
    SamePair(usize),
    #[error("node {node} out of range for {v} regions")]
    NodeOutOfRange { node: usize, v: usize },
    #[error("nodes {0} and {1} are not adjacent in the tree")]
    NotAdjacent(usize, usize),
    #[error("alpha {0} outside [0, 1]")]
    Alpha(f64),
    #[error("{what} has length {found}, expected {expected}")]
    Length { what: &'static str, expected: usize, found: usize },
    #[error("tree has no edges")]
    EmptyTree,
    #[error("target {target} outside [{lo}, {hi}] spanned by the extreme path weights")]
    TargetOutOfRange { target: f64, lo: f64, hi: f64 },
}

type Result<T> = std::result::Result<T, TreeError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub cost: f64,
}

/// Simple undirected graph with `i < j` edges and finite non-negative costs.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    pub v: usize,
    pub edges: Vec<Edge>,
}

impl WeightedGraph {
    pub fn new(v: usize, edges: Vec<Edge>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for e in &edges {
            let bad = |reason| Err(TreeError::InvalidEdge { i: e.i, j: e.j, reason });
            if e.i >= e.j {
                return bad("endpoints must satisfy i < j");
            }
            if e.j >= v {
                return bad("endpoint out of range");
            }
            if !e.cost.is_finite() || e.cost < 0.0 {
                return bad("cost must be finite and non-negative");
            }
            if !seen.insert((e.i, e.j)) {
                return bad("duplicate pair");
            }
        }
        Ok(Self { v, edges })
    }
}

fn quantile_linear(sorted: &[f64], q: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Thresholds the symmetrized `|a|` at the given quantile of its
/// off-diagonal entries and maps strength to cost `1 - s / max s`.
pub fn graph_from_fc(a: &Matrix, quantile: f64) -> Result<WeightedGraph> {
    if !(quantile > 0.0 && quantile < 1.0) {
        return Err(TreeError::Quantile(quantile));
    }
    let v = a.nrows();
    let mut pairs = Vec::new();
    for i in 0..v {
        for j in i + 1..v {
            pairs.push((i, j, 0.5 * (a[(i, j)].abs() + a[(j, i)].abs())));
        }
    }
    if pairs.is_empty() {
        return Err(TreeError::EmptyGraph);
    }
    let mut sorted: Vec<f64> = pairs.iter().map(|p| p.2).collect();
    sorted.sort_by(f64::total_cmp);
    let threshold = quantile_linear(&sorted, quantile);
    let max = sorted[sorted.len() - 1];
    let edges: Vec<Edge> = pairs
        .into_iter()
        .filter(|&(_, _, s)| s >= threshold && s > 0.0)
        .map(|(i, j, s)| Edge { i, j, cost: (1.0 - s / max).max(0.0) })
        .collect();
    if edges.is_empty() {
        return Err(TreeError::EmptyGraph);
    }
    WeightedGraph::new(v, edges)
}

/// Minimum spanning forest; `parent` roots each component at its smallest
/// node.
#[derive(Debug, Clone, PartialEq)]
pub struct PrunedTree {
    pub v: usize,
    pub edges: Vec<Edge>,
    pub total_cost: f64,
    pub parent: Vec<Option<usize>>,
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), rank: vec![0; n] }
    }

    fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

pub fn kruskal(g: &WeightedGraph) -> PrunedTree {
    let mut order: Vec<&Edge> = g.edges.iter().collect();
    order.sort_by(|a, b| a.cost.total_cmp(&b.cost).then(a.i.cmp(&b.i)).then(a.j.cmp(&b.j)));
    let mut uf = UnionFind::new(g.v);
    let mut edges = Vec::with_capacity(g.v.saturating_sub(1));
    for e in order {
        if uf.union(e.i, e.j) {
            edges.push(*e);
        }
    }
    PrunedTree::from_edges(g.v, edges)
}

fn adjacency_of(v: usize, edges: &[Edge]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); v];
    for e in edges {
        adj[e.i].push(e.j);
        adj[e.j].push(e.i);
    }
    for n in &mut adj {
        n.sort_unstable();
    }
    adj
}

impl PrunedTree {
    /// Builds the parent structure for an acyclic edge list.
    pub fn from_edges(v: usize, edges: Vec<Edge>) -> Self {
        let adj = adjacency_of(v, &edges);
        let mut parent = vec![None; v];
        let mut visited = vec![false; v];
        for root in 0..v {
            if visited[root] {
                continue;
            }
            visited[root] = true;
            let mut queue = std::collections::VecDeque::from([root]);
            while let Some(u) = queue.pop_front() {
                for &w in &adj[u] {
                    if !visited[w] {
                        visited[w] = true;
                        parent[w] = Some(u);
                        queue.push_back(w);
                    }
                }
            }
        }
        let total_cost = edges.iter().map(|e| e.cost).sum();
        Self { v, edges, total_cost, parent }
    }

    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        adjacency_of(self.v, &self.edges)
    }

    pub fn components(&self) -> usize {
        self.parent.iter().filter(|p| p.is_none()).count()
    }

    pub fn is_adjacent(&self, a: usize, b: usize) -> bool {
        self.parent.get(a) == Some(&Some(b)) || self.parent.get(b) == Some(&Some(a))
    }

    pub fn edge_cost(&self, a: usize, b: usize) -> Option<f64> {
        let (i, j) = (a.min(b), a.max(b));
        self.edges.iter().find(|e| e.i == i && e.j == j).map(|e| e.cost)
    }

    /// Longest shortest path in edges, over all components.
    pub fn diameter(&self) -> usize {
        let adj = self.adjacency();
        let mut best = 0;
        for s in 0..self.v {
            let mut dist = vec![usize::MAX; self.v];
            dist[s] = 0;
            let mut queue = std::collections::VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                for &w in &adj[u] {
                    if dist[w] == usize::MAX {
                        dist[w] = dist[u] + 1;
                        best = best.max(dist[w]);
                        queue.push_back(w);
                    }
                }
            }
        }
        best
    }
}

fn check_node(tree: &PrunedTree, node: usize) -> Result<()> {
    if node >= tree.v {
        return Err(TreeError::NodeOutOfRange { node, v: tree.v });
    }
    Ok(())
}

/// Number of simple paths from `u` to `target` with exactly `remaining`
/// further edges, and the summed node strength over those paths.
fn walk(adj: &[Vec<usize>], f: &[f64], u: usize, prev: Option<usize>, target: usize, remaining: usize) -> (u64, f64) {
    if remaining == 0 {
        return if u == target { (1, f[u]) } else { (0, 0.0) };
    }
    if u == target {
        return (0, 0.0);
    }
    let mut count = 0;
    let mut sum = 0.0;
    for &k in &adj[u] {
        if Some(k) == prev {
            continue;
        }
        let (c, s) = walk(adj, f, k, Some(u), target, remaining - 1);
        count += c;
        sum += s;
    }
    (count, sum + count as f64 * f[u])
}

fn high_order_with(adj: &[Vec<usize>], f: &[f64], i: usize, j: usize, s: usize) -> f64 {
    let base = f[i] + f[j];
    if s == 0 {
        return base;
    }
    base + walk(adj, f, i, None, j, s + 1).1
}

/// `F^(s)_ij` over the pruned tree.
pub fn high_order_fc(tree: &PrunedTree, f: &[f64], i: usize, j: usize, s: usize, max_order: usize) -> Result<f64> {
    if s > max_order {
        return Err(TreeError::OrderTooHigh { s, max: max_order });
    }
    check_node(tree, i)?;
    check_node(tree, j)?;
    if i == j {
        return Err(TreeError::SamePair(i));
    }
    if f.len() != tree.v {
        return Err(TreeError::Length { what: "node strengths", expected: tree.v, found: f.len() });
    }
    Ok(high_order_with(&tree.adjacency(), f, i, j, s))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathWeightConfig {
    pub alpha: f64,
    pub max_order: usize,
}

impl Default for PathWeightConfig {
    fn default() -> Self {
        Self { alpha: DEFAULT_ALPHA, max_order: DEFAULT_MAX_ORDER }
    }
}

impl PathWeightConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(TreeError::Alpha(self.alpha));
        }
        Ok(())
    }
}

/// Node-score sum and high-order FC sum of a path; the composite weight is
/// `alpha * node + (1 - alpha) * fc`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathParts {
    pub node: f64,
    pub fc: f64,
}

impl PathParts {
    pub fn weight(&self, alpha: f64) -> f64 {
        alpha * self.node + (1.0 - alpha) * self.fc
    }
}

/// Everything needed to weigh paths on one tree.
#[derive(Debug, Clone, Copy)]
pub struct TreeContext<'a> {
    pub tree: &'a PrunedTree,
    pub scores: &'a NodeScores,
    pub f: &'a [f64],
}

impl<'a> TreeContext<'a> {
    pub fn new(tree: &'a PrunedTree, scores: &'a NodeScores, f: &'a [f64]) -> Result<Self> {
        if scores.s.len() != tree.v {
            return Err(TreeError::Length { what: "node scores", expected: tree.v, found: scores.s.len() });
        }
        if f.len() != tree.v {
            return Err(TreeError::Length { what: "node strengths", expected: tree.v, found: f.len() });
        }
        Ok(Self { tree, scores, f })
    }

    pub fn path_parts(&self, path: &[usize], max_order: usize) -> Result<PathParts> {
        for &n in path {
            check_node(self.tree, n)?;
        }
        let adj = self.tree.adjacency();
        let node = path.iter().map(|&n| self.scores.s[n]).sum();
        let mut fc = 0.0;
        for w in path.windows(2) {
            if !self.tree.is_adjacent(w[0], w[1]) {
                return Err(TreeError::NotAdjacent(w[0], w[1]));
            }
            for s in 1..=max_order {
                fc += high_order_with(&adj, self.f, w[0], w[1], s);
            }
        }
        Ok(PathParts { node, fc })
    }

    pub fn path_weight(&self, path: &[usize], cfg: &PathWeightConfig) -> Result<f64> {
        cfg.validate()?;
        Ok(self.path_parts(path, cfg.max_order)?.weight(cfg.alpha))
    }
}

pub fn path_weight(path: &[usize], scores: &NodeScores, tree: &PrunedTree, f: &[f64], cfg: &PathWeightConfig) -> Result<f64> {
    TreeContext::new(tree, scores, f)?.path_weight(path, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrunkPath {
    pub nodes: Vec<usize>,
    pub weight: f64,
}

impl TrunkPath {
    pub fn edge_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.nodes.windows(2).map(|w| (w[0].min(w[1]), w[0].max(w[1])))
    }
}

/// One level of the hierarchy. `nodes_in_graph` and `edges_in_graph`
/// describe the graph the level was extracted from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrunkLevel {
    pub level: usize,
    pub nodes_in_graph: usize,
    pub edges_in_graph: usize,
    pub paths: Vec<TrunkPath>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrunkHierarchy {
    pub levels: Vec<TrunkLevel>,
}

impl TrunkHierarchy {
    pub fn total_edges(&self) -> usize {
        self.levels.iter().flat_map(|l| &l.paths).map(|p| p.nodes.len().saturating_sub(1)).sum()
    }
}

/// Dijkstra by cumulative cost with `(dist, index)` selection; returns the
/// predecessor of every reached node.
fn shortest_paths(adj: &[Vec<(usize, f64)>], start: usize) -> Vec<Option<usize>> {
    let n = adj.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut pred = vec![None; n];
    let mut done = vec![false; n];
    dist[start] = 0.0;
    loop {
        let mut best: Option<usize> = None;
        for u in 0..n {
            if !done[u] && dist[u].is_finite() && best.is_none_or(|b| dist[u] < dist[b]) {
                best = Some(u);
            }
        }
        let Some(u) = best else { break };
        done[u] = true;
        for &(w, c) in &adj[u] {
            let d = dist[u] + c;
            if d < dist[w] {
                dist[w] = d;
                pred[w] = Some(u);
            }
        }
    }
    pred
}

fn trace(pred: &[Option<usize>], start: usize, end: usize) -> Vec<usize> {
    let mut path = vec![end];
    let mut cur = end;
    while cur != start {
        cur = pred[cur].expect("reached node has a predecessor");
        path.push(cur);
    }
    path.reverse();
    path
}

fn weighted_adjacency(v: usize, edges: &[Edge]) -> Vec<Vec<(usize, f64)>> {
    let mut adj = vec![Vec::new(); v];
    for e in edges {
        adj[e.i].push((e.j, e.cost));
        adj[e.j].push((e.i, e.cost));
    }
    for n in &mut adj {
        n.sort_by_key(|&(w, _)| w);
    }
    adj
}

/// Connected components of the non-isolated nodes, each sorted, ordered by
/// smallest member.
fn components(v: usize, edges: &[Edge]) -> Vec<Vec<usize>> {
    let adj = adjacency_of(v, edges);
    let mut seen = vec![false; v];
    let mut out = Vec::new();
    for s in 0..v {
        if seen[s] || adj[s].is_empty() {
            continue;
        }
        seen[s] = true;
        let mut stack = vec![s];
        let mut comp = Vec::new();
        while let Some(u) = stack.pop() {
            comp.push(u);
            for &w in &adj[u] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

fn argmax_score(scores: &NodeScores, nodes: &[usize]) -> usize {
    let mut best = nodes[0];
    for &n in &nodes[1..] {
        if scores.s[n] > scores.s[best] {
            best = n;
        }
    }
    best
}

/// Parts of every path from `start` to another node reachable over `edges`,
/// by increasing end node.
fn candidate_paths(ctx: &TreeContext, edges: &[Edge], start: usize, max_order: usize) -> Result<Vec<(Vec<usize>, PathParts)>> {
    let pred = shortest_paths(&weighted_adjacency(ctx.tree.v, edges), start);
    let mut out = Vec::new();
    for end in 0..ctx.tree.v {
        if end == start || pred[end].is_none() {
            continue;
        }
        let path = trace(&pred, start, end);
        let parts = ctx.path_parts(&path, max_order)?;
        out.push((path, parts));
    }
    Ok(out)
}

/// Level-wise trunk extraction. Each component contributes the path from its
/// highest-scoring node that maximizes the composite weight; the level's
/// edges are then removed.
pub fn extract_trunks(ctx: &TreeContext, cfg: &PathWeightConfig, l_max: usize) -> Result<TrunkHierarchy> {
    cfg.validate()?;
    let mut remaining = ctx.tree.edges.clone();
    let mut levels = Vec::new();
    for level in 1..=l_max {
        if remaining.is_empty() {
            break;
        }
        let comps = components(ctx.tree.v, &remaining);
        let nodes_in_graph = comps.iter().map(Vec::len).sum();
        let mut paths = Vec::new();
        for comp in &comps {
            let start = argmax_score(ctx.scores, comp);
            let mut best: Option<TrunkPath> = None;
            for (nodes, parts) in candidate_paths(ctx, &remaining, start, cfg.max_order)? {
                let weight = parts.weight(cfg.alpha);
                if best.as_ref().is_none_or(|b| weight > b.weight) {
                    best = Some(TrunkPath { nodes, weight });
                }
            }
            paths.extend(best);
        }
        let used: BTreeSet<(usize, usize)> = paths.iter().flat_map(TrunkPath::edge_pairs).collect();
        let edges_in_graph = remaining.len();
        remaining.retain(|e| !used.contains(&(e.i, e.j)));
        levels.push(TrunkLevel { level, nodes_in_graph, edges_in_graph, paths });
    }
    Ok(TrunkHierarchy { levels })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaBracket {
    pub alpha_l: f64,
    pub alpha_u: f64,
    pub alpha_star: f64,
    /// Optimal weight at `alpha = 1` (node scores only).
    pub w_s: f64,
    /// Optimal weight at `alpha = 0` (high-order FC only).
    pub w_c: f64,
    pub start: usize,
    pub degenerate: bool,
}

/// Optimal composite weight over candidate paths at each alpha.
fn optimal_weight(parts: &[PathParts], alpha: f64) -> f64 {
    parts.iter().map(|p| p.weight(alpha)).fold(f64::NEG_INFINITY, f64::max)
}

fn start_candidates(ctx: &TreeContext, max_order: usize) -> Result<(usize, Vec<PathParts>)> {
    if ctx.tree.edges.is_empty() {
        return Err(TreeError::EmptyTree);
    }
    let nodes: Vec<usize> = components(ctx.tree.v, &ctx.tree.edges).concat();
    let start = argmax_score(ctx.scores, &nodes);
    let parts = candidate_paths(ctx, &ctx.tree.edges, start, max_order)?.into_iter().map(|(_, p)| p).collect();
    Ok((start, parts))
}

/// Bisects alpha until the optimal path weight from the top-scoring node
/// crosses `target`, to a bracket narrower than [`BRACKET_WIDTH`].
pub fn alpha_bracket(ctx: &TreeContext, max_order: usize, target: f64) -> Result<AlphaBracket> {
    let (start, parts) = start_candidates(ctx, max_order)?;
    let w_s = optimal_weight(&parts, 1.0);
    let w_c = optimal_weight(&parts, 0.0);
    let (lo, hi) = (w_s.min(w_c), w_s.max(w_c));
    if !(target >= lo && target <= hi) {
        return Err(TreeError::TargetOutOfRange { target, lo, hi });
    }
    let done = |alpha_l: f64, alpha_u: f64, degenerate| AlphaBracket {
        alpha_l,
        alpha_u,
        alpha_star: 0.5 * (alpha_l + alpha_u),
        w_s,
        w_c,
        start,
        degenerate,
    };
    if w_s == w_c {
        return Ok(done(0.0, 1.0, true));
    }
    let h = |a: f64| optimal_weight(&parts, a) - target;
    let h0 = h(0.0);
    if h0 == 0.0 {
        return Ok(done(0.0, 0.0, false));
    }
    if h(1.0) == 0.0 {
        return Ok(done(1.0, 1.0, false));
    }
    let (mut a, mut b) = (0.0, 1.0);
    while b - a >= BRACKET_WIDTH {
        let mid = 0.5 * (a + b);
        let hm = h(mid);
        if hm == 0.0 {
            return Ok(done(mid, mid, false));
        }
        if (hm > 0.0) == (h0 > 0.0) {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(done(a, b, false))
}

/// One subject's tree with the inputs needed to weigh its paths.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectTree {
    pub subject_id: String,
    pub label: Label,
    pub tree: PrunedTree,
    pub scores: NodeScores,
    /// Node strengths `F(v)`.
    pub f: Vec<f64>,
    pub hierarchy: TrunkHierarchy,
}

impl SubjectTree {
    pub fn context(&self) -> Result<TreeContext<'_>> {
        TreeContext::new(&self.tree, &self.scores, &self.f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub label: u8,
    pub mean_weight: f64,
}

/// Mean optimal path weight per alpha and label. Rows are ordered by alpha,
/// then label; labels with no subjects are omitted.
pub fn alpha_sweep(trees: &[SubjectTree], alphas: &[f64], max_order: usize) -> Result<Vec<SweepRow>> {
    for &a in alphas {
        if !(0.0..=1.0).contains(&a) {
            return Err(TreeError::Alpha(a));
        }
    }
    let mut per_subject = Vec::with_capacity(trees.len());
    for t in trees {
        let (_, parts) = start_candidates(&t.context()?, max_order)?;
        per_subject.push((t.label, parts));
    }
    let mut rows = Vec::new();
    for &alpha in alphas {
        for label in [Label::Control, Label::Case] {
            let ws: Vec<f64> = per_subject.iter().filter(|(l, _)| *l == label).map(|(_, p)| optimal_weight(p, alpha)).collect();
            if ws.is_empty() {
                continue;
            }
            rows.push(SweepRow { alpha, label: label.as_u8(), mean_weight: ws.iter().sum::<f64>() / ws.len() as f64 });
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("alpha,label,mean_weight\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", crate::cohort::format_f64(r.alpha), r.label, crate::cohort::format_f64(r.mean_weight));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportNode {
    pub index: usize,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportEdge {
    pub i: usize,
    pub j: usize,
    pub level: usize,
    pub color: String,
}

/// Serializable mirror of a hierarchy; [`TreeExport::to_dot`] renders it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TreeExport {
    pub nodes: Vec<ExportNode>,
    pub edges: Vec<ExportEdge>,
    pub levels: Vec<TrunkLevel>,
}

pub fn level_color(level: usize) -> &'static str {
    LEVEL_COLORS.get(level.wrapping_sub(1)).copied().unwrap_or(DEEP_LEVEL_COLOR)
}

fn node_label(atlas: &Atlas, region: usize) -> String {
    match atlas.network(region) {
        Some(net) => format!("{} [{}]", atlas.name(region), net),
        None => region.to_string(),
    }
}

pub fn export_tree(hierarchy: &TrunkHierarchy, atlas: &Atlas) -> TreeExport {
    let mut nodes = BTreeSet::new();
    let mut edges = Vec::new();
    for level in &hierarchy.levels {
        for path in &level.paths {
            nodes.extend(path.nodes.iter().copied());
            for (i, j) in path.edge_pairs() {
                edges.push(ExportEdge { i, j, level: level.level, color: level_color(level.level).to_string() });
            }
        }
    }
    edges.sort_by_key(|e| (e.level, e.i, e.j));
    TreeExport {
        nodes: nodes.into_iter().map(|index| ExportNode { index, label: node_label(atlas, index) }).collect(),
        edges,
        levels: hierarchy.levels.clone(),
    }
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

impl TreeExport {
    pub fn to_dot(&self) -> String {
        if self.nodes.is_empty() && self.edges.is_empty() {
            return "graph {}\n".to_string();
        }
        let mut out = String::from("graph {\n");
        for n in &self.nodes {
            let _ = writeln!(out, "  {} [label=\"{}\"];", n.index, dot_escape(&n.label));
        }
        for e in &self.edges {
            let _ = writeln!(out, "  {} -- {} [color=\"{}\", level={}];", e.i, e.j, dot_escape(&e.color), e.level);
        }
        out.push_str("}\n");
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("export serializes")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}
