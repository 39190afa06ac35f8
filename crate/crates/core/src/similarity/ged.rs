//! Graph edit distance over directed, edge-labeled architecture graphs.

use std::collections::{BTreeMap, BTreeSet};

use pathfinding::prelude::{kuhn_munkres_min, Matrix};
use serde::{Deserialize, Serialize};

use super::keyword_similarity;
use crate::ontology::{OntologySet, SystemArchitecture};
use crate::text::{keywords, normalize_token};

/// Graphs with at most this many nodes on both sides are solved exactly.
pub const EXACT_NODE_LIMIT: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GedCosts {
    pub node_ins: f64,
    pub node_del: f64,
    pub node_sub: f64,
    pub edge_ins: f64,
    pub edge_del: f64,
}

impl Default for GedCosts {
    fn default() -> Self {
        GedCosts {
            node_ins: 1.0,
            node_del: 1.0,
            node_sub: 1.0,
            edge_ins: 1.0,
            edge_del: 1.0,
        }
    }
}

impl GedCosts {
    pub fn is_valid(&self) -> bool {
        [
            self.node_ins,
            self.node_del,
            self.node_sub,
            self.edge_ins,
            self.edge_del,
        ]
        .iter()
        .all(|c| c.is_finite() && *c >= 0.0)
    }
}

/// Node label: the concept plus the entity's keywords, as one keyword set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledGraph {
    pub nodes: Vec<BTreeSet<String>>,
    pub edges: BTreeMap<(usize, usize), String>,
}

impl LabeledGraph {
    pub fn new() -> Self {
        LabeledGraph {
            nodes: Vec::new(),
            edges: BTreeMap::new(),
        }
    }

    pub fn add_node(&mut self, concept: &str, words: impl IntoIterator<Item = String>) -> usize {
        let mut label: BTreeSet<String> = words.into_iter().collect();
        label.insert(normalize_token(concept));
        self.nodes.push(label);
        self.nodes.len() - 1
    }

    pub fn add_edge(&mut self, from: usize, to: usize, label: impl Into<String>) {
        self.edges.insert((from, to), label.into());
    }

    pub fn from_architecture(arch: &SystemArchitecture) -> Self {
        let mut g = LabeledGraph::new();
        let mut index = BTreeMap::new();
        for e in arch.entities() {
            let mut words = keywords(&e.name);
            if let Some(d) = &e.description {
                words.extend(keywords(d));
            }
            index.insert(e.name.clone(), g.add_node(&e.concept, words));
        }
        for r in arch.relations() {
            g.add_edge(index[&r.from], index[&r.to], r.label.to_string());
        }
        g
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }
}

impl Default for LabeledGraph {
    fn default() -> Self {
        LabeledGraph::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GedResult {
    pub distance: f64,
    /// True when the distance is a bipartite-matching upper bound.
    pub approximate: bool,
}

struct Problem<'a> {
    g1: &'a LabeledGraph,
    g2: &'a LabeledGraph,
    costs: GedCosts,
    sub: Vec<Vec<f64>>,
}

impl<'a> Problem<'a> {
    fn new(
        g1: &'a LabeledGraph,
        g2: &'a LabeledGraph,
        costs: GedCosts,
        ont: Option<&OntologySet>,
    ) -> Self {
        let sub = g1
            .nodes
            .iter()
            .map(|a| {
                g2.nodes
                    .iter()
                    .map(|b| costs.node_sub * (1.0 - keyword_similarity(a, b, ont)))
                    .collect()
            })
            .collect();
        Problem { g1, g2, costs, sub }
    }

    /// Edge cost between g1 edge (a, b) and its image.
    fn edge_pair(&self, a: usize, b: usize, fa: Option<usize>, fb: Option<usize>) -> f64 {
        let e1 = self.g1.edges.get(&(a, b));
        let e2 = match (fa, fb) {
            (Some(x), Some(y)) => self.g2.edges.get(&(x, y)),
            _ => None,
        };
        match (e1, e2) {
            (None, None) => 0.0,
            (Some(_), None) => self.costs.edge_del,
            (None, Some(_)) => self.costs.edge_ins,
            (Some(l1), Some(l2)) if l1 == l2 => 0.0,
            (Some(_), Some(_)) => self.costs.edge_del + self.costs.edge_ins,
        }
    }

    /// Full cost of a complete mapping of g1 nodes to g2 nodes or deletion.
    fn mapping_cost(&self, map: &[Option<usize>]) -> f64 {
        let mut cost = 0.0;
        let mut used = vec![false; self.g2.nodes.len()];
        for (i, m) in map.iter().enumerate() {
            match m {
                Some(j) => {
                    used[*j] = true;
                    cost += self.sub[i][*j];
                }
                None => cost += self.costs.node_del,
            }
        }
        cost += used.iter().filter(|u| !**u).count() as f64 * self.costs.node_ins;
        for &(a, b) in self.g1.edges.keys() {
            cost += self.edge_pair(a, b, map[a], map[b]);
        }
        let mut inverse = vec![None; self.g2.nodes.len()];
        for (i, m) in map.iter().enumerate() {
            if let Some(j) = m {
                inverse[*j] = Some(i);
            }
        }
        for &(x, y) in self.g2.edges.keys() {
            match (inverse[x], inverse[y]) {
                (Some(a), Some(b)) if self.g1.edges.contains_key(&(a, b)) => {}
                _ => cost += self.costs.edge_ins,
            }
        }
        cost
    }

    /// Bipartite assignment over node costs plus local edge estimates.
    fn bipartite(&self) -> Vec<Option<usize>> {
        let (n1, n2) = (self.g1.nodes.len(), self.g2.nodes.len());
        if n1 == 0 {
            return Vec::new();
        }
        let degree = |g: &LabeledGraph, v: usize| {
            g.edges.keys().filter(|(a, b)| *a == v || *b == v).count() as f64
        };
        const SCALE: f64 = 1e6;
        const FORBIDDEN: i64 = 1 << 50;
        let n = n1 + n2;
        let mut m = Matrix::new(n, n, 0i64);
        for i in 0..n1 {
            let d1 = degree(self.g1, i);
            for j in 0..n2 {
                let d2 = degree(self.g2, j);
                let edge = (d1 - d2).max(0.0) * self.costs.edge_del
                    + (d2 - d1).max(0.0) * self.costs.edge_ins;
                m[(i, j)] = ((self.sub[i][j] + edge / 2.0) * SCALE).round() as i64;
            }
            for k in 0..n1 {
                m[(i, n2 + k)] = if k == i {
                    ((self.costs.node_del + d1 * self.costs.edge_del / 2.0) * SCALE).round() as i64
                } else {
                    FORBIDDEN
                };
            }
        }
        for k in 0..n2 {
            let d2 = degree(self.g2, k);
            for j in 0..n2 {
                m[(n1 + k, j)] = if k == j {
                    ((self.costs.node_ins + d2 * self.costs.edge_ins / 2.0) * SCALE).round() as i64
                } else {
                    FORBIDDEN
                };
            }
        }
        let (_, assignment) = kuhn_munkres_min(&m);
        assignment[..n1]
            .iter()
            .map(|&j| (j < n2).then_some(j))
            .collect()
    }

    fn exact(&self) -> f64 {
        let n1 = self.g1.nodes.len();
        let mut order: Vec<usize> = (0..n1).collect();
        let degree = |v: usize| {
            self.g1
                .edges
                .keys()
                .filter(|(a, b)| *a == v || *b == v)
                .count()
        };
        order.sort_by_key(|&v| std::cmp::Reverse(degree(v)));
        let initial = self.bipartite();
        let mut search = Search {
            p: self,
            order,
            map: vec![None; n1],
            assigned: vec![false; n1],
            used: vec![false; self.g2.nodes.len()],
            best: self.mapping_cost(&initial),
        };
        search.descend(0, 0.0);
        search.best
    }
}

struct Search<'a, 'b> {
    p: &'b Problem<'a>,
    order: Vec<usize>,
    map: Vec<Option<usize>>,
    assigned: Vec<bool>,
    used: Vec<bool>,
    best: f64,
}

impl Search<'_, '_> {
    /// Cost of edges between `v` and already-assigned g1 nodes, both ways,
    /// including g2 edges between their images that have no g1 counterpart.
    fn edge_delta(&self, v: usize) -> f64 {
        let p = self.p;
        let mut cost = 0.0;
        for u in 0..self.map.len() {
            if !self.assigned[u] && u != v {
                continue;
            }
            cost += p.edge_pair(v, u, self.map[v], self.map[u]);
            if u != v {
                cost += p.edge_pair(u, v, self.map[u], self.map[v]);
            }
        }
        cost
    }

    fn lower_bound(&self, depth: usize) -> f64 {
        let p = self.p;
        let r1 = self.order.len() - depth;
        let r2 = self.used.iter().filter(|u| !**u).count();
        let nodes = r1.saturating_sub(r2) as f64 * p.costs.node_del
            + r2.saturating_sub(r1) as f64 * p.costs.node_ins;
        let e1 = p
            .g1
            .edges
            .keys()
            .filter(|(a, b)| !self.assigned[*a] || !self.assigned[*b])
            .count();
        let e2 = p
            .g2
            .edges
            .keys()
            .filter(|(x, y)| !self.used[*x] || !self.used[*y])
            .count();
        nodes
            + e1.saturating_sub(e2) as f64 * p.costs.edge_del
            + e2.saturating_sub(e1) as f64 * p.costs.edge_ins
    }

    fn descend(&mut self, depth: usize, cost: f64) {
        if cost + self.lower_bound(depth) >= self.best {
            return;
        }
        if depth == self.order.len() {
            let p = self.p;
            let mut total =
                cost + self.used.iter().filter(|u| !**u).count() as f64 * p.costs.node_ins;
            total += p
                .g2
                .edges
                .keys()
                .filter(|(x, y)| !self.used[*x] || !self.used[*y])
                .count() as f64
                * p.costs.edge_ins;
            if total < self.best {
                self.best = total;
            }
            return;
        }
        let v = self.order[depth];
        let candidates: Vec<Option<usize>> = (0..self.used.len())
            .filter(|j| !self.used[*j])
            .map(Some)
            .chain(std::iter::once(None))
            .collect();
        for c in candidates {
            let node_cost = match c {
                Some(j) => self.p.sub[v][j],
                None => self.p.costs.node_del,
            };
            self.map[v] = c;
            if let Some(j) = c {
                self.used[j] = true;
            }
            let delta = node_cost + self.edge_delta(v);
            self.assigned[v] = true;
            self.descend(depth + 1, cost + delta);
            self.assigned[v] = false;
            if let Some(j) = c {
                self.used[j] = false;
            }
            self.map[v] = None;
        }
    }
}

/// Minimum-cost edit distance. Exact by branch and bound when both graphs
/// have at most [`EXACT_NODE_LIMIT`] nodes, otherwise a bipartite-matching
/// upper bound flagged `approximate`.
pub fn graph_edit_distance(
    g1: &LabeledGraph,
    g2: &LabeledGraph,
    costs: &GedCosts,
    ont: Option<&OntologySet>,
) -> GedResult {
    let p = Problem::new(g1, g2, *costs, ont);
    if g1.node_count() <= EXACT_NODE_LIMIT && g2.node_count() <= EXACT_NODE_LIMIT {
        GedResult {
            distance: p.exact(),
            approximate: false,
        }
    } else {
        GedResult {
            distance: p.mapping_cost(&p.bipartite()),
            approximate: true,
        }
    }
}
