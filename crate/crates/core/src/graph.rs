//! Weighted directed function dependency graph and its centrality measures.
//!
//! Call edges carry weight 1.0 and data edges (writer -> reader of a shared
//! state variable) carry 0.8 by default. Betweenness treats stronger
//! coupling as shorter distance (edge distance = 1/weight); PageRank runs
//! with damping 0.85 and uniform teleport.

use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::facts::{FactSet, FunctionKey, Visibility};

pub const DEFAULT_CALL_WEIGHT: f64 = 1.0;
pub const DEFAULT_DATA_WEIGHT: f64 = 0.8;

pub const PAGERANK_DAMPING: f64 = 0.85;
pub const PAGERANK_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Call,
    Data,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepEdge {
    pub from: FunctionKey,
    pub to: FunctionKey,
    pub kind: EdgeKind,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphWeights {
    pub call: f64,
    pub data: f64,
}

impl Default for GraphWeights {
    fn default() -> Self {
        GraphWeights {
            call: DEFAULT_CALL_WEIGHT,
            data: DEFAULT_DATA_WEIGHT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeMeta {
    pub contract: String,
    pub visibility: Visibility,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DependencyGraph {
    /// Sorted node list; indices into it are used internally.
    nodes: Vec<FunctionKey>,
    edges: Vec<DepEdge>,
    node_meta: BTreeMap<FunctionKey, NodeMeta>,
}

#[derive(Debug, Clone, Default)]
pub struct CentralityTable {
    pub betweenness: BTreeMap<FunctionKey, f64>,
    pub pagerank: BTreeMap<FunctionKey, f64>,
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("unknown function {0}")]
    UnknownFunction(FunctionKey),
    #[error("graph is empty")]
    EmptyGraph,
}

/// Builds the dependency graph from facts: one call edge per resolved call,
/// one data edge per (writer, reader) pair sharing a state variable with
/// writer != reader. Unresolved calls produce no edge.
pub fn build_graph(facts: &FactSet) -> DependencyGraph {
    build_graph_with(facts, GraphWeights::default())
}

pub fn build_graph_with(facts: &FactSet, weights: GraphWeights) -> DependencyGraph {
    let mut nodes: Vec<FunctionKey> = facts.function_keys();
    nodes.sort();
    nodes.dedup();
    let node_set: BTreeSet<_> = nodes.iter().cloned().collect();

    let mut edge_set: BTreeSet<(FunctionKey, FunctionKey, EdgeKind)> = BTreeSet::new();
    for call in &facts.calls {
        if call.resolved && node_set.contains(&call.caller) && node_set.contains(&call.callee) {
            edge_set.insert((call.caller.clone(), call.callee.clone(), EdgeKind::Call));
        }
    }

    let mut writers: BTreeMap<&str, BTreeSet<&FunctionKey>> = BTreeMap::new();
    let mut readers: BTreeMap<&str, BTreeSet<&FunctionKey>> = BTreeMap::new();
    for access in &facts.state_accesses {
        let bucket = match access.mode {
            crate::facts::AccessMode::Write => &mut writers,
            crate::facts::AccessMode::Read => &mut readers,
        };
        bucket
            .entry(access.variable.as_str())
            .or_default()
            .insert(&access.function);
    }
    for (var, ws) in &writers {
        if let Some(rs) = readers.get(var) {
            for w in ws {
                for r in rs {
                    if w != r {
                        edge_set.insert(((*w).clone(), (*r).clone(), EdgeKind::Data));
                    }
                }
            }
        }
    }

    let edges = edge_set
        .into_iter()
        .map(|(from, to, kind)| DepEdge {
            from,
            to,
            weight: match kind {
                EdgeKind::Call => weights.call,
                EdgeKind::Data => weights.data,
            },
            kind,
        })
        .collect();

    let node_meta = facts
        .functions
        .iter()
        .map(|f| {
            (
                f.key(),
                NodeMeta {
                    contract: f.contract.clone(),
                    visibility: f.visibility,
                },
            )
        })
        .collect();

    DependencyGraph {
        nodes,
        edges,
        node_meta,
    }
}

impl DependencyGraph {
    /// Builds a graph directly from parts (used for induced subgraphs and
    /// synthetic fixtures). Edges with unknown endpoints are dropped.
    pub fn from_parts(
        nodes: Vec<FunctionKey>,
        edges: Vec<DepEdge>,
        node_meta: BTreeMap<FunctionKey, NodeMeta>,
    ) -> Self {
        let mut nodes = nodes;
        nodes.sort();
        nodes.dedup();
        let set: BTreeSet<_> = nodes.iter().cloned().collect();
        let mut edges: Vec<DepEdge> = edges
            .into_iter()
            .filter(|e| set.contains(&e.from) && set.contains(&e.to))
            .collect();
        edges.sort_by(|a, b| (&a.from, &a.to, a.kind).cmp(&(&b.from, &b.to, b.kind)));
        edges.dedup_by(|a, b| (&a.from, &a.to, a.kind) == (&b.from, &b.to, b.kind));
        DependencyGraph {
            nodes,
            edges,
            node_meta,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[FunctionKey] {
        &self.nodes
    }

    pub fn edges(&self) -> &[DepEdge] {
        &self.edges
    }

    pub fn contains(&self, key: &FunctionKey) -> bool {
        self.nodes.binary_search(key).is_ok()
    }

    pub fn meta(&self, key: &FunctionKey) -> Option<&NodeMeta> {
        self.node_meta.get(key)
    }

    pub fn contract_of(&self, key: &FunctionKey) -> Option<&str> {
        self.node_meta.get(key).map(|m| m.contract.as_str())
    }

    fn index_of(&self, key: &FunctionKey) -> Option<usize> {
        self.nodes.binary_search(key).ok()
    }

    /// Outgoing adjacency over all edges: (target index, weight).
    fn out_adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            let (Some(a), Some(b)) = (self.index_of(&e.from), self.index_of(&e.to)) else {
                continue;
            };
            adj[a].push((b, e.weight));
        }
        adj
    }

    fn call_adjacency(&self) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
        let mut fwd = vec![Vec::new(); self.nodes.len()];
        let mut rev = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            if e.kind != EdgeKind::Call {
                continue;
            }
            let (Some(a), Some(b)) = (self.index_of(&e.from), self.index_of(&e.to)) else {
                continue;
            };
            fwd[a].push(b);
            rev[b].push(a);
        }
        (fwd, rev)
    }

    /// The function itself plus everything reachable from it and everything
    /// that reaches it within `depth` hops over call edges only.
    pub fn extract_caller_callee(
        &self,
        start: &FunctionKey,
        depth: usize,
    ) -> Result<BTreeSet<FunctionKey>, GraphError> {
        let origin = self
            .index_of(start)
            .ok_or_else(|| GraphError::UnknownFunction(start.clone()))?;
        let (fwd, rev) = self.call_adjacency();
        let mut result = BTreeSet::new();
        for adj in [&fwd, &rev] {
            let mut dist = vec![usize::MAX; self.nodes.len()];
            let mut queue = VecDeque::new();
            dist[origin] = 0;
            queue.push_back(origin);
            while let Some(v) = queue.pop_front() {
                result.insert(self.nodes[v].clone());
                if dist[v] == depth {
                    continue;
                }
                for &w in &adj[v] {
                    if dist[w] == usize::MAX {
                        dist[w] = dist[v] + 1;
                        queue.push_back(w);
                    }
                }
            }
        }
        Ok(result)
    }

    /// Induced subgraph over the given nodes (edges with both endpoints in
    /// the set, original kinds and weights).
    pub fn induced_subgraph(&self, keep: &BTreeSet<FunctionKey>) -> DependencyGraph {
        let nodes: Vec<FunctionKey> = self
            .nodes
            .iter()
            .filter(|n| keep.contains(n))
            .cloned()
            .collect();
        let edges = self
            .edges
            .iter()
            .filter(|e| keep.contains(&e.from) && keep.contains(&e.to))
            .cloned()
            .collect();
        let node_meta = self
            .node_meta
            .iter()
            .filter(|(k, _)| keep.contains(k))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        DependencyGraph::from_parts(nodes, edges, node_meta)
    }

    /// Symmetrized weighted adjacency for community detection: directed
    /// weights are summed across both directions.
    pub fn symmetrized_adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let mut pair: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for e in &self.edges {
            let (Some(a), Some(b)) = (self.index_of(&e.from), self.index_of(&e.to)) else {
                continue;
            };
            let key = if a <= b { (a, b) } else { (b, a) };
            *pair.entry(key).or_insert(0.0) += e.weight;
        }
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for ((a, b), w) in pair {
            adj[a].push((b, w));
            if a != b {
                adj[b].push((a, w));
            }
        }
        adj
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph deps {\n");
        for n in &self.nodes {
            out.push_str(&format!("  \"{}\";\n", n));
        }
        for e in &self.edges {
            let style = match e.kind {
                EdgeKind::Call => "solid",
                EdgeKind::Data => "dashed",
            };
            out.push_str(&format!(
                "  \"{}\" -> \"{}\" [style={}, weight=\"{}\"];\n",
                e.from, e.to, style, e.weight
            ));
        }
        out.push_str("}\n");
        out
    }

    pub fn to_adjacency_json(&self) -> serde_json::Value {
        serde_json::json!({
            "nodes": self.nodes.iter().map(|n| {
                let meta = self.node_meta.get(n);
                serde_json::json!({
                    "key": n.as_str(),
                    "contract": meta.map(|m| m.contract.clone()).unwrap_or_default(),
                })
            }).collect::<Vec<_>>(),
            "edges": self.edges.iter().map(|e| serde_json::json!({
                "from": e.from.as_str(),
                "to": e.to.as_str(),
                "kind": e.kind,
                "weight": e.weight,
            })).collect::<Vec<_>>(),
        })
    }
}

// ---------------------------------------------------------------------------
// Centrality
// ---------------------------------------------------------------------------

/// Betweenness (Brandes over 1/weight distances, unnormalized, endpoints
/// excluded) and PageRank (weighted transitions, uniform teleport).
pub fn centrality_scores(graph: &DependencyGraph) -> Result<CentralityTable, GraphError> {
    if graph.is_empty() {
        return Err(GraphError::EmptyGraph);
    }
    let betweenness = betweenness_values(graph);
    let pagerank = pagerank_values(graph, PAGERANK_DAMPING, PAGERANK_TOLERANCE, 10_000);
    let table = CentralityTable {
        betweenness: graph
            .nodes
            .iter()
            .cloned()
            .zip(betweenness.iter().copied())
            .collect(),
        pagerank: graph
            .nodes
            .iter()
            .cloned()
            .zip(pagerank.iter().copied())
            .collect(),
    };
    Ok(table)
}

/// Tolerance for comparing floating shortest-path distances.
const DIST_EPS: f64 = 1e-9;

fn betweenness_values(graph: &DependencyGraph) -> Vec<f64> {
    let n = graph.nodes.len();
    let adj = graph.out_adjacency();
    let mut betweenness = vec![0.0; n];
    if n <= 2 {
        return betweenness;
    }

    #[derive(PartialEq)]
    struct HeapItem(f64, usize);
    impl Eq for HeapItem {}
    impl PartialOrd for HeapItem {
        fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(other))
        }
    }
    impl Ord for HeapItem {
        fn cmp(&self, other: &Self) -> std::cmp::Ordering {
            // Min-heap on distance via reversed comparison.
            other
                .0
                .partial_cmp(&self.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| other.1.cmp(&self.1))
        }
    }

    for s in 0..n {
        // Dijkstra from s with path counting.
        let mut dist = vec![f64::INFINITY; n];
        let mut sigma = vec![0.0f64; n];
        let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut order: Vec<usize> = Vec::new();
        let mut settled = vec![false; n];
        dist[s] = 0.0;
        sigma[s] = 1.0;
        let mut heap = BinaryHeap::new();
        heap.push(HeapItem(0.0, s));
        while let Some(HeapItem(d, v)) = heap.pop() {
            if settled[v] || d > dist[v] + DIST_EPS {
                continue;
            }
            settled[v] = true;
            order.push(v);
            for &(w, weight) in &adj[v] {
                if w == v {
                    continue; // self loops never lie on shortest paths
                }
                let cand = dist[v] + 1.0 / weight;
                if cand + DIST_EPS < dist[w] {
                    dist[w] = cand;
                    sigma[w] = sigma[v];
                    preds[w] = vec![v];
                    heap.push(HeapItem(cand, w));
                } else if (cand - dist[w]).abs() <= DIST_EPS && !settled[w] {
                    sigma[w] += sigma[v];
                    preds[w].push(v);
                }
            }
        }
        // Accumulation in reverse settling order.
        let mut delta = vec![0.0f64; n];
        for &w in order.iter().rev() {
            for &v in &preds[w] {
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
            }
            if w != s {
                betweenness[w] += delta[w];
            }
        }
    }
    betweenness
}

fn pagerank_values(graph: &DependencyGraph, damping: f64, tol: f64, max_iter: usize) -> Vec<f64> {
    let n = graph.nodes.len();
    let adj = graph.out_adjacency();
    let out_weight: Vec<f64> = adj
        .iter()
        .map(|edges| edges.iter().map(|(_, w)| *w).sum::<f64>())
        .collect();
    let mut rank = vec![1.0 / n as f64; n];
    for _ in 0..max_iter {
        let mut next = vec![(1.0 - damping) / n as f64; n];
        let mut dangling = 0.0;
        for v in 0..n {
            if out_weight[v] == 0.0 {
                dangling += rank[v];
                continue;
            }
            for &(w, weight) in &adj[v] {
                next[w] += damping * rank[v] * weight / out_weight[v];
            }
        }
        // Dangling mass is teleported uniformly.
        let share = damping * dangling / n as f64;
        for value in next.iter_mut() {
            *value += share;
        }
        let delta: f64 = next
            .iter()
            .zip(rank.iter())
            .map(|(a, b)| (a - b).abs())
            .sum();
        rank = next;
        if delta < tol {
            break;
        }
    }
    rank
}
