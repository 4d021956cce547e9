//! Partitions the dependency graph into auditable batches: Louvain
//! communities on the symmetrized graph, community -> contract-batch
//! mapping, centrality-based importance scores, semantic-tag merging, and
//! token-limit pruning.

use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::facts::{FactSet, FunctionKey};
use crate::gateway::{Gateway, GatewayError};
use crate::graph::{centrality_scores, DependencyGraph, GraphError};

pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_BETA: f64 = 0.5;
pub const DEFAULT_TOKEN_LIMIT: usize = 32_000;

/// Louvain restarts per seed; the best-modularity run wins.
const LOUVAIN_RESTARTS: u64 = 8;

pub fn default_tag_vocabulary() -> Vec<String> {
    [
        "Swap",
        "Lending",
        "Governance",
        "Tokenomics",
        "Oracle",
        "Staking",
        "Vault",
        "Liquidity",
        "Access-Control",
        "Misc",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Community {
    pub id: usize,
    pub members: BTreeSet<FunctionKey>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub id: usize,
    /// Contracts in descending score order (lexicographic tie-break).
    pub contracts: Vec<String>,
    pub scores: BTreeMap<String, f64>,
    pub tags: Vec<String>,
    pub estimated_tokens: usize,
    #[serde(rename = "pruned")]
    pub pruned_contracts: Vec<String>,
    /// Functions whose bodies were elided by single-contract truncation.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub truncated_functions: Vec<FunctionKey>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchPlan {
    pub batches: Vec<Batch>,
}

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("graph is empty")]
    EmptyGraph,
    #[error("batch {0} is empty")]
    EmptyBatch(usize),
    #[error("unknown contract for function {0}")]
    UnknownContract(FunctionKey),
    #[error("batch {batch}: single contract still exceeds the token limit after body truncation")]
    UnprunableBatch { batch: usize },
    #[error("model error while refining batch {batch}: {source}")]
    Model {
        batch: usize,
        #[source]
        source: GatewayError,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone)]
pub struct ProfilerConfig {
    pub alpha: f64,
    pub beta: f64,
    pub token_limit: usize,
    pub tag_vocabulary: Vec<String>,
}

impl Default for ProfilerConfig {
    fn default() -> Self {
        ProfilerConfig {
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            token_limit: DEFAULT_TOKEN_LIMIT,
            tag_vocabulary: default_tag_vocabulary(),
        }
    }
}

/// chars/4 token estimator, shared with the gateway's fallback accounting.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

// ---------------------------------------------------------------------------
// Louvain community detection
// ---------------------------------------------------------------------------

/// Louvain on the symmetrized weighted graph. Deterministic for a fixed
/// seed; the returned partition's modularity is never below the
/// all-singletons baseline because only improving moves are taken.
pub fn detect_communities(
    graph: &DependencyGraph,
    seed: u64,
) -> Result<Vec<Community>, ProfileError> {
    if graph.is_empty() {
        return Err(ProfileError::EmptyGraph);
    }
    let adj = graph.symmetrized_adjacency();
    let n = graph.node_count();

    let mut best: Option<(f64, Vec<usize>)> = None;
    for restart in 0..LOUVAIN_RESTARTS {
        let assignment = louvain_run(&adj, n, seed.wrapping_add(restart.wrapping_mul(0x9e37)));
        let q = modularity_of_assignment(&adj, &assignment);
        let better = match &best {
            None => true,
            Some((bq, ba)) => q > *bq + 1e-12 || (q > *bq - 1e-12 && assignment < *ba),
        };
        if better {
            best = Some((q, assignment));
        }
    }
    let (_, assignment) = best.expect("at least one restart");

    // Relabel communities by their smallest member for stable ids.
    let mut groups: BTreeMap<usize, BTreeSet<FunctionKey>> = BTreeMap::new();
    for (idx, &comm) in assignment.iter().enumerate() {
        groups
            .entry(comm)
            .or_default()
            .insert(graph.nodes()[idx].clone());
    }
    let mut communities: Vec<BTreeSet<FunctionKey>> = groups.into_values().collect();
    communities.sort_by(|a, b| a.iter().next().cmp(&b.iter().next()));
    Ok(communities
        .into_iter()
        .enumerate()
        .map(|(id, members)| Community { id, members })
        .collect())
}

/// Weighted modularity of a node -> community assignment over a symmetric
/// adjacency list (self loops count twice in degrees, as usual).
pub fn modularity_of_assignment(adj: &[Vec<(usize, f64)>], assignment: &[usize]) -> f64 {
    let n = adj.len();
    let mut degree = vec![0.0f64; n];
    let mut two_m = 0.0;
    for (v, edges) in adj.iter().enumerate() {
        for &(w, weight) in edges {
            degree[v] += if w == v { 2.0 * weight } else { weight };
        }
    }
    for d in &degree {
        two_m += d;
    }
    if two_m == 0.0 {
        return 0.0;
    }
    let mut internal = vec![0.0f64; n];
    let mut comm_degree = vec![0.0f64; n];
    for (v, edges) in adj.iter().enumerate() {
        comm_degree[assignment[v]] += degree[v];
        for &(w, weight) in edges {
            if assignment[v] == assignment[w] {
                internal[assignment[v]] += if w == v { 2.0 * weight } else { weight };
            }
        }
    }
    (0..n)
        .map(|c| internal[c] / two_m - (comm_degree[c] / two_m).powi(2))
        .sum()
}

/// One Louvain run: local moving + aggregation until no level improves.
fn louvain_run(adj: &[Vec<(usize, f64)>], n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Current level graph and the mapping from original nodes to its nodes.
    let mut level_adj: Vec<Vec<(usize, f64)>> = adj.to_vec();
    let mut node_to_level: Vec<usize> = (0..n).collect();

    loop {
        let level_n = level_adj.len();
        let mut assignment: Vec<usize> = (0..level_n).collect();
        let moved = local_moving(&level_adj, &mut assignment, &mut rng);
        if !moved {
            // Final assignment for original nodes.
            return node_to_level
                .iter()
                .map(|&ln| assignment[ln])
                .collect();
        }
        // Aggregate communities into super-nodes.
        let mut remap: BTreeMap<usize, usize> = BTreeMap::new();
        for &c in &assignment {
            let next = remap.len();
            remap.entry(c).or_insert(next);
        }
        let super_n = remap.len();
        let mut pair: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (v, edges) in level_adj.iter().enumerate() {
            let cv = remap[&assignment[v]];
            for &(w, weight) in edges {
                let cw = remap[&assignment[w]];
                // Each undirected edge appears twice in the adjacency; keep
                // one representative per direction pair.
                if w < v {
                    continue;
                }
                let key = if cv <= cw { (cv, cw) } else { (cw, cv) };
                *pair.entry(key).or_insert(0.0) += weight;
            }
        }
        let mut next_adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); super_n];
        for ((a, b), w) in pair {
            next_adj[a].push((b, w));
            if a != b {
                next_adj[b].push((a, w));
            }
        }
        node_to_level = node_to_level
            .iter()
            .map(|&ln| remap[&assignment[ln]])
            .collect();
        level_adj = next_adj;
        if level_adj.len() == level_n {
            // No aggregation happened; the assignment is a fixpoint.
            return node_to_level;
        }
    }
}

/// Greedy modularity-improving moves in shuffled order; returns whether any
/// move was made.
fn local_moving(
    adj: &[Vec<(usize, f64)>],
    assignment: &mut [usize],
    rng: &mut ChaCha8Rng,
) -> bool {
    let n = adj.len();
    let mut degree = vec![0.0f64; n];
    let mut two_m = 0.0;
    for (v, edges) in adj.iter().enumerate() {
        for &(w, weight) in edges {
            degree[v] += if w == v { 2.0 * weight } else { weight };
        }
    }
    for d in &degree {
        two_m += d;
    }
    if two_m == 0.0 {
        return false;
    }
    let mut comm_degree = vec![0.0f64; n];
    for v in 0..n {
        comm_degree[assignment[v]] += degree[v];
    }
    let mut any_move = false;
    let mut order: Vec<usize> = (0..n).collect();

    loop {
        let mut moves_this_pass = 0;
        shuffle(&mut order, rng);
        for &v in &order {
            let current = assignment[v];
            // Weight from v to each neighboring community.
            let mut to_comm: BTreeMap<usize, f64> = BTreeMap::new();
            for &(w, weight) in &adj[v] {
                if w != v {
                    *to_comm.entry(assignment[w]).or_insert(0.0) += weight;
                }
            }
            comm_degree[current] -= degree[v];
            let base = to_comm.get(&current).copied().unwrap_or(0.0);
            let mut best_comm = current;
            let mut best_gain = 0.0f64;
            for (&comm, &weight) in &to_comm {
                if comm == current {
                    continue;
                }
                let gain = (weight - base)
                    - degree[v] * (comm_degree[comm] - comm_degree[current]) / two_m;
                if gain > best_gain + 1e-12
                    || (gain > best_gain - 1e-12 && best_comm != current && comm < best_comm)
                {
                    best_gain = gain;
                    best_comm = comm;
                }
            }
            comm_degree[best_comm] += degree[v];
            if best_comm != current {
                assignment[v] = best_comm;
                moves_this_pass += 1;
                any_move = true;
            }
        }
        if moves_this_pass == 0 {
            break;
        }
    }
    any_move
}

/// Deterministic Fisher-Yates driven by the seeded stream.
fn shuffle(items: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        items.swap(i, j);
    }
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

pub struct Profiler<'a> {
    pub facts: &'a FactSet,
    pub graph: &'a DependencyGraph,
    pub cfg: ProfilerConfig,
}

impl<'a> Profiler<'a> {
    pub fn new(facts: &'a FactSet, graph: &'a DependencyGraph, cfg: ProfilerConfig) -> Self {
        Profiler { facts, graph, cfg }
    }

    /// One batch per community, deduplicated by contract set. Skeleton
    /// batches carry zero scores until `apply_scores` runs.
    pub fn communities_to_batches(
        &self,
        communities: &[Community],
    ) -> Result<Vec<Batch>, ProfileError> {
        let mut seen: BTreeSet<Vec<String>> = BTreeSet::new();
        let mut batches = Vec::new();
        for community in communities {
            let mut contracts = BTreeSet::new();
            for member in &community.members {
                let contract = self
                    .graph
                    .contract_of(member)
                    .or_else(|| self.facts.function(member).map(|f| f.contract.as_str()))
                    .ok_or_else(|| ProfileError::UnknownContract(member.clone()))?;
                if self.facts.contract(contract).is_none() {
                    return Err(ProfileError::UnknownContract(member.clone()));
                }
                contracts.insert(contract.to_string());
            }
            let ordered: Vec<String> = contracts.into_iter().collect();
            if ordered.is_empty() || !seen.insert(ordered.clone()) {
                continue;
            }
            let id = batches.len();
            let mut batch = Batch {
                id,
                contracts: ordered,
                scores: BTreeMap::new(),
                tags: Vec::new(),
                estimated_tokens: 0,
                pruned_contracts: Vec::new(),
                truncated_functions: Vec::new(),
            };
            batch.estimated_tokens = self.estimate_batch_tokens(&batch);
            batches.push(batch);
        }
        Ok(batches)
    }

    /// Importance per contract on the induced batch subgraph:
    /// mean over the contract's functions of alpha*Betw(f) + beta*PR(f).
    /// Contracts with no functions in the subgraph score 0.
    pub fn score_contracts(
        &self,
        batch: &Batch,
        alpha: f64,
        beta: f64,
    ) -> Result<BTreeMap<String, f64>, ProfileError> {
        if batch.contracts.is_empty() {
            return Err(ProfileError::EmptyBatch(batch.id));
        }
        let keep = self.batch_functions(batch);
        let mut scores: BTreeMap<String, f64> = batch
            .contracts
            .iter()
            .map(|c| (c.clone(), 0.0))
            .collect();
        if keep.is_empty() {
            return Ok(scores);
        }
        let sub = self.graph.induced_subgraph(&keep);
        let table = centrality_scores(&sub)?;
        let mut sums: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
        for key in sub.nodes() {
            let Some(contract) = sub.contract_of(key) else {
                continue;
            };
            let value = alpha * table.betweenness[key] + beta * table.pagerank[key];
            let entry = sums.entry(contract).or_insert((0.0, 0));
            entry.0 += value;
            entry.1 += 1;
        }
        for (contract, (sum, count)) in sums {
            if let Some(slot) = scores.get_mut(contract) {
                *slot = sum / count as f64;
            }
        }
        Ok(scores)
    }

    /// Recomputes scores and reorders contracts (descending score,
    /// lexicographic tie-break).
    pub fn apply_scores(&self, batch: &mut Batch) -> Result<(), ProfileError> {
        batch.scores = self.score_contracts(batch, self.cfg.alpha, self.cfg.beta)?;
        batch.contracts.sort_by(|a, b| {
            let sa = batch.scores.get(a).copied().unwrap_or(0.0);
            let sb = batch.scores.get(b).copied().unwrap_or(0.0);
            sb.partial_cmp(&sa)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.cmp(b))
        });
        Ok(())
    }

    /// Function keys of the batch's contracts present in the graph.
    pub fn batch_functions(&self, batch: &Batch) -> BTreeSet<FunctionKey> {
        let contracts: BTreeSet<&str> = batch.contracts.iter().map(|s| s.as_str()).collect();
        self.graph
            .nodes()
            .iter()
            .filter(|k| {
                self.graph
                    .contract_of(k)
                    .is_some_and(|c| contracts.contains(c))
            })
            .cloned()
            .collect()
    }

    pub fn render_batch_code(&self, batch: &Batch) -> String {
        render_batch_code(self.facts, batch)
    }

    pub fn estimate_batch_tokens(&self, batch: &Batch) -> usize {
        estimate_tokens(&self.render_batch_code(batch))
    }

    /// Tags every batch via the model and merges batches transitively when
    /// they share a tag; merged batches are rescored on the union subgraph.
    pub fn refine_batches(
        &self,
        batches: Vec<Batch>,
        gateway: &Gateway,
    ) -> Result<Vec<Batch>, ProfileError> {
        let mut tagged = batches;
        for batch in tagged.iter_mut() {
            let reply = gateway
                .complete(
                    "profile.tags",
                    "You label groups of smart contracts with semantic domain tags. \
                     Reply with a JSON array of tags drawn only from the given vocabulary.",
                    &format!(
                        "vocabulary: {:?}\ncontracts: {:?}\ncode:\n{}",
                        self.cfg.tag_vocabulary,
                        batch.contracts,
                        clip(&self.render_batch_code(batch), 4000),
                    ),
                )
                .map_err(|source| ProfileError::Model {
                    batch: batch.id,
                    source,
                })?;
            batch.tags = parse_string_list(&reply)
                .into_iter()
                .filter(|t| self.cfg.tag_vocabulary.iter().any(|v| v == t))
                .collect();
            batch.tags.dedup();
        }

        // Union-find over batches sharing at least one tag.
        let n = tagged.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut Vec<usize>, x: usize) -> usize {
            if parent[x] != x {
                let root = find(parent, parent[x]);
                parent[x] = root;
            }
            parent[x]
        }
        let mut by_tag: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, batch) in tagged.iter().enumerate() {
            for tag in &batch.tags {
                match by_tag.get(tag.as_str()) {
                    Some(&j) => {
                        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                        if a != b {
                            parent[a.max(b)] = a.min(b);
                        }
                    }
                    None => {
                        by_tag.insert(tag, i);
                    }
                }
            }
        }
        let mut merged: BTreeMap<usize, Batch> = BTreeMap::new();
        for (i, batch) in tagged.into_iter().enumerate() {
            let root = find(&mut parent, i);
            match merged.get_mut(&root) {
                None => {
                    merged.insert(root, batch);
                }
                Some(target) => {
                    for c in batch.contracts {
                        if !target.contracts.contains(&c) {
                            target.contracts.push(c);
                        }
                    }
                    for t in batch.tags {
                        if !target.tags.contains(&t) {
                            target.tags.push(t);
                        }
                    }
                    for p in batch.pruned_contracts {
                        if !target.pruned_contracts.contains(&p) {
                            target.pruned_contracts.push(p);
                        }
                    }
                }
            }
        }
        let mut out: Vec<Batch> = merged.into_values().collect();
        for (id, batch) in out.iter_mut().enumerate() {
            batch.id = id;
            self.apply_scores(batch)?;
            batch.estimated_tokens = self.estimate_batch_tokens(batch);
        }
        Ok(out)
    }

    /// Removes template-like contracts (model-picked from a deterministic
    /// candidate list) until the batch fits the token limit; a final single
    /// contract has its least-important function bodies elided instead.
    pub fn prune_to_token_limit(
        &self,
        mut batch: Batch,
        limit: usize,
        gateway: &Gateway,
    ) -> Result<Batch, ProfileError> {
        assert!(limit > 0, "token limit must be positive");
        batch.estimated_tokens = self.estimate_batch_tokens(&batch);
        while batch.estimated_tokens > limit && batch.contracts.len() > 1 {
            let candidates = self.prune_candidates(&batch);
            let reply = gateway
                .complete(
                    "profile.prune",
                    "A contract batch exceeds the context budget. From the candidates, \
                     pick the single most template-like (least customized) contract to \
                     drop. Reply with exactly one contract name.",
                    &format!(
                        "candidates: {:?}\nscores: {:?}\nestimated_tokens: {} (limit {})",
                        candidates, batch.scores, batch.estimated_tokens, limit
                    ),
                )
                .map_err(|source| ProfileError::Model {
                    batch: batch.id,
                    source,
                })?;
            let picked = candidates
                .iter()
                .find(|c| reply.contains(c.as_str()))
                .cloned()
                // Invalid replies fall back to the deterministic choice so
                // the loop always makes progress.
                .unwrap_or_else(|| candidates[0].clone());
            batch.contracts.retain(|c| c != &picked);
            batch.scores.remove(&picked);
            batch.pruned_contracts.push(picked);
            let next = self.estimate_batch_tokens(&batch);
            debug_assert!(next < batch.estimated_tokens);
            batch.estimated_tokens = next;
        }
        if batch.estimated_tokens > limit {
            self.truncate_single_contract(&mut batch, limit)?;
        }
        Ok(batch)
    }

    /// Candidate removal order: template contracts first (lowest score
    /// first), then the lowest-scored customized contracts. The top-scored
    /// contract is only offered when nothing else remains.
    fn prune_candidates(&self, batch: &Batch) -> Vec<String> {
        let score = |c: &String| batch.scores.get(c).copied().unwrap_or(0.0);
        let mut templates: Vec<String> = batch
            .contracts
            .iter()
            .filter(|c| {
                self.facts
                    .contract(c)
                    .map(|f| f.is_template)
                    .unwrap_or(false)
            })
            .cloned()
            .collect();
        if !templates.is_empty() {
            templates.sort_by(|a, b| {
                score(a)
                    .partial_cmp(&score(b))
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then_with(|| a.cmp(b))
            });
            return templates;
        }
        let mut rest: Vec<String> = batch.contracts.clone();
        rest.sort_by(|a, b| {
            score(a)
                .partial_cmp(&score(b))
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.cmp(b))
        });
        if rest.len() > 1 {
            rest.pop(); // never offer the anchor unless it is alone
        }
        rest
    }

    fn truncate_single_contract(
        &self,
        batch: &mut Batch,
        limit: usize,
    ) -> Result<(), ProfileError> {
        let keep = self.batch_functions(batch);
        let mut importance: BTreeMap<FunctionKey, f64> = BTreeMap::new();
        if !keep.is_empty() {
            let sub = self.graph.induced_subgraph(&keep);
            if !sub.is_empty() {
                let table = centrality_scores(&sub)?;
                for key in sub.nodes() {
                    importance.insert(
                        key.clone(),
                        self.cfg.alpha * table.betweenness[key]
                            + self.cfg.beta * table.pagerank[key],
                    );
                }
            }
        }
        let mut order: Vec<FunctionKey> = keep.into_iter().collect();
        order.sort_by(|a, b| {
            let ia = importance.get(a).copied().unwrap_or(0.0);
            let ib = importance.get(b).copied().unwrap_or(0.0);
            ia.partial_cmp(&ib)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.cmp(b))
        });
        for key in order {
            if batch.estimated_tokens <= limit {
                return Ok(());
            }
            batch.truncated_functions.push(key);
            batch.estimated_tokens = self.estimate_batch_tokens(batch);
        }
        if batch.estimated_tokens > limit {
            return Err(ProfileError::UnprunableBatch { batch: batch.id });
        }
        Ok(())
    }

    /// Full profiling pass: communities -> batches -> scores, then optional
    /// model-driven refinement and pruning. Contracts with no functions in
    /// the graph are appended as a final coverage batch so the plan always
    /// covers the whole project.
    pub fn plan(
        &self,
        seed: u64,
        gateway: Option<&Gateway>,
    ) -> Result<BatchPlan, ProfileError> {
        let communities = detect_communities(self.graph, seed)?;
        let mut batches = self.communities_to_batches(&communities)?;
        for batch in batches.iter_mut() {
            self.apply_scores(batch)?;
            batch.estimated_tokens = self.estimate_batch_tokens(batch);
        }
        if let Some(gateway) = gateway {
            batches = self.refine_batches(batches, gateway)?;
            let mut pruned = Vec::new();
            for batch in batches {
                pruned.push(self.prune_to_token_limit(batch, self.cfg.token_limit, gateway)?);
            }
            batches = pruned;
        }
        // Coverage: contracts without functions never appear via Eq-style
        // community mapping; collect them into one trailing batch.
        let covered: BTreeSet<&str> = batches
            .iter()
            .flat_map(|b| b.contracts.iter().chain(b.pruned_contracts.iter()))
            .map(|s| s.as_str())
            .collect();
        let uncovered: Vec<String> = self
            .facts
            .contract_names()
            .into_iter()
            .filter(|c| !covered.contains(c.as_str()))
            .collect();
        if !uncovered.is_empty() {
            let id = batches.len();
            let mut batch = Batch {
                id,
                scores: uncovered.iter().map(|c| (c.clone(), 0.0)).collect(),
                contracts: uncovered,
                tags: Vec::new(),
                estimated_tokens: 0,
                pruned_contracts: Vec::new(),
                truncated_functions: Vec::new(),
            };
            batch.estimated_tokens = self.estimate_batch_tokens(&batch);
            batches.push(batch);
        }
        Ok(BatchPlan { batches })
    }
}

/// The code rendering shown to the model for a batch: anchor contracts
/// first, functions in source order, truncated bodies elided.
pub fn render_batch_code(facts: &FactSet, batch: &Batch) -> String {
    let truncated: BTreeSet<&FunctionKey> = batch.truncated_functions.iter().collect();
    let mut out = String::new();
    for contract in &batch.contracts {
        let fact = match facts.contract(contract) {
            Some(f) => f,
            None => continue,
        };
        out.push_str(&format!(
            "// ===== {} ({:?}, {}) =====\n",
            fact.name, fact.kind, fact.source_path
        ));
        let mut functions: Vec<_> = facts.functions_of(contract).collect();
        functions.sort_by_key(|f| (f.source_span, f.signature.clone()));
        for f in functions {
            let key = f.key();
            out.push_str(&format!(
                "function {} [{} {}]\n",
                f.signature,
                format!("{:?}", f.visibility).to_lowercase(),
                f.modifiers.join(" ")
            ));
            if truncated.contains(&key) {
                out.push_str("{ /* body elided */ }\n");
            } else {
                out.push_str("{\n");
                out.push_str(&f.body_text);
                out.push_str("\n}\n");
            }
        }
        out.push('\n');
    }
    out
}

fn clip(text: &str, max_chars: usize) -> String {
    if text.chars().count() <= max_chars {
        text.to_string()
    } else {
        let clipped: String = text.chars().take(max_chars).collect();
        format!("{clipped}\n[...clipped]")
    }
}

/// Parses a JSON string array; falls back to comma/newline splitting so
/// slightly informal replies still work.
pub fn parse_string_list(reply: &str) -> Vec<String> {
    let trimmed = extract_json_payload(reply);
    if let Ok(values) = serde_json::from_str::<Vec<String>>(&trimmed) {
        return values;
    }
    reply
        .split(|c| c == ',' || c == '\n')
        .map(|s| s.trim().trim_matches(|c| c == '"' || c == '[' || c == ']'))
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

/// Strips markdown fences and surrounding prose from a JSON-looking reply.
pub fn extract_json_payload(reply: &str) -> String {
    let text = reply.trim();
    if let Some(start) = text.find("```") {
        let after = &text[start + 3..];
        let after = after.strip_prefix("json").unwrap_or(after);
        if let Some(end) = after.find("```") {
            return after[..end].trim().to_string();
        }
    }
    for (open, close) in [('{', '}'), ('[', ']')] {
        if let (Some(s), Some(e)) = (text.find(open), text.rfind(close)) {
            if s < e {
                return text[s..=e].to_string();
            }
        }
    }
    text.to_string()
}
