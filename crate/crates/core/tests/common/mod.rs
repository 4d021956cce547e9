//! Independent brute-force oracles for the acceptance suite. Everything in
//! here recomputes results from first principles and must stay decoupled
//! from the library's implementation paths.

#![allow(dead_code)]

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Directed weighted graph as plain adjacency for oracle computations.
#[derive(Debug, Clone)]
pub struct RawGraph {
    pub n: usize,
    /// (from, to, weight)
    pub edges: Vec<(usize, usize, f64)>,
}

impl RawGraph {
    pub fn random(seed: u64, n: usize, edge_permille: u64, weights: &[f64]) -> RawGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for a in 0..n {
            for b in 0..n {
                if a == b {
                    continue;
                }
                if rng.next_u64() % 1000 < edge_permille {
                    let w = weights[(rng.next_u64() % weights.len() as u64) as usize];
                    edges.push((a, b, w));
                }
            }
        }
        RawGraph { n, edges }
    }

    /// Symmetric adjacency matrix with directed weights summed.
    pub fn symmetric_matrix(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.n]; self.n];
        for &(a, b, w) in &self.edges {
            m[a][b] += w;
            if a != b {
                m[b][a] += w;
            }
        }
        m
    }
}

const EPS: f64 = 1e-9;

/// All-pairs shortest-path betweenness by explicit path counting over
/// distance = 1/weight, endpoints excluded, unnormalized.
pub fn betweenness_oracle(graph: &RawGraph) -> Vec<f64> {
    let n = graph.n;
    let mut dist = vec![vec![f64::INFINITY; n]; n];
    for v in 0..n {
        dist[v][v] = 0.0;
    }
    for &(a, b, w) in &graph.edges {
        if a != b {
            let d = 1.0 / w;
            if d < dist[a][b] {
                dist[a][b] = d;
            }
        }
    }
    // Floyd-Warshall.
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = dist[i][k] + dist[k][j];
                if via + EPS < dist[i][j] {
                    dist[i][j] = via;
                }
            }
        }
    }
    // Shortest-path counts sigma[s][t] by DFS over the shortest-path DAG.
    let mut sigma = vec![vec![0.0f64; n]; n];
    for s in 0..n {
        // Order targets by distance from s so predecessors are final.
        let mut order: Vec<usize> = (0..n).filter(|&t| dist[s][t].is_finite()).collect();
        order.sort_by(|&a, &b| dist[s][a].partial_cmp(&dist[s][b]).unwrap());
        sigma[s][s] = 1.0;
        for &t in &order {
            if t == s {
                continue;
            }
            let mut count = 0.0;
            for &(u, v, w) in &graph.edges {
                if v == t && u != t && (dist[s][u] + 1.0 / w - dist[s][t]).abs() <= EPS {
                    count += sigma[s][u];
                }
            }
            sigma[s][t] = count;
        }
    }
    let mut betweenness = vec![0.0f64; n];
    for s in 0..n {
        for t in 0..n {
            if s == t || !dist[s][t].is_finite() || sigma[s][t] == 0.0 {
                continue;
            }
            for v in 0..n {
                if v == s || v == t {
                    continue;
                }
                if (dist[s][v] + dist[v][t] - dist[s][t]).abs() <= EPS {
                    betweenness[v] += sigma[s][v] * sigma[v][t] / sigma[s][t];
                }
            }
        }
    }
    betweenness
}

/// Dense power-iteration PageRank with uniform teleport and uniform
/// dangling redistribution.
pub fn pagerank_oracle(graph: &RawGraph, damping: f64) -> Vec<f64> {
    let n = graph.n;
    let mut out_weight = vec![0.0f64; n];
    for &(a, _, w) in &graph.edges {
        out_weight[a] += w;
    }
    // Column-stochastic Google matrix, built explicitly.
    let mut m = vec![vec![0.0f64; n]; n];
    for &(a, b, w) in &graph.edges {
        m[b][a] += w / out_weight[a];
    }
    for a in 0..n {
        if out_weight[a] == 0.0 {
            for row in m.iter_mut() {
                row[a] = 1.0 / n as f64;
            }
        }
    }
    let mut rank = vec![1.0 / n as f64; n];
    for _ in 0..200_000 {
        let mut next = vec![(1.0 - damping) / n as f64; n];
        for (i, row) in m.iter().enumerate() {
            let mut acc = 0.0;
            for (j, &mij) in row.iter().enumerate() {
                acc += mij * rank[j];
            }
            next[i] += damping * acc;
        }
        let delta: f64 = next
            .iter()
            .zip(rank.iter())
            .map(|(a, b)| (a - b).abs())
            .sum();
        rank = next;
        if delta < 1e-14 {
            break;
        }
    }
    rank
}

/// Weighted modularity of a partition over a symmetric matrix.
pub fn modularity_oracle(matrix: &[Vec<f64>], assignment: &[usize]) -> f64 {
    let n = matrix.len();
    let mut degree = vec![0.0f64; n];
    let mut two_m = 0.0;
    for i in 0..n {
        for j in 0..n {
            // Self loops count twice in the degree.
            degree[i] += if i == j { 2.0 * matrix[i][j] } else { matrix[i][j] };
        }
    }
    for d in &degree {
        two_m += d;
    }
    if two_m == 0.0 {
        return 0.0;
    }
    let mut q = 0.0;
    for i in 0..n {
        for j in 0..n {
            if assignment[i] != assignment[j] {
                continue;
            }
            let a_ij = if i == j { 2.0 * matrix[i][j] } else { matrix[i][j] };
            q += a_ij / two_m - (degree[i] * degree[j]) / (two_m * two_m);
        }
    }
    q
}

/// Enumerates every set partition of {0..n-1} via restricted growth
/// strings and returns the maximum modularity found.
pub fn max_modularity_brute_force(matrix: &[Vec<f64>]) -> f64 {
    let n = matrix.len();
    let mut assignment = vec![0usize; n];
    let mut best = f64::NEG_INFINITY;
    fn recurse(
        idx: usize,
        max_used: usize,
        assignment: &mut Vec<usize>,
        matrix: &[Vec<f64>],
        best: &mut f64,
    ) {
        let n = assignment.len();
        if idx == n {
            let q = modularity_oracle(matrix, assignment);
            if q > *best {
                *best = q;
            }
            return;
        }
        for label in 0..=max_used + 1 {
            assignment[idx] = label;
            recurse(idx + 1, max_used.max(label), assignment, matrix, best);
        }
    }
    if n == 0 {
        return 0.0;
    }
    assignment[0] = 0;
    recurse(1, 0, &mut assignment, matrix, &mut best);
    if n == 1 {
        best = modularity_oracle(matrix, &assignment);
    }
    best
}

/// Classic quadratic DBSCAN (textbook formulation) over cosine distance;
/// min_samples counts the point itself. Returns labels with -1 as noise.
pub fn dbscan_oracle(points: &[Vec<f64>], epsilon: f64, min_samples: usize) -> Vec<i64> {
    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            return 1.0;
        }
        1.0 - dot / (na * nb)
    }
    let n = points.len();
    let region = |i: usize| -> Vec<usize> {
        (0..n)
            .filter(|&j| cosine(&points[i], &points[j]) <= epsilon)
            .collect()
    };
    let mut labels: Vec<Option<i64>> = vec![None; n];
    let mut cluster = 0i64;
    for p in 0..n {
        if labels[p].is_some() {
            continue;
        }
        let neighbors = region(p);
        if neighbors.len() < min_samples {
            labels[p] = Some(-1);
            continue;
        }
        labels[p] = Some(cluster);
        let mut seeds: Vec<usize> = neighbors;
        let mut i = 0;
        while i < seeds.len() {
            let q = seeds[i];
            i += 1;
            if labels[q] == Some(-1) {
                labels[q] = Some(cluster);
            }
            if labels[q].is_some() {
                continue;
            }
            labels[q] = Some(cluster);
            let q_neighbors = region(q);
            if q_neighbors.len() >= min_samples {
                for r in q_neighbors {
                    if !seeds.contains(&r) {
                        seeds.push(r);
                    }
                }
            }
        }
        cluster += 1;
    }
    labels.into_iter().map(|l| l.unwrap()).collect()
}

/// Normalizes labels into a canonical partition: sorted clusters of sorted
/// indices, noise indices listed separately.
pub fn canonical_partition(labels: &[i64]) -> (Vec<Vec<usize>>, Vec<usize>) {
    use std::collections::BTreeMap;
    let mut clusters: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    let mut noise = Vec::new();
    for (idx, &label) in labels.iter().enumerate() {
        if label < 0 {
            noise.push(idx);
        } else {
            clusters.entry(label).or_default().push(idx);
        }
    }
    let mut out: Vec<Vec<usize>> = clusters.into_values().collect();
    for cluster in out.iter_mut() {
        cluster.sort_unstable();
    }
    out.sort();
    (out, noise)
}

/// Iterated scaled floor-multiplication: value = floor(value * rate /
/// scale), `iterations` times.
pub fn iterated_muldown(input: u128, rate: u128, scale: u128, iterations: u32) -> u128 {
    let mut value = input;
    for _ in 0..iterations {
        value = value * rate / scale;
    }
    value
}

/// Single exact computation: floor(input * rate^iters / scale^iters).
pub fn exact_muldown(input: u128, rate: u128, scale: u128, iterations: u32) -> u128 {
    input * rate.pow(iterations) / scale.pow(iterations)
}

/// Prints the acceptance verdict line for a criterion.
pub fn pass(name: &str, started: std::time::Instant) {
    println!(
        "acceptance: {name} PASS ({:.2}s)",
        started.elapsed().as_secs_f64()
    );
}
