//! Smart-contract auditing pipeline.
//!
//! The pipeline has three stages. Profiling builds a weighted function
//! dependency graph (calls at 1.0, shared-state data flow at 0.8),
//! partitions it with Louvain community detection, scores contracts by
//! betweenness and PageRank centrality, and packs logically cohesive
//! contract batches under a token budget. Auditing runs a plan/remind/solve
//! loop per batch against a pluggable model gateway: an ordered task queue,
//! knowledge-base retrieval with optional live-search augmentation, a base
//! audit plus adversarial-profile re-audits, solver-backed arithmetic
//! deviation checks, and chain synthesis across findings. Verification
//! filters the raw hypotheses through contextual feasibility, embedding
//! dedup (DBSCAN, cosine), and threat-model plausibility, producing a
//! report in which every raw hypothesis is accounted for.

pub mod auditor;
pub mod clock;
pub mod config;
pub mod facts;
pub mod gateway;
pub mod graph;
pub mod knowledge;
pub mod pipeline;
pub mod profiler;
pub mod report;
pub mod smt;
pub mod verifier;

use serde::{Deserialize, Serialize};

/// A non-fatal, user-visible problem recorded during a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Warning {
    pub stage: String,
    pub message: String,
}
