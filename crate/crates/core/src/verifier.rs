//! The verification cascade: per-hypothesis contextual feasibility
//! re-checks, collective semantic deduplication (DBSCAN over embedding
//! cosine distance), and a per-hypothesis threat-model filter. Model
//! failures in the per-element stages fail open: an outage must not
//! suppress potentially true findings.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auditor::VulnerabilityHypothesis;
use crate::facts::FactSet;
use crate::gateway::{Gateway, GatewayError};
use crate::graph::DependencyGraph;
use crate::profiler::extract_json_payload;
use crate::Warning;

pub const DEFAULT_EPSILON: f64 = 0.15;
pub const DEFAULT_MIN_SAMPLES: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStage {
    Aggregation,
    Dedup,
    ThreatModel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Kept,
    Dropped,
    MergedInto(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub hypothesis_id: String,
    pub stage: VerdictStage,
    pub verdict: Verdict,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HypothesisCluster {
    pub member_ids: Vec<String>,
    pub representative_id: String,
}

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("gateway failure: {0}")]
    Gateway(#[from] GatewayError),
}

fn is_fatal(e: &GatewayError) -> bool {
    matches!(e, GatewayError::Unreachable(_) | GatewayError::Config(_))
}

#[derive(Debug, Clone)]
pub struct VerifierConfig {
    pub epsilon: f64,
    pub min_samples: usize,
    pub context_depth: usize,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        VerifierConfig {
            epsilon: DEFAULT_EPSILON,
            min_samples: DEFAULT_MIN_SAMPLES,
            context_depth: crate::auditor::DEFAULT_CONTEXT_DEPTH,
        }
    }
}

pub struct Verifier<'a> {
    pub facts: &'a FactSet,
    pub graph: &'a DependencyGraph,
    pub gateway: &'a Gateway,
    pub cfg: VerifierConfig,
}

#[derive(Debug, Default)]
pub struct VerifyOutput {
    pub kept: Vec<VulnerabilityHypothesis>,
    pub records: Vec<VerdictRecord>,
    pub warnings: Vec<Warning>,
}

impl<'a> Verifier<'a> {
    /// Stage 1: re-evaluate feasibility under the full caller context
    /// (callers' modifiers included). Returns keep/drop plus rationale;
    /// failures keep the hypothesis.
    pub fn aggregate_context(
        &self,
        hypothesis: &VulnerabilityHypothesis,
        warnings: &mut Vec<Warning>,
    ) -> Result<(bool, String), VerifyError> {
        let entry = &hypothesis.entry_point.0;
        let mut context = String::new();
        match self.graph.extract_caller_callee(entry, self.cfg.context_depth) {
            Ok(neighborhood) => {
                for key in &neighborhood {
                    if let Some(f) = self.facts.function(key) {
                        context.push_str(&format!(
                            "{} [modifiers: {}]\n{}\n\n",
                            key,
                            if f.modifiers.is_empty() {
                                "none".to_string()
                            } else {
                                f.modifiers.join(", ")
                            },
                            f.body_text
                        ));
                    }
                }
            }
            Err(e) => {
                warnings.push(Warning {
                    stage: "verify.aggregate".into(),
                    message: format!("{entry}: {e}; keeping hypothesis"),
                });
                return Ok((true, "entry context unavailable; fail-open".into()));
            }
        }
        let reply = match self.gateway.complete(
            "verify.aggregate",
            "Re-evaluate this finding with the full caller chain visible, including \
             every caller's modifiers. Decide whether the reasoning path from the \
             entry point stays feasible under its preconditions, or whether a global \
             safeguard (a reentrancy lock on the only caller, an access-control \
             modifier, a pause switch) neutralizes it. Reply with JSON \
             {\"feasible\": bool, \"rationale\": \"...\"}.",
            &format!(
                "finding: {}\npreconditions: {:?}\nreasoning path: {:?}\n\ncaller context:\n{context}",
                hypothesis.summary_line(),
                hypothesis.constraints,
                hypothesis.reasoning_path
            ),
        ) {
            Ok(r) => r,
            Err(e) if is_fatal(&e) => return Err(e.into()),
            Err(e) => {
                warnings.push(Warning {
                    stage: "verify.aggregate".into(),
                    message: format!("{}: {e}; fail-open keep", hypothesis.id),
                });
                return Ok((true, "verification model unavailable; fail-open".into()));
            }
        };
        match serde_json::from_str::<serde_json::Value>(&extract_json_payload(&reply)) {
            Ok(value) => {
                let feasible = value["feasible"].as_bool().unwrap_or(true);
                let rationale = value["rationale"]
                    .as_str()
                    .unwrap_or("no rationale given")
                    .to_string();
                Ok((feasible, rationale))
            }
            Err(_) => {
                warnings.push(Warning {
                    stage: "verify.aggregate".into(),
                    message: format!("{}: unparseable verdict; fail-open keep", hypothesis.id),
                });
                Ok((true, "unparseable verdict; fail-open".into()))
            }
        }
    }

    /// Stage 3: drop findings whose every exploitation path presumes an
    /// externally compromised entity; attacker-controllable surfaces must
    /// be kept. Failures keep the hypothesis.
    pub fn threat_filter(
        &self,
        hypothesis: &VulnerabilityHypothesis,
        warnings: &mut Vec<Warning>,
    ) -> Result<(bool, String), VerifyError> {
        let reply = match self.gateway.complete(
            "verify.threat",
            "Classify the attacker assumptions behind this finding. Drop it only if \
             every exploitation path presumes an externally compromised entity \
             (leaked admin keys, a malicious trusted oracle, a dishonest deployer). \
             Flash loans, public entry points, and miner-controlled block variables \
             are attacker capabilities, not external compromise, and must be kept. \
             Reply with JSON {\"external_compromise_only\": bool, \"rationale\": \"...\"}.",
            &format!(
                "finding: {}\npreconditions: {:?}\nreasoning path: {:?}",
                hypothesis.summary_line(),
                hypothesis.constraints,
                hypothesis.reasoning_path
            ),
        ) {
            Ok(r) => r,
            Err(e) if is_fatal(&e) => return Err(e.into()),
            Err(e) => {
                warnings.push(Warning {
                    stage: "verify.threat".into(),
                    message: format!("{}: {e}; fail-open keep", hypothesis.id),
                });
                return Ok((true, "verification model unavailable; fail-open".into()));
            }
        };
        match serde_json::from_str::<serde_json::Value>(&extract_json_payload(&reply)) {
            Ok(value) => {
                let external_only = value["external_compromise_only"].as_bool().unwrap_or(false);
                let rationale = value["rationale"]
                    .as_str()
                    .unwrap_or("no rationale given")
                    .to_string();
                Ok((!external_only, rationale))
            }
            Err(_) => {
                warnings.push(Warning {
                    stage: "verify.threat".into(),
                    message: format!("{}: unparseable verdict; fail-open keep", hypothesis.id),
                });
                Ok((true, "unparseable verdict; fail-open".into()))
            }
        }
    }

    /// Confidence score in [0,1] from a dedicated prompt; unparseable
    /// replies score 0.5.
    fn confidence_of(
        &self,
        hypothesis: &VulnerabilityHypothesis,
        warnings: &mut Vec<Warning>,
    ) -> Result<f64, VerifyError> {
        let reply = match self.gateway.complete(
            "verify.confidence",
            "Score your confidence that this finding is a real, exploitable \
             vulnerability. Reply with a single number between 0 and 1.",
            &format!(
                "finding: {}\nreasoning path: {:?}",
                hypothesis.summary_line(),
                hypothesis.reasoning_path
            ),
        ) {
            Ok(r) => r,
            Err(e) if is_fatal(&e) => return Err(e.into()),
            Err(e) => {
                warnings.push(Warning {
                    stage: "verify.confidence".into(),
                    message: format!("{}: {e}; defaulting to 0.5", hypothesis.id),
                });
                return Ok(0.5);
            }
        };
        Ok(parse_confidence(&reply).unwrap_or(0.5))
    }

    /// Stage 2: cluster surviving hypotheses by embedding distance, keep the
    /// highest-confidence member per cluster, and attach the losers'
    /// reasoning paths to the winner as alternative trigger paths.
    pub fn dedup(
        &self,
        hypotheses: Vec<VulnerabilityHypothesis>,
    ) -> Result<
        (
            Vec<VulnerabilityHypothesis>,
            Vec<VerdictRecord>,
            Vec<Warning>,
        ),
        VerifyError,
    > {
        let mut warnings = Vec::new();
        if hypotheses.is_empty() {
            return Ok((hypotheses, Vec::new(), warnings));
        }
        let texts: Vec<String> = hypotheses.iter().map(|h| h.rendered_text()).collect();
        let vectors = match self.gateway.embed(&texts) {
            Ok(v) => v,
            Err(e) if is_fatal(&e) => return Err(e.into()),
            Err(e) => {
                warnings.push(Warning {
                    stage: "verify.dedup".into(),
                    message: format!("embedding failed: {e}; dedup skipped"),
                });
                return Ok((hypotheses, Vec::new(), warnings));
            }
        };
        let refs: Vec<&[f64]> = vectors.iter().map(|v| v.as_slice()).collect();
        let labels = dbscan_cosine(&refs, self.cfg.epsilon, self.cfg.min_samples);

        let mut clusters: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
        for (idx, &label) in labels.iter().enumerate() {
            // min_samples = 1 leaves no noise; under other configurations
            // each noise point stays its own singleton cluster.
            let key = if label < 0 { -(idx as i64) - 1 } else { label };
            clusters.entry(key).or_default().push(idx);
        }

        let mut survivors = Vec::new();
        let mut records = Vec::new();
        let mut scored: BTreeMap<usize, f64> = BTreeMap::new();
        for members in clusters.values() {
            if members.len() > 1 {
                for &idx in members {
                    let score = self.confidence_of(&hypotheses[idx], &mut warnings)?;
                    scored.insert(idx, score);
                }
            }
        }
        for members in clusters.values() {
            if members.len() == 1 {
                survivors.push(hypotheses[members[0]].clone());
                continue;
            }
            let winner_idx = *members
                .iter()
                .max_by(|&&a, &&b| {
                    let sa = scored.get(&a).copied().unwrap_or(0.5);
                    let sb = scored.get(&b).copied().unwrap_or(0.5);
                    sa.partial_cmp(&sb)
                        .unwrap_or(std::cmp::Ordering::Equal)
                        // Ties prefer the lexicographically smaller id, so
                        // invert the id comparison for max_by.
                        .then_with(|| hypotheses[b].id.cmp(&hypotheses[a].id))
                })
                .expect("cluster not empty");
            let mut winner = hypotheses[winner_idx].clone();
            winner.confidence = scored.get(&winner_idx).copied().unwrap_or(0.5);
            let mut losers: Vec<usize> = members
                .iter()
                .copied()
                .filter(|&i| i != winner_idx)
                .collect();
            losers.sort_by(|&a, &b| hypotheses[a].id.cmp(&hypotheses[b].id));
            for loser in losers {
                winner
                    .alternative_paths
                    .push(hypotheses[loser].reasoning_path.clone());
                records.push(VerdictRecord {
                    hypothesis_id: hypotheses[loser].id.clone(),
                    stage: VerdictStage::Dedup,
                    verdict: Verdict::MergedInto(winner.id.clone()),
                    rationale: format!(
                        "same root cause cluster; representative {} has confidence {:.2}",
                        winner.id, winner.confidence
                    ),
                });
            }
            survivors.push(winner);
        }
        survivors.sort_by(|a, b| a.id.cmp(&b.id));
        Ok((survivors, records, warnings))
    }

    /// The full cascade in fixed order: aggregation -> dedup -> threat
    /// model. Every input id receives exactly one terminal verdict.
    pub fn verify(
        &self,
        v_raw: Vec<VulnerabilityHypothesis>,
    ) -> Result<VerifyOutput, VerifyError> {
        let mut output = VerifyOutput::default();
        let mut after_aggregation = Vec::new();
        for hypothesis in v_raw {
            let (keep, rationale) =
                self.aggregate_context(&hypothesis, &mut output.warnings)?;
            if keep {
                after_aggregation.push(hypothesis);
            } else {
                output.records.push(VerdictRecord {
                    hypothesis_id: hypothesis.id.clone(),
                    stage: VerdictStage::Aggregation,
                    verdict: Verdict::Dropped,
                    rationale,
                });
            }
        }
        let (after_dedup, dedup_records, warnings) = self.dedup(after_aggregation)?;
        output.records.extend(dedup_records);
        output.warnings.extend(warnings);
        for hypothesis in after_dedup {
            let (keep, rationale) = self.threat_filter(&hypothesis, &mut output.warnings)?;
            if keep {
                output.records.push(VerdictRecord {
                    hypothesis_id: hypothesis.id.clone(),
                    stage: VerdictStage::ThreatModel,
                    verdict: Verdict::Kept,
                    rationale,
                });
                output.kept.push(hypothesis);
            } else {
                output.records.push(VerdictRecord {
                    hypothesis_id: hypothesis.id.clone(),
                    stage: VerdictStage::ThreatModel,
                    verdict: Verdict::Dropped,
                    rationale,
                });
            }
        }
        Ok(output)
    }
}

fn parse_confidence(reply: &str) -> Option<f64> {
    // Accept bare numbers and {"confidence": x}.
    if let Ok(value) = serde_json::from_str::<serde_json::Value>(&extract_json_payload(reply)) {
        if let Some(x) = value.as_f64() {
            return normalize_confidence(x);
        }
        if let Some(x) = value["confidence"].as_f64() {
            return normalize_confidence(x);
        }
    }
    let candidate: String = reply
        .chars()
        .skip_while(|c| !c.is_ascii_digit() && *c != '.')
        .take_while(|c| c.is_ascii_digit() || *c == '.')
        .collect();
    candidate.parse::<f64>().ok().and_then(normalize_confidence)
}

fn normalize_confidence(x: f64) -> Option<f64> {
    if (0.0..=1.0).contains(&x) {
        Some(x)
    } else {
        None
    }
}

// ---------------------------------------------------------------------------
// DBSCAN over cosine distance
// ---------------------------------------------------------------------------

pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let denom = na.sqrt() * nb.sqrt();
    if denom == 0.0 {
        return 1.0;
    }
    1.0 - dot / denom
}

/// Standard DBSCAN; `min_samples` counts the point itself. Returns labels
/// (0-based cluster ids, -1 for noise).
pub fn dbscan_cosine(points: &[&[f64]], epsilon: f64, min_samples: usize) -> Vec<i64> {
    const UNVISITED: i64 = -2;
    const NOISE: i64 = -1;
    let n = points.len();
    let mut labels = vec![UNVISITED; n];
    let neighbors_of = |i: usize| -> Vec<usize> {
        (0..n)
            .filter(|&j| cosine_distance(points[i], points[j]) <= epsilon)
            .collect()
    };
    let mut cluster: i64 = 0;
    for i in 0..n {
        if labels[i] != UNVISITED {
            continue;
        }
        let neighbors = neighbors_of(i);
        if neighbors.len() < min_samples {
            labels[i] = NOISE;
            continue;
        }
        labels[i] = cluster;
        let mut frontier: Vec<usize> = neighbors.into_iter().filter(|&j| j != i).collect();
        let mut cursor = 0;
        while cursor < frontier.len() {
            let q = frontier[cursor];
            cursor += 1;
            if labels[q] == NOISE {
                labels[q] = cluster;
            }
            if labels[q] != UNVISITED {
                continue;
            }
            labels[q] = cluster;
            let q_neighbors = neighbors_of(q);
            if q_neighbors.len() >= min_samples {
                for j in q_neighbors {
                    if labels[j] == UNVISITED || labels[j] == NOISE {
                        frontier.push(j);
                    }
                }
            }
        }
        cluster += 1;
    }
    labels
}
