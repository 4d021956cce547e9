//! The per-batch audit loop: plan an ordered task queue, remind each task
//! with knowledge and live notes, then solve: a base audit, adversarial
//! re-audits under hostile state assumptions, solver-backed arithmetic
//! checks, and a final chain-synthesis pass that merges hypotheses whose
//! post-conditions feed each other.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::facts::{strip_comments_and_strings, FactSet, FunctionFact, FunctionKey};
use crate::gateway::{Gateway, GatewayError};
use crate::graph::{DependencyGraph, GraphError};
use crate::knowledge::{
    lineage_augment, relate, KnowledgeContext, KnowledgeEntry, KnowledgeIndex, SearchClient,
};
use crate::profiler::{extract_json_payload, parse_string_list, render_batch_code, Batch};
use crate::smt::{transpile_and_solve, SmtOutcome, SmtProblem, SolverRunner};
use crate::Warning;

pub const DEFAULT_CONTEXT_DEPTH: usize = 2;
pub const DEFAULT_MAX_PAIRS: usize = 200;

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum Severity {
    Critical,
    High,
    Medium,
    Low,
}

impl Severity {
    /// Queue rank: lower is more severe.
    pub fn rank(self) -> i32 {
        match self {
            Severity::Critical => 0,
            Severity::High => 1,
            Severity::Medium => 2,
            Severity::Low => 3,
        }
    }

    pub fn parse(text: &str) -> Option<Severity> {
        let lower = text.to_lowercase();
        for (name, severity) in [
            ("critical", Severity::Critical),
            ("high", Severity::High),
            ("medium", Severity::Medium),
            ("low", Severity::Low),
        ] {
            if lower.contains(name) {
                return Some(severity);
            }
        }
        None
    }

    /// The more severe of the two (Critical beats Low).
    pub fn max(self, other: Severity) -> Severity {
        if self.rank() <= other.rank() {
            self
        } else {
            other
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Origin {
    Base,
    Adversarial(String),
    Math,
    Chained,
}

impl std::fmt::Display for Origin {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Origin::Base => write!(f, "base"),
            Origin::Adversarial(name) => write!(f, "adversarial:{name}"),
            Origin::Math => write!(f, "math"),
            Origin::Chained => write!(f, "chained"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VulnerabilityHypothesis {
    pub id: String,
    pub entry_point: (FunctionKey, u32),
    pub constraints: Vec<String>,
    pub reasoning_path: Vec<String>,
    pub category: String,
    pub severity: Severity,
    pub origin: Origin,
    /// Reasoning paths of deduplicated siblings, attached by the verifier.
    pub alternative_paths: Vec<Vec<String>>,
    pub confidence: f64,
    /// Ids of the merged hypotheses for chained origin (always >= 2).
    pub parents: Vec<String>,
}

impl VulnerabilityHypothesis {
    pub fn compute_id(
        entry: &(FunctionKey, u32),
        category: &str,
        reasoning_path: &[String],
        origin: &Origin,
        parents: &[String],
    ) -> String {
        let mut hasher = Sha256::new();
        hasher.update(entry.0.as_str());
        hasher.update(entry.1.to_le_bytes());
        hasher.update(category);
        for step in reasoning_path {
            hasher.update(step);
            hasher.update([0u8]);
        }
        hasher.update(origin.to_string());
        for parent in parents {
            hasher.update(parent);
        }
        let digest = hasher.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// The canonical text the dedup stage embeds.
    pub fn rendered_text(&self) -> String {
        format!(
            "{}\n{}:{}\n{}",
            self.category,
            self.entry_point.0,
            self.entry_point.1,
            self.reasoning_path.join("\n")
        )
    }

    pub fn summary_line(&self) -> String {
        format!(
            "[{:?}] {} at {}:{} ({})",
            self.severity, self.category, self.entry_point.0, self.entry_point.1, self.origin
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditTask {
    pub functions: BTreeSet<FunctionKey>,
    pub knowledge: Vec<KnowledgeEntry>,
    pub contract: String,
    pub severity_rank: i32,
    pub contract_score: f64,
}

impl AuditTask {
    pub fn function_set_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for key in &self.functions {
            hasher.update(key.as_str());
            hasher.update([0u8]);
        }
        let digest = hasher.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdversarialProfile {
    pub name: String,
    pub context_text: String,
}

pub fn default_adversarial_profiles() -> Vec<AdversarialProfile> {
    vec![
        AdversarialProfile {
            name: "EnvironmentTampering".into(),
            context_text: "Assume the attacker controls block environment variables: \
                           block.timestamp and block.number can be chosen within miner \
                           limits to bypass time locks or bias pseudo-randomness."
                .into(),
        },
        AdversarialProfile {
            name: "InteractionHijacking".into(),
            context_text: "Assume every external call target is attacker-controlled: \
                           calldata can be crafted, return values forged (including \
                           false-on-success), and callbacks re-enter at will."
                .into(),
        },
        AdversarialProfile {
            name: "ResourceInfinity".into(),
            context_text: "Assume the attacker can momentarily command near-unlimited \
                           capital via flash loans, making balance- and price-dependent \
                           assumptions unreliable within a single transaction."
                .into(),
        },
    ]
}

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("gateway failure: {0}")]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Only configuration and unreachable-gateway errors abort a batch; other
/// stage errors degrade to warnings.
fn is_fatal(e: &GatewayError) -> bool {
    matches!(e, GatewayError::Unreachable(_) | GatewayError::Config(_))
}

#[derive(Debug, Clone)]
pub struct AuditorConfig {
    pub context_depth: usize,
    pub max_kb_entries: usize,
    pub profiles: Vec<AdversarialProfile>,
    pub primitives: Vec<String>,
    pub max_pairs: usize,
    pub solver_timeout_ms: u64,
    pub validate_counterexamples: bool,
    /// Extra realism assertions appended to every solver script.
    pub extra_realism: Vec<String>,
}

impl Default for AuditorConfig {
    fn default() -> Self {
        AuditorConfig {
            context_depth: DEFAULT_CONTEXT_DEPTH,
            max_kb_entries: crate::knowledge::DEFAULT_MAX_ENTRIES_PER_TASK,
            profiles: default_adversarial_profiles(),
            primitives: crate::knowledge::default_primitives(),
            max_pairs: DEFAULT_MAX_PAIRS,
            solver_timeout_ms: crate::smt::DEFAULT_SOLVER_TIMEOUT_MS,
            validate_counterexamples: true,
            extra_realism: Vec::new(),
        }
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct BatchAuditOutput {
    pub batch_id: usize,
    pub tasks_planned: usize,
    pub hypotheses: Vec<VulnerabilityHypothesis>,
    pub smt_problems: Vec<SmtProblem>,
    pub warnings: Vec<Warning>,
}

pub struct Auditor<'a> {
    pub facts: &'a FactSet,
    pub graph: &'a DependencyGraph,
    pub kb: &'a KnowledgeIndex,
    pub gateway: &'a Gateway,
    pub search: &'a dyn SearchClient,
    pub solver: &'a dyn SolverRunner,
    pub cfg: AuditorConfig,
}

const FINDINGS_SCHEMA: &str = r#"Reply with strict JSON only:
{"findings": [{"entry_function": "Contract.name(types)", "line": <number>,
"category": "<short category>", "severity": "Critical|High|Medium|Low",
"constraints": ["<precondition>", ...], "reasoning_path": ["<step>", ...]}]}
An empty findings array is a valid reply."#;

#[derive(Debug, Deserialize)]
struct FindingDto {
    entry_function: String,
    #[serde(default)]
    line: u32,
    category: String,
    #[serde(default)]
    severity: Option<String>,
    #[serde(default)]
    constraints: Vec<String>,
    #[serde(default)]
    reasoning_path: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct FindingsDto {
    findings: Vec<FindingDto>,
}

impl<'a> Auditor<'a> {
    /// Task queue for a batch: the model flags suspicious functions per
    /// contract, each flag becomes a task carrying its call neighborhood and
    /// related knowledge, and the queue is sorted by (contract score desc,
    /// severity rank asc, contract, function-set hash).
    pub fn plan(&self, batch: &Batch) -> Result<(Vec<AuditTask>, Vec<Warning>), AuditError> {
        let mut tasks = Vec::new();
        let mut warnings = Vec::new();
        let batch_code = render_batch_code(self.facts, batch);
        for contract in &batch.contracts {
            let mut functions: Vec<&FunctionFact> =
                self.facts.functions_of(contract).collect();
            functions.sort_by_key(|f| f.key());
            if functions.is_empty() {
                continue;
            }
            let listing: Vec<String> =
                functions.iter().map(|f| f.key().0.clone()).collect();
            let reply = match self.gateway.complete(
                "plan.scan",
                "Scan the contract for functions that could plausibly be attacked: \
                 asset transfers, critical state writes, low-level or external calls, \
                 non-trivial arithmetic. Ignore standard boilerplate unless it deviates \
                 from the norm. Reply with a JSON array of function keys.",
                &format!(
                    "contract: {contract}\nfunctions: {listing:?}\n\nbatch code:\n{batch_code}"
                ),
            ) {
                Ok(r) => r,
                Err(e) if is_fatal(&e) => return Err(e.into()),
                Err(e) => {
                    warnings.push(Warning {
                        stage: "plan.scan".into(),
                        message: format!("contract {contract}: {e}"),
                    });
                    continue;
                }
            };
            let flagged = parse_string_list(&reply);
            let mut picked: Vec<&FunctionFact> = Vec::new();
            for item in &flagged {
                let item = item.trim();
                for f in &functions {
                    let key = f.key();
                    if (key.as_str() == item || f.name == item || f.signature == item)
                        && !picked.iter().any(|p| p.key() == key)
                    {
                        picked.push(f);
                    }
                }
            }
            for function in picked {
                match self.build_task(batch, contract, function, &mut warnings)? {
                    Some(task) => tasks.push(task),
                    None => continue,
                }
            }
        }
        tasks.sort_by(|a, b| {
            b.contract_score
                .partial_cmp(&a.contract_score)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.severity_rank.cmp(&b.severity_rank))
                .then_with(|| a.contract.cmp(&b.contract))
                .then_with(|| a.function_set_hash().cmp(&b.function_set_hash()))
        });
        Ok((tasks, warnings))
    }

    fn build_task(
        &self,
        batch: &Batch,
        contract: &str,
        function: &FunctionFact,
        warnings: &mut Vec<Warning>,
    ) -> Result<Option<AuditTask>, AuditError> {
        let neighborhood = match self
            .graph
            .extract_caller_callee(&function.key(), self.cfg.context_depth)
        {
            Ok(set) => set,
            Err(e) => {
                warnings.push(Warning {
                    stage: "plan.context".into(),
                    message: format!("{}: {e}", function.key()),
                });
                return Ok(None);
            }
        };
        let knowledge = if self.kb.is_empty() {
            Vec::new()
        } else {
            let neighbors: Vec<&FunctionFact> = neighborhood
                .iter()
                .filter_map(|k| self.facts.function(k))
                .collect();
            match relate(&neighbors, self.kb, self.gateway, self.cfg.max_kb_entries) {
                Ok(entries) => entries,
                Err(e) if is_fatal(&e) => return Err(e.into()),
                Err(e) => {
                    warnings.push(Warning {
                        stage: "kb.relate".into(),
                        message: format!("{}: {e}; task skipped", function.key()),
                    });
                    return Ok(None);
                }
            }
        };
        let severity_rank = match self.gateway.complete(
            "plan.severity",
            "Rate the worst plausible consequence if this function is exploitable. \
             Reply with one word: Critical (direct loss or frozen funds), High \
             (yield theft, governance manipulation), Medium, or Low (griefing).",
            &format!(
                "contract: {contract}\nfunction: {}\n```solidity\n{}\n```",
                function.key(),
                function.body_text
            ),
        ) {
            Ok(reply) => match Severity::parse(&reply) {
                Some(severity) => severity.rank(),
                None => {
                    warnings.push(Warning {
                        stage: "plan.severity".into(),
                        message: format!(
                            "{}: unparseable severity reply, defaulting to Medium",
                            function.key()
                        ),
                    });
                    Severity::Medium.rank()
                }
            },
            Err(e) if is_fatal(&e) => return Err(e.into()),
            Err(e) => {
                warnings.push(Warning {
                    stage: "plan.severity".into(),
                    message: format!("{}: {e}; task skipped", function.key()),
                });
                return Ok(None);
            }
        };
        Ok(Some(AuditTask {
            functions: neighborhood,
            knowledge,
            contract: contract.to_string(),
            severity_rank,
            contract_score: batch.scores.get(contract).copied().unwrap_or(0.0),
        }))
    }

    /// Knowledge context for a task: its related entries plus live-search
    /// notes when the contract derives from a known primitive. Degradations
    /// become warnings, never failures.
    pub fn remind(&self, task: &AuditTask) -> (KnowledgeContext, Vec<Warning>) {
        let mut warnings = Vec::new();
        let contract_code: String = self
            .facts
            .functions_of(&task.contract)
            .map(|f| format!("{}\n{}\n", f.signature, f.body_text))
            .collect();
        let live_notes = match lineage_augment(
            &task.contract,
            &contract_code,
            &self.cfg.primitives,
            self.search,
            self.gateway,
        ) {
            Ok((notes, kb_warnings)) => {
                warnings.extend(kb_warnings.into_iter().map(|w| Warning {
                    stage: "remind.search".into(),
                    message: format!("{}: {}", w.path, w.message),
                }));
                notes
            }
            Err(e) => {
                warnings.push(Warning {
                    stage: "remind.lineage".into(),
                    message: format!("{}: {e}; continuing without augmentation", task.contract),
                });
                Vec::new()
            }
        };
        (
            KnowledgeContext::assemble(task.knowledge.clone(), live_notes),
            warnings,
        )
    }

    fn run_audit_call(
        &self,
        stage: &str,
        batch: &Batch,
        task: &AuditTask,
        context_render: &str,
        extra: &str,
        origin: Origin,
        warnings: &mut Vec<Warning>,
    ) -> Result<Vec<VulnerabilityHypothesis>, AuditError> {
        let entries: Vec<&str> = task.functions.iter().map(|k| k.as_str()).collect();
        let user = format!(
            "entry candidates: {entries:?}\n{extra}\nknowledge:\n{context_render}\nbatch code:\n{}",
            render_batch_code(self.facts, batch)
        );
        let system = format!(
            "Audit the batch for business-logic vulnerabilities reachable from the \
             entry candidates. Report each as an entry point, preconditions, and a \
             step-by-step reasoning path.\n{FINDINGS_SCHEMA}"
        );
        let reply = match self.gateway.complete(stage, &system, &user) {
            Ok(r) => r,
            Err(e) if is_fatal(&e) => return Err(e.into()),
            Err(e) => {
                warnings.push(Warning {
                    stage: stage.into(),
                    message: e.to_string(),
                });
                return Ok(Vec::new());
            }
        };
        let dtos = match self.parse_findings_with_repair(stage, &reply, warnings)? {
            Some(dtos) => dtos,
            None => return Ok(Vec::new()),
        };
        Ok(self.normalize_findings(dtos, batch, task, origin, warnings))
    }

    /// One repair re-prompt is attempted when the whole reply fails to
    /// parse; a second failure drops the reply with a warning.
    fn parse_findings_with_repair(
        &self,
        stage: &str,
        reply: &str,
        warnings: &mut Vec<Warning>,
    ) -> Result<Option<Vec<FindingDto>>, AuditError> {
        if let Ok(parsed) =
            serde_json::from_str::<FindingsDto>(&extract_json_payload(reply))
        {
            return Ok(Some(parsed.findings));
        }
        let repair = match self.gateway.complete(
            stage,
            &format!("The previous reply was not valid findings JSON.\n{FINDINGS_SCHEMA}"),
            &format!("previous reply:\n{reply}\n\nRe-emit as valid JSON only."),
        ) {
            Ok(r) => r,
            Err(e) if is_fatal(&e) => return Err(e.into()),
            Err(e) => {
                warnings.push(Warning {
                    stage: stage.into(),
                    message: format!("repair prompt failed: {e}"),
                });
                return Ok(None);
            }
        };
        match serde_json::from_str::<FindingsDto>(&extract_json_payload(&repair)) {
            Ok(parsed) => Ok(Some(parsed.findings)),
            Err(e) => {
                warnings.push(Warning {
                    stage: stage.into(),
                    message: format!("findings unparseable after repair: {e}"),
                });
                Ok(None)
            }
        }
    }

    fn normalize_findings(
        &self,
        dtos: Vec<FindingDto>,
        batch: &Batch,
        task: &AuditTask,
        origin: Origin,
        warnings: &mut Vec<Warning>,
    ) -> Vec<VulnerabilityHypothesis> {
        let mut out = Vec::new();
        for dto in dtos {
            let Some(entry_key) = self.resolve_entry(&dto.entry_function, batch, task) else {
                warnings.push(Warning {
                    stage: "findings.schema".into(),
                    message: format!(
                        "finding dropped: entry '{}' not found in batch",
                        dto.entry_function
                    ),
                });
                continue;
            };
            if dto.reasoning_path.is_empty() {
                warnings.push(Warning {
                    stage: "findings.schema".into(),
                    message: format!(
                        "finding at {} dropped: empty reasoning path",
                        dto.entry_function
                    ),
                });
                continue;
            }
            if dto.category.trim().is_empty() {
                warnings.push(Warning {
                    stage: "findings.schema".into(),
                    message: format!("finding at {} dropped: empty category", dto.entry_function),
                });
                continue;
            }
            let severity = dto
                .severity
                .as_deref()
                .and_then(Severity::parse)
                .unwrap_or(Severity::Medium);
            let entry = (entry_key, dto.line);
            let id = VulnerabilityHypothesis::compute_id(
                &entry,
                &dto.category,
                &dto.reasoning_path,
                &origin,
                &[],
            );
            out.push(VulnerabilityHypothesis {
                id,
                entry_point: entry,
                constraints: dto.constraints,
                reasoning_path: dto.reasoning_path,
                category: dto.category,
                severity,
                origin: origin.clone(),
                alternative_paths: Vec::new(),
                confidence: 0.5,
                parents: Vec::new(),
            });
        }
        out
    }

    /// Entry resolution, scoped to the audited surface (batch contracts
    /// plus the task's neighborhood): exact key first, then a unique name
    /// match. Entries outside the scope are rejected so hypotheses always
    /// anchor inside the batch.
    fn resolve_entry(
        &self,
        entry: &str,
        batch: &Batch,
        task: &AuditTask,
    ) -> Option<FunctionKey> {
        let mut in_scope: BTreeSet<FunctionKey> = task.functions.clone();
        for contract in &batch.contracts {
            for f in self.facts.functions_of(contract) {
                in_scope.insert(f.key());
            }
        }
        let exact = FunctionKey(entry.to_string());
        if in_scope.contains(&exact) {
            return Some(exact);
        }
        let matches: Vec<&FunctionKey> = in_scope
            .iter()
            .filter(|k| k.name() == entry || k.as_str().ends_with(entry))
            .collect();
        if matches.len() == 1 {
            return Some(matches[0].clone());
        }
        None
    }

    /// Base audit over the task's entry candidates (Plan-Remind-Solve's
    /// plain solve call).
    pub fn base_audit(
        &self,
        batch: &Batch,
        task: &AuditTask,
        context: &KnowledgeContext,
    ) -> Result<(Vec<VulnerabilityHypothesis>, Vec<Warning>), AuditError> {
        let mut warnings = Vec::new();
        let hyps = self.run_audit_call(
            "audit.base",
            batch,
            task,
            &context.render(),
            "",
            Origin::Base,
            &mut warnings,
        )?;
        Ok((hyps, warnings))
    }

    /// One audit per adversarial profile with the profile context injected;
    /// duplicates across profiles are kept for the verifier to fold.
    pub fn adversarial_audit(
        &self,
        batch: &Batch,
        task: &AuditTask,
        context: &KnowledgeContext,
    ) -> Result<(Vec<VulnerabilityHypothesis>, Vec<Warning>), AuditError> {
        let mut warnings = Vec::new();
        let mut out = Vec::new();
        for profile in &self.cfg.profiles {
            let extra = format!(
                "adversarial profile: {}\n{}\n",
                profile.name, profile.context_text
            );
            let hyps = self.run_audit_call(
                "audit.adversarial",
                batch,
                task,
                &context.render(),
                &extra,
                Origin::Adversarial(profile.name.clone()),
                &mut warnings,
            )?;
            out.extend(hyps);
        }
        Ok((out, warnings))
    }

    /// Candidate functions for symbolic checking: a lexical pre-filter on
    /// arithmetic tokens gates what the model sees; on model failure the
    /// pre-filter result stands.
    pub fn select_arithmetic_sensitive(
        &self,
        task: &AuditTask,
    ) -> Result<(Vec<FunctionKey>, Vec<Warning>), AuditError> {
        let mut warnings = Vec::new();
        let mut candidates: Vec<&FunctionFact> = task
            .functions
            .iter()
            .filter_map(|k| self.facts.function(k))
            .filter(|f| {
                let clean = strip_comments_and_strings(&f.body_text);
                ["/", "*", "%", "mulDiv", "mulDown", "divUp"]
                    .iter()
                    .any(|token| clean.contains(token))
            })
            .collect();
        candidates.sort_by_key(|f| f.key());
        if candidates.is_empty() {
            return Ok((Vec::new(), warnings));
        }
        let listing: Vec<String> = candidates.iter().map(|f| f.key().0.clone()).collect();
        let bodies: String = candidates
            .iter()
            .map(|f| format!("{}\n{}\n\n", f.key(), f.body_text))
            .collect();
        let fallback: Vec<FunctionKey> = candidates.iter().map(|f| f.key()).collect();
        let reply = match self.gateway.complete(
            "smt.select",
            "Pick the functions whose numerical behavior deserves formal checking: \
             division before multiplication, iterated rounding, mixed-unit \
             conversions. Reply with a JSON array of function keys.",
            &format!("candidates: {listing:?}\n\n{bodies}"),
        ) {
            Ok(r) => r,
            Err(e) if is_fatal(&e) => return Err(e.into()),
            Err(e) => {
                warnings.push(Warning {
                    stage: "smt.select".into(),
                    message: format!("{e}; falling back to lexical pre-filter"),
                });
                return Ok((fallback, warnings));
            }
        };
        let picked_names = parse_string_list(&reply);
        let picked: Vec<FunctionKey> = fallback
            .iter()
            .filter(|key| {
                picked_names
                    .iter()
                    .any(|n| n.trim() == key.as_str() || n.trim() == key.name())
            })
            .cloned()
            .collect();
        Ok((picked, warnings))
    }

    /// Sat outcomes feed an audit call with the counterexample injected as
    /// knowledge; everything else is recorded and skipped.
    pub fn math_audit(
        &self,
        batch: &Batch,
        task: &AuditTask,
        problem: &SmtProblem,
    ) -> Result<(Vec<VulnerabilityHypothesis>, Vec<Warning>), AuditError> {
        let mut warnings = Vec::new();
        let SmtOutcome::Sat { model_text } = &problem.outcome else {
            return Ok((Vec::new(), warnings));
        };
        let bindings = crate::smt::parse_model_bindings(model_text);
        let counterexample: Vec<String> = bindings
            .iter()
            .map(|(name, value)| format!("{name} = {value}"))
            .collect();
        let neighborhood = self
            .graph
            .extract_caller_callee(&problem.function, self.cfg.context_depth)?;
        let code: String = neighborhood
            .iter()
            .filter_map(|k| self.facts.function(k))
            .map(|f| format!("{}.{}\n{}\n\n", f.contract, f.signature, f.body_text))
            .collect();
        let extra = format!(
            "solver verdict: deviation between computed and exact value is REACHABLE.\n\
             counterexample: {counterexample:?}\nchecked function: {}\nscript:\n{}\n\
             surrounding code:\n{code}",
            problem.function, problem.script_text
        );
        let mut hyps = self.run_audit_call(
            "audit.math",
            batch,
            task,
            "",
            &extra,
            Origin::Math,
            &mut warnings,
        )?;
        for hyp in hyps.iter_mut() {
            for line in &counterexample {
                let constraint = format!("counterexample: {line}");
                if !hyp.constraints.contains(&constraint) {
                    hyp.constraints.push(constraint);
                }
            }
        }
        Ok((hyps, warnings))
    }

    /// Iterative chain synthesis: scan hypothesis pairs in canonical id
    /// order and merge the first pair the model links, restarting until a
    /// full pass adds nothing or the pair budget runs out. Each merge
    /// shrinks the set, so at most n-1 merges happen.
    pub fn synthesize_chains(
        &self,
        hypotheses: Vec<VulnerabilityHypothesis>,
    ) -> Result<(Vec<VulnerabilityHypothesis>, usize, Vec<Warning>), AuditError> {
        let mut warnings = Vec::new();
        let mut set = hypotheses;
        set.sort_by(|a, b| a.id.cmp(&b.id));
        let mut merges = 0usize;
        let mut pair_budget = self.cfg.max_pairs;
        'outer: loop {
            for i in 0..set.len() {
                for j in (i + 1)..set.len() {
                    if pair_budget == 0 {
                        warnings.push(Warning {
                            stage: "chain.link".into(),
                            message: "pair evaluation budget exhausted".into(),
                        });
                        break 'outer;
                    }
                    pair_budget -= 1;
                    match self.check_link(&set[i], &set[j], &mut warnings)? {
                        Some((a_first, satisfied)) => {
                            let (a, b) = if a_first { (i, j) } else { (j, i) };
                            let chained = chain(&set[a], &set[b], &satisfied);
                            let mut next: Vec<VulnerabilityHypothesis> = Vec::new();
                            for (idx, h) in set.iter().enumerate() {
                                if idx != i && idx != j {
                                    next.push(h.clone());
                                }
                            }
                            next.push(chained);
                            next.sort_by(|x, y| x.id.cmp(&y.id));
                            set = next;
                            merges += 1;
                            continue 'outer;
                        }
                        None => continue,
                    }
                }
            }
            break;
        }
        Ok((set, merges, warnings))
    }

    /// Asks whether one hypothesis' post-state satisfies the other's
    /// preconditions. On an affirmative link returns whether `a` comes
    /// first, plus the second hypothesis' discharged preconditions.
    fn check_link(
        &self,
        a: &VulnerabilityHypothesis,
        b: &VulnerabilityHypothesis,
        warnings: &mut Vec<Warning>,
    ) -> Result<Option<(bool, Vec<String>)>, AuditError> {
        let user = format!(
            "pair: {} | {}\nA: {}\n  preconditions: {:?}\n  reasoning: {:?}\nB: {}\n  preconditions: {:?}\n  reasoning: {:?}",
            a.category,
            b.category,
            a.summary_line(),
            a.constraints,
            a.reasoning_path,
            b.summary_line(),
            b.constraints,
            b.reasoning_path,
        );
        let reply = match self.gateway.complete(
            "chain.link",
            "Decide whether the post-state of one hypothesis satisfies the \
             preconditions of the other, enabling a composite exploit. Reply with \
             JSON {\"link\": bool, \"direction\": \"ab\"|\"ba\", \
             \"satisfied\": [preconditions of the second now discharged]}.",
            &user,
        ) {
            Ok(r) => r,
            Err(e) if is_fatal(&e) => return Err(e.into()),
            Err(e) => {
                warnings.push(Warning {
                    stage: "chain.link".into(),
                    message: format!("pair ({}, {}): {e}; treated as no link", a.id, b.id),
                });
                return Ok(None);
            }
        };
        let value: serde_json::Value =
            match serde_json::from_str(&extract_json_payload(&reply)) {
                Ok(v) => v,
                Err(_) => return Ok(None),
            };
        if !value["link"].as_bool().unwrap_or(false) {
            return Ok(None);
        }
        let satisfied: Vec<String> = value["satisfied"]
            .as_array()
            .map(|arr| {
                arr.iter()
                    .filter_map(|v| v.as_str())
                    .map(str::to_string)
                    .collect()
            })
            .unwrap_or_default();
        match value["direction"].as_str().unwrap_or("ab") {
            "ba" => Ok(Some((false, satisfied))),
            _ => Ok(Some((true, satisfied))),
        }
    }

    /// Full Plan-Remind-Solve pass over one batch.
    pub fn audit_batch(&self, batch: &Batch) -> Result<BatchAuditOutput, AuditError> {
        let mut output = BatchAuditOutput {
            batch_id: batch.id,
            ..Default::default()
        };
        let (tasks, warnings) = self.plan(batch)?;
        output.warnings.extend(warnings);
        output.tasks_planned = tasks.len();
        let mut collected: Vec<VulnerabilityHypothesis> = Vec::new();
        for task in &tasks {
            let (context, warnings) = self.remind(task);
            output.warnings.extend(warnings);

            let (base, warnings) = self.base_audit(batch, task, &context)?;
            output.warnings.extend(warnings);
            collected.extend(base);

            let (adversarial, warnings) = self.adversarial_audit(batch, task, &context)?;
            output.warnings.extend(warnings);
            collected.extend(adversarial);

            let (sensitive, warnings) = self.select_arithmetic_sensitive(task)?;
            output.warnings.extend(warnings);
            for key in sensitive {
                let Some(function) = self.facts.function(&key) else {
                    continue;
                };
                let mut problem = match transpile_and_solve(
                    function,
                    self.gateway,
                    self.solver,
                    &self.cfg.extra_realism,
                    self.cfg.solver_timeout_ms,
                ) {
                    Ok(p) => p,
                    Err(e) if is_fatal(&e) => return Err(e.into()),
                    Err(e) => {
                        output.warnings.push(Warning {
                            stage: "smt.transpile".into(),
                            message: format!("{key}: {e}"),
                        });
                        continue;
                    }
                };
                if self.cfg.validate_counterexamples {
                    if let SmtOutcome::Sat { .. } = &problem.outcome {
                        match crate::smt::recheck_sat(
                            &problem,
                            self.solver,
                            self.cfg.solver_timeout_ms,
                        ) {
                            Ok(true) => {}
                            Ok(false) => {
                                output.warnings.push(Warning {
                                    stage: "smt.recheck".into(),
                                    message: format!(
                                        "{key}: counterexample failed re-substitution; outcome degraded"
                                    ),
                                });
                                problem.outcome = SmtOutcome::Unknown {
                                    reason: "counterexample failed re-substitution".into(),
                                };
                            }
                            Err(e) => {
                                output.warnings.push(Warning {
                                    stage: "smt.recheck".into(),
                                    message: format!("{key}: {e}"),
                                });
                            }
                        }
                    }
                }
                let (math, warnings) = self.math_audit(batch, task, &problem)?;
                output.warnings.extend(warnings);
                collected.extend(math);
                output.smt_problems.push(problem);
            }
        }
        let (synthesized, _merges, warnings) = self.synthesize_chains(collected)?;
        output.warnings.extend(warnings);
        output.hypotheses = synthesized;
        Ok(output)
    }
}

/// Merges two linked hypotheses: the first one's entry leads, reasoning
/// paths concatenate, and the second's discharged preconditions drop out.
pub fn chain(
    first: &VulnerabilityHypothesis,
    second: &VulnerabilityHypothesis,
    satisfied: &[String],
) -> VulnerabilityHypothesis {
    let mut constraints = first.constraints.clone();
    for c in &second.constraints {
        if !satisfied.contains(c) && !constraints.contains(c) {
            constraints.push(c.clone());
        }
    }
    let mut reasoning_path = first.reasoning_path.clone();
    reasoning_path.extend(second.reasoning_path.iter().cloned());
    let category = format!("{} -> {}", first.category, second.category);
    let severity = first.severity.max(second.severity);
    let parents = vec![first.id.clone(), second.id.clone()];
    let entry = first.entry_point.clone();
    let id = VulnerabilityHypothesis::compute_id(
        &entry,
        &category,
        &reasoning_path,
        &Origin::Chained,
        &parents,
    );
    VulnerabilityHypothesis {
        id,
        entry_point: entry,
        constraints,
        reasoning_path,
        category,
        severity,
        origin: Origin::Chained,
        alternative_paths: Vec::new(),
        confidence: first.confidence.max(second.confidence),
        parents,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn hypothesis(category: &str, entry: &str, line: u32) -> VulnerabilityHypothesis {
        let entry_point = (FunctionKey(entry.to_string()), line);
        let path = vec![format!("step for {category}")];
        let id = VulnerabilityHypothesis::compute_id(
            &entry_point,
            category,
            &path,
            &Origin::Base,
            &[],
        );
        VulnerabilityHypothesis {
            id,
            entry_point,
            constraints: vec![format!("pre-{category}")],
            reasoning_path: path,
            category: category.into(),
            severity: Severity::Medium,
            origin: Origin::Base,
            alternative_paths: Vec::new(),
            confidence: 0.5,
            parents: Vec::new(),
        }
    }

    #[test]
    fn severity_ordering_and_parse() {
        assert_eq!(Severity::parse("this is HIGH impact"), Some(Severity::High));
        assert_eq!(Severity::parse("nothing"), None);
        assert_eq!(Severity::Critical.max(Severity::Low), Severity::Critical);
        assert!(Severity::Critical.rank() < Severity::Low.rank());
    }

    #[test]
    fn chain_merges_constraints_and_severity() {
        let mut a = hypothesis("price-manipulation", "A.f()", 10);
        a.severity = Severity::High;
        let mut b = hypothesis("drain", "B.g()", 20);
        b.severity = Severity::Critical;
        b.constraints = vec!["pool imbalanced".into(), "attacker holds shares".into()];
        let chained = chain(&a, &b, &["pool imbalanced".to_string()]);
        assert_eq!(chained.severity, Severity::Critical);
        assert_eq!(chained.entry_point, a.entry_point);
        assert_eq!(chained.parents.len(), 2);
        assert!(chained.constraints.contains(&"attacker holds shares".to_string()));
        assert!(!chained.constraints.contains(&"pool imbalanced".to_string()));
        assert_eq!(
            chained.reasoning_path.len(),
            a.reasoning_path.len() + b.reasoning_path.len()
        );
        assert_eq!(chained.origin, Origin::Chained);
    }

    #[test]
    fn hypothesis_ids_stable_and_distinct() {
        let a = hypothesis("reentrancy", "A.f()", 3);
        let b = hypothesis("reentrancy", "A.f()", 3);
        assert_eq!(a.id, b.id);
        let c = hypothesis("reentrancy", "A.f()", 4);
        assert_ne!(a.id, c.id);
    }
}
