//! End-to-end orchestration shared by the CLI subcommands: project loading
//! (Solidity sources or an external fact file), backend construction, the
//! profile stage, and the full audit+verify run that yields an AuditReport.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::auditor::{Auditor, BatchAuditOutput, VulnerabilityHypothesis};
use crate::clock;
use crate::config::AuditConfig;
use crate::facts::{extract_facts, FactError, FactSet};
use crate::gateway::{Gateway, GatewayError, ScriptedScenario};
use crate::graph::{build_graph, DependencyGraph};
use crate::knowledge::{load_kb, KnowledgeIndex, NullSearch, SearchClient, StubSearch};
use crate::profiler::{BatchPlan, ProfileError, Profiler};
use crate::report::{
    partition_verdicts, AuditReport, BatchSummary, ReportedFinding, write_atomic,
};
use crate::smt::{InProcessSolver, SolverRunner, SubprocessSolver};
use crate::verifier::Verifier;
use crate::Warning;

/// Errors split by exit code: input problems (2) vs gateway problems (3).
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("input error: {0}")]
    Input(String),
    #[error("gateway error: {0}")]
    Gateway(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Input(_) => 2,
            PipelineError::Gateway(_) => 3,
        }
    }
}

impl From<FactError> for PipelineError {
    fn from(e: FactError) -> Self {
        PipelineError::Input(e.to_string())
    }
}

impl From<GatewayError> for PipelineError {
    fn from(e: GatewayError) -> Self {
        PipelineError::Gateway(e.to_string())
    }
}

impl From<ProfileError> for PipelineError {
    fn from(e: ProfileError) -> Self {
        match e {
            ProfileError::Model { .. } => PipelineError::Gateway(e.to_string()),
            other => PipelineError::Input(other.to_string()),
        }
    }
}

impl From<crate::auditor::AuditError> for PipelineError {
    fn from(e: crate::auditor::AuditError) -> Self {
        PipelineError::Gateway(e.to_string())
    }
}

impl From<crate::verifier::VerifyError> for PipelineError {
    fn from(e: crate::verifier::VerifyError) -> Self {
        PipelineError::Gateway(e.to_string())
    }
}

pub struct ProjectInput {
    pub name: String,
    pub facts: FactSet,
    pub warnings: Vec<Warning>,
}

/// Loads a project from a directory of `.sol` sources, a single `.sol`
/// file, or a `.json` fact file.
pub fn load_project(path: &Path) -> Result<ProjectInput, PipelineError> {
    if !path.exists() {
        return Err(PipelineError::Input(format!(
            "input path does not exist: {}",
            path.display()
        )));
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "project".into());
    if path.is_dir() {
        let mut sources = Vec::new();
        collect_sol(path, &mut sources)
            .map_err(|e| PipelineError::Input(format!("reading {}: {e}", path.display())))?;
        sources.sort();
        if sources.is_empty() {
            return Err(PipelineError::Input(format!(
                "no .sol files under {}",
                path.display()
            )));
        }
        let mut pairs = Vec::new();
        for file in sources {
            let text = std::fs::read_to_string(&file)
                .map_err(|e| PipelineError::Input(format!("reading {}: {e}", file.display())))?;
            let rel = file
                .strip_prefix(path)
                .unwrap_or(&file)
                .to_string_lossy()
                .into_owned();
            pairs.push((rel, text));
        }
        let extraction = extract_facts(&pairs)?;
        return Ok(ProjectInput {
            name,
            facts: extraction.facts,
            warnings: extraction
                .warnings
                .into_iter()
                .map(|w| Warning {
                    stage: "extract".into(),
                    message: format!("{}: {}", w.path, w.message),
                })
                .collect(),
        });
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => {
            let bytes = std::fs::read(path)
                .map_err(|e| PipelineError::Input(format!("reading {}: {e}", path.display())))?;
            Ok(ProjectInput {
                name,
                facts: FactSet::from_json(&bytes)?,
                warnings: Vec::new(),
            })
        }
        Some("sol") => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| PipelineError::Input(format!("reading {}: {e}", path.display())))?;
            let extraction =
                extract_facts(&[(path.to_string_lossy().into_owned(), text)])?;
            Ok(ProjectInput {
                name,
                facts: extraction.facts,
                warnings: extraction
                    .warnings
                    .into_iter()
                    .map(|w| Warning {
                        stage: "extract".into(),
                        message: format!("{}: {}", w.path, w.message),
                    })
                    .collect(),
            })
        }
        _ => Err(PipelineError::Input(format!(
            "unsupported input {}: expected a directory, .sol, or .json fact file",
            path.display()
        ))),
    }
}

fn collect_sol(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_sol(&path, out)?;
        } else if path.extension().is_some_and(|e| e == "sol") {
            out.push(path);
        }
    }
    Ok(())
}

/// Backend selection: a scenario pack gives the deterministic scripted
/// backend; otherwise the configured HTTP endpoint is used.
pub fn build_gateway(
    cfg: &AuditConfig,
    scenario_path: Option<&Path>,
) -> Result<Gateway, PipelineError> {
    if let Some(path) = scenario_path {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Input(format!("reading {}: {e}", path.display())))?;
        let scenario = ScriptedScenario::from_json(&text)?;
        let backend = crate::gateway::ScriptedBackend::new(scenario, cfg.model.embed_dim);
        return Ok(Gateway::new(Box::new(backend), cfg.model.clone())?);
    }
    #[cfg(feature = "http")]
    {
        if !cfg.model.endpoint_url.is_empty() {
            let backend = crate::gateway::HttpBackend::new(cfg.model.clone());
            return Ok(Gateway::new(Box::new(backend), cfg.model.clone())?);
        }
    }
    Err(PipelineError::Gateway(
        "no model backend: configure [model] endpoint_url or pass --scenario".into(),
    ))
}

/// Solver preference: configured command, then the bundled smtbv binary
/// next to the executable, then the in-process bounded solver.
pub fn build_solver(cfg: &AuditConfig, warnings: &mut Vec<Warning>) -> Box<dyn SolverRunner> {
    if !cfg.auditor.solver_cmd.is_empty() {
        return Box::new(SubprocessSolver::new(
            PathBuf::from(&cfg.auditor.solver_cmd),
            cfg.auditor.solver_args.clone(),
        ));
    }
    if let Some(bundled) = SubprocessSolver::bundled() {
        return Box::new(bundled);
    }
    warnings.push(Warning {
        stage: "smt".into(),
        message: "bundled solver binary not found next to the executable; \
                  falling back to the in-process bounded solver"
            .into(),
    });
    Box::new(InProcessSolver {
        budget: cfg.auditor.solver_budget,
    })
}

pub fn load_knowledge(
    cfg: &AuditConfig,
    warnings: &mut Vec<Warning>,
) -> Result<KnowledgeIndex, PipelineError> {
    if cfg.kb_dir.is_empty() {
        return Ok(KnowledgeIndex::default());
    }
    let index = load_kb(Path::new(&cfg.kb_dir))
        .map_err(|e| PipelineError::Input(e.to_string()))?;
    warnings.extend(index.warnings.iter().map(|w| Warning {
        stage: "kb.load".into(),
        message: format!("{}: {}", w.path, w.message),
    }));
    Ok(index)
}

pub struct ProfileOutput {
    pub plan: BatchPlan,
    pub graph: DependencyGraph,
    pub warnings: Vec<Warning>,
}

/// The profile stage: facts -> graph -> communities -> scored, refined,
/// pruned batches. With `no_llm` the structural batches are emitted without
/// the model-driven refinement step.
pub fn run_profile(
    input: &ProjectInput,
    cfg: &AuditConfig,
    gateway: Option<&Gateway>,
) -> Result<ProfileOutput, PipelineError> {
    let graph = build_graph(&input.facts);
    if graph.is_empty() {
        return Err(PipelineError::Input(
            "project has no functions to profile".into(),
        ));
    }
    let profiler = Profiler::new(&input.facts, &graph, cfg.profiler_config());
    let plan = profiler.plan(cfg.profiler.seed, gateway)?;
    Ok(ProfileOutput {
        plan,
        graph,
        warnings: Vec::new(),
    })
}

#[derive(Debug, Clone, Default)]
pub struct AuditRunOptions {
    pub skip_verifier: bool,
    pub search_stub: Option<PathBuf>,
}

/// The full pipeline: profile, audit every batch in order, verify the
/// union, and assemble the report with verdict and usage accounting.
pub fn run_audit(
    input: &ProjectInput,
    cfg: &AuditConfig,
    gateway: &Gateway,
    options: &AuditRunOptions,
) -> Result<AuditReport, PipelineError> {
    let mut warnings = input.warnings.clone();
    let mut timing = std::collections::BTreeMap::new();

    let t_profile = clock::now_ms();
    let profile = run_profile(input, cfg, Some(gateway))?;
    timing.insert("profile_ms".to_string(), clock::now_ms() - t_profile);
    warnings.extend(profile.warnings);

    let kb = load_knowledge(cfg, &mut warnings)?;
    let solver = build_solver(cfg, &mut warnings);
    let search: Box<dyn SearchClient> = match &options.search_stub {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| PipelineError::Input(format!("reading {}: {e}", path.display())))?;
            Box::new(
                StubSearch::from_json(&text)
                    .map_err(|e| PipelineError::Input(format!("search stub: {e}")))?,
            )
        }
        None => Box::new(NullSearch),
    };

    let auditor = Auditor {
        facts: &input.facts,
        graph: &profile.graph,
        kb: &kb,
        gateway,
        search: search.as_ref(),
        solver: solver.as_ref(),
        cfg: cfg.auditor_config(),
    };

    let t_audit = clock::now_ms();
    let mut batch_outputs: Vec<BatchAuditOutput> = Vec::new();
    for batch in &profile.plan.batches {
        let output = auditor.audit_batch(batch)?;
        batch_outputs.push(output);
    }
    timing.insert("audit_ms".to_string(), clock::now_ms() - t_audit);

    // Union of per-batch hypothesis sets, unique by id.
    let mut v_raw: Vec<VulnerabilityHypothesis> = Vec::new();
    let mut seen = BTreeSet::new();
    let mut smt_problems = Vec::new();
    for output in &mut batch_outputs {
        warnings.append(&mut output.warnings);
        smt_problems.append(&mut output.smt_problems);
        for hyp in output.hypotheses.drain(..) {
            if seen.insert(hyp.id.clone()) {
                v_raw.push(hyp);
            }
        }
    }
    v_raw.sort_by(|a, b| a.id.cmp(&b.id));
    let raw_count = v_raw.len();

    let t_verify = clock::now_ms();
    let (findings, filtered, merged) = if options.skip_verifier {
        let findings = v_raw
            .iter()
            .cloned()
            .map(|hypothesis| ReportedFinding {
                hypothesis,
                verdicts: Vec::new(),
            })
            .collect();
        (findings, Vec::new(), Vec::new())
    } else {
        let verifier = Verifier {
            facts: &input.facts,
            graph: &profile.graph,
            gateway,
            cfg: cfg.verifier_config(),
        };
        let output = verifier.verify(v_raw.clone())?;
        warnings.extend(output.warnings);
        let (filtered, merged) = partition_verdicts(&v_raw, &output.records);
        let findings = output
            .kept
            .into_iter()
            .map(|hypothesis| {
                let verdicts = output
                    .records
                    .iter()
                    .filter(|r| r.hypothesis_id == hypothesis.id)
                    .cloned()
                    .collect();
                ReportedFinding {
                    hypothesis,
                    verdicts,
                }
            })
            .collect();
        (findings, filtered, merged)
    };
    timing.insert("verify_ms".to_string(), clock::now_ms() - t_verify);

    let mut findings: Vec<ReportedFinding> = findings;
    findings.sort_by(|a, b| {
        a.hypothesis
            .severity
            .rank()
            .cmp(&b.hypothesis.severity.rank())
            .then_with(|| a.hypothesis.id.cmp(&b.hypothesis.id))
    });

    let batches_summary = profile
        .plan
        .batches
        .iter()
        .zip(batch_outputs.iter())
        .map(|(batch, output)| BatchSummary::from_batch(batch, output.tasks_planned))
        .collect();

    let report = AuditReport {
        project_name: input.name.clone(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_fingerprint: cfg.fingerprint(),
        generated_unix_ms: clock::unix_ms(),
        skip_verifier: options.skip_verifier,
        batches_summary,
        findings,
        filtered,
        merged,
        smt_problems,
        usage: gateway.usage_report(),
        timing,
        warnings,
    };
    debug_assert_eq!(report.accounted_raw_count(), raw_count);
    Ok(report)
}

/// Writes a report to disk (JSON, optionally markdown next to it).
pub fn write_report(
    report: &AuditReport,
    out: &Path,
    format: &str,
) -> Result<(), PipelineError> {
    let payload = match format {
        "md" => report.to_markdown(),
        _ => report.to_json(),
    };
    write_atomic(out, &payload)
        .map_err(|e| PipelineError::Input(format!("writing {}: {e}", out.display())))
}
