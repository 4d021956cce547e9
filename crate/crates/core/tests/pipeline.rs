//! End-to-end pipeline tests over the minivault fixture with the scripted
//! scenario pack: the full cascade shape, the skip-verifier superset, and
//! error paths.

use std::path::{Path, PathBuf};

use solaudit::auditor::Origin;
use solaudit::config::AuditConfig;
use solaudit::pipeline::{
    build_gateway, load_project, run_audit, AuditRunOptions, PipelineError,
};
use solaudit::smt::SmtOutcome;
use solaudit::verifier::VerdictStage;

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(rel)
}

fn scripted_config() -> AuditConfig {
    let mut cfg = AuditConfig::default();
    cfg.kb_dir = fixture("kb").to_string_lossy().into_owned();
    // Use the compiled solver binary explicitly so tests do not depend on
    // executable layout.
    cfg.auditor.solver_cmd = env!("CARGO_BIN_EXE_smtbv").to_string();
    cfg
}

fn run_scripted(skip_verifier: bool) -> solaudit::report::AuditReport {
    let cfg = scripted_config();
    let project = load_project(&fixture("minivault")).unwrap();
    let gateway = build_gateway(&cfg, Some(&fixture("minivault/scenario.json"))).unwrap();
    let options = AuditRunOptions {
        skip_verifier,
        search_stub: Some(fixture("minivault/search_stub.json")),
    };
    run_audit(&project, &cfg, &gateway, &options).unwrap()
}

#[test]
fn scripted_audit_full_cascade_shape() {
    let report = run_scripted(false);

    assert_eq!(report.findings.len(), 3, "three verified findings");
    assert_eq!(report.filtered.len(), 2, "aggregation + threat drops");
    assert_eq!(report.merged.len(), 1, "dedup folded the duplicate");
    assert_eq!(report.accounted_raw_count(), 6);

    let categories: Vec<&str> = report
        .findings
        .iter()
        .map(|f| f.hypothesis.category.as_str())
        .collect();
    assert!(categories.contains(&"reentrancy"));
    assert!(categories.contains(&"price-manipulation"));
    assert!(categories.contains(&"rounding-precision-loss"));

    let reentrancy = report
        .findings
        .iter()
        .find(|f| f.hypothesis.category == "reentrancy")
        .unwrap();
    assert_eq!(
        reentrancy.hypothesis.entry_point.0.as_str(),
        "Vault.withdraw(uint256)"
    );
    assert_eq!(reentrancy.hypothesis.entry_point.1, 29);

    // The dedup winner is the solver-backed duplicate and carries the
    // loser's reasoning as an alternative trigger path.
    let precision = report
        .findings
        .iter()
        .find(|f| f.hypothesis.category == "rounding-precision-loss")
        .unwrap();
    assert_eq!(precision.hypothesis.origin, Origin::Math);
    assert_eq!(precision.hypothesis.alternative_paths.len(), 1);
    assert!((precision.hypothesis.confidence - 0.9).abs() < 1e-9);
    assert!(precision
        .hypothesis
        .constraints
        .iter()
        .any(|c| c.starts_with("counterexample: amountIn")));

    // Cascade stages attributed correctly.
    let aggregation_drop = report
        .filtered
        .iter()
        .find(|f| f.stage == VerdictStage::Aggregation)
        .unwrap();
    assert_eq!(aggregation_drop.hypothesis.category, "reentrancy");
    assert_eq!(
        aggregation_drop.hypothesis.entry_point.0.as_str(),
        "Vault.deposit(uint256)"
    );
    let threat_drop = report
        .filtered
        .iter()
        .find(|f| f.stage == VerdictStage::ThreatModel)
        .unwrap();
    assert_eq!(threat_drop.hypothesis.category, "admin-key-rug");

    // The solver problem resolved sat and the batches overlap on MathLib.
    assert_eq!(report.smt_problems.len(), 1);
    assert!(matches!(
        report.smt_problems[0].outcome,
        SmtOutcome::Sat { .. }
    ));
    let overlap_count = report
        .batches_summary
        .iter()
        .filter(|b| b.contracts.iter().any(|c| c == "MathLib"))
        .count();
    assert_eq!(overlap_count, 2, "shared library appears in both batches");

    // Usage ledger saw every stage.
    for stage in ["plan.scan", "audit.base", "smt.transpile", "verify.threat", "embed"] {
        assert!(
            report.usage.rows.iter().any(|r| r.stage == stage),
            "usage ledger missing stage {stage}"
        );
    }
}

#[test]
fn skip_verifier_is_superset_of_default() {
    let unverified = run_scripted(true);
    let verified = run_scripted(false);
    assert!(unverified.findings.len() >= verified.findings.len());
    assert_eq!(unverified.findings.len(), 6);
    assert!(unverified.filtered.is_empty());
    assert!(unverified.merged.is_empty());
    // Every verified finding id also appears in the unverified run.
    for finding in &verified.findings {
        assert!(unverified
            .findings
            .iter()
            .any(|f| f.hypothesis.id == finding.hypothesis.id));
    }
}

#[test]
fn live_search_note_flows_into_context() {
    // The Rewards task declares a Balancer lineage; the stubbed search and
    // summarize calls must appear in the usage ledger.
    let report = run_scripted(false);
    assert!(report
        .usage
        .rows
        .iter()
        .any(|r| r.stage == "remind.summarize" && r.calls == 1));
}

#[test]
fn kb_fixture_matches_manifest() {
    // Manifest diff oracle: the categories on disk, spelled out by hand.
    let manifest = [
        "access-control",
        "donation-attack",
        "dos-gas",
        "flash-loan",
        "front-running",
        "governance-attack",
        "integer-overflow",
        "oracle-manipulation",
        "price-manipulation",
        "reentrancy",
        "rounding-precision",
        "signature-replay",
    ];
    let index = solaudit::knowledge::load_kb(&fixture("kb")).unwrap();
    assert!(index.warnings.is_empty());
    assert_eq!(index.categories(), manifest.to_vec());
}

#[test]
fn extracted_fixture_round_trips_through_fact_file() {
    let project = load_project(&fixture("minivault")).unwrap();
    let json = project.facts.to_json();
    let loaded = solaudit::facts::FactSet::from_json(json.as_bytes()).unwrap();
    assert_eq!(project.facts, loaded);
    // And the fact file is itself a valid pipeline input.
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("facts.json");
    std::fs::write(&path, &json).unwrap();
    let reloaded = load_project(&path).unwrap();
    assert_eq!(reloaded.facts, project.facts);
}

#[test]
fn isolated_function_scores_half_with_equal_weights() {
    // One contract, one isolated function: betweenness 0 and pagerank 1.0,
    // so alpha=beta=0.5 scores exactly 0.5.
    use solaudit::facts::{ContractFact, ContractKind, FactSet, FunctionFact, Visibility};
    let mut facts = FactSet {
        contracts: vec![ContractFact {
            name: "Solo".into(),
            source_path: "solo.sol".into(),
            kind: ContractKind::Contract,
            is_template: false,
            line_count: 3,
        }],
        functions: vec![FunctionFact {
            contract: "Solo".into(),
            name: "only".into(),
            signature: "only()".into(),
            visibility: Visibility::Public,
            modifiers: vec![],
            source_span: (1, 3),
            body_text: "return;".into(),
        }],
        calls: vec![],
        state_accesses: vec![],
    };
    facts.canonicalize();
    let graph = solaudit::graph::build_graph(&facts);
    let cfg = AuditConfig::default();
    let profiler = solaudit::profiler::Profiler::new(&facts, &graph, cfg.profiler_config());
    let batch = solaudit::profiler::Batch {
        id: 0,
        contracts: vec!["Solo".into()],
        scores: Default::default(),
        tags: vec![],
        estimated_tokens: 0,
        pruned_contracts: vec![],
        truncated_functions: vec![],
    };
    let scores = profiler.score_contracts(&batch, 0.5, 0.5).unwrap();
    assert!((scores["Solo"] - 0.5).abs() < 1e-12);
}

#[test]
fn missing_input_is_input_error() {
    let err = match load_project(Path::new("does/not/exist")) {
        Err(e) => e,
        Ok(_) => panic!("expected an input error"),
    };
    assert!(matches!(err, PipelineError::Input(_)));
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn missing_backend_is_gateway_error() {
    let cfg = AuditConfig::default();
    let err = match build_gateway(&cfg, None) {
        Err(e) => e,
        Ok(_) => panic!("expected a gateway error"),
    };
    assert!(matches!(err, PipelineError::Gateway(_)));
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn missing_kb_dir_is_input_error() {
    let mut cfg = scripted_config();
    cfg.kb_dir = fixture("no-such-kb").to_string_lossy().into_owned();
    let project = load_project(&fixture("minivault")).unwrap();
    let gateway = build_gateway(&cfg, Some(&fixture("minivault/scenario.json"))).unwrap();
    let err = run_audit(&project, &cfg, &gateway, &AuditRunOptions::default()).unwrap_err();
    assert!(matches!(err, PipelineError::Input(_)));
}
