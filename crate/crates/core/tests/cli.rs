//! Black-box tests of the `solaudit` binary: subcommands, exit codes, and
//! file outputs.

use std::path::{Path, PathBuf};
use std::process::Command;

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(rel)
}

fn solaudit() -> Command {
    Command::new(env!("CARGO_BIN_EXE_solaudit"))
}

#[test]
fn profile_no_llm_emits_covering_plan() {
    let output = solaudit()
        .args(["profile", fixture("minivault").to_str().unwrap(), "--no-llm"])
        .output()
        .unwrap();
    assert!(output.status.success(), "{output:?}");
    let value: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    let batches = value["batches"].as_array().unwrap();
    assert!(!batches.is_empty());
    // Coverage: every project contract appears in contracts or pruned.
    let mut covered: Vec<String> = Vec::new();
    for batch in batches {
        for key in ["contracts", "pruned"] {
            for c in batch[key].as_array().unwrap() {
                covered.push(c.as_str().unwrap().to_string());
            }
        }
    }
    for contract in ["Vault", "MathLib", "Rewards"] {
        assert!(covered.iter().any(|c| c == contract), "{contract} uncovered");
    }
}

#[test]
fn profile_missing_input_exits_2() {
    let output = solaudit()
        .args(["profile", "no/such/dir", "--no-llm"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn audit_without_backend_exits_3() {
    let output = solaudit()
        .args(["audit", fixture("minivault").to_str().unwrap()])
        .env_remove("SOLAUDIT_ENDPOINT")
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(3));
}

#[test]
fn audit_scenario_writes_report_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let output = solaudit()
        .args([
            "audit",
            fixture("minivault").to_str().unwrap(),
            "--scenario",
            fixture("minivault/scenario.json").to_str().unwrap(),
            "--kb",
            fixture("kb").to_str().unwrap(),
            "--search-stub",
            fixture("minivault/search_stub.json").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["findings"].as_array().unwrap().len(), 3);
    assert_eq!(report["filtered"].as_array().unwrap().len(), 2);
    assert_eq!(report["merged"].as_array().unwrap().len(), 1);

    // Markdown rendering of the same run.
    let md_out = dir.path().join("report.md");
    let output = solaudit()
        .args([
            "audit",
            fixture("minivault").to_str().unwrap(),
            "--scenario",
            fixture("minivault/scenario.json").to_str().unwrap(),
            "--kb",
            fixture("kb").to_str().unwrap(),
            "--search-stub",
            fixture("minivault/search_stub.json").to_str().unwrap(),
            "--format",
            "md",
            "--out",
            md_out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(output.status.success());
    let md = std::fs::read_to_string(&md_out).unwrap();
    assert!(md.contains("# Audit report: minivault"));
    assert!(md.contains("### High"));
    assert!(md.contains("Alternative trigger path 1"));
}

#[test]
fn kb_validate_and_import_round_trip() {
    let ok = solaudit()
        .args(["kb", "validate", fixture("kb").to_str().unwrap()])
        .output()
        .unwrap();
    assert!(ok.status.success());

    // A broken file makes validate exit 2 and name the file.
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("broken.xml"),
        "<entry category=\"x\"><pattern>p</pattern></entry>",
    )
    .unwrap();
    let bad = solaudit()
        .args(["kb", "validate", dir.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("broken.xml"));

    // Import: the XML segments must equal the markdown heading bodies.
    let out_dir = tempfile::tempdir().unwrap();
    let imported = solaudit()
        .args([
            "kb",
            "import",
            fixture("reports/first-depositor-inflation.md").to_str().unwrap(),
            "--out-dir",
            out_dir.path().to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(imported.status.success());
    let xml_path = out_dir.path().join("first-depositor-inflation.xml");
    let xml = std::fs::read_to_string(&xml_path).unwrap();
    let entry = solaudit::knowledge::parse_entry_xml(&xml, "imported").unwrap();
    let md = std::fs::read_to_string(fixture("reports/first-depositor-inflation.md")).unwrap();
    let expected = solaudit::knowledge::entry_from_markdown(&md, "first-depositor-inflation").unwrap();
    assert_eq!(entry.category, expected.category);
    assert_eq!(entry.pattern, expected.pattern);
    assert_eq!(entry.exploit_instance, expected.exploit_instance);
    assert_eq!(entry.reasoning_trace, expected.reasoning_trace);
}

#[test]
fn graph_dump_formats() {
    let dot = solaudit()
        .args(["graph", fixture("minivault").to_str().unwrap()])
        .output()
        .unwrap();
    assert!(dot.status.success());
    let text = String::from_utf8_lossy(&dot.stdout);
    assert!(text.contains("digraph deps"));
    assert!(text.contains("\"Vault.withdraw(uint256)\" -> \"Vault.previewPayout(uint256)\""));

    let json = solaudit()
        .args([
            "graph",
            fixture("minivault").to_str().unwrap(),
            "--format",
            "json",
        ])
        .output()
        .unwrap();
    let value: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    assert_eq!(value["nodes"].as_array().unwrap().len(), 9);
    assert_eq!(value["edges"].as_array().unwrap().len(), 16);
}
