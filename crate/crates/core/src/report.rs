//! The audit report: verified findings with their verdict trails, filtered
//! and merged hypotheses with rationales, usage and timing accounting.
//! Reports are written atomically so a crashed run never leaves a
//! truncated file.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::auditor::{Severity, VulnerabilityHypothesis};
use crate::gateway::UsageReport;
use crate::profiler::Batch;
use crate::smt::SmtProblem;
use crate::verifier::{Verdict, VerdictRecord, VerdictStage};
use crate::Warning;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchSummary {
    pub id: usize,
    pub contracts: Vec<String>,
    pub scores: BTreeMap<String, f64>,
    pub tags: Vec<String>,
    pub estimated_tokens: usize,
    pub pruned: Vec<String>,
    pub tasks_planned: usize,
}

impl BatchSummary {
    pub fn from_batch(batch: &Batch, tasks_planned: usize) -> Self {
        BatchSummary {
            id: batch.id,
            contracts: batch.contracts.clone(),
            scores: batch.scores.clone(),
            tags: batch.tags.clone(),
            estimated_tokens: batch.estimated_tokens,
            pruned: batch.pruned_contracts.clone(),
            tasks_planned,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportedFinding {
    #[serde(flatten)]
    pub hypothesis: VulnerabilityHypothesis,
    pub verdicts: Vec<VerdictRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilteredFinding {
    pub hypothesis: VulnerabilityHypothesis,
    pub stage: VerdictStage,
    pub rationale: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub merged_into: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditReport {
    pub project_name: String,
    pub tool_version: String,
    pub config_fingerprint: String,
    pub generated_unix_ms: u64,
    pub skip_verifier: bool,
    pub batches_summary: Vec<BatchSummary>,
    pub findings: Vec<ReportedFinding>,
    pub filtered: Vec<FilteredFinding>,
    pub merged: Vec<FilteredFinding>,
    pub smt_problems: Vec<SmtProblem>,
    pub usage: UsageReport,
    /// Per-stage wall clock in milliseconds.
    pub timing: BTreeMap<String, u64>,
    pub warnings: Vec<Warning>,
}

impl AuditReport {
    /// Accounting identity: every raw hypothesis is exactly one of
    /// finding / dropped / merged-away.
    pub fn accounted_raw_count(&self) -> usize {
        self.findings.len() + self.filtered.len() + self.merged.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// The deterministic portion of the report (timestamps and wall-clock
    /// fields excluded), for replay comparisons.
    pub fn deterministic_view(&self) -> serde_json::Value {
        serde_json::json!({
            "project_name": self.project_name,
            "config_fingerprint": self.config_fingerprint,
            "skip_verifier": self.skip_verifier,
            "batches_summary": self.batches_summary,
            "findings": self.findings,
            "filtered": self.filtered,
            "merged": self.merged,
            "warnings": self.warnings,
        })
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# Audit report: {}\n\n", self.project_name));
        out.push_str(&format!(
            "tool {} | config {} | findings {} | filtered {} | merged {}\n\n",
            self.tool_version,
            self.config_fingerprint,
            self.findings.len(),
            self.filtered.len(),
            self.merged.len()
        ));

        out.push_str("## Batches\n\n");
        for batch in &self.batches_summary {
            out.push_str(&format!(
                "- batch {}: contracts [{}] tags [{}] ~{} tokens, {} tasks{}\n",
                batch.id,
                batch.contracts.join(", "),
                batch.tags.join(", "),
                batch.estimated_tokens,
                batch.tasks_planned,
                if batch.pruned.is_empty() {
                    String::new()
                } else {
                    format!(", pruned [{}]", batch.pruned.join(", "))
                }
            ));
        }
        out.push('\n');

        out.push_str("## Findings\n\n");
        if self.findings.is_empty() {
            out.push_str("No findings survived verification.\n\n");
        }
        for severity in [
            Severity::Critical,
            Severity::High,
            Severity::Medium,
            Severity::Low,
        ] {
            let group: Vec<&ReportedFinding> = self
                .findings
                .iter()
                .filter(|f| f.hypothesis.severity == severity)
                .collect();
            if group.is_empty() {
                continue;
            }
            out.push_str(&format!("### {severity:?}\n\n"));
            for finding in group {
                let h = &finding.hypothesis;
                out.push_str(&format!(
                    "#### {} at `{}:{}`\n\n",
                    h.category, h.entry_point.0, h.entry_point.1
                ));
                out.push_str(&format!(
                    "id `{}` | origin {} | confidence {:.2}\n\n",
                    h.id, h.origin, h.confidence
                ));
                if !h.constraints.is_empty() {
                    out.push_str("Preconditions:\n");
                    for c in &h.constraints {
                        out.push_str(&format!("- {c}\n"));
                    }
                    out.push('\n');
                }
                out.push_str("Reasoning path:\n");
                for (i, step) in h.reasoning_path.iter().enumerate() {
                    out.push_str(&format!("{}. {step}\n", i + 1));
                }
                out.push('\n');
                for (i, alt) in h.alternative_paths.iter().enumerate() {
                    out.push_str(&format!("Alternative trigger path {}:\n", i + 1));
                    for step in alt {
                        out.push_str(&format!("- {step}\n"));
                    }
                    out.push('\n');
                }
            }
        }

        if !self.filtered.is_empty() {
            out.push_str("## Filtered\n\n");
            for f in &self.filtered {
                out.push_str(&format!(
                    "- `{}` {} at {}:{}, dropped at {:?}: {}\n",
                    f.hypothesis.id,
                    f.hypothesis.category,
                    f.hypothesis.entry_point.0,
                    f.hypothesis.entry_point.1,
                    f.stage,
                    f.rationale
                ));
            }
            out.push('\n');
        }
        if !self.merged.is_empty() {
            out.push_str("## Merged duplicates\n\n");
            for f in &self.merged {
                out.push_str(&format!(
                    "- `{}` merged into `{}`\n",
                    f.hypothesis.id,
                    f.merged_into.as_deref().unwrap_or("?")
                ));
            }
            out.push('\n');
        }

        out.push_str("## Usage\n\n");
        out.push_str("| stage | calls | input tokens | output tokens | cost |\n");
        out.push_str("|---|---|---|---|---|\n");
        for row in &self.usage.rows {
            out.push_str(&format!(
                "| {} | {} | {} | {} | ${:.4} |\n",
                row.stage, row.calls, row.input_tokens, row.output_tokens, row.cost
            ));
        }
        out.push_str(&format!(
            "| **total** | {} | {} | {} | ${:.4} |\n\n",
            self.usage.total_calls,
            self.usage.total_input_tokens,
            self.usage.total_output_tokens,
            self.usage.total_cost
        ));

        if !self.warnings.is_empty() {
            out.push_str("## Warnings\n\n");
            for w in &self.warnings {
                out.push_str(&format!("- [{}] {}\n", w.stage, w.message));
            }
        }
        out
    }
}

/// Builds the filtered/merged partitions of a verdict ledger against the
/// raw hypothesis set.
pub fn partition_verdicts(
    v_raw: &[VulnerabilityHypothesis],
    records: &[VerdictRecord],
) -> (Vec<FilteredFinding>, Vec<FilteredFinding>) {
    let by_id: BTreeMap<&str, &VulnerabilityHypothesis> =
        v_raw.iter().map(|h| (h.id.as_str(), h)).collect();
    let mut filtered = Vec::new();
    let mut merged = Vec::new();
    for record in records {
        let Some(hypothesis) = by_id.get(record.hypothesis_id.as_str()) else {
            continue;
        };
        match &record.verdict {
            Verdict::Dropped => filtered.push(FilteredFinding {
                hypothesis: (*hypothesis).clone(),
                stage: record.stage,
                rationale: record.rationale.clone(),
                merged_into: None,
            }),
            Verdict::MergedInto(target) => merged.push(FilteredFinding {
                hypothesis: (*hypothesis).clone(),
                stage: record.stage,
                rationale: record.rationale.clone(),
                merged_into: Some(target.clone()),
            }),
            Verdict::Kept => {}
        }
    }
    (filtered, merged)
}

/// Writes via a temporary sibling file plus rename.
pub fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    if !dir.as_os_str().is_empty() {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        path.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "report".into()),
        std::process::id()
    ));
    std::fs::write(&tmp, contents)?;
    match std::fs::rename(&tmp, path) {
        Ok(()) => Ok(()),
        Err(e) => {
            let _ = std::fs::remove_file(&tmp);
            Err(e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        write_atomic(&path, "first").unwrap();
        write_atomic(&path, "second").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "second");
        // No temp litter left behind.
        let leftovers: Vec<_> = std::fs::read_dir(dir.path())
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().contains("tmp"))
            .collect();
        assert!(leftovers.is_empty());
    }
}
