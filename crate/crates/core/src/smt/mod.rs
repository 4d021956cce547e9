//! Targeted symbolic constraint solving: the model transpiles a Solidity
//! function into an SMT-LIB v2 deviation query over bit-vectors, realism
//! constraints are appended to exclude impossible states, and a solver runs
//! the script in an isolated subprocess. A bundled bounded solver (`smtbv`)
//! is the default; any SMT-LIB compatible binary (z3 -in, cvc5, ...) drops
//! in via configuration.

pub mod sexpr;
pub mod solver;

use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::facts::{FunctionFact, FunctionKey};
use crate::gateway::{Gateway, GatewayError};
use sexpr::Sexpr;
pub use solver::DEFAULT_BUDGET;

pub const DEFAULT_SOLVER_TIMEOUT_MS: u64 = 10_000;
/// Default cap on amount-like inputs (2^128), per realism constraints.
pub const DEFAULT_AMOUNT_CAP_BITS: u32 = 128;
pub const DEFAULT_ITERATION_CAP: u64 = 256;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SmtOutcome {
    Sat { model_text: String },
    Unsat,
    Unknown { reason: String },
    Timeout,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmtProblem {
    pub function: FunctionKey,
    pub script_text: String,
    pub realism_constraints: Vec<String>,
    pub outcome: SmtOutcome,
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("solver process failed: {0}")]
    Process(String),
    #[error("solver timed out")]
    Timeout,
}

/// Executes SMT-LIB text and returns the raw solver output.
pub trait SolverRunner: Send + Sync {
    fn run(&self, script: &str, timeout_ms: u64) -> Result<String, SolverError>;
    fn describe(&self) -> String;
}

/// Spawns an external solver process per query; the subprocess boundary is
/// the isolation mechanism for untrusted generated scripts.
pub struct SubprocessSolver {
    pub command: PathBuf,
    pub args: Vec<String>,
}

impl SubprocessSolver {
    pub fn new(command: PathBuf, args: Vec<String>) -> Self {
        SubprocessSolver { command, args }
    }

    /// The bundled solver binary installed next to the current executable
    /// (or one directory up, covering cargo's deps/ layout), if present.
    pub fn bundled() -> Option<Self> {
        let exe = std::env::current_exe().ok()?;
        let name = if cfg!(windows) { "smtbv.exe" } else { "smtbv" };
        let dir = exe.parent()?;
        for candidate in [dir.join(name), dir.parent()?.join(name)] {
            if candidate.is_file() {
                return Some(SubprocessSolver::new(candidate, Vec::new()));
            }
        }
        None
    }
}

impl SolverRunner for SubprocessSolver {
    fn run(&self, script: &str, timeout_ms: u64) -> Result<String, SolverError> {
        let mut child = Command::new(&self.command)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| SolverError::Process(format!("spawn {:?}: {e}", self.command)))?;
        child
            .stdin
            .take()
            .expect("stdin piped")
            .write_all(script.as_bytes())
            .map_err(|e| SolverError::Process(format!("write stdin: {e}")))?;
        let deadline = crate::clock::now_ms() + timeout_ms;
        loop {
            match child.try_wait() {
                Ok(Some(_status)) => break,
                Ok(None) => {
                    if crate::clock::now_ms() > deadline {
                        let _ = child.kill();
                        let _ = child.wait();
                        return Err(SolverError::Timeout);
                    }
                    crate::clock::sleep_ms(5);
                }
                Err(e) => return Err(SolverError::Process(e.to_string())),
            }
        }
        let output = child
            .wait_with_output()
            .map_err(|e| SolverError::Process(e.to_string()))?;
        Ok(String::from_utf8_lossy(&output.stdout).into_owned())
    }

    fn describe(&self) -> String {
        format!("subprocess {:?}", self.command)
    }
}

/// Runs the bundled bounded solver in-process. Used where subprocesses are
/// unavailable (unit tests, non-native targets); the CLI default stays the
/// subprocess runner.
pub struct InProcessSolver {
    pub budget: u64,
}

impl Default for InProcessSolver {
    fn default() -> Self {
        InProcessSolver {
            budget: DEFAULT_BUDGET,
        }
    }
}

impl SolverRunner for InProcessSolver {
    fn run(&self, script: &str, _timeout_ms: u64) -> Result<String, SolverError> {
        Ok(solver::run_text(script, self.budget))
    }

    fn describe(&self) -> String {
        "in-process bounded solver".into()
    }
}

/// Parses solver stdout into an outcome. Anything without a definite
/// sat/unsat verdict (parse errors included) is Unknown with the message.
pub fn parse_solver_output(raw: &str) -> SmtOutcome {
    let mut verdict = None;
    let mut errors = Vec::new();
    let mut model_lines = Vec::new();
    let mut in_model = false;
    for line in raw.lines() {
        let trimmed = line.trim();
        match trimmed {
            "sat" => {
                verdict = Some("sat");
                in_model = true;
                continue;
            }
            "unsat" => {
                verdict = Some("unsat");
                continue;
            }
            "unknown" => {
                if verdict.is_none() {
                    verdict = Some("unknown");
                }
                continue;
            }
            _ => {}
        }
        if trimmed.starts_with("(error") {
            errors.push(trimmed.to_string());
            continue;
        }
        if in_model {
            model_lines.push(line.to_string());
        }
    }
    match verdict {
        Some("sat") => SmtOutcome::Sat {
            model_text: model_lines.join("\n"),
        },
        Some("unsat") => SmtOutcome::Unsat,
        _ => SmtOutcome::Unknown {
            reason: if errors.is_empty() {
                format!("no verdict in solver output: {}", raw.trim())
            } else {
                errors.join("; ")
            },
        },
    }
}

/// Extracts `(define-fun name () sort value)` bindings from a model text.
pub fn parse_model_bindings(model_text: &str) -> Vec<(String, String)> {
    let Ok(exprs) = sexpr::parse_all(model_text) else {
        return Vec::new();
    };
    let mut bindings = Vec::new();
    let mut visit = |items: &[Sexpr]| {
        if items.len() >= 5 && items[0].atom() == Some("define-fun") {
            if let Some(name) = items[1].atom() {
                bindings.push((name.to_string(), items[4].to_string()));
            }
        }
    };
    for expr in &exprs {
        if let Some(items) = expr.list() {
            if items.first().and_then(|h| h.atom()) == Some("define-fun") {
                visit(items);
            } else {
                for inner in items {
                    if let Some(inner_items) = inner.list() {
                        visit(inner_items);
                    }
                }
            }
        }
    }
    bindings
}

/// Name-driven realism constraints: amount-like inputs are capped, loop
/// iteration counts are bounded, balance-like symbols stay non-negative
/// (spelled explicitly even though unsigned bit-vectors imply it).
pub fn default_realism(script: &str, amount_cap_bits: u32, iteration_cap: u64) -> Vec<String> {
    let Ok(parsed) = solver::parse_script(script) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for (name, sort) in &parsed.consts {
        let solver::Sort::BitVec(width) = sort else {
            continue;
        };
        let lower = name.to_lowercase();
        if lower.contains("balance") {
            out.push(format!("(assert (bvuge {name} (_ bv0 {width})))"));
        }
        if lower.contains("amount") || lower.contains("amt") || lower.contains("input") {
            if *width > amount_cap_bits {
                let cap = num_bigint::BigUint::from(1u8) << amount_cap_bits;
                out.push(format!("(assert (bvule {name} (_ bv{cap} {width})))"));
            }
        }
        if lower.contains("iter") || lower.contains("rounds") || lower.contains("loops") {
            out.push(format!(
                "(assert (bvule {name} (_ bv{iteration_cap} {width})))"
            ));
        }
    }
    out
}

/// Strips any trailing control commands the model may have emitted so the
/// realism constraints land before the single (check-sat).
fn sanitize_script(script: &str) -> String {
    script
        .lines()
        .filter(|line| {
            let t = line.trim();
            !(t == "(check-sat)" || t == "(get-model)" || t == "(exit)")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Extracts SMT-LIB text from a model reply that may be fenced in markdown.
pub fn extract_smt_script(reply: &str) -> String {
    let text = reply.trim();
    if let Some(start) = text.find("```") {
        let after = &text[start + 3..];
        let after = after
            .trim_start_matches("smt2")
            .trim_start_matches("smtlib")
            .trim_start_matches("lisp")
            .trim_start_matches("scheme");
        if let Some(end) = after.find("```") {
            return after[..end].trim().to_string();
        }
    }
    text.to_string()
}

pub const TRANSPILE_SYSTEM_PROMPT: &str = "Translate the Solidity function into an SMT-LIB v2 \
script over bit-vectors: map uint256 to (_ BitVec 256), model require() as assertions, and \
encode the deviation query 'there exist inputs for which the computed value differs from the \
exact rational result'. Declare every symbol you use. Do not emit (check-sat) or (get-model).";

/// Asks the model for the SMT encoding of `function`, appends realism
/// constraints, and runs the solver. Script-level failures become Unknown;
/// solver timeouts become Timeout.
pub fn transpile_and_solve(
    function: &FunctionFact,
    gateway: &Gateway,
    runner: &dyn SolverRunner,
    realism: &[String],
    timeout_ms: u64,
) -> Result<SmtProblem, GatewayError> {
    let reply = gateway.complete(
        "smt.transpile",
        TRANSPILE_SYSTEM_PROMPT,
        &format!(
            "function {}.{}\n```solidity\n{}\n```",
            function.contract, function.signature, function.body_text
        ),
    )?;
    let base_script = sanitize_script(&extract_smt_script(&reply));
    let mut realism_constraints: Vec<String> = realism.to_vec();
    realism_constraints.extend(default_realism(
        &base_script,
        DEFAULT_AMOUNT_CAP_BITS,
        DEFAULT_ITERATION_CAP,
    ));
    realism_constraints.sort();
    realism_constraints.dedup();

    let mut script_text = base_script;
    for constraint in &realism_constraints {
        script_text.push('\n');
        script_text.push_str(constraint);
    }
    script_text.push_str("\n(check-sat)\n(get-model)\n");

    let outcome = match runner.run(&script_text, timeout_ms) {
        Ok(raw) => parse_solver_output(&raw),
        Err(SolverError::Timeout) => SmtOutcome::Timeout,
        Err(SolverError::Process(message)) => SmtOutcome::Unknown { reason: message },
    };
    Ok(SmtProblem {
        function: function.key(),
        script_text,
        realism_constraints,
        outcome,
    })
}

/// Replays a Sat problem with the model values pinned by equality asserts;
/// a valid counterexample must re-check sat.
pub fn recheck_sat(
    problem: &SmtProblem,
    runner: &dyn SolverRunner,
    timeout_ms: u64,
) -> Result<bool, SolverError> {
    let SmtOutcome::Sat { model_text } = &problem.outcome else {
        return Ok(false);
    };
    let bindings = parse_model_bindings(model_text);
    if bindings.is_empty() {
        return Ok(false);
    }
    let mut script = sanitize_script(&problem.script_text);
    for (name, value) in &bindings {
        script.push_str(&format!("\n(assert (= {name} {value}))"));
    }
    script.push_str("\n(check-sat)\n");
    let raw = runner.run(&script, timeout_ms)?;
    Ok(matches!(parse_solver_output(&raw), SmtOutcome::Sat { .. }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_parsing_variants() {
        assert_eq!(parse_solver_output("unsat\n"), SmtOutcome::Unsat);
        match parse_solver_output("sat\n(\n  (define-fun x () (_ BitVec 8) #x01)\n)\n") {
            SmtOutcome::Sat { model_text } => assert!(model_text.contains("define-fun x")),
            other => panic!("expected sat, got {other:?}"),
        }
        assert!(matches!(
            parse_solver_output("(error \"bad input\")\nunknown\n"),
            SmtOutcome::Unknown { .. }
        ));
        assert!(matches!(
            parse_solver_output(""),
            SmtOutcome::Unknown { .. }
        ));
    }

    #[test]
    fn model_binding_extraction() {
        let model = "(\n  (define-fun x () (_ BitVec 256) #x02)\n  (define-fun flag () Bool true)\n)";
        let bindings = parse_model_bindings(model);
        assert_eq!(bindings.len(), 2);
        assert_eq!(bindings[0], ("x".into(), "#x02".into()));
        assert_eq!(bindings[1], ("flag".into(), "true".into()));
    }

    #[test]
    fn realism_defaults_follow_names() {
        let script = "(declare-const amountIn (_ BitVec 256))\n(declare-const iterations (_ BitVec 256))\n(declare-const balanceOf (_ BitVec 256))";
        let realism = default_realism(script, 128, 256);
        assert!(realism.iter().any(|r| r.contains("amountIn") && r.contains("bvule")));
        assert!(realism.iter().any(|r| r.contains("iterations") && r.contains("bv256")));
        assert!(realism.iter().any(|r| r.contains("balanceOf") && r.contains("bvuge")));
    }

    #[test]
    fn fenced_script_extracted() {
        let reply = "Here is the encoding:\n```smt2\n(declare-const x (_ BitVec 8))\n(assert (= x #x01))\n```\nDone.";
        let script = extract_smt_script(reply);
        assert!(script.starts_with("(declare-const"));
        assert!(!script.contains("```"));
    }
}
