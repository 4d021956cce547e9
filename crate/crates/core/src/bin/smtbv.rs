//! Bounded bit-vector SMT solver, stdin to stdout.
//!
//! Reads an SMT-LIB v2 script on stdin, prints `sat`/`unsat`/`unknown` at
//! `(check-sat)`, and the model at `(get-model)` when sat. Parse failures
//! print an `(error ...)` line followed by `unknown`, matching the behavior
//! callers expect from conventional solvers.

use std::io::Read;

use solaudit::smt::solver::{run_text, DEFAULT_BUDGET};

fn main() {
    let mut budget = DEFAULT_BUDGET;
    let mut args = std::env::args().skip(1);
    while let Some(arg) = args.next() {
        match arg.as_str() {
            "--budget" => {
                budget = args
                    .next()
                    .and_then(|v| v.parse().ok())
                    .unwrap_or(DEFAULT_BUDGET);
            }
            "--help" | "-h" => {
                println!("usage: smtbv [--budget N] < script.smt2");
                return;
            }
            _ => {}
        }
    }
    let mut script = String::new();
    if std::io::stdin().read_to_string(&mut script).is_err() {
        println!("(error \"failed to read stdin\")");
        println!("unknown");
        return;
    }
    print!("{}", run_text(&script, budget));
}
