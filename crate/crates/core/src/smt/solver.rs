//! Bounded solver for quantifier-free bit-vector scripts.
//!
//! Strategy: tighten per-variable domains from unary bound assertions, then
//! enumerate the cross product exhaustively when it fits the budget (giving
//! a definite sat/unsat over the constrained domain), otherwise probe a
//! deterministic set of candidate values (small values, bounds, literals,
//! powers of two) and answer sat or unknown. Intended for the toy-scale
//! deviation queries this pipeline emits; a full SMT solver can replace the
//! subprocess without touching callers.

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};

use super::sexpr::{parse_all, Sexpr};

pub const DEFAULT_BUDGET: u64 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sort {
    Bool,
    BitVec(u32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Value {
    Bool(bool),
    Bits { width: u32, value: BigUint },
}

impl Value {
    pub fn render(&self) -> String {
        match self {
            Value::Bool(b) => b.to_string(),
            Value::Bits { width, value } => {
                if width % 4 == 0 {
                    format!("#x{:0>width$}", value.to_str_radix(16), width = (*width as usize) / 4)
                } else {
                    format!("#b{:0>width$}", value.to_str_radix(2), width = *width as usize)
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Script {
    pub consts: Vec<(String, Sort)>,
    /// Zero-arity define-funs in declaration order.
    pub defs: Vec<(String, Sexpr)>,
    pub asserts: Vec<Sexpr>,
    pub check_sat: bool,
    pub get_model: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Sat(Vec<(String, Value)>),
    Unsat,
    Unknown(String),
}

pub fn parse_script(text: &str) -> Result<Script, String> {
    let exprs = parse_all(text)?;
    let mut script = Script {
        consts: Vec::new(),
        defs: Vec::new(),
        asserts: Vec::new(),
        check_sat: false,
        get_model: false,
    };
    for expr in exprs {
        let Some(items) = expr.list() else {
            return Err(format!("unexpected top-level atom '{expr}'"));
        };
        let Some(head) = items.first().and_then(|h| h.atom()) else {
            return Err(format!("malformed command '{expr}'"));
        };
        match head {
            "set-logic" | "set-option" | "set-info" | "exit" | "echo" => {}
            "declare-const" => {
                let name = items
                    .get(1)
                    .and_then(|n| n.atom())
                    .ok_or("declare-const needs a symbol")?;
                let sort = parse_sort(items.get(2).ok_or("declare-const needs a sort")?)?;
                script.consts.push((name.to_string(), sort));
            }
            "declare-fun" => {
                let name = items
                    .get(1)
                    .and_then(|n| n.atom())
                    .ok_or("declare-fun needs a symbol")?;
                let args = items
                    .get(2)
                    .and_then(|a| a.list())
                    .ok_or("declare-fun needs an argument list")?;
                if !args.is_empty() {
                    return Err(format!("uninterpreted function '{name}' with arguments is unsupported"));
                }
                let sort = parse_sort(items.get(3).ok_or("declare-fun needs a sort")?)?;
                script.consts.push((name.to_string(), sort));
            }
            "define-fun" => {
                let name = items
                    .get(1)
                    .and_then(|n| n.atom())
                    .ok_or("define-fun needs a symbol")?;
                let args = items
                    .get(2)
                    .and_then(|a| a.list())
                    .ok_or("define-fun needs an argument list")?;
                if !args.is_empty() {
                    return Err(format!("define-fun '{name}' with arguments is unsupported"));
                }
                let body = items.get(4).ok_or("define-fun needs a body")?;
                script.defs.push((name.to_string(), body.clone()));
            }
            "assert" => {
                let body = items.get(1).ok_or("assert needs a term")?;
                script.asserts.push(body.clone());
            }
            "check-sat" => script.check_sat = true,
            "get-model" => script.get_model = true,
            other => return Err(format!("unsupported command '{other}'")),
        }
    }
    Ok(script)
}

fn parse_sort(expr: &Sexpr) -> Result<Sort, String> {
    if let Some("Bool") = expr.atom() {
        return Ok(Sort::Bool);
    }
    if let Some(items) = expr.list() {
        if items.len() == 3
            && items[0].atom() == Some("_")
            && items[1].atom() == Some("BitVec")
        {
            let width: u32 = items[2]
                .atom()
                .and_then(|w| w.parse().ok())
                .ok_or("bad BitVec width")?;
            return Ok(Sort::BitVec(width));
        }
    }
    Err(format!("unsupported sort '{expr}'"))
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvalCtx<'a> {
    env: &'a BTreeMap<String, Value>,
    defs: &'a BTreeMap<String, &'a Sexpr>,
}

fn mask(width: u32) -> BigUint {
    (BigUint::one() << width) - BigUint::one()
}

fn eval(expr: &Sexpr, ctx: &EvalCtx, lets: &mut Vec<(String, Value)>) -> Result<Value, String> {
    match expr {
        Sexpr::Atom(atom) => {
            if let Some(v) = lets.iter().rev().find(|(n, _)| n == atom) {
                return Ok(v.1.clone());
            }
            if let Some(v) = ctx.env.get(atom) {
                return Ok(v.clone());
            }
            if let Some(body) = ctx.defs.get(atom) {
                return eval(body, ctx, lets);
            }
            match atom.as_str() {
                "true" => return Ok(Value::Bool(true)),
                "false" => return Ok(Value::Bool(false)),
                _ => {}
            }
            if let Some(hex) = atom.strip_prefix("#x") {
                let value = BigUint::parse_bytes(hex.as_bytes(), 16)
                    .ok_or_else(|| format!("bad hex literal '{atom}'"))?;
                return Ok(Value::Bits {
                    width: 4 * hex.len() as u32,
                    value,
                });
            }
            if let Some(bits) = atom.strip_prefix("#b") {
                let value = BigUint::parse_bytes(bits.as_bytes(), 2)
                    .ok_or_else(|| format!("bad binary literal '{atom}'"))?;
                return Ok(Value::Bits {
                    width: bits.len() as u32,
                    value,
                });
            }
            Err(format!("unbound symbol '{atom}'"))
        }
        Sexpr::List(items) => {
            let head = items
                .first()
                .and_then(|h| h.atom())
                .ok_or_else(|| format!("cannot apply '{expr}'"))?;
            match head {
                "_" => {
                    // (_ bvN width)
                    let lit = items
                        .get(1)
                        .and_then(|a| a.atom())
                        .and_then(|a| a.strip_prefix("bv"))
                        .ok_or_else(|| format!("unsupported indexed term '{expr}'"))?;
                    let width: u32 = items
                        .get(2)
                        .and_then(|a| a.atom())
                        .and_then(|a| a.parse().ok())
                        .ok_or("bad bv literal width")?;
                    let value = BigUint::parse_bytes(lit.as_bytes(), 10)
                        .ok_or_else(|| format!("bad bv literal '{lit}'"))?;
                    Ok(Value::Bits {
                        width,
                        value: value & mask(width),
                    })
                }
                "let" => {
                    let bindings = items
                        .get(1)
                        .and_then(|b| b.list())
                        .ok_or("let needs bindings")?;
                    let body = items.get(2).ok_or("let needs a body")?;
                    let mut added = 0;
                    for binding in bindings {
                        let pair = binding.list().ok_or("bad let binding")?;
                        let name = pair
                            .first()
                            .and_then(|n| n.atom())
                            .ok_or("bad let binding name")?;
                        let value = eval(pair.get(1).ok_or("bad let binding body")?, ctx, lets)?;
                        lets.push((name.to_string(), value));
                        added += 1;
                    }
                    let result = eval(body, ctx, lets);
                    lets.truncate(lets.len() - added);
                    result
                }
                "ite" => {
                    let cond = eval_bool(items.get(1).ok_or("ite needs 3 args")?, ctx, lets)?;
                    if cond {
                        eval(items.get(2).ok_or("ite needs 3 args")?, ctx, lets)
                    } else {
                        eval(items.get(3).ok_or("ite needs 3 args")?, ctx, lets)
                    }
                }
                "not" => Ok(Value::Bool(!eval_bool(
                    items.get(1).ok_or("not needs 1 arg")?,
                    ctx,
                    lets,
                )?)),
                "and" => {
                    for arg in &items[1..] {
                        if !eval_bool(arg, ctx, lets)? {
                            return Ok(Value::Bool(false));
                        }
                    }
                    Ok(Value::Bool(true))
                }
                "or" => {
                    for arg in &items[1..] {
                        if eval_bool(arg, ctx, lets)? {
                            return Ok(Value::Bool(true));
                        }
                    }
                    Ok(Value::Bool(false))
                }
                "xor" => {
                    let mut acc = false;
                    for arg in &items[1..] {
                        acc ^= eval_bool(arg, ctx, lets)?;
                    }
                    Ok(Value::Bool(acc))
                }
                "=>" => {
                    let a = eval_bool(items.get(1).ok_or("=> needs 2 args")?, ctx, lets)?;
                    let b = eval_bool(items.get(2).ok_or("=> needs 2 args")?, ctx, lets)?;
                    Ok(Value::Bool(!a || b))
                }
                "=" => {
                    let first = eval(items.get(1).ok_or("= needs args")?, ctx, lets)?;
                    for arg in &items[2..] {
                        if eval(arg, ctx, lets)? != first {
                            return Ok(Value::Bool(false));
                        }
                    }
                    Ok(Value::Bool(true))
                }
                "distinct" => {
                    let mut seen = Vec::new();
                    for arg in &items[1..] {
                        let v = eval(arg, ctx, lets)?;
                        if seen.contains(&v) {
                            return Ok(Value::Bool(false));
                        }
                        seen.push(v);
                    }
                    Ok(Value::Bool(true))
                }
                "bvule" | "bvult" | "bvuge" | "bvugt" => {
                    let (a, b, _) = eval_bits2(head, items, ctx, lets)?;
                    Ok(Value::Bool(match head {
                        "bvule" => a <= b,
                        "bvult" => a < b,
                        "bvuge" => a >= b,
                        _ => a > b,
                    }))
                }
                "bvnot" | "bvneg" => {
                    let v = eval(items.get(1).ok_or("unary bv op needs 1 arg")?, ctx, lets)?;
                    let Value::Bits { width, value } = v else {
                        return Err(format!("{head} applied to a Bool"));
                    };
                    let m = mask(width);
                    let value = match head {
                        "bvnot" => value ^ &m,
                        _ => ((&m + BigUint::one()) - value) & &m, // bvneg
                    };
                    Ok(Value::Bits { width, value })
                }
                "bvadd" | "bvsub" | "bvmul" | "bvudiv" | "bvurem" | "bvand" | "bvor"
                | "bvxor" | "bvshl" | "bvlshr" => {
                    let mut args = items[1..].iter();
                    let first = eval(args.next().ok_or("bv op needs args")?, ctx, lets)?;
                    let Value::Bits {
                        width,
                        value: mut acc,
                    } = first
                    else {
                        return Err(format!("{head} applied to a Bool"));
                    };
                    let m = mask(width);
                    for arg in args {
                        let v = eval(arg, ctx, lets)?;
                        let Value::Bits { width: w2, value: b } = v else {
                            return Err(format!("{head} applied to a Bool"));
                        };
                        if w2 != width {
                            return Err(format!("width mismatch in {head}: {width} vs {w2}"));
                        }
                        acc = match head {
                            "bvadd" => (acc + b) & &m,
                            "bvsub" => (acc + ((&m - &b) + BigUint::one())) & &m,
                            "bvmul" => (acc * b) & &m,
                            "bvudiv" => {
                                if b.is_zero() {
                                    m.clone()
                                } else {
                                    acc / b
                                }
                            }
                            "bvurem" => {
                                if b.is_zero() {
                                    acc
                                } else {
                                    acc % b
                                }
                            }
                            "bvand" => acc & b,
                            "bvor" => acc | b,
                            "bvxor" => acc ^ b,
                            "bvshl" => match b.to_u64() {
                                Some(shift) if shift < width as u64 => (acc << shift) & &m,
                                _ => BigUint::zero(),
                            },
                            _ => match b.to_u64() {
                                // bvlshr
                                Some(shift) if shift < width as u64 => acc >> shift,
                                _ => BigUint::zero(),
                            },
                        };
                    }
                    Ok(Value::Bits { width, value: acc })
                }
                other => Err(format!("unsupported operator '{other}'")),
            }
        }
    }
}

fn eval_bool(expr: &Sexpr, ctx: &EvalCtx, lets: &mut Vec<(String, Value)>) -> Result<bool, String> {
    match eval(expr, ctx, lets)? {
        Value::Bool(b) => Ok(b),
        Value::Bits { .. } => Err(format!("expected Bool, got bit-vector in '{expr}'")),
    }
}

fn eval_bits2(
    op: &str,
    items: &[Sexpr],
    ctx: &EvalCtx,
    lets: &mut Vec<(String, Value)>,
) -> Result<(BigUint, BigUint, u32), String> {
    let a = eval(items.get(1).ok_or_else(|| format!("{op} needs 2 args"))?, ctx, lets)?;
    let b = eval(items.get(2).ok_or_else(|| format!("{op} needs 2 args"))?, ctx, lets)?;
    match (a, b) {
        (
            Value::Bits { width: w1, value: a },
            Value::Bits { width: w2, value: b },
        ) if w1 == w2 => Ok((a, b, w1)),
        _ => Err(format!("{op} needs two bit-vectors of equal width")),
    }
}

// ---------------------------------------------------------------------------
// Solving
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct Domain {
    lo: BigUint,
    hi: BigUint,
    boolean: bool,
    width: u32,
}

impl Domain {
    fn size(&self) -> BigUint {
        if self.boolean {
            BigUint::from(2u32)
        } else if self.lo > self.hi {
            BigUint::zero()
        } else {
            (&self.hi - &self.lo) + BigUint::one()
        }
    }
}

pub fn solve_script(script: &Script, budget: u64) -> Outcome {
    let defs: BTreeMap<String, &Sexpr> = script
        .defs
        .iter()
        .map(|(n, b)| (n.clone(), b))
        .collect();

    let mut domains: BTreeMap<String, Domain> = BTreeMap::new();
    for (name, sort) in &script.consts {
        let domain = match sort {
            Sort::Bool => Domain {
                lo: BigUint::zero(),
                hi: BigUint::one(),
                boolean: true,
                width: 1,
            },
            Sort::BitVec(width) => Domain {
                lo: BigUint::zero(),
                hi: mask(*width),
                boolean: false,
                width: *width,
            },
        };
        domains.insert(name.clone(), domain);
    }

    // Tighten domains from unary bound assertions.
    for assert in &script.asserts {
        propagate_bounds(assert, &mut domains);
    }
    if domains
        .values()
        .any(|d| !d.boolean && d.lo > d.hi)
    {
        return Outcome::Unsat; // contradictory unary bounds
    }

    // Dependency sets per assert (through defs) for early pruning.
    let def_deps = def_dependencies(script, &domains);
    let assert_deps: Vec<BTreeSet<String>> = script
        .asserts
        .iter()
        .map(|a| free_consts(a, &domains, &def_deps))
        .collect();

    // Closed asserts never trigger inside the search; settle them now.
    for (assert, deps) in script.asserts.iter().zip(&assert_deps) {
        if deps.is_empty() {
            let ctx = EvalCtx {
                env: &BTreeMap::new(),
                defs: &defs,
            };
            match eval_bool(assert, &ctx, &mut Vec::new()) {
                Ok(true) => {}
                Ok(false) => return Outcome::Unsat,
                Err(e) => return Outcome::Unknown(e),
            }
        }
    }

    let mut order: Vec<(String, Domain)> = domains
        .iter()
        .map(|(n, d)| (n.clone(), d.clone()))
        .collect();
    order.sort_by(|a, b| a.1.size().cmp(&b.1.size()).then_with(|| a.0.cmp(&b.0)));

    let total: BigUint = order
        .iter()
        .fold(BigUint::one(), |acc, (_, d)| acc * d.size());
    let exhaustive = total <= BigUint::from(budget);

    let candidates: Vec<(String, Vec<Value>)> = order
        .iter()
        .map(|(name, domain)| {
            let values = if exhaustive {
                enumerate_domain(domain)
            } else {
                probe_candidates(domain, script)
            };
            (name.clone(), values)
        })
        .collect();

    let mut env: BTreeMap<String, Value> = BTreeMap::new();
    let mut assigned: BTreeSet<String> = BTreeSet::new();
    match dfs(
        0,
        &candidates,
        &mut env,
        &mut assigned,
        script,
        &defs,
        &assert_deps,
    ) {
        Ok(Some(model)) => Outcome::Sat(model),
        Ok(None) => {
            if exhaustive {
                Outcome::Unsat
            } else {
                Outcome::Unknown(format!(
                    "domain of {total} assignments exceeds search budget {budget}; probing found no model"
                ))
            }
        }
        Err(message) => Outcome::Unknown(message),
    }
}

#[allow(clippy::too_many_arguments)]
fn dfs(
    level: usize,
    candidates: &[(String, Vec<Value>)],
    env: &mut BTreeMap<String, Value>,
    assigned: &mut BTreeSet<String>,
    script: &Script,
    defs: &BTreeMap<String, &Sexpr>,
    assert_deps: &[BTreeSet<String>],
) -> Result<Option<Vec<(String, Value)>>, String> {
    if level == candidates.len() {
        // All asserts were already checked as their dependencies completed.
        let model = candidates
            .iter()
            .map(|(n, _)| (n.clone(), env[n].clone()))
            .collect();
        return Ok(Some(model));
    }
    let (name, values) = &candidates[level];
    assigned.insert(name.clone());
    for value in values {
        env.insert(name.clone(), value.clone());
        let mut feasible = true;
        for (assert, deps) in script.asserts.iter().zip(assert_deps) {
            // Evaluate each assert exactly once: at the level where its last
            // dependency got assigned.
            if !deps.contains(name) || !deps.iter().all(|d| assigned.contains(d)) {
                continue;
            }
            let ctx = EvalCtx { env, defs };
            match eval_bool(assert, &ctx, &mut Vec::new()) {
                Ok(true) => {}
                Ok(false) => {
                    feasible = false;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if feasible {
            if let Some(model) = dfs(level + 1, candidates, env, assigned, script, defs, assert_deps)?
            {
                return Ok(Some(model));
            }
        }
    }
    env.remove(name);
    assigned.remove(name);
    Ok(None)
}

fn def_dependencies(
    script: &Script,
    domains: &BTreeMap<String, Domain>,
) -> BTreeMap<String, BTreeSet<String>> {
    let mut deps: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (name, body) in &script.defs {
        let mut set = BTreeSet::new();
        collect_idents(body, &mut set);
        let mut resolved = BTreeSet::new();
        for ident in set {
            if domains.contains_key(&ident) {
                resolved.insert(ident);
            } else if let Some(inner) = deps.get(&ident) {
                resolved.extend(inner.iter().cloned());
            }
        }
        deps.insert(name.clone(), resolved);
    }
    deps
}

fn free_consts(
    expr: &Sexpr,
    domains: &BTreeMap<String, Domain>,
    def_deps: &BTreeMap<String, BTreeSet<String>>,
) -> BTreeSet<String> {
    let mut idents = BTreeSet::new();
    collect_idents(expr, &mut idents);
    let mut out = BTreeSet::new();
    for ident in idents {
        if domains.contains_key(&ident) {
            out.insert(ident);
        } else if let Some(inner) = def_deps.get(&ident) {
            out.extend(inner.iter().cloned());
        }
    }
    out
}

fn collect_idents(expr: &Sexpr, out: &mut BTreeSet<String>) {
    match expr {
        Sexpr::Atom(a) => {
            out.insert(a.clone());
        }
        Sexpr::List(items) => {
            for item in items {
                collect_idents(item, out);
            }
        }
    }
}

fn literal_value(expr: &Sexpr) -> Option<BigUint> {
    match expr {
        Sexpr::Atom(a) => {
            if let Some(hex) = a.strip_prefix("#x") {
                return BigUint::parse_bytes(hex.as_bytes(), 16);
            }
            if let Some(bits) = a.strip_prefix("#b") {
                return BigUint::parse_bytes(bits.as_bytes(), 2);
            }
            None
        }
        Sexpr::List(items) => {
            if items.len() == 3 && items[0].atom() == Some("_") {
                if let Some(lit) = items[1].atom().and_then(|a| a.strip_prefix("bv")) {
                    return BigUint::parse_bytes(lit.as_bytes(), 10);
                }
            }
            None
        }
    }
}

fn propagate_bounds(assert: &Sexpr, domains: &mut BTreeMap<String, Domain>) {
    let Some(items) = assert.list() else { return };
    let Some(head) = items.first().and_then(|h| h.atom()) else {
        return;
    };
    if head == "and" {
        for conjunct in &items[1..] {
            propagate_bounds(conjunct, domains);
        }
        return;
    }
    if items.len() != 3 {
        return;
    }
    let (lhs, rhs) = (&items[1], &items[2]);
    let var_lit = |a: &Sexpr, b: &Sexpr| -> Option<(String, BigUint)> {
        let name = a.atom()?;
        if !domains.contains_key(name) {
            return None;
        }
        Some((name.to_string(), literal_value(b)?))
    };
    // x OP lit
    if let Some((name, lit)) = var_lit(lhs, rhs) {
        let d = domains.get_mut(&name).unwrap();
        match head {
            "bvule" => d.hi = d.hi.clone().min(lit),
            "bvult" => {
                if lit.is_zero() {
                    d.hi = BigUint::zero();
                    d.lo = BigUint::one(); // empty
                } else {
                    d.hi = d.hi.clone().min(lit - BigUint::one());
                }
            }
            "bvuge" => d.lo = d.lo.clone().max(lit),
            "bvugt" => d.lo = d.lo.clone().max(lit + BigUint::one()),
            "=" => {
                d.lo = d.lo.clone().max(lit.clone());
                d.hi = d.hi.clone().min(lit);
            }
            _ => {}
        }
        return;
    }
    // lit OP x  (mirror the comparison)
    if let Some((name, lit)) = var_lit(rhs, lhs) {
        let d = domains.get_mut(&name).unwrap();
        match head {
            "bvule" => d.lo = d.lo.clone().max(lit),
            "bvult" => d.lo = d.lo.clone().max(lit + BigUint::one()),
            "bvuge" => d.hi = d.hi.clone().min(lit),
            "bvugt" => {
                if lit.is_zero() {
                    d.hi = BigUint::zero();
                    d.lo = BigUint::one(); // empty
                } else {
                    d.hi = d.hi.clone().min(lit - BigUint::one());
                }
            }
            "=" => {
                d.lo = d.lo.clone().max(lit.clone());
                d.hi = d.hi.clone().min(lit);
            }
            _ => {}
        }
    }
}

fn enumerate_domain(domain: &Domain) -> Vec<Value> {
    if domain.boolean {
        return vec![Value::Bool(false), Value::Bool(true)];
    }
    let mut out = Vec::new();
    let mut v = domain.lo.clone();
    while v <= domain.hi {
        out.push(Value::Bits {
            width: domain.width,
            value: v.clone(),
        });
        v += BigUint::one();
    }
    out
}

/// Deterministic probe set: domain edges, small offsets, script literals and
/// powers of two clamped into range.
fn probe_candidates(domain: &Domain, script: &Script) -> Vec<Value> {
    if domain.boolean {
        return vec![Value::Bool(false), Value::Bool(true)];
    }
    let mut set: BTreeSet<BigUint> = BTreeSet::new();
    let mut add = |v: BigUint| {
        if v >= domain.lo && v <= domain.hi {
            set.insert(v);
        }
    };
    for offset in 0u32..8 {
        add(&domain.lo + BigUint::from(offset));
        if domain.hi >= BigUint::from(offset) {
            add(&domain.hi - BigUint::from(offset));
        }
    }
    let mut literals = BTreeSet::new();
    for assert in &script.asserts {
        collect_literals(assert, &mut literals);
    }
    for (_, body) in &script.defs {
        collect_literals(body, &mut literals);
    }
    for lit in literals {
        add(lit.clone());
        add(&lit + BigUint::one());
        if lit > BigUint::zero() {
            add(&lit - BigUint::one());
        }
    }
    let max_pow = domain.width.min(130);
    for p in 0..max_pow {
        let v = BigUint::one() << p;
        add(v.clone());
        add(&v + BigUint::one());
        add(&v - BigUint::one());
    }
    set.into_iter()
        .take(64)
        .map(|value| Value::Bits {
            width: domain.width,
            value,
        })
        .collect()
}

fn collect_literals(expr: &Sexpr, out: &mut BTreeSet<BigUint>) {
    if let Some(lit) = literal_value(expr) {
        out.insert(lit);
        return;
    }
    if let Some(items) = expr.list() {
        for item in items {
            collect_literals(item, out);
        }
    }
}

/// Renders a model in the `(define-fun name () sort value)` shape solvers
/// conventionally print.
pub fn render_model(model: &[(String, Value)]) -> String {
    let mut out = String::from("(\n");
    for (name, value) in model {
        let sort = match value {
            Value::Bool(_) => "Bool".to_string(),
            Value::Bits { width, .. } => format!("(_ BitVec {width})"),
        };
        out.push_str(&format!(
            "  (define-fun {name} () {sort} {})\n",
            value.render()
        ));
    }
    out.push_str(")\n");
    out
}

/// Full pipeline over script text, as the `smtbv` binary runs it.
pub fn run_text(text: &str, budget: u64) -> String {
    let script = match parse_script(text) {
        Ok(s) => s,
        Err(e) => {
            return format!("(error \"{}\")\nunknown\n", e.replace('"', "'"));
        }
    };
    if !script.check_sat {
        return String::new();
    }
    match solve_script(&script, budget) {
        Outcome::Sat(model) => {
            let mut out = String::from("sat\n");
            if script.get_model {
                out.push_str(&render_model(&model));
            }
            out
        }
        Outcome::Unsat => "unsat\n".into(),
        Outcome::Unknown(reason) => {
            format!("(error \"{}\")\nunknown\n", reason.replace('"', "'"))
        }
    }
}
