//! Lightweight Solidity scanner. This is not a full parser: it recovers the
//! declaration structure (contracts, functions, state variables), call sites
//! and state-variable accesses by lexical analysis over comment- and
//! string-stripped source. Exotic constructs (assembly, shadowing locals,
//! proxy dispatch) are out of scope; a full analyzer can feed the pipeline
//! through the JSON fact file instead.

use std::collections::{BTreeMap, BTreeSet};

use super::{
    AccessMode, CallFact, ContractFact, ContractKind, FactError, FactSet, FunctionFact,
    FunctionKey, ParseWarning, StateAccessFact, Visibility,
};

/// Result of scanning a set of sources: the facts plus per-file warnings.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub facts: FactSet,
    pub warnings: Vec<ParseWarning>,
}

/// Configurable heuristic for flagging standard-library/template contracts.
#[derive(Debug, Clone)]
pub struct TemplateHeuristic {
    /// Case-insensitive substrings of the source path.
    pub path_markers: Vec<String>,
    /// Exact contract names.
    pub template_names: Vec<String>,
}

impl Default for TemplateHeuristic {
    fn default() -> Self {
        TemplateHeuristic {
            path_markers: vec![
                "openzeppelin".into(),
                "solmate".into(),
                "node_modules".into(),
            ],
            template_names: vec![
                "ERC20".into(),
                "ERC721".into(),
                "Ownable".into(),
                "ReentrancyGuard".into(),
                "SafeMath".into(),
            ],
        }
    }
}

impl TemplateHeuristic {
    pub fn is_template(&self, source_path: &str, name: &str) -> bool {
        let lower = source_path.to_lowercase();
        self.path_markers.iter().any(|m| lower.contains(&m.to_lowercase()))
            || self.template_names.iter().any(|t| t == name)
    }
}

/// Extracts facts from `(path, source)` pairs. Per-file problems become
/// warnings; only a project with no contracts at all is an error.
pub fn extract_facts(sources: &[(String, String)]) -> Result<Extraction, FactError> {
    extract_facts_with(sources, &TemplateHeuristic::default())
}

pub fn extract_facts_with(
    sources: &[(String, String)],
    templates: &TemplateHeuristic,
) -> Result<Extraction, FactError> {
    if sources.is_empty() {
        return Err(FactError::EmptyProject);
    }
    let mut warnings = Vec::new();
    let mut units = Vec::new();
    for (path, text) in sources {
        match scan_file(path, text) {
            Ok(mut file_units) => units.append(&mut file_units),
            Err(message) => warnings.push(ParseWarning {
                path: path.clone(),
                message,
            }),
        }
    }
    if units.is_empty() {
        return Err(FactError::EmptyProject);
    }

    let project = ProjectView::new(&units);
    let mut facts = FactSet::default();
    for unit in &units {
        facts.contracts.push(ContractFact {
            name: unit.name.clone(),
            source_path: unit.path.clone(),
            kind: unit.kind,
            is_template: templates.is_template(&unit.path, &unit.name),
            line_count: unit.line_count,
        });
        for func in &unit.functions {
            facts.functions.push(FunctionFact {
                contract: unit.name.clone(),
                name: func.name.clone(),
                signature: func.signature.clone(),
                visibility: func.visibility,
                modifiers: func.modifiers.clone(),
                source_span: func.span,
                body_text: func.raw_body.clone(),
            });
        }
    }
    for unit in &units {
        for func in &unit.functions {
            let caller = FunctionKey::new(&unit.name, &func.signature);
            for site in find_call_sites(&func.clean_body) {
                if let Some(call) = project.resolve_call(unit, func, &site) {
                    facts.calls.push(CallFact {
                        caller: caller.clone(),
                        callee: call.0,
                        resolved: call.1,
                    });
                }
            }
            for access in find_state_accesses(&func.clean_body, &project.state_scope(unit)) {
                facts.state_accesses.push(StateAccessFact {
                    function: caller.clone(),
                    variable: access.0,
                    mode: access.1,
                });
            }
        }
    }
    facts.canonicalize();
    facts.validate()?;
    Ok(Extraction { facts, warnings })
}

// ---------------------------------------------------------------------------
// File scanning
// ---------------------------------------------------------------------------

#[derive(Debug)]
struct ContractUnit {
    path: String,
    name: String,
    kind: ContractKind,
    bases: Vec<String>,
    line_count: u32,
    functions: Vec<FunctionDecl>,
    /// State variable name -> declared type token.
    state_vars: BTreeMap<String, String>,
}

#[derive(Debug)]
struct FunctionDecl {
    name: String,
    signature: String,
    param_types: Vec<String>,
    visibility: Visibility,
    modifiers: Vec<String>,
    span: (u32, u32),
    raw_body: String,
    clean_body: String,
    /// Parameter name -> type, for receiver-type lookup at call sites.
    params: BTreeMap<String, String>,
}

/// Replaces comments and string literals with spaces, preserving length and
/// newlines so offsets and line numbers stay valid.
pub fn strip_comments_and_strings(src: &str) -> String {
    let bytes = src.as_bytes();
    let mut out = vec![b' '; bytes.len()];
    let mut i = 0;
    #[derive(PartialEq)]
    enum Mode {
        Code,
        Line,
        Block,
        Str(u8),
    }
    let mut mode = Mode::Code;
    while i < bytes.len() {
        let c = bytes[i];
        match mode {
            Mode::Code => match c {
                b'/' if i + 1 < bytes.len() && bytes[i + 1] == b'/' => {
                    mode = Mode::Line;
                    i += 1;
                }
                b'/' if i + 1 < bytes.len() && bytes[i + 1] == b'*' => {
                    mode = Mode::Block;
                    i += 1;
                }
                b'"' | b'\'' => mode = Mode::Str(c),
                _ => out[i] = c,
            },
            Mode::Line => {
                if c == b'\n' {
                    out[i] = b'\n';
                    mode = Mode::Code;
                }
            }
            Mode::Block => {
                if c == b'\n' {
                    out[i] = b'\n';
                }
                if c == b'/' && i > 0 && bytes[i - 1] == b'*' {
                    mode = Mode::Code;
                }
            }
            Mode::Str(quote) => {
                if c == b'\\' {
                    i += 1; // skip escaped char
                } else if c == quote {
                    mode = Mode::Code;
                } else if c == b'\n' {
                    out[i] = b'\n';
                }
            }
        }
        i += 1;
    }
    // Code bytes are copied verbatim (multi-byte UTF-8 included); blanked
    // regions are ASCII spaces, so the result is valid UTF-8.
    String::from_utf8_lossy(&out).into_owned()
}

fn is_ident_char(c: u8) -> bool {
    c.is_ascii_alphanumeric() || c == b'_' || c == b'$'
}

fn line_of(text: &str, offset: usize) -> u32 {
    text.as_bytes()[..offset.min(text.len())]
        .iter()
        .filter(|&&b| b == b'\n')
        .count() as u32
        + 1
}

/// Finds the offset of the brace/paren matching the one at `open`, or None.
fn matching(text: &str, open: usize, open_ch: u8, close_ch: u8) -> Option<usize> {
    let bytes = text.as_bytes();
    let mut depth = 0usize;
    for (i, &b) in bytes.iter().enumerate().skip(open) {
        if b == open_ch {
            depth += 1;
        } else if b == close_ch {
            depth -= 1;
            if depth == 0 {
                return Some(i);
            }
        }
    }
    None
}

fn scan_file(path: &str, src: &str) -> Result<Vec<ContractUnit>, String> {
    let clean = strip_comments_and_strings(src);
    let decl_re = regex_contract();
    let mut units = Vec::new();
    for caps in decl_re.captures_iter(&clean) {
        let whole = caps.get(0).unwrap();
        let kind = match (&caps[2], caps.get(1).is_some()) {
            (_, true) => ContractKind::Abstract,
            ("library", _) => ContractKind::Library,
            ("interface", _) => ContractKind::Interface,
            _ => ContractKind::Contract,
        };
        let name = caps[3].to_string();
        let bases = caps
            .get(5)
            .map(|m| {
                m.as_str()
                    .split(',')
                    .filter_map(|b| {
                        b.trim()
                            .split(|c: char| c == '(' || c.is_whitespace())
                            .next()
                            .filter(|s| !s.is_empty())
                            .map(str::to_string)
                    })
                    .collect()
            })
            .unwrap_or_default();
        let open = clean[whole.start()..]
            .find('{')
            .map(|p| whole.start() + p)
            .ok_or_else(|| format!("contract {name}: missing body"))?;
        let close = matching(&clean, open, b'{', b'}')
            .ok_or_else(|| format!("contract {name}: unbalanced braces"))?;
        let body_clean = &clean[open + 1..close];
        let functions = scan_functions(src, &clean, open + 1, body_clean, kind)?;
        let state_vars = scan_state_vars(body_clean);
        units.push(ContractUnit {
            path: path.to_string(),
            name,
            kind,
            bases,
            line_count: line_of(src, close) - line_of(src, whole.start()) + 1,
            functions,
            state_vars,
        });
    }
    Ok(units)
}

fn regex_contract() -> regex::Regex {
    regex::Regex::new(
        r"(?m)\b(abstract\s+)?(contract|library|interface)\s+([A-Za-z_$][A-Za-z0-9_$]*)\s*(is\s+([^{]+))?\{",
    )
    .expect("static regex")
}

fn regex_function() -> regex::Regex {
    regex::Regex::new(r"\b(function\s+([A-Za-z_$][A-Za-z0-9_$]*)|constructor|receive|fallback)\s*\(")
        .expect("static regex")
}

const ATTR_KEYWORDS: &[&str] = &[
    "public", "external", "internal", "private", "pure", "view", "payable", "virtual",
    "override", "returns",
];

/// Scans function declarations inside a contract body. `body_offset` is the
/// offset of the body within the whole cleaned file.
fn scan_functions(
    raw: &str,
    clean: &str,
    body_offset: usize,
    body_clean: &str,
    contract_kind: ContractKind,
) -> Result<Vec<FunctionDecl>, String> {
    let re = regex_function();
    let mut out = Vec::new();
    for caps in re.captures_iter(body_clean) {
        let start_local = caps.get(0).unwrap().start();
        if nesting_depth(body_clean, start_local) > 0 {
            continue; // function types or nested artifacts
        }
        let name = caps
            .get(2)
            .map(|m| m.as_str().to_string())
            .unwrap_or_else(|| caps[1].trim().to_string());
        let paren_local = caps.get(0).unwrap().end() - 1;
        let paren = body_offset + paren_local;
        let close_paren = matching(clean, paren, b'(', b')')
            .ok_or_else(|| format!("function {name}: unbalanced parameter list"))?;
        let params_text = &clean[paren + 1..close_paren];
        let (param_types, params) = parse_params(params_text);
        // Attribute region runs until the body `{` or a terminating `;`.
        let mut cursor = close_paren + 1;
        let bytes = clean.as_bytes();
        let mut body_open = None;
        while cursor < bytes.len() {
            match bytes[cursor] {
                b'{' => {
                    body_open = Some(cursor);
                    break;
                }
                b';' => break,
                b'(' => {
                    cursor = matching(clean, cursor, b'(', b')')
                        .ok_or_else(|| format!("function {name}: unbalanced attributes"))?;
                }
                _ => {}
            }
            cursor += 1;
        }
        let attrs = &clean[close_paren + 1..cursor.min(clean.len())];
        let (visibility, modifiers) = parse_attributes(attrs, contract_kind);
        let (raw_body, clean_body, end_offset) = match body_open {
            Some(open) => {
                let close = matching(clean, open, b'{', b'}')
                    .ok_or_else(|| format!("function {name}: unbalanced body"))?;
                (
                    raw[open + 1..close].to_string(),
                    clean[open + 1..close].to_string(),
                    close,
                )
            }
            None => (String::new(), String::new(), cursor),
        };
        let signature = format!("{name}({})", param_types.join(","));
        out.push(FunctionDecl {
            name,
            signature,
            param_types,
            visibility,
            modifiers,
            span: (
                line_of(clean, body_offset + start_local),
                line_of(clean, end_offset),
            ),
            raw_body,
            clean_body,
            params,
        });
    }
    Ok(out)
}

/// Brace depth of `offset` relative to the start of `text`.
fn nesting_depth(text: &str, offset: usize) -> usize {
    let mut depth = 0usize;
    for &b in &text.as_bytes()[..offset] {
        if b == b'{' {
            depth += 1;
        } else if b == b'}' {
            depth = depth.saturating_sub(1);
        }
    }
    depth
}

const DATA_LOCATIONS: &[&str] = &["memory", "calldata", "storage"];

/// Splits a parameter list into canonical types and a name->type map.
fn parse_params(text: &str) -> (Vec<String>, BTreeMap<String, String>) {
    let mut types = Vec::new();
    let mut names = BTreeMap::new();
    for piece in split_top_level(text) {
        let piece = piece.trim();
        if piece.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = piece
            .split_whitespace()
            .filter(|t| !DATA_LOCATIONS.contains(t))
            .collect();
        if tokens.is_empty() {
            continue;
        }
        // `address payable to` keeps `address payable`; a single token is an
        // anonymous parameter (its token is the type).
        let (ty_tokens, name) = if tokens.len() >= 2 && tokens[0] == "address" && tokens[1] == "payable"
        {
            if tokens.len() > 2 {
                (&tokens[..2], Some(tokens[tokens.len() - 1]))
            } else {
                (&tokens[..2], None)
            }
        } else if tokens.len() >= 2 {
            (&tokens[..tokens.len() - 1], Some(tokens[tokens.len() - 1]))
        } else {
            (&tokens[..], None)
        };
        let ty = ty_tokens.join(" ");
        if let Some(n) = name {
            names.insert(n.to_string(), ty.clone());
        }
        types.push(ty);
    }
    (types, names)
}

/// Splits on commas that are not nested inside parentheses or brackets.
fn split_top_level(text: &str) -> Vec<String> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut current = String::new();
    for c in text.chars() {
        match c {
            '(' | '[' => depth += 1,
            ')' | ']' => depth -= 1,
            ',' if depth == 0 => {
                parts.push(std::mem::take(&mut current));
                continue;
            }
            _ => {}
        }
        current.push(c);
    }
    if !current.trim().is_empty() {
        parts.push(current);
    }
    parts
}

fn parse_attributes(attrs: &str, contract_kind: ContractKind) -> (Visibility, Vec<String>) {
    let mut visibility = None;
    let mut modifiers = Vec::new();
    let mut in_returns = false;
    for token in attrs.split_whitespace() {
        let ident: String = token
            .chars()
            .take_while(|c| c.is_ascii_alphanumeric() || *c == '_' || *c == '$')
            .collect();
        if ident.is_empty() {
            continue;
        }
        match ident.as_str() {
            "public" => visibility = Some(Visibility::Public),
            "external" => visibility = Some(Visibility::External),
            "internal" => visibility = Some(Visibility::Internal),
            "private" => visibility = Some(Visibility::Private),
            "returns" => in_returns = true,
            _ if ATTR_KEYWORDS.contains(&ident.as_str()) => {}
            _ if in_returns => {} // return type tokens
            _ => modifiers.push(ident),
        }
    }
    let default_vis = if contract_kind == ContractKind::Interface {
        Visibility::External
    } else {
        Visibility::Internal
    };
    (visibility.unwrap_or(default_vis), modifiers)
}

fn split_at_initializer(text: &str) -> &str {
    let bytes = text.as_bytes();
    for i in 0..bytes.len() {
        if bytes[i] == b'=' {
            let prev = if i > 0 { bytes[i - 1] } else { 0 };
            let next = bytes.get(i + 1).copied().unwrap_or(0);
            if next != b'>' && next != b'=' && !matches!(prev, b'=' | b'!' | b'<' | b'>') {
                return &text[..i];
            }
        }
    }
    text
}

const NON_VAR_LEADS: &[&str] = &[
    "function", "constructor", "receive", "fallback", "event", "error", "modifier", "struct",
    "enum", "using", "pragma", "import", "type",
];

/// Collects contract-level state variable declarations as name -> type.
fn scan_state_vars(body_clean: &str) -> BTreeMap<String, String> {
    let mut vars = BTreeMap::new();
    let bytes = body_clean.as_bytes();
    let mut i = 0;
    let mut seg_start = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'{' => {
                if let Some(close) = matching(body_clean, i, b'{', b'}') {
                    i = close;
                    seg_start = close + 1;
                }
            }
            b';' => {
                let segment = &body_clean[seg_start..i];
                if let Some((name, ty)) = parse_state_var(segment) {
                    vars.insert(name, ty);
                }
                seg_start = i + 1;
            }
            _ => {}
        }
        i += 1;
    }
    vars
}

fn parse_state_var(segment: &str) -> Option<(String, String)> {
    let trimmed = segment.trim();
    if trimmed.is_empty() {
        return None;
    }
    let head = trimmed.split_whitespace().next()?;
    if NON_VAR_LEADS.contains(&head) && !head.starts_with("mapping") {
        return None;
    }
    // Name is the identifier immediately before the initializer `=` (if
    // any) or at the end; `=>` inside mapping types is not an assignment.
    let decl = split_at_initializer(trimmed).trim_end();
    let name_start = decl
        .rfind(|c: char| !(c.is_ascii_alphanumeric() || c == '_' || c == '$'))
        .map(|p| p + 1)
        .unwrap_or(0);
    let name = &decl[name_start..];
    if name.is_empty() || name.chars().next().is_some_and(|c| c.is_ascii_digit()) {
        return None;
    }
    let ty = decl[..name_start].trim();
    if ty.is_empty() {
        return None; // bare identifier, not a declaration
    }
    let ty_head = ty.split(|c: char| c.is_whitespace() || c == '(').next()?;
    Some((name.to_string(), ty_head.to_string()))
}

// ---------------------------------------------------------------------------
// Call sites
// ---------------------------------------------------------------------------

#[derive(Debug)]
struct CallSite {
    /// Explicit receiver expression identifier, if the call is `recv.name(..)`.
    receiver: Option<String>,
    /// Receiver contract type when written as a cast: `IOracle(addr).name(..)`.
    receiver_cast: Option<String>,
    name: String,
    arity: usize,
    is_new: bool,
}

const CALL_KEYWORDS: &[&str] = &[
    "if", "for", "while", "do", "return", "require", "assert", "revert", "emit", "unchecked",
    "new", "assembly", "catch", "try", "modifier", "function", "returns", "keccak256",
    "sha256", "ecrecover", "addmod", "mulmod", "selfdestruct", "blockhash", "gasleft",
];

const BUILTIN_MEMBERS: &[&str] = &[
    "call", "delegatecall", "staticcall", "transfer", "send", "push", "pop", "encode",
    "encodePacked", "encodeWithSelector", "encodeWithSignature", "encodeCall", "decode",
    "wrap", "unwrap", "min", "max", "creationCode", "runtimeCode",
];

fn elementary_type(name: &str) -> bool {
    matches!(name, "address" | "bool" | "string" | "bytes" | "payable")
        || (name.starts_with("uint") && name[4..].chars().all(|c| c.is_ascii_digit()))
        || (name.starts_with("int") && name[3..].chars().all(|c| c.is_ascii_digit()))
        || (name.starts_with("bytes") && name[5..].chars().all(|c| c.is_ascii_digit()))
}

/// Finds `ident(` and `expr.ident(` call sites in a cleaned function body.
fn find_call_sites(body: &str) -> Vec<CallSite> {
    let mut sites = Vec::new();
    let bytes = body.as_bytes();
    let re = regex::Regex::new(r"[A-Za-z_$][A-Za-z0-9_$]*").expect("static regex");
    let matches: Vec<(usize, usize, &str)> = re
        .find_iter(body)
        .map(|m| (m.start(), m.end(), m.as_str()))
        .collect();
    for (idx, &(start, end, word)) in matches.iter().enumerate() {
        // Must be directly followed by `(` (whitespace allowed).
        let mut p = end;
        while p < bytes.len() && (bytes[p] as char).is_whitespace() {
            p += 1;
        }
        if p >= bytes.len() || bytes[p] != b'(' {
            continue;
        }
        if CALL_KEYWORDS.contains(&word) {
            continue;
        }
        // Preceding token decides the role of this identifier.
        let mut q = start;
        while q > 0 && (bytes[q - 1] as char).is_whitespace() {
            q -= 1;
        }
        let prev_char = if q > 0 { bytes[q - 1] } else { b'\0' };
        let prev_word = matches[..idx]
            .iter()
            .rev()
            .find(|(_, e, _)| *e == q)
            .map(|&(_, _, w)| w);
        if prev_word == Some("emit") || prev_word == Some("function") || prev_word == Some("modifier") {
            continue;
        }
        if prev_word == Some("new") {
            sites.push(CallSite {
                receiver: None,
                receiver_cast: None,
                name: word.to_string(),
                arity: count_args(body, p),
                is_new: true,
            });
            continue;
        }
        let close = match matching(body, p, b'(', b')') {
            Some(c) => c,
            None => continue,
        };
        if prev_char == b'.' {
            if BUILTIN_MEMBERS.contains(&word) {
                continue;
            }
            // Walk back over the receiver expression.
            let recv_end = q - 1;
            let (receiver, receiver_cast) = classify_receiver(body, &matches[..idx], recv_end);
            if receiver.as_deref() == Some("abi")
                || receiver.as_deref() == Some("msg")
                || receiver.as_deref() == Some("block")
                || receiver.as_deref() == Some("tx")
            {
                continue;
            }
            sites.push(CallSite {
                receiver,
                receiver_cast,
                name: word.to_string(),
                arity: count_args(body, p),
                is_new: false,
            });
            continue;
        }
        if elementary_type(word) {
            continue; // type cast such as uint256(x) / address(y)
        }
        // `Type(addr).member(...)` is handled when the member identifier is
        // visited; skip the cast itself. A bare `name(args)` with no
        // following `.` goes to resolution as a plain call.
        let after = close + 1;
        let mut r = after;
        while r < bytes.len() && (bytes[r] as char).is_whitespace() {
            r += 1;
        }
        if r < bytes.len() && bytes[r] == b'.' {
            // `Type(expr).member(...)`: skip the cast itself.
            continue;
        }
        sites.push(CallSite {
            receiver: None,
            receiver_cast: None,
            name: word.to_string(),
            arity: count_args(body, p),
            is_new: false,
        });
    }
    sites
}

/// Determines the receiver of a `.name(` call ending at `recv_end`
/// (exclusive). Returns (identifier, cast type) alternatives.
fn classify_receiver(
    body: &str,
    prior: &[(usize, usize, &str)],
    recv_end: usize,
) -> (Option<String>, Option<String>) {
    let bytes = body.as_bytes();
    let mut e = recv_end;
    while e > 0 && (bytes[e - 1] as char).is_whitespace() {
        e -= 1;
    }
    if e == 0 {
        return (None, None);
    }
    if bytes[e - 1] == b')' {
        // `Type(expr).name(`: find the identifier before the open paren.
        let mut depth = 0i32;
        let mut i = e - 1;
        loop {
            match bytes[i] {
                b')' => depth += 1,
                b'(' => {
                    depth -= 1;
                    if depth == 0 {
                        break;
                    }
                }
                _ => {}
            }
            if i == 0 {
                return (None, None);
            }
            i -= 1;
        }
        let cast = prior
            .iter()
            .rev()
            .find(|(_, end, _)| *end <= i && body[*end..i].trim().is_empty())
            .map(|&(_, _, w)| w.to_string());
        return (None, cast);
    }
    if is_ident_char(bytes[e - 1]) {
        let ident = prior
            .iter()
            .rev()
            .find(|(_, end, _)| *end == e)
            .map(|&(_, _, w)| w.to_string());
        return (ident, None);
    }
    (None, None)
}

/// Counts top-level arguments of the call whose `(` is at `open`.
fn count_args(body: &str, open: usize) -> usize {
    let close = match matching(body, open, b'(', b')') {
        Some(c) => c,
        None => return 0,
    };
    let inner = &body[open + 1..close];
    if inner.trim().is_empty() {
        0
    } else {
        split_top_level(inner).len()
    }
}

// ---------------------------------------------------------------------------
// Resolution
// ---------------------------------------------------------------------------

struct ProjectView<'a> {
    units: &'a [ContractUnit],
    by_name: BTreeMap<&'a str, &'a ContractUnit>,
}

impl<'a> ProjectView<'a> {
    fn new(units: &'a [ContractUnit]) -> Self {
        let by_name = units.iter().map(|u| (u.name.as_str(), u)).collect();
        ProjectView { units, by_name }
    }

    /// Inheritance closure of a contract (itself first, then bases,
    /// breadth-first, deduplicated).
    fn linearized(&self, unit: &'a ContractUnit) -> Vec<&'a ContractUnit> {
        let mut seen = BTreeSet::new();
        let mut queue = vec![unit];
        let mut out = Vec::new();
        while let Some(u) = queue.pop() {
            if !seen.insert(u.name.as_str()) {
                continue;
            }
            out.push(u);
            for base in &u.bases {
                if let Some(b) = self.by_name.get(base.as_str()) {
                    queue.push(b);
                }
            }
        }
        out
    }

    /// State variables visible in `unit`, qualified by declaring contract.
    fn state_scope(&self, unit: &'a ContractUnit) -> BTreeMap<String, String> {
        let mut scope = BTreeMap::new();
        // Later entries (derived contract) win over bases on name clashes.
        for u in self.linearized(unit).into_iter().rev() {
            for name in u.state_vars.keys() {
                scope.insert(name.clone(), format!("{}.{}", u.name, name));
            }
        }
        scope
    }

    fn find_in(&self, contract: &str, name: &str, arity: usize) -> Option<FunctionKey> {
        let unit = self.by_name.get(contract)?;
        for u in self.linearized(unit) {
            let mut hits: Vec<&FunctionDecl> = u
                .functions
                .iter()
                .filter(|f| f.name == name && f.param_types.len() == arity)
                .collect();
            hits.sort_by(|a, b| a.signature.cmp(&b.signature));
            if let Some(f) = hits.first() {
                return Some(FunctionKey::new(&u.name, &f.signature));
            }
        }
        None
    }

    fn find_unique(&self, name: &str, arity: usize) -> Option<FunctionKey> {
        let mut hits = Vec::new();
        for u in self.units {
            for f in &u.functions {
                if f.name == name && f.param_types.len() == arity {
                    hits.push(FunctionKey::new(&u.name, &f.signature));
                }
            }
        }
        hits.sort();
        hits.dedup();
        if hits.len() == 1 {
            hits.pop()
        } else {
            None
        }
    }

    /// Resolution: receiver type when known, then (for plain calls) the
    /// caller's own contract including bases, then a project-wide unique
    /// (name, arity) match, else an unresolved placeholder. Returns None for
    /// sites that should not produce a fact at all.
    fn resolve_call(
        &self,
        unit: &ContractUnit,
        func: &FunctionDecl,
        site: &CallSite,
    ) -> Option<(FunctionKey, bool)> {
        if site.is_new {
            // `new X(...)` targets X's constructor when one is declared.
            let resolved = self.by_name.get(site.name.as_str()).and_then(|u| {
                u.functions
                    .iter()
                    .find(|f| f.name == "constructor")
                    .map(|f| (FunctionKey::new(&u.name, &f.signature), true))
            });
            return resolved.or(Some((
                FunctionKey(format!("{}.constructor(?{})", site.name, site.arity)),
                false,
            )));
        }
        // Determine the receiver contract type, if any.
        let receiver_type: Option<String> = if let Some(cast) = &site.receiver_cast {
            Some(cast.clone())
        } else if let Some(recv) = &site.receiver {
            if self.by_name.contains_key(recv.as_str()) {
                Some(recv.clone()) // library or contract referenced by name
                } else {
                func.params
                    .get(recv)
                    .or_else(|| unit.state_vars.get(recv))
                    .filter(|ty| self.by_name.contains_key(ty.as_str()))
                    .cloned()
            }
        } else {
            None
        };

        let has_member_receiver = site.receiver.is_some() || site.receiver_cast.is_some();
        if let Some(ty) = receiver_type {
            if let Some(key) = self.find_in(&ty, &site.name, site.arity) {
                return Some((key, true));
            }
            return Some((
                FunctionKey(format!("{}.{}(?{})", ty, site.name, site.arity)),
                false,
            ));
        }
        if has_member_receiver {
            // Unknown receiver type: a project-wide unique match still
            // identifies the target; otherwise the call stays unresolved.
            if let Some(key) = self.find_unique(&site.name, site.arity) {
                return Some((key, true));
            }
            let recv = site.receiver.clone().unwrap_or_else(|| "?".into());
            return Some((
                FunctionKey(format!("{}.{}(?{})", recv, site.name, site.arity)),
                false,
            ));
        }
        // Plain call: own contract (with inheritance) first.
        if let Some(key) = self.find_in(&unit.name, &site.name, site.arity) {
            return Some((key, true));
        }
        if let Some(key) = self.find_unique(&site.name, site.arity) {
            return Some((key, true));
        }
        // Casts to undeclared types and modifier-style invocations land
        // here; record them as unresolved so context is not silently lost.
        Some((
            FunctionKey(format!("?.{}(?{})", site.name, site.arity)),
            false,
        ))
    }
}

// ---------------------------------------------------------------------------
// State accesses
// ---------------------------------------------------------------------------

const ASSIGN_OPS: &[&str] = &["+=", "-=", "*=", "/=", "%=", "|=", "&=", "^=", "<<=", ">>="];

/// Scans a cleaned body for reads/writes of the state variables in `scope`
/// (unqualified name -> qualified id). Compound assignments record both.
fn find_state_accesses(
    body: &str,
    scope: &BTreeMap<String, String>,
) -> Vec<(String, AccessMode)> {
    let mut out = BTreeSet::new();
    if scope.is_empty() {
        return Vec::new();
    }
    let bytes = body.as_bytes();
    let re = regex::Regex::new(r"[A-Za-z_$][A-Za-z0-9_$]*").expect("static regex");
    for m in re.find_iter(body) {
        let Some(qualified) = scope.get(m.as_str()) else {
            continue;
        };
        // Skip member accesses like `other.balance` ( preceded by `.` ).
        let mut q = m.start();
        while q > 0 && (bytes[q - 1] as char).is_whitespace() {
            q -= 1;
        }
        if q > 0 && bytes[q - 1] == b'.' {
            continue;
        }
        // `delete x` and `x++` / `++x` are writes.
        let before = &body[..m.start()];
        let prefix_delete = before.trim_end().ends_with("delete");
        let prefix_incdec = before.trim_end().ends_with("++") || before.trim_end().ends_with("--");

        // Advance over index/member suffixes: x[i].y[j]...
        let mut p = m.end();
        loop {
            while p < bytes.len() && (bytes[p] as char).is_whitespace() {
                p += 1;
            }
            if p < bytes.len() && bytes[p] == b'[' {
                match matching(body, p, b'[', b']') {
                    Some(c) => p = c + 1,
                    None => break,
                }
            } else if p < bytes.len() && bytes[p] == b'.' {
                p += 1;
                while p < bytes.len() && is_ident_char(bytes[p]) {
                    p += 1;
                }
            } else {
                break;
            }
        }
        let rest = &body[p.min(body.len())..];
        let rest_trim = rest.trim_start();
        let compound = ASSIGN_OPS.iter().any(|op| rest_trim.starts_with(op));
        let plain_assign = rest_trim.starts_with('=')
            && !rest_trim.starts_with("==")
            && !rest_trim.starts_with("=>");
        let incdec = rest_trim.starts_with("++") || rest_trim.starts_with("--");

        if prefix_delete || prefix_incdec || incdec || plain_assign {
            out.insert((qualified.clone(), AccessMode::Write));
            if compound || incdec || prefix_incdec {
                out.insert((qualified.clone(), AccessMode::Read));
            }
        } else if compound {
            out.insert((qualified.clone(), AccessMode::Write));
            out.insert((qualified.clone(), AccessMode::Read));
        } else {
            out.insert((qualified.clone(), AccessMode::Read));
        }
    }
    out.into_iter().collect()
}
