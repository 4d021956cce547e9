//! Static facts about a Solidity project: contracts, functions, calls and
//! state-variable accesses. Facts are either extracted by the built-in
//! scanner ([`extract_facts`]) or ingested from a JSON fact file produced by
//! an external analyzer ([`FactSet::from_json`]).

mod scanner;

pub use scanner::{
    extract_facts, extract_facts_with, strip_comments_and_strings, Extraction, TemplateHeuristic,
};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Canonical function key, formatted `Contract.name(type1,type2)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FunctionKey(pub String);

impl FunctionKey {
    pub fn new(contract: &str, signature: &str) -> Self {
        FunctionKey(format!("{contract}.{signature}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Contract component of the key (text before the first `.`).
    pub fn contract(&self) -> &str {
        self.0.split('.').next().unwrap_or("")
    }

    /// Bare function name (between the first `.` and the parameter list).
    pub fn name(&self) -> &str {
        let rest = match self.0.split_once('.') {
            Some((_, rest)) => rest,
            None => return "",
        };
        rest.split('(').next().unwrap_or(rest)
    }
}

impl fmt::Display for FunctionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContractKind {
    Contract,
    Library,
    Interface,
    Abstract,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractFact {
    pub name: String,
    pub source_path: String,
    pub kind: ContractKind,
    pub is_template: bool,
    pub line_count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Visibility {
    Public,
    External,
    Internal,
    Private,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionFact {
    pub contract: String,
    pub name: String,
    /// Canonical `name(type1,type2)` string; together with `contract` it
    /// forms the function key.
    pub signature: String,
    pub visibility: Visibility,
    pub modifiers: Vec<String>,
    /// 1-based (start_line, end_line) of the declaration in its source file.
    pub source_span: (u32, u32),
    pub body_text: String,
}

impl FunctionFact {
    pub fn key(&self) -> FunctionKey {
        FunctionKey::new(&self.contract, &self.signature)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallFact {
    pub caller: FunctionKey,
    /// Resolved project function key, or a best-effort
    /// `Receiver.name(?arity)` placeholder when `resolved` is false.
    pub callee: FunctionKey,
    pub resolved: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccessMode {
    Read,
    Write,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateAccessFact {
    pub function: FunctionKey,
    /// Qualified as `DeclaringContract.variable`.
    pub variable: String,
    pub mode: AccessMode,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FactSet {
    pub contracts: Vec<ContractFact>,
    pub functions: Vec<FunctionFact>,
    pub calls: Vec<CallFact>,
    pub state_accesses: Vec<StateAccessFact>,
}

/// Non-fatal problem encountered while extracting or loading facts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseWarning {
    pub path: String,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum FactError {
    #[error("empty project: no parseable Solidity sources")]
    EmptyProject,
    #[error("fact file schema error: {0}")]
    SchemaError(String),
    #[error("dangling reference: {0}")]
    DanglingReference(String),
    #[error("conflicting definition for {0}")]
    ConflictingDefinition(String),
}

const FACT_FILE_VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
struct FactFile {
    version: u64,
    contracts: Vec<ContractFact>,
    functions: Vec<FunctionFact>,
    calls: Vec<CallFact>,
    state_accesses: Vec<StateAccessFact>,
}

impl FactSet {
    /// All function keys, sorted.
    pub fn function_keys(&self) -> Vec<FunctionKey> {
        let mut keys: Vec<_> = self.functions.iter().map(|f| f.key()).collect();
        keys.sort();
        keys
    }

    pub fn function(&self, key: &FunctionKey) -> Option<&FunctionFact> {
        self.functions.iter().find(|f| &f.key() == key)
    }

    pub fn contract(&self, name: &str) -> Option<&ContractFact> {
        self.contracts.iter().find(|c| c.name == name)
    }

    /// Sorted unique contract names.
    pub fn contract_names(&self) -> Vec<String> {
        let set: BTreeSet<_> = self.contracts.iter().map(|c| c.name.clone()).collect();
        set.into_iter().collect()
    }

    pub fn functions_of<'a>(
        &'a self,
        contract: &'a str,
    ) -> impl Iterator<Item = &'a FunctionFact> + 'a {
        self.functions.iter().filter(move |f| f.contract == contract)
    }

    /// Checks the cross-reference invariants: unique function keys, known
    /// callers, known resolved callees, known access functions.
    pub fn validate(&self) -> Result<(), FactError> {
        let mut keys = BTreeSet::new();
        for f in &self.functions {
            if !keys.insert(f.key()) {
                return Err(FactError::ConflictingDefinition(f.key().0.clone()));
            }
            if f.source_span.0 > f.source_span.1 {
                return Err(FactError::SchemaError(format!(
                    "function {} has inverted source span",
                    f.key()
                )));
            }
        }
        let contracts: BTreeSet<_> = self.contracts.iter().map(|c| c.name.as_str()).collect();
        for f in &self.functions {
            if !contracts.contains(f.contract.as_str()) {
                return Err(FactError::DanglingReference(format!(
                    "function {} references unknown contract {}",
                    f.key(),
                    f.contract
                )));
            }
        }
        for call in &self.calls {
            if !keys.contains(&call.caller) {
                return Err(FactError::DanglingReference(format!(
                    "call names unknown caller {}",
                    call.caller
                )));
            }
            if call.resolved && !keys.contains(&call.callee) {
                return Err(FactError::DanglingReference(format!(
                    "resolved call names unknown callee {}",
                    call.callee
                )));
            }
        }
        for access in &self.state_accesses {
            if !keys.contains(&access.function) {
                return Err(FactError::DanglingReference(format!(
                    "state access names unknown function {}",
                    access.function
                )));
            }
            if access.variable.is_empty() {
                return Err(FactError::SchemaError(
                    "state access with empty variable".into(),
                ));
            }
        }
        Ok(())
    }

    /// Sorts every fact list into canonical order and removes exact
    /// duplicates, so structurally equal projects compare equal.
    pub fn canonicalize(&mut self) {
        self.contracts
            .sort_by(|a, b| (&a.name, &a.source_path).cmp(&(&b.name, &b.source_path)));
        self.contracts.dedup();
        self.functions.sort_by_key(|f| f.key());
        self.functions.dedup();
        self.calls.sort_by(|a, b| {
            (&a.caller, &a.callee, a.resolved).cmp(&(&b.caller, &b.callee, b.resolved))
        });
        self.calls.dedup();
        self.state_accesses
            .sort_by(|a, b| (&a.function, &a.variable, a.mode).cmp(&(&b.function, &b.variable, b.mode)));
        self.state_accesses.dedup();
    }

    pub fn to_json(&self) -> String {
        let file = FactFile {
            version: FACT_FILE_VERSION,
            contracts: self.contracts.clone(),
            functions: self.functions.clone(),
            calls: self.calls.clone(),
            state_accesses: self.state_accesses.clone(),
        };
        serde_json::to_string_pretty(&file).expect("fact file serializes")
    }

    /// Loads and re-validates a fact file.
    pub fn from_json(bytes: &[u8]) -> Result<FactSet, FactError> {
        let value: serde_json::Value = serde_json::from_slice(bytes)
            .map_err(|e| FactError::SchemaError(format!("invalid JSON: {e}")))?;
        let version = value
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| FactError::SchemaError("missing version field".into()))?;
        if version != FACT_FILE_VERSION {
            return Err(FactError::SchemaError(format!(
                "unknown fact file version {version}"
            )));
        }
        let file: FactFile = serde_json::from_value(value)
            .map_err(|e| FactError::SchemaError(e.to_string()))?;
        let mut set = FactSet {
            contracts: file.contracts,
            functions: file.functions,
            calls: file.calls,
            state_accesses: file.state_accesses,
        };
        set.canonicalize();
        set.validate()?;
        Ok(set)
    }
}

/// Merges two fact sets. Duplicate function keys with identical definitions
/// collapse; same key with a different span or body is an error.
pub fn merge_fact_sets(a: &FactSet, b: &FactSet) -> Result<FactSet, FactError> {
    let mut functions: BTreeMap<FunctionKey, FunctionFact> = BTreeMap::new();
    for f in a.functions.iter().chain(b.functions.iter()) {
        match functions.get(&f.key()) {
            None => {
                functions.insert(f.key(), f.clone());
            }
            Some(existing) if existing == f => {}
            Some(_) => return Err(FactError::ConflictingDefinition(f.key().0.clone())),
        }
    }
    let mut contracts: BTreeMap<(String, String), ContractFact> = BTreeMap::new();
    for c in a.contracts.iter().chain(b.contracts.iter()) {
        let key = (c.source_path.clone(), c.name.clone());
        match contracts.get(&key) {
            None => {
                contracts.insert(key, c.clone());
            }
            Some(existing) if existing == c => {}
            Some(_) => return Err(FactError::ConflictingDefinition(c.name.clone())),
        }
    }
    let mut merged = FactSet {
        contracts: contracts.into_values().collect(),
        functions: functions.into_values().collect(),
        calls: a.calls.iter().chain(b.calls.iter()).cloned().collect(),
        state_accesses: a
            .state_accesses
            .iter()
            .chain(b.state_accesses.iter())
            .cloned()
            .collect(),
    };
    merged.canonicalize();
    merged.validate()?;
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_set() -> FactSet {
        let mut set = FactSet {
            contracts: vec![ContractFact {
                name: "A".into(),
                source_path: "a.sol".into(),
                kind: ContractKind::Contract,
                is_template: false,
                line_count: 10,
            }],
            functions: vec![
                FunctionFact {
                    contract: "A".into(),
                    name: "f".into(),
                    signature: "f()".into(),
                    visibility: Visibility::Public,
                    modifiers: vec![],
                    source_span: (2, 4),
                    body_text: "g();".into(),
                },
                FunctionFact {
                    contract: "A".into(),
                    name: "g".into(),
                    signature: "g()".into(),
                    visibility: Visibility::Internal,
                    modifiers: vec![],
                    source_span: (5, 7),
                    body_text: "x = 1;".into(),
                },
            ],
            calls: vec![CallFact {
                caller: FunctionKey::new("A", "f()"),
                callee: FunctionKey::new("A", "g()"),
                resolved: true,
            }],
            state_accesses: vec![StateAccessFact {
                function: FunctionKey::new("A", "g()"),
                variable: "A.x".into(),
                mode: AccessMode::Write,
            }],
        };
        set.canonicalize();
        set
    }

    #[test]
    fn round_trip_preserves_structure() {
        let set = tiny_set();
        let loaded = FactSet::from_json(set.to_json().as_bytes()).unwrap();
        assert_eq!(set, loaded);
    }

    #[test]
    fn minimal_file_loads() {
        let json = r#"{"version":1,"contracts":[{"name":"A","source_path":"a.sol","kind":"contract","is_template":false,"line_count":1}],"functions":[],"calls":[],"state_accesses":[]}"#;
        let set = FactSet::from_json(json.as_bytes()).unwrap();
        assert_eq!(set.contracts.len(), 1);
        assert!(set.functions.is_empty());
    }

    #[test]
    fn unknown_version_rejected() {
        let json = r#"{"version":9,"contracts":[],"functions":[],"calls":[],"state_accesses":[]}"#;
        assert!(matches!(
            FactSet::from_json(json.as_bytes()),
            Err(FactError::SchemaError(_))
        ));
    }

    #[test]
    fn dangling_caller_rejected() {
        let json = r#"{"version":1,"contracts":[{"name":"A","source_path":"a.sol","kind":"contract","is_template":false,"line_count":1}],"functions":[],"calls":[{"caller":"A.f()","callee":"A.g()","resolved":false}],"state_accesses":[]}"#;
        assert!(matches!(
            FactSet::from_json(json.as_bytes()),
            Err(FactError::DanglingReference(_))
        ));
    }

    #[test]
    fn merge_identity_and_idempotence() {
        let set = tiny_set();
        let empty = FactSet::default();
        assert_eq!(merge_fact_sets(&set, &empty).unwrap(), set);
        assert_eq!(merge_fact_sets(&set, &set).unwrap(), set);
    }

    #[test]
    fn merge_conflict_detected() {
        let set = tiny_set();
        let mut other = set.clone();
        other.functions[0].source_span = (2, 5);
        assert!(matches!(
            merge_fact_sets(&set, &other),
            Err(FactError::ConflictingDefinition(_))
        ));
    }

    #[test]
    fn merge_shared_library_counts() {
        // Two fixtures share a library; the merged set keeps one contract
        // fact for it and calls from both sides.
        let lib = ContractFact {
            name: "Lib".into(),
            source_path: "lib.sol".into(),
            kind: ContractKind::Library,
            is_template: false,
            line_count: 4,
        };
        let lib_fn = FunctionFact {
            contract: "Lib".into(),
            name: "id".into(),
            signature: "id(uint256)".into(),
            visibility: Visibility::Internal,
            modifiers: vec![],
            source_span: (1, 3),
            body_text: "return a;".into(),
        };
        let make = |name: &str, path: &str| {
            let mut set = FactSet {
                contracts: vec![
                    lib.clone(),
                    ContractFact {
                        name: name.into(),
                        source_path: path.into(),
                        kind: ContractKind::Contract,
                        is_template: false,
                        line_count: 5,
                    },
                ],
                functions: vec![
                    lib_fn.clone(),
                    FunctionFact {
                        contract: name.into(),
                        name: "run".into(),
                        signature: "run()".into(),
                        visibility: Visibility::Public,
                        modifiers: vec![],
                        source_span: (1, 3),
                        body_text: "Lib.id(1);".into(),
                    },
                ],
                calls: vec![CallFact {
                    caller: FunctionKey::new(name, "run()"),
                    callee: FunctionKey::new("Lib", "id(uint256)"),
                    resolved: true,
                }],
                state_accesses: vec![],
            };
            set.canonicalize();
            set
        };
        let merged = merge_fact_sets(&make("X", "x.sol"), &make("Y", "y.sol")).unwrap();
        assert_eq!(
            merged.contracts.iter().filter(|c| c.name == "Lib").count(),
            1
        );
        assert_eq!(merged.calls.len(), 2);
    }
}
