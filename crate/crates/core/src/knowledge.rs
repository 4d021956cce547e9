//! File-backed knowledge base of vulnerability categories. Each category is
//! one XML file with a pattern, a concrete exploit instance, and the
//! reasoning trace auditors follow. The module also hosts the live-search
//! augmentation seam used during the remind step.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use quick_xml::events::Event;
use quick_xml::Reader;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::facts::FunctionFact;
use crate::gateway::{Gateway, GatewayError};
use crate::profiler::{estimate_tokens, extract_json_payload, parse_string_list};

pub const DEFAULT_MAX_ENTRIES_PER_TASK: usize = 3;

pub fn default_primitives() -> Vec<String> {
    ["Compound", "Uniswap-V2", "Balancer", "Curve", "ERC-4626"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeEntry {
    pub category: String,
    pub pattern: String,
    pub exploit_instance: String,
    pub reasoning_trace: String,
    pub source_path: String,
}

#[derive(Debug, Clone, Default)]
pub struct KnowledgeIndex {
    entries: BTreeMap<String, KnowledgeEntry>,
    pub warnings: Vec<KbWarning>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KbWarning {
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KnowledgeContext {
    pub entries: Vec<KnowledgeEntry>,
    /// (query, summarized markdown) notes from live-search augmentation.
    pub live_notes: Vec<(String, String)>,
    pub total_tokens: usize,
}

impl KnowledgeContext {
    pub fn assemble(entries: Vec<KnowledgeEntry>, live_notes: Vec<(String, String)>) -> Self {
        let mut chars = String::new();
        for e in &entries {
            chars.push_str(&e.pattern);
            chars.push_str(&e.exploit_instance);
            chars.push_str(&e.reasoning_trace);
        }
        for (q, s) in &live_notes {
            chars.push_str(q);
            chars.push_str(s);
        }
        KnowledgeContext {
            total_tokens: estimate_tokens(&chars),
            entries,
            live_notes,
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!(
                "## {}\npattern: {}\nexploit instance: {}\nreasoning trace: {}\n\n",
                e.category, e.pattern, e.exploit_instance, e.reasoning_trace
            ));
        }
        for (query, summary) in &self.live_notes {
            out.push_str(&format!("## live note ({query})\n{summary}\n\n"));
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum KbError {
    #[error("knowledge base directory missing: {0}")]
    MissingDirectory(PathBuf),
    #[error("model error: {0}")]
    Model(#[from] GatewayError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl KnowledgeIndex {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn categories(&self) -> Vec<&str> {
        self.entries.keys().map(|k| k.as_str()).collect()
    }

    pub fn get(&self, category: &str) -> Option<&KnowledgeEntry> {
        self.entries.get(category)
    }

    pub fn entries(&self) -> impl Iterator<Item = &KnowledgeEntry> {
        self.entries.values()
    }

    pub fn insert(&mut self, entry: KnowledgeEntry) {
        self.entries.insert(entry.category.clone(), entry);
    }
}

/// Loads every `.xml` file under `root` (sorted for order independence).
/// Malformed files become warnings, never errors.
pub fn load_kb(root: &Path) -> Result<KnowledgeIndex, KbError> {
    if !root.is_dir() {
        return Err(KbError::MissingDirectory(root.to_path_buf()));
    }
    let mut paths = Vec::new();
    collect_xml(root, &mut paths)?;
    paths.sort();
    let mut index = KnowledgeIndex::default();
    for path in paths {
        let display = path.display().to_string();
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) => {
                index.warnings.push(KbWarning {
                    path: display,
                    message: format!("unreadable: {e}"),
                });
                continue;
            }
        };
        match parse_entry_xml(&text, &display) {
            Ok(entry) => {
                if index.entries.contains_key(&entry.category) {
                    index.warnings.push(KbWarning {
                        path: display,
                        message: format!("duplicate category '{}', file skipped", entry.category),
                    });
                } else {
                    index.insert(entry);
                }
            }
            Err(message) => index.warnings.push(KbWarning {
                path: display,
                message,
            }),
        }
    }
    Ok(index)
}

fn collect_xml(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_xml(&path, out)?;
        } else if path.extension().is_some_and(|e| e == "xml") {
            out.push(path);
        }
    }
    Ok(())
}

/// Parses `<entry category="..."><pattern/><exploit_instance/>
/// <reasoning_trace/></entry>`; every segment must be present and non-empty.
pub fn parse_entry_xml(text: &str, source_path: &str) -> Result<KnowledgeEntry, String> {
    let mut reader = Reader::from_str(text);
    reader.config_mut().trim_text(true);
    let mut category = None;
    let mut segments: BTreeMap<String, String> = BTreeMap::new();
    let mut current: Option<String> = None;
    loop {
        match reader.read_event() {
            Ok(Event::Start(e)) => {
                let name = String::from_utf8_lossy(e.name().as_ref()).to_string();
                if name == "entry" {
                    for attr in e.attributes().flatten() {
                        if attr.key.as_ref() == b"category" {
                            category = Some(
                                String::from_utf8_lossy(&attr.value).trim().to_string(),
                            );
                        }
                    }
                } else {
                    current = Some(name);
                }
            }
            Ok(Event::Text(t)) => {
                if let Some(name) = &current {
                    let text = t.unescape().map_err(|e| e.to_string())?.to_string();
                    segments
                        .entry(name.clone())
                        .or_default()
                        .push_str(&text);
                }
            }
            Ok(Event::End(_)) => current = None,
            Ok(Event::Eof) => break,
            Err(e) => return Err(format!("xml error: {e}")),
            _ => {}
        }
    }
    let category = category
        .filter(|c| !c.is_empty())
        .ok_or("missing entry category attribute")?;
    let need = |name: &str| -> Result<String, String> {
        segments
            .get(name)
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .ok_or(format!("missing or empty <{name}> element"))
    };
    Ok(KnowledgeEntry {
        category,
        pattern: need("pattern")?,
        exploit_instance: need("exploit_instance")?,
        reasoning_trace: need("reasoning_trace")?,
        source_path: source_path.to_string(),
    })
}

pub fn entry_to_xml(entry: &KnowledgeEntry) -> String {
    fn escape(text: &str) -> String {
        text.replace('&', "&amp;")
            .replace('<', "&lt;")
            .replace('>', "&gt;")
    }
    format!(
        "<entry category=\"{}\">\n  <pattern>{}</pattern>\n  <exploit_instance>{}</exploit_instance>\n  <reasoning_trace>{}</reasoning_trace>\n</entry>\n",
        escape(&entry.category),
        escape(&entry.pattern),
        escape(&entry.exploit_instance),
        escape(&entry.reasoning_trace),
    )
}

/// Converts a markdown report with `## Pattern` / `## Instance` / `## Trace`
/// headings into a knowledge entry. The category comes from a leading
/// `# heading` or, failing that, the file stem.
pub fn entry_from_markdown(text: &str, file_stem: &str) -> Result<KnowledgeEntry, String> {
    let mut category = file_stem.trim().to_string();
    let mut sections: BTreeMap<String, String> = BTreeMap::new();
    let mut current: Option<String> = None;
    for line in text.lines() {
        if let Some(h) = line.strip_prefix("## ") {
            current = Some(h.trim().to_lowercase());
            continue;
        }
        if let Some(h) = line.strip_prefix("# ") {
            if current.is_none() {
                category = h.trim().to_string();
            }
            continue;
        }
        if let Some(section) = &current {
            let slot = sections.entry(section.clone()).or_default();
            slot.push_str(line);
            slot.push('\n');
        }
    }
    let need = |name: &str| -> Result<String, String> {
        sections
            .get(name)
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .ok_or(format!("missing or empty '## {name}' section"))
    };
    Ok(KnowledgeEntry {
        category,
        pattern: need("pattern")?,
        exploit_instance: need("instance")?,
        reasoning_trace: need("trace")?,
        source_path: format!("{file_stem}.md"),
    })
}

// ---------------------------------------------------------------------------
// Search augmentation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchHit {
    pub title: String,
    pub snippet: String,
    pub url: String,
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("search failed: {0}")]
    Failed(String),
    #[error("search timed out")]
    Timeout,
}

/// The seam where a real search integration (an MCP client, an HTTP API)
/// would attach. Stub implementations are deterministic.
pub trait SearchClient: Send + Sync {
    fn search(&self, query: &str) -> Result<Vec<SearchHit>, SearchError>;
}

/// Always returns no hits.
pub struct NullSearch;

impl SearchClient for NullSearch {
    fn search(&self, _query: &str) -> Result<Vec<SearchHit>, SearchError> {
        Ok(Vec::new())
    }
}

/// Scenario-backed stub: the first rule whose `query_substring` occurs in
/// the query supplies the results.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StubSearch {
    pub rules: Vec<StubSearchRule>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StubSearchRule {
    pub query_substring: String,
    pub results: Vec<SearchHit>,
}

impl StubSearch {
    pub fn from_json(text: &str) -> Result<Self, String> {
        serde_json::from_str::<Vec<StubSearchRule>>(text)
            .map(|rules| StubSearch { rules })
            .map_err(|e| e.to_string())
    }
}

impl SearchClient for StubSearch {
    fn search(&self, query: &str) -> Result<Vec<SearchHit>, SearchError> {
        for rule in &self.rules {
            if query.contains(&rule.query_substring) {
                return Ok(rule.results.clone());
            }
        }
        Ok(Vec::new())
    }
}

/// A search client that always fails; used to exercise degradation paths.
pub struct FailingSearch;

impl SearchClient for FailingSearch {
    fn search(&self, _query: &str) -> Result<Vec<SearchHit>, SearchError> {
        Err(SearchError::Timeout)
    }
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Shows the model the category names and patterns plus the functions under
/// audit, and returns the entries for the categories it picks (at most
/// `max_entries`, reply order, unknown names dropped).
pub fn relate(
    functions: &[&FunctionFact],
    index: &KnowledgeIndex,
    gateway: &Gateway,
    max_entries: usize,
) -> Result<Vec<KnowledgeEntry>, GatewayError> {
    let mut catalog = String::new();
    for entry in index.entries() {
        catalog.push_str(&format!("- {}: {}\n", entry.category, entry.pattern));
    }
    let mut code = String::new();
    for f in functions {
        code.push_str(&format!("{}.{}\n{}\n\n", f.contract, f.signature, f.body_text));
    }
    let reply = gateway.complete(
        "kb.relate",
        "Pick the vulnerability categories most relevant to the functions \
         under audit. Reply with a JSON array of category names from the catalog.",
        &format!("catalog:\n{catalog}\nfunctions:\n{code}"),
    )?;
    let picked = parse_string_list(&reply);
    let mut out = Vec::new();
    for name in picked {
        if out.len() >= max_entries {
            break;
        }
        if let Some(entry) = index.get(name.trim()) {
            if !out.contains(entry) {
                out.push(entry.clone());
            }
        }
    }
    Ok(out)
}

/// Judges whether a contract derives from a known DeFi primitive and, if
/// so, issues one search per matched primitive and summarizes the hits into
/// markdown notes. Search failures degrade to warnings.
pub fn lineage_augment(
    contract_name: &str,
    contract_code: &str,
    primitives: &[String],
    search: &dyn SearchClient,
    gateway: &Gateway,
) -> Result<(Vec<(String, String)>, Vec<KbWarning>), GatewayError> {
    let reply = gateway.complete(
        "remind.lineage",
        "Decide whether this contract is a derivative (fork or close adaptation) \
         of one of the known DeFi primitives. Reply with JSON: \
         {\"derivative\": bool, \"primitives\": [names]}.",
        &format!(
            "known primitives: {:?}\ncontract: {}\ncode:\n{}",
            primitives, contract_name, contract_code
        ),
    )?;
    let parsed: serde_json::Value =
        serde_json::from_str(&extract_json_payload(&reply)).unwrap_or(serde_json::Value::Null);
    let derivative = parsed["derivative"].as_bool().unwrap_or(false);
    if !derivative {
        return Ok((Vec::new(), Vec::new()));
    }
    let matched: Vec<String> = parsed["primitives"]
        .as_array()
        .map(|a| {
            a.iter()
                .filter_map(|v| v.as_str())
                .filter(|p| primitives.iter().any(|known| known == p))
                .map(str::to_string)
                .collect()
        })
        .unwrap_or_default();
    let mut notes = Vec::new();
    let mut warnings = Vec::new();
    for primitive in matched {
        let query = format!("{primitive} fork security incidents");
        let hits = match search.search(&query) {
            Ok(hits) => hits,
            Err(e) => {
                warnings.push(KbWarning {
                    path: query.clone(),
                    message: format!("live search degraded: {e}"),
                });
                continue;
            }
        };
        if hits.is_empty() {
            continue;
        }
        let raw: String = hits
            .iter()
            .map(|h| format!("- {} ({}): {}\n", h.title, h.url, h.snippet))
            .collect();
        let summary = gateway.complete(
            "remind.summarize",
            "Summarize these search results into a short markdown note on known \
             incidents relevant to the protocol lineage.",
            &format!("query: {query}\nresults:\n{raw}"),
        )?;
        notes.push((query, summary));
    }
    Ok((notes, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ScenarioRule, ScriptedScenario};

    const VALID_ENTRY: &str = r#"<entry category="reentrancy">
  <pattern>external call precedes state update</pattern>
  <exploit_instance>classic drain via recursive withdraw</exploit_instance>
  <reasoning_trace>locate external calls, check effects ordering</reasoning_trace>
</entry>"#;

    #[test]
    fn parse_valid_entry() {
        let entry = parse_entry_xml(VALID_ENTRY, "kb/reentrancy.xml").unwrap();
        assert_eq!(entry.category, "reentrancy");
        assert!(entry.pattern.contains("external call"));
    }

    #[test]
    fn missing_trace_is_error() {
        let broken = r#"<entry category="x"><pattern>p</pattern><exploit_instance>e</exploit_instance></entry>"#;
        let err = parse_entry_xml(broken, "kb/x.xml").unwrap_err();
        assert!(err.contains("reasoning_trace"));
    }

    #[test]
    fn xml_round_trip() {
        let entry = parse_entry_xml(VALID_ENTRY, "kb/reentrancy.xml").unwrap();
        let rendered = entry_to_xml(&entry);
        let reparsed = parse_entry_xml(&rendered, "kb/reentrancy.xml").unwrap();
        assert_eq!(entry, reparsed);
    }

    #[test]
    fn load_kb_from_directory() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("reentrancy.xml"), VALID_ENTRY).unwrap();
        std::fs::write(
            dir.path().join("broken.xml"),
            "<entry category=\"broken\"><pattern>p</pattern></entry>",
        )
        .unwrap();
        let index = load_kb(dir.path()).unwrap();
        assert_eq!(index.len(), 1);
        assert_eq!(index.warnings.len(), 1);
        assert!(load_kb(&dir.path().join("nope")).is_err());
    }

    #[test]
    fn markdown_import() {
        let md = "# donation attack\n\n## Pattern\nshare price inflation via direct transfer\n\n## Instance\nfirst depositor mints 1 wei share\n\n## Trace\ncheck totalSupply==0 branches\n";
        let entry = entry_from_markdown(md, "donation").unwrap();
        assert_eq!(entry.category, "donation attack");
        assert_eq!(entry.pattern, "share price inflation via direct transfer");
        assert_eq!(entry.exploit_instance, "first depositor mints 1 wei share");
        assert_eq!(entry.reasoning_trace, "check totalSupply==0 branches");
    }

    fn scripted(rules: Vec<ScenarioRule>) -> Gateway {
        Gateway::scripted(ScriptedScenario {
            rules,
            strict: false,
        })
    }

    #[test]
    fn relate_drops_unknown_and_preserves_order() {
        let mut index = KnowledgeIndex::default();
        for cat in ["reentrancy", "rounding", "oracle"] {
            index.insert(KnowledgeEntry {
                category: cat.into(),
                pattern: "p".into(),
                exploit_instance: "e".into(),
                reasoning_trace: "t".into(),
                source_path: format!("{cat}.xml"),
            });
        }
        let gw = scripted(vec![ScenarioRule {
            stage: "kb.relate".into(),
            matcher: String::new(),
            reply: r#"["oracle", "nonexistent", "reentrancy"]"#.into(),
        }]);
        let picked = relate(&[], &index, &gw, 3).unwrap();
        let names: Vec<&str> = picked.iter().map(|e| e.category.as_str()).collect();
        assert_eq!(names, vec!["oracle", "reentrancy"]);
    }

    #[test]
    fn lineage_null_search_yields_nothing() {
        let gw = scripted(vec![ScenarioRule {
            stage: "remind.lineage".into(),
            matcher: String::new(),
            reply: r#"{"derivative": true, "primitives": ["Compound"]}"#.into(),
        }]);
        let (notes, warnings) =
            lineage_augment("Vault", "code", &default_primitives(), &NullSearch, &gw).unwrap();
        assert!(notes.is_empty());
        assert!(warnings.is_empty());
    }

    #[test]
    fn lineage_stub_search_summarizes() {
        let gw = scripted(vec![
            ScenarioRule {
                stage: "remind.lineage".into(),
                matcher: String::new(),
                reply: r#"{"derivative": true, "primitives": ["Compound"]}"#.into(),
            },
            ScenarioRule {
                stage: "remind.summarize".into(),
                matcher: String::new(),
                reply: "summary of both hits".into(),
            },
        ]);
        let stub = StubSearch {
            rules: vec![StubSearchRule {
                query_substring: "Compound".into(),
                results: vec![
                    SearchHit {
                        title: "incident A".into(),
                        snippet: "a".into(),
                        url: "http://a".into(),
                    },
                    SearchHit {
                        title: "incident B".into(),
                        snippet: "b".into(),
                        url: "http://b".into(),
                    },
                ],
            }],
        };
        let (notes, warnings) =
            lineage_augment("Vault", "code", &default_primitives(), &stub, &gw).unwrap();
        assert_eq!(notes.len(), 1);
        assert_eq!(notes[0].1, "summary of both hits");
        assert!(warnings.is_empty());
    }

    #[test]
    fn lineage_search_failure_degrades() {
        let gw = scripted(vec![ScenarioRule {
            stage: "remind.lineage".into(),
            matcher: String::new(),
            reply: r#"{"derivative": true, "primitives": ["Curve"]}"#.into(),
        }]);
        let (notes, warnings) =
            lineage_augment("Pool", "code", &default_primitives(), &FailingSearch, &gw).unwrap();
        assert!(notes.is_empty());
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].message.contains("degraded"));
    }

    #[test]
    fn lineage_non_derivative_empty() {
        let gw = scripted(vec![ScenarioRule {
            stage: "remind.lineage".into(),
            matcher: String::new(),
            reply: r#"{"derivative": false}"#.into(),
        }]);
        let (notes, _) =
            lineage_augment("Util", "code", &default_primitives(), &NullSearch, &gw).unwrap();
        assert!(notes.is_empty());
    }
}
