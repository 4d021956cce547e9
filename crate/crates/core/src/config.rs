//! Effective configuration: defaults, overlaid by a TOML config file,
//! overlaid by environment variables, overlaid by CLI flags (the CLI layer
//! applies its own flags last). The fingerprint hashes the effective values
//! so reports change fingerprint iff any effective value changes.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gateway::ModelConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfilerSettings {
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub token_limit: usize,
    pub tag_vocabulary: Vec<String>,
}

impl Default for ProfilerSettings {
    fn default() -> Self {
        ProfilerSettings {
            alpha: crate::profiler::DEFAULT_ALPHA,
            beta: crate::profiler::DEFAULT_BETA,
            seed: 0,
            token_limit: crate::profiler::DEFAULT_TOKEN_LIMIT,
            tag_vocabulary: crate::profiler::default_tag_vocabulary(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditorSettings {
    pub context_depth: usize,
    pub max_kb_entries: usize,
    pub max_pairs: usize,
    pub solver_timeout_ms: u64,
    pub solver_budget: u64,
    /// External solver command; empty means "use the bundled smtbv binary".
    pub solver_cmd: String,
    pub solver_args: Vec<String>,
    pub validate_counterexamples: bool,
}

impl Default for AuditorSettings {
    fn default() -> Self {
        AuditorSettings {
            context_depth: crate::auditor::DEFAULT_CONTEXT_DEPTH,
            max_kb_entries: crate::knowledge::DEFAULT_MAX_ENTRIES_PER_TASK,
            max_pairs: crate::auditor::DEFAULT_MAX_PAIRS,
            solver_timeout_ms: crate::smt::DEFAULT_SOLVER_TIMEOUT_MS,
            solver_budget: crate::smt::DEFAULT_BUDGET,
            solver_cmd: String::new(),
            solver_args: Vec::new(),
            validate_counterexamples: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifierSettings {
    pub epsilon: f64,
    pub min_samples: usize,
}

impl Default for VerifierSettings {
    fn default() -> Self {
        VerifierSettings {
            epsilon: crate::verifier::DEFAULT_EPSILON,
            min_samples: crate::verifier::DEFAULT_MIN_SAMPLES,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditConfig {
    pub model: ModelConfig,
    pub profiler: ProfilerSettings,
    pub auditor: AuditorSettings,
    pub verifier: VerifierSettings,
    /// Knowledge base directory; empty disables the remind knowledge path.
    pub kb_dir: String,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {message}")]
    Unreadable { path: String, message: String },
    #[error("invalid config file {path}: {message}")]
    Invalid { path: String, message: String },
    #[error("invalid value for {var}: {value}")]
    BadEnv { var: String, value: String },
}

impl AuditConfig {
    pub fn from_file(path: &Path) -> Result<AuditConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Unreadable {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        toml::from_str(&text).map_err(|e| ConfigError::Invalid {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    /// Applies `SOLAUDIT_*` environment overrides (between file and flags in
    /// precedence).
    pub fn apply_env(&mut self) -> Result<(), ConfigError> {
        fn parse<T: std::str::FromStr>(var: &str) -> Result<Option<T>, ConfigError> {
            match std::env::var(var) {
                Ok(value) => value.parse::<T>().map(Some).map_err(|_| ConfigError::BadEnv {
                    var: var.to_string(),
                    value,
                }),
                Err(_) => Ok(None),
            }
        }
        if let Some(v) = parse::<f64>("SOLAUDIT_ALPHA")? {
            self.profiler.alpha = v;
        }
        if let Some(v) = parse::<f64>("SOLAUDIT_BETA")? {
            self.profiler.beta = v;
        }
        if let Some(v) = parse::<u64>("SOLAUDIT_SEED")? {
            self.profiler.seed = v;
        }
        if let Some(v) = parse::<usize>("SOLAUDIT_TOKEN_LIMIT")? {
            self.profiler.token_limit = v;
        }
        if let Some(v) = parse::<f64>("SOLAUDIT_EPSILON")? {
            self.verifier.epsilon = v;
        }
        if let Ok(v) = std::env::var("SOLAUDIT_ENDPOINT") {
            self.model.endpoint_url = v;
        }
        if let Ok(v) = std::env::var("SOLAUDIT_MODEL") {
            self.model.model_name = v;
        }
        if let Ok(v) = std::env::var("SOLAUDIT_SOLVER") {
            self.auditor.solver_cmd = v;
        }
        if let Ok(v) = std::env::var("SOLAUDIT_KB_DIR") {
            self.kb_dir = v;
        }
        Ok(())
    }

    /// Stable hash of every effective value (serde field order is fixed).
    pub fn fingerprint(&self) -> String {
        let serialized = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(serialized.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn profiler_config(&self) -> crate::profiler::ProfilerConfig {
        crate::profiler::ProfilerConfig {
            alpha: self.profiler.alpha,
            beta: self.profiler.beta,
            token_limit: self.profiler.token_limit,
            tag_vocabulary: self.profiler.tag_vocabulary.clone(),
        }
    }

    pub fn auditor_config(&self) -> crate::auditor::AuditorConfig {
        crate::auditor::AuditorConfig {
            context_depth: self.auditor.context_depth,
            max_kb_entries: self.auditor.max_kb_entries,
            max_pairs: self.auditor.max_pairs,
            solver_timeout_ms: self.auditor.solver_timeout_ms,
            validate_counterexamples: self.auditor.validate_counterexamples,
            ..Default::default()
        }
    }

    pub fn verifier_config(&self) -> crate::verifier::VerifierConfig {
        crate::verifier::VerifierConfig {
            epsilon: self.verifier.epsilon,
            min_samples: self.verifier.min_samples,
            context_depth: self.auditor.context_depth,
        }
    }

    /// Flat key/value view of knobs worth echoing in reports.
    pub fn summary(&self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        out.insert("alpha".into(), self.profiler.alpha.to_string());
        out.insert("beta".into(), self.profiler.beta.to_string());
        out.insert("seed".into(), self.profiler.seed.to_string());
        out.insert("token_limit".into(), self.profiler.token_limit.to_string());
        out.insert("epsilon".into(), self.verifier.epsilon.to_string());
        out.insert("min_samples".into(), self.verifier.min_samples.to_string());
        out.insert("temperature".into(), self.model.temperature.to_string());
        out.insert("top_p".into(), self.model.top_p.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_paper_knobs() {
        let cfg = AuditConfig::default();
        assert_eq!(cfg.model.temperature, 0.7);
        assert_eq!(cfg.model.top_p, 0.9);
        assert_eq!(cfg.profiler.token_limit, 32_000);
        assert_eq!(cfg.verifier.epsilon, 0.15);
        assert_eq!(cfg.verifier.min_samples, 1);
        assert_eq!(cfg.model.embed_dim, 1536);
    }

    #[test]
    fn fingerprint_changes_iff_value_changes() {
        let cfg = AuditConfig::default();
        let base = cfg.fingerprint();
        assert_eq!(base, AuditConfig::default().fingerprint());
        let mut changed = AuditConfig::default();
        changed.verifier.epsilon = 0.2;
        assert_ne!(base, changed.fingerprint());
    }

    #[test]
    fn toml_round_trip() {
        let text = r#"
            [model]
            model_name = "local-model"
            temperature = 0.3

            [profiler]
            alpha = 0.7
            beta = 0.3

            [verifier]
            epsilon = 0.2
        "#;
        let cfg: AuditConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.model.model_name, "local-model");
        assert_eq!(cfg.profiler.alpha, 0.7);
        assert_eq!(cfg.verifier.epsilon, 0.2);
        // Unspecified sections keep defaults.
        assert_eq!(cfg.profiler.token_limit, 32_000);
    }
}
