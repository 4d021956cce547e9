//! Uniform access to chat-completion and embedding backends: an HTTP
//! backend speaking the de-facto chat-completions wire shape, and a
//! deterministic scripted backend for offline replay. The gateway wraps a
//! backend with retry, an in-flight cap, and a usage ledger.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clock;
use crate::profiler::estimate_tokens;

pub const DEFAULT_TEMPERATURE: f64 = 0.7;
pub const DEFAULT_TOP_P: f64 = 0.9;
pub const DEFAULT_EMBED_DIM: usize = 1536;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub embed_model_name: String,
    /// Name of the environment variable holding the API key. The key value
    /// itself is read per request and never stored or serialized.
    pub api_key_env_var: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_retries: u32,
    pub request_timeout_ms: u64,
    pub retry_base_ms: u64,
    pub max_in_flight: usize,
    pub embed_dim: usize,
    pub price_per_1k_input_tokens: f64,
    pub price_per_1k_output_tokens: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            endpoint_url: String::new(),
            model_name: "gpt-oss-120b".into(),
            embed_model_name: "text-embedding-3-small".into(),
            api_key_env_var: "SOLAUDIT_API_KEY".into(),
            temperature: DEFAULT_TEMPERATURE,
            top_p: DEFAULT_TOP_P,
            max_retries: 3,
            request_timeout_ms: 120_000,
            retry_base_ms: 500,
            max_in_flight: 4,
            embed_dim: DEFAULT_EMBED_DIM,
            price_per_1k_input_tokens: 0.0,
            price_per_1k_output_tokens: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::Config(format!(
                "temperature {} outside [0,2]",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(GatewayError::Config(format!(
                "top_p {} outside (0,1]",
                self.top_p
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UsageRecord {
    pub seq: u64,
    pub stage: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub wall_ms: u64,
    pub monetary_cost: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct UsageReport {
    pub rows: Vec<UsageRow>,
    pub total_input_tokens: u64,
    pub total_output_tokens: u64,
    pub total_cost: f64,
    pub total_calls: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UsageRow {
    pub stage: String,
    pub calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub cost: f64,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("gateway unreachable: {0}")]
    Unreachable(String),
    #[error("rate limited after retries")]
    RateLimited,
    #[error("scripted scenario has no rule for stage '{stage}'")]
    ScenarioMiss { stage: String },
    #[error("backend reply malformed: {0}")]
    Malformed(String),
    #[error("gateway configuration error: {0}")]
    Config(String),
}

impl GatewayError {
    fn retriable(&self) -> bool {
        matches!(self, GatewayError::RateLimited | GatewayError::Unreachable(_))
    }
}

#[derive(Debug, Clone)]
pub struct ChatRequest {
    pub stage: String,
    pub system: String,
    pub user: String,
}

#[derive(Debug, Clone)]
pub struct ChatReply {
    pub text: String,
    /// None when the provider reported no usage; the gateway falls back to
    /// the chars/4 estimate.
    pub usage: Option<Usage>,
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatReply, GatewayError>;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError>;
    fn describe(&self) -> String;
}

// ---------------------------------------------------------------------------
// Scripted backend
// ---------------------------------------------------------------------------

/// One replay rule: applies when the stage matches (`*` or empty matches
/// everything) and the prompt contains the matcher substring.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioRule {
    #[serde(default)]
    pub stage: String,
    #[serde(default)]
    pub matcher: String,
    pub reply: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ScriptedScenario {
    pub rules: Vec<ScenarioRule>,
    #[serde(default)]
    pub strict: bool,
}

impl ScriptedScenario {
    /// Accepts either a bare JSON array of rules or an object with
    /// `rules` and optional `strict`.
    pub fn from_json(text: &str) -> Result<Self, GatewayError> {
        if let Ok(rules) = serde_json::from_str::<Vec<ScenarioRule>>(text) {
            return Ok(ScriptedScenario {
                rules,
                strict: false,
            });
        }
        serde_json::from_str::<ScriptedScenario>(text)
            .map_err(|e| GatewayError::Config(format!("invalid scenario pack: {e}")))
    }
}

pub const SCRIPTED_REFUSAL: &str =
    "{\"note\": \"no scripted rule matched; nothing to report\"}";

#[derive(Debug)]
pub struct ScriptedBackend {
    scenario: ScriptedScenario,
    embed_dim: usize,
}

impl ScriptedBackend {
    pub fn new(scenario: ScriptedScenario, embed_dim: usize) -> Self {
        ScriptedBackend {
            scenario,
            embed_dim,
        }
    }

    /// Deterministic unit-norm embedding derived from the text hash.
    pub fn hash_embedding(text: &str, dim: usize) -> Vec<f64> {
        let digest = Sha256::digest(text.as_bytes());
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        let mut v: Vec<f64> = (0..dim)
            .map(|_| (rng.next_u64() as f64 / u64::MAX as f64) * 2.0 - 1.0)
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in v.iter_mut() {
                *x /= norm;
            }
        }
        v
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatReply, GatewayError> {
        let haystack = format!("{}\n{}", request.system, request.user);
        for rule in &self.scenario.rules {
            let stage_ok =
                rule.stage.is_empty() || rule.stage == "*" || rule.stage == request.stage;
            if stage_ok && (rule.matcher.is_empty() || haystack.contains(&rule.matcher)) {
                return Ok(ChatReply {
                    text: rule.reply.clone(),
                    usage: None,
                });
            }
        }
        if self.scenario.strict {
            return Err(GatewayError::ScenarioMiss {
                stage: request.stage.clone(),
            });
        }
        Ok(ChatReply {
            text: SCRIPTED_REFUSAL.to_string(),
            usage: None,
        })
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        Ok(texts
            .iter()
            .map(|t| Self::hash_embedding(t, self.embed_dim))
            .collect())
    }

    fn describe(&self) -> String {
        format!("scripted({} rules)", self.scenario.rules.len())
    }
}

// ---------------------------------------------------------------------------
// HTTP backend
// ---------------------------------------------------------------------------

#[cfg(feature = "http")]
pub struct HttpBackend {
    cfg: ModelConfig,
    agent: ureq::Agent,
}

#[cfg(feature = "http")]
impl HttpBackend {
    pub fn new(cfg: ModelConfig) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(std::time::Duration::from_millis(cfg.request_timeout_ms))
            .build();
        HttpBackend { cfg, agent }
    }

    fn api_key(&self) -> Option<String> {
        std::env::var(&self.cfg.api_key_env_var).ok()
    }

    fn post(&self, path: &str, body: serde_json::Value) -> Result<serde_json::Value, GatewayError> {
        let url = format!("{}/{}", self.cfg.endpoint_url.trim_end_matches('/'), path);
        let mut request = self.agent.post(&url).set("content-type", "application/json");
        if let Some(key) = self.api_key() {
            request = request.set("authorization", &format!("Bearer {key}"));
        }
        match request.send_json(body) {
            Ok(resp) => resp
                .into_json()
                .map_err(|e| GatewayError::Malformed(e.to_string())),
            Err(ureq::Error::Status(429, _)) => Err(GatewayError::RateLimited),
            Err(ureq::Error::Status(code, resp)) if code >= 500 => Err(GatewayError::Unreachable(
                format!("server error {code}: {}", resp.status_text()),
            )),
            Err(ureq::Error::Status(code, resp)) => Err(GatewayError::Malformed(format!(
                "http {code}: {}",
                resp.status_text()
            ))),
            Err(ureq::Error::Transport(t)) => Err(GatewayError::Unreachable(t.to_string())),
        }
    }
}

#[cfg(feature = "http")]
impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatReply, GatewayError> {
        let body = serde_json::json!({
            "model": self.cfg.model_name,
            "temperature": self.cfg.temperature,
            "top_p": self.cfg.top_p,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
        });
        let value = self.post("chat/completions", body)?;
        let text = value["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| GatewayError::Malformed("missing message content".into()))?
            .to_string();
        let usage = value.get("usage").map(|u| Usage {
            input_tokens: u["prompt_tokens"].as_u64().unwrap_or(0),
            output_tokens: u["completion_tokens"].as_u64().unwrap_or(0),
        });
        Ok(ChatReply { text, usage })
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        let body = serde_json::json!({
            "model": self.cfg.embed_model_name,
            "input": texts,
        });
        let value = self.post("embeddings", body)?;
        let data = value["data"]
            .as_array()
            .ok_or_else(|| GatewayError::Malformed("missing embedding data".into()))?;
        data.iter()
            .map(|item| {
                item["embedding"]
                    .as_array()
                    .ok_or_else(|| GatewayError::Malformed("missing embedding vector".into()))
                    .map(|v| v.iter().filter_map(|x| x.as_f64()).collect())
            })
            .collect()
    }

    fn describe(&self) -> String {
        format!("http({} @ {})", self.cfg.model_name, self.cfg.endpoint_url)
    }
}

// ---------------------------------------------------------------------------
// Gateway
// ---------------------------------------------------------------------------

struct Semaphore {
    state: Mutex<usize>,
    cv: Condvar,
    cap: usize,
}

impl Semaphore {
    fn new(cap: usize) -> Self {
        Semaphore {
            state: Mutex::new(0),
            cv: Condvar::new(),
            cap: cap.max(1),
        }
    }

    fn acquire(&self) {
        let mut in_flight = self.state.lock().expect("semaphore poisoned");
        while *in_flight >= self.cap {
            in_flight = self.cv.wait(in_flight).expect("semaphore poisoned");
        }
        *in_flight += 1;
    }

    fn release(&self) {
        let mut in_flight = self.state.lock().expect("semaphore poisoned");
        *in_flight -= 1;
        self.cv.notify_one();
    }
}

/// Shared, concurrency-safe entry point for all model traffic.
pub struct Gateway {
    backend: Box<dyn ChatBackend>,
    cfg: ModelConfig,
    ledger: Mutex<Vec<UsageRecord>>,
    limiter: Semaphore,
    seq: AtomicU64,
}

impl Gateway {
    pub fn new(backend: Box<dyn ChatBackend>, cfg: ModelConfig) -> Result<Self, GatewayError> {
        cfg.validate()?;
        let limiter = Semaphore::new(cfg.max_in_flight);
        Ok(Gateway {
            backend,
            cfg,
            ledger: Mutex::new(Vec::new()),
            limiter,
            seq: AtomicU64::new(0),
        })
    }

    pub fn scripted(scenario: ScriptedScenario) -> Self {
        let cfg = ModelConfig::default();
        let dim = cfg.embed_dim;
        Gateway::new(Box::new(ScriptedBackend::new(scenario, dim)), cfg)
            .expect("default config is valid")
    }

    pub fn describe_backend(&self) -> String {
        self.backend.describe()
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Issues a chat completion, retrying transient failures with
    /// exponential backoff, and records usage.
    pub fn complete(&self, stage: &str, system: &str, user: &str) -> Result<String, GatewayError> {
        let request = ChatRequest {
            stage: stage.to_string(),
            system: system.to_string(),
            user: user.to_string(),
        };
        self.limiter.acquire();
        let started = clock::now_ms();
        let result = self.call_with_retry(&request);
        let wall_ms = clock::now_ms().saturating_sub(started);
        self.limiter.release();
        let reply = result?;
        let usage = reply.usage.clone().unwrap_or_else(|| Usage {
            input_tokens: (estimate_tokens(system) + estimate_tokens(user)) as u64,
            output_tokens: estimate_tokens(&reply.text) as u64,
        });
        self.record(stage, usage, wall_ms);
        Ok(reply.text)
    }

    fn call_with_retry(&self, request: &ChatRequest) -> Result<ChatReply, GatewayError> {
        let mut attempt = 0;
        loop {
            match self.backend.complete(request) {
                Ok(reply) => return Ok(reply),
                Err(e) if e.retriable() && attempt < self.cfg.max_retries => {
                    attempt += 1;
                    clock::sleep_ms(self.cfg.retry_base_ms.saturating_mul(1 << attempt.min(6)));
                }
                Err(e) => return Err(e),
            }
        }
    }

    pub fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::Config("embed called with no texts".into()));
        }
        self.limiter.acquire();
        let started = clock::now_ms();
        let result = self.backend.embed(texts);
        let wall_ms = clock::now_ms().saturating_sub(started);
        self.limiter.release();
        let vectors = result?;
        let total_chars: usize = texts.iter().map(|t| estimate_tokens(t)).sum();
        self.record(
            "embed",
            Usage {
                input_tokens: total_chars as u64,
                output_tokens: 0,
            },
            wall_ms,
        );
        Ok(vectors)
    }

    fn record(&self, stage: &str, usage: Usage, wall_ms: u64) {
        let monetary_cost = usage.input_tokens as f64 / 1000.0 * self.cfg.price_per_1k_input_tokens
            + usage.output_tokens as f64 / 1000.0 * self.cfg.price_per_1k_output_tokens;
        let record = UsageRecord {
            seq: self.seq.fetch_add(1, Ordering::SeqCst),
            stage: stage.to_string(),
            input_tokens: usage.input_tokens,
            output_tokens: usage.output_tokens,
            wall_ms,
            monetary_cost,
        };
        self.ledger.lock().expect("ledger poisoned").push(record);
    }

    pub fn usage_records(&self) -> Vec<UsageRecord> {
        let mut records = self.ledger.lock().expect("ledger poisoned").clone();
        records.sort_by_key(|r| r.seq);
        records
    }

    /// Per-stage aggregation plus grand totals.
    pub fn usage_report(&self) -> UsageReport {
        let records = self.usage_records();
        let mut by_stage: std::collections::BTreeMap<String, UsageRow> =
            std::collections::BTreeMap::new();
        let mut report = UsageReport::default();
        for r in &records {
            let row = by_stage.entry(r.stage.clone()).or_insert_with(|| UsageRow {
                stage: r.stage.clone(),
                calls: 0,
                input_tokens: 0,
                output_tokens: 0,
                cost: 0.0,
            });
            row.calls += 1;
            row.input_tokens += r.input_tokens;
            row.output_tokens += r.output_tokens;
            row.cost += r.monetary_cost;
            report.total_calls += 1;
            report.total_input_tokens += r.input_tokens;
            report.total_output_tokens += r.output_tokens;
            report.total_cost += r.monetary_cost;
        }
        report.rows = by_stage.into_values().collect();
        report
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rule(stage: &str, matcher: &str, reply: &str) -> ScenarioRule {
        ScenarioRule {
            stage: stage.into(),
            matcher: matcher.into(),
            reply: reply.into(),
        }
    }

    #[test]
    fn scripted_rule_matches_in_order() {
        let gw = Gateway::scripted(ScriptedScenario {
            rules: vec![
                rule("plan.scan", "Vault", "first"),
                rule("plan.scan", "", "second"),
            ],
            strict: false,
        });
        assert_eq!(gw.complete("plan.scan", "", "audit Vault now").unwrap(), "first");
        assert_eq!(gw.complete("plan.scan", "", "something else").unwrap(), "second");
    }

    #[test]
    fn strict_miss_names_stage() {
        let gw = Gateway::scripted(ScriptedScenario {
            rules: vec![],
            strict: true,
        });
        match gw.complete("verify.threat", "", "x") {
            Err(GatewayError::ScenarioMiss { stage }) => assert_eq!(stage, "verify.threat"),
            other => panic!("expected scenario miss, got {other:?}"),
        }
    }

    #[test]
    fn usage_ledger_accumulates() {
        let gw = Gateway::scripted(ScriptedScenario::default());
        gw.complete("a", "sys", "user text").unwrap();
        gw.complete("b", "sys", "more user text").unwrap();
        let records = gw.usage_records();
        assert_eq!(records.len(), 2);
        let report = gw.usage_report();
        assert_eq!(report.total_calls, 2);
        let sum: u64 = records.iter().map(|r| r.input_tokens).sum();
        assert_eq!(report.total_input_tokens, sum);
    }

    #[test]
    fn scripted_embeddings_deterministic_and_normalized() {
        let gw = Gateway::scripted(ScriptedScenario::default());
        let vs = gw.embed(&["a".into(), "a".into(), "b".into()]).unwrap();
        assert_eq!(vs[0].len(), DEFAULT_EMBED_DIM);
        assert_eq!(vs[0], vs[1]);
        assert_ne!(vs[0], vs[2]);
        let norm: f64 = vs[0].iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
        let cos: f64 = vs[0].iter().zip(&vs[1]).map(|(a, b)| a * b).sum();
        assert!((cos - 1.0).abs() < 1e-9);
    }

    #[test]
    fn retries_transient_failures_with_backoff() {
        use std::sync::atomic::{AtomicU32, Ordering};

        struct FlakyBackend {
            failures: u32,
            attempts: AtomicU32,
        }
        impl ChatBackend for FlakyBackend {
            fn complete(&self, _r: &ChatRequest) -> Result<ChatReply, GatewayError> {
                let attempt = self.attempts.fetch_add(1, Ordering::SeqCst) + 1;
                if attempt <= self.failures {
                    return Err(GatewayError::RateLimited);
                }
                Ok(ChatReply {
                    text: "recovered".into(),
                    usage: None,
                })
            }
            fn embed(&self, _t: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
                Ok(vec![])
            }
            fn describe(&self) -> String {
                "flaky".into()
            }
        }

        let mut cfg = ModelConfig::default();
        cfg.max_retries = 3;
        cfg.retry_base_ms = 1;
        let backend = FlakyBackend {
            failures: 2,
            attempts: AtomicU32::new(0),
        };
        let gw = Gateway::new(Box::new(backend), cfg).unwrap();
        assert_eq!(gw.complete("t", "", "x").unwrap(), "recovered");

        // With retries exhausted the error surfaces.
        let mut cfg = ModelConfig::default();
        cfg.max_retries = 1;
        cfg.retry_base_ms = 1;
        let backend = FlakyBackend {
            failures: 10,
            attempts: AtomicU32::new(0),
        };
        let gw = Gateway::new(Box::new(backend), cfg).unwrap();
        assert!(matches!(
            gw.complete("t", "", "x"),
            Err(GatewayError::RateLimited)
        ));
    }

    #[test]
    fn rate_limiter_caps_in_flight() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        use std::sync::Arc;

        struct SlowBackend {
            current: Arc<AtomicUsize>,
            peak: Arc<AtomicUsize>,
        }
        impl ChatBackend for SlowBackend {
            fn complete(&self, _r: &ChatRequest) -> Result<ChatReply, GatewayError> {
                let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
                self.peak.fetch_max(now, Ordering::SeqCst);
                std::thread::sleep(std::time::Duration::from_millis(20));
                self.current.fetch_sub(1, Ordering::SeqCst);
                Ok(ChatReply {
                    text: "ok".into(),
                    usage: None,
                })
            }
            fn embed(&self, _t: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
                Ok(vec![])
            }
            fn describe(&self) -> String {
                "slow".into()
            }
        }

        let current = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let mut cfg = ModelConfig::default();
        cfg.max_in_flight = 2;
        let gw = Arc::new(
            Gateway::new(
                Box::new(SlowBackend {
                    current: current.clone(),
                    peak: peak.clone(),
                }),
                cfg,
            )
            .unwrap(),
        );
        let handles: Vec<_> = (0..6)
            .map(|i| {
                let gw = gw.clone();
                std::thread::spawn(move || gw.complete("t", "", &format!("req {i}")).unwrap())
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2, "in-flight cap exceeded");
    }
}
