use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use smi_core::SmiError;

/// Backend as recorded in a manifest. Endpoints lose credentials and query
/// strings; API keys never reach this struct.
#[derive(Debug, Clone, Serialize)]
pub struct BackendRecord {
    pub role: String,
    pub endpoint: String,
    pub model_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub capability: Option<String>,
    pub max_in_flight: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt_template: Option<String>,
}

impl BackendRecord {
    pub fn new(role: &str, endpoint: &str, model_id: &str, max_in_flight: usize) -> Self {
        Self {
            role: role.into(),
            endpoint: redact_endpoint(endpoint),
            model_id: model_id.into(),
            capability: None,
            max_in_flight,
            prompt_template: None,
        }
    }
}

/// Parameters that change verdicts. Absent entries do not apply to the command.
#[derive(Debug, Clone, Default, Serialize)]
pub struct DecisionParams {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon_1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon_2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paired: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub asymptotic_switch: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fallback_nll: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub percentile: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_k_percent: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub tool_version: String,
    pub started_at_unix: u64,
    pub finished_at_unix: u64,
    pub seed: u64,
    pub config_hash: String,
    /// Effective configuration after flags were applied.
    pub config: Value,
    pub backends: Vec<BackendRecord>,
    /// SHA-256 of every input file, keyed by path as given.
    pub corpus_fingerprints: BTreeMap<String, String>,
    pub decision: DecisionParams,
    pub outputs: Vec<String>,
    pub stats: BTreeMap<String, Value>,
}

impl RunManifest {
    pub fn start(command: &str, seed: u64, config: Value) -> Self {
        let config_hash = sha256_hex(config.to_string().as_bytes());
        Self {
            run_id: String::new(),
            command: command.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            started_at_unix: now(),
            finished_at_unix: 0,
            seed,
            config_hash,
            config,
            backends: Vec::new(),
            corpus_fingerprints: BTreeMap::new(),
            decision: DecisionParams::default(),
            outputs: Vec::new(),
            stats: BTreeMap::new(),
        }
    }

    pub fn fingerprint(&mut self, path: &Path) -> Result<(), SmiError> {
        let bytes = std::fs::read(path).map_err(|e| SmiError::io(path, e))?;
        self.corpus_fingerprints
            .insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn stat(&mut self, key: &str, value: impl Into<Value>) {
        self.stats.insert(key.into(), value.into());
    }

    /// Stamps the finish time and writes the manifest. The run id depends only
    /// on the command, config and inputs, so reruns share it.
    pub fn finish(mut self, path: &Path) -> Result<(), SmiError> {
        self.finished_at_unix = now();
        let ident = serde_json::json!([self.command, self.config_hash, self.corpus_fingerprints]);
        self.run_id = sha256_hex(ident.to_string().as_bytes())[..16].to_string();
        let text = serde_json::to_string_pretty(&self)? + "\n";
        std::fs::write(path, text).map_err(|e| SmiError::io(path, e))
    }
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Drops `user:password@` and the query string from a URL.
pub fn redact_endpoint(endpoint: &str) -> String {
    let Some((scheme, rest)) = endpoint.split_once("://") else {
        return endpoint.to_string();
    };
    let rest = rest.split(['?', '#']).next().unwrap_or_default();
    let (authority, path) = match rest.find('/') {
        Some(i) => rest.split_at(i),
        None => (rest, ""),
    };
    let host = authority.rsplit_once('@').map_or(authority, |(_, h)| h);
    format!("{scheme}://{host}{path}")
}
