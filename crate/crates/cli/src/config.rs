//! TOML run configuration. Every section is optional; command-line flags
//! override file values, and the merged result is what the manifest records.

use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use smi_core::baselines::BaselineConfig;
use smi_core::harness::SyntheticSpec;
use smi_core::inference::SmiConfig;
use smi_core::SmiError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub max_in_flight: Option<usize>,
    pub prepare: PrepareSection,
    pub paraphrase: ParaphraseSection,
    pub score: ScoreSection,
    pub smi: SmiConfig,
    pub baseline: BaselineConfig,
    pub synthetic: SyntheticSpec,
    pub evaluate: EvaluateSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepareSection {
    pub mode: Option<String>,
    pub budget: Option<usize>,
    pub min_suffix_tokens: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParaphraseSection {
    pub backend: Option<String>,
    pub model: Option<String>,
    pub temperature: Option<f64>,
    pub max_attempts: Option<u32>,
    pub length_ratio_bounds: Option<(f64, f64)>,
    pub template: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreSection {
    pub backend: Option<String>,
    pub model: Option<String>,
    pub capability: Option<String>,
    pub fallback_nll: Option<f64>,
    pub region: Option<String>,
    pub use_top_k: Option<bool>,
    pub max_retries: Option<u32>,
    pub retry_backoff_ms: Option<u64>,
    pub requests_per_second: Option<f64>,
    pub prompt_template: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub methods: Vec<String>,
    /// Sample sizes for the size ablation; empty skips it.
    pub ablate_n: Vec<usize>,
    /// (ε₁, ε₂) pairs for the margin ablation; empty skips it.
    pub margins: Vec<(f64, f64)>,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self {
            methods: vec!["smi".into(), "anll".into(), "ddi".into()],
            ablate_n: Vec::new(),
            margins: Vec::new(),
        }
    }
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| SmiError::io(path, e))?;
        let cfg: Self = toml::from_str(&text)
            .map_err(|e| SmiError::Config(format!("{}: {e}", path.display())))
            .with_context(|| format!("loading config {}", path.display()))?;
        for key in ["MODEL_API_KEY", "PARAPHRASE_API_KEY", "api_key"] {
            if text.contains(key) {
                return Err(SmiError::Config(format!(
                    "{} mentions {key}; API keys are read from the environment only",
                    path.display()
                ))
                .into());
            }
        }
        Ok(cfg)
    }
}
