//! Suffix paraphrasing through an external text-generation backend.
//!
//! Only the suffix is sent; the prefix never leaves the process, so it stays
//! byte-identical by construction.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::corpus::SplitSample;
use crate::error::{Result, SmiError};
use crate::scoring::http::{OpenAiClient, MODEL_API_KEY_VAR};
use crate::store::JsonlCache;

pub const DEFAULT_TEMPLATE: &str =
    "Paraphrase the following text, preserving its meaning. Output only the paraphrase. Text: ";

pub const PARAPHRASE_API_KEY_VAR: &str = "PARAPHRASE_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParaphraseConfig {
    pub backend_endpoint: String,
    pub model_id: String,
    pub temperature: f64,
    pub max_attempts: u32,
    pub length_ratio_bounds: (f64, f64),
    pub template: String,
    pub max_in_flight: usize,
    /// Base of the per-attempt sampling seed sent to HTTP backends.
    pub seed: u64,
}

impl Default for ParaphraseConfig {
    fn default() -> Self {
        Self {
            backend_endpoint: "mock:rewrite".into(),
            model_id: "mock-paraphraser".into(),
            temperature: 0.7,
            max_attempts: 3,
            length_ratio_bounds: (0.5, 2.0),
            template: DEFAULT_TEMPLATE.into(),
            max_in_flight: 4,
            seed: 0,
        }
    }
}

impl ParaphraseConfig {
    pub fn validate(&self) -> Result<()> {
        let (low, high) = self.length_ratio_bounds;
        if !(0.0 < low && low < 1.0 && 1.0 < high) {
            return Err(SmiError::Config(format!(
                "length ratio bounds must satisfy 0 < low < 1 < high, got ({low}, {high})"
            )));
        }
        if self.max_attempts < 1 {
            return Err(SmiError::Config("max_attempts must be at least 1".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(SmiError::Config(format!(
                "invalid temperature {}",
                self.temperature
            )));
        }
        Ok(())
    }

    /// Short SHA-256 of the template, used in cache keys and manifests.
    pub fn template_hash(&self) -> String {
        template_hash(&self.template)
    }
}

pub fn template_hash(template: &str) -> String {
    let digest = Sha256::digest(template.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParaphraseResult {
    pub sample_id: String,
    pub original_suffix: String,
    pub paraphrased_suffix: String,
    pub attempts_used: u32,
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejection_reason: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    Empty,
    Identical,
    LengthRatio,
}

impl Rejection {
    pub fn reason(self) -> &'static str {
        match self {
            Rejection::Empty => "empty output",
            Rejection::Identical => "identical output",
            Rejection::LengthRatio => "length ratio",
        }
    }
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Accepts `candidate` iff it is nonempty, differs from `original` after
/// whitespace normalization, and its length ratio (in characters) lies in
/// `[low, high]`.
pub fn validate_paraphrase(
    original: &str,
    candidate: &str,
    bounds: (f64, f64),
) -> std::result::Result<(), Rejection> {
    let cand = normalize_ws(candidate);
    if cand.is_empty() {
        return Err(Rejection::Empty);
    }
    if cand == normalize_ws(original) {
        return Err(Rejection::Identical);
    }
    let ratio = candidate.chars().count() as f64 / original.chars().count().max(1) as f64;
    if ratio < bounds.0 || ratio > bounds.1 {
        return Err(Rejection::LengthRatio);
    }
    Ok(())
}

pub fn build_paraphrase_prompt(template: &str, suffix: &str) -> Result<String> {
    if suffix.trim().is_empty() {
        return Err(SmiError::Domain("cannot paraphrase an empty suffix".into()));
    }
    Ok(format!("{template}{suffix}"))
}

/// A text generator that rewrites one prompt at a time.
pub trait ParaphraseBackend: Send + Sync {
    fn model_id(&self) -> &str;

    /// `attempt` is 1-based and lets deterministic backends vary their output.
    fn generate(&self, prompt: &str, temperature: f64, attempt: u32) -> Result<String>;

    fn request_count(&self) -> usize;
}

#[derive(Debug, Clone, PartialEq)]
pub enum MockParaphrase {
    /// Deterministic word substitutions, falling back to a lead-in phrase.
    Rewrite,
    /// Returns the input unchanged.
    Echo,
    /// Returns the same text whatever the input.
    Fixed(String),
    /// Output by attempt number; attempts past the end reuse the last entry.
    Script(Vec<String>),
}

const SYNONYMS: &[(&str, &str)] = &[
    ("big", "large"),
    ("small", "little"),
    ("quickly", "rapidly"),
    ("said", "stated"),
    ("walk", "stroll"),
    ("very", "really"),
    ("good", "fine"),
    ("begin", "start"),
    ("help", "assist"),
    ("show", "display"),
    ("many", "numerous"),
    ("often", "frequently"),
    ("about", "regarding"),
    ("because", "since"),
    ("also", "additionally"),
];

fn rewrite(text: &str, attempt: u32) -> String {
    let mut changed = false;
    let mut out = String::with_capacity(text.len() + 16);
    let mut word = String::new();
    let mut flush = |word: &mut String, out: &mut String| {
        let lower = word.to_lowercase();
        match SYNONYMS.iter().find(|(w, _)| *w == lower) {
            Some((_, syn)) => {
                changed = true;
                if word.starts_with(char::is_uppercase) {
                    let mut c = syn.chars();
                    out.extend(c.next().map(|f| f.to_ascii_uppercase()));
                    out.push_str(c.as_str());
                } else {
                    out.push_str(syn);
                }
            }
            None => out.push_str(word),
        }
        word.clear();
    };
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            word.push(ch);
        } else {
            flush(&mut word, &mut out);
            out.push(ch);
        }
    }
    flush(&mut word, &mut out);
    if changed && attempt == 1 {
        return out;
    }
    let lead = ["Put differently, ", "In other words, ", "That is, "][(attempt as usize - 1) % 3];
    let mut chars = out.chars();
    let first = chars
        .next()
        .map(|c| c.to_lowercase().to_string())
        .unwrap_or_default();
    format!("{lead}{first}{}", chars.as_str())
}

pub struct MockParaphraser {
    mode: MockParaphrase,
    template: String,
    model_id: String,
    fail_after: Option<usize>,
    requests: AtomicUsize,
}

impl MockParaphraser {
    pub fn new(mode: MockParaphrase) -> Self {
        Self {
            mode,
            template: DEFAULT_TEMPLATE.into(),
            model_id: "mock-paraphraser".into(),
            fail_after: None,
            requests: AtomicUsize::new(0),
        }
    }

    /// Parses `rewrite`, `echo` or `fixed:<text>`.
    pub fn from_spec(spec: &str) -> Result<Self> {
        let mode = match spec {
            "" | "rewrite" => MockParaphrase::Rewrite,
            "echo" => MockParaphrase::Echo,
            _ => match spec.strip_prefix("fixed:") {
                Some(text) => MockParaphrase::Fixed(text.to_string()),
                None => {
                    return Err(SmiError::Config(format!(
                        "bad mock paraphraser spec \"mock:{spec}\""
                    )))
                }
            },
        };
        Ok(Self::new(mode))
    }

    /// Template to strip from prompts before rewriting.
    pub fn with_template(mut self, template: &str) -> Self {
        self.template = template.to_string();
        self
    }

    pub fn with_model_id(mut self, model_id: &str) -> Self {
        self.model_id = model_id.to_string();
        self
    }

    pub fn failing_after(mut self, n: usize) -> Self {
        self.fail_after = Some(n);
        self
    }
}

impl ParaphraseBackend for MockParaphraser {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn generate(&self, prompt: &str, _temperature: f64, attempt: u32) -> Result<String> {
        let n = self.requests.fetch_add(1, Ordering::SeqCst);
        if self.fail_after.is_some_and(|limit| n >= limit) {
            return Err(SmiError::transport("mock paraphraser unavailable"));
        }
        let text = prompt
            .strip_prefix(self.template.as_str())
            .unwrap_or(prompt);
        Ok(match &self.mode {
            MockParaphrase::Rewrite => rewrite(text, attempt),
            MockParaphrase::Echo => text.to_string(),
            MockParaphrase::Fixed(s) => s.clone(),
            MockParaphrase::Script(v) => v
                .get(attempt as usize - 1)
                .or(v.last())
                .cloned()
                .unwrap_or_default(),
        })
    }

    fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

/// Chat-completions paraphraser. The key comes from `PARAPHRASE_API_KEY`,
/// falling back to `MODEL_API_KEY`.
pub struct HttpParaphraser {
    client: OpenAiClient,
    model_id: String,
    seed: u64,
    requests: AtomicUsize,
}

impl HttpParaphraser {
    pub fn new(endpoint: &str, model_id: &str) -> Self {
        Self {
            client: OpenAiClient::from_env(endpoint, &[PARAPHRASE_API_KEY_VAR, MODEL_API_KEY_VAR]),
            model_id: model_id.to_string(),
            seed: 0,
            requests: AtomicUsize::new(0),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

impl ParaphraseBackend for HttpParaphraser {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn generate(&self, prompt: &str, temperature: f64, attempt: u32) -> Result<String> {
        self.requests.fetch_add(1, Ordering::Relaxed);
        let body = json!({
            "model": self.model_id,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": temperature,
            "seed": self.seed.wrapping_add(attempt as u64),
        });
        let resp = self.client.post("chat/completions", &body)?;
        Ok(resp["choices"][0]["message"]["content"]
            .as_str()
            .unwrap_or_default()
            .trim()
            .to_string())
    }

    fn request_count(&self) -> usize {
        self.requests.load(Ordering::Relaxed)
    }
}

/// Builds the backend named by `cfg.backend_endpoint`.
pub fn paraphrase_backend(cfg: &ParaphraseConfig) -> Result<Box<dyn ParaphraseBackend>> {
    let ep = cfg.backend_endpoint.as_str();
    if let Some(spec) = ep.strip_prefix("mock:") {
        Ok(Box::new(
            MockParaphraser::from_spec(spec)?
                .with_template(&cfg.template)
                .with_model_id(&cfg.model_id),
        ))
    } else if ep.starts_with("http://") || ep.starts_with("https://") {
        Ok(Box::new(
            HttpParaphraser::new(ep, &cfg.model_id).with_seed(cfg.seed),
        ))
    } else {
        Err(SmiError::Config(format!(
            "unsupported paraphrase endpoint \"{ep}\""
        )))
    }
}

/// Paraphrases one suffix, retrying on validation failure. Transport
/// errors propagate so the caller can retry the whole sample.
pub fn paraphrase_suffix(
    sample: &SplitSample,
    cfg: &ParaphraseConfig,
    backend: &dyn ParaphraseBackend,
) -> Result<ParaphraseResult> {
    let prompt = build_paraphrase_prompt(&cfg.template, &sample.suffix_text)?;
    let mut last = String::new();
    let mut reason = Rejection::Empty;
    for attempt in 1..=cfg.max_attempts {
        let candidate = backend.generate(&prompt, cfg.temperature, attempt)?;
        match validate_paraphrase(&sample.suffix_text, &candidate, cfg.length_ratio_bounds) {
            Ok(()) => {
                return Ok(ParaphraseResult {
                    sample_id: sample.id.clone(),
                    original_suffix: sample.suffix_text.clone(),
                    paraphrased_suffix: candidate,
                    attempts_used: attempt,
                    valid: true,
                    rejection_reason: None,
                })
            }
            Err(r) => {
                log::debug!("{}: attempt {attempt} rejected: {}", sample.id, r.reason());
                reason = r;
                last = candidate;
            }
        }
    }
    Ok(ParaphraseResult {
        sample_id: sample.id.clone(),
        original_suffix: sample.suffix_text.clone(),
        paraphrased_suffix: last,
        attempts_used: cfg.max_attempts,
        valid: false,
        rejection_reason: Some(reason.reason().to_string()),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParaphraseKey {
    pub sample_id: String,
    pub model_id: String,
    pub template_hash: String,
}

pub type ParaphraseCache = JsonlCache<ParaphraseKey, ParaphraseResult>;

#[derive(Debug, Clone, PartialEq)]
pub struct ParaphraseRun {
    /// Samples with a valid paraphrase attached, in input order.
    pub samples: Vec<SplitSample>,
    /// Samples dropped from both variants because no valid paraphrase was found.
    pub discarded: Vec<ParaphraseResult>,
    pub cache_hits: usize,
}

/// Paraphrases every sample, reusing cached results, and removes samples
/// whose paraphrase stayed invalid. Results are written to the cache in
/// input order.
pub fn paraphrase_all(
    samples: &[SplitSample],
    cfg: &ParaphraseConfig,
    backend: &dyn ParaphraseBackend,
    cache: &ParaphraseCache,
) -> Result<ParaphraseRun> {
    cfg.validate()?;
    let hash = cfg.template_hash();
    let key = |s: &SplitSample| ParaphraseKey {
        sample_id: s.id.clone(),
        model_id: backend.model_id().to_string(),
        template_hash: hash.clone(),
    };
    let pending: Vec<&SplitSample> = samples
        .iter()
        .filter(|s| cache.get(&key(s)).is_none())
        .collect();
    let cache_hits = samples.len() - pending.len();

    for round in pending.chunks(cfg.max_in_flight.max(1)) {
        let results: Vec<Result<ParaphraseResult>> = std::thread::scope(|scope| {
            let handles: Vec<_> = round
                .iter()
                .map(|s| scope.spawn(move || with_retries(|| paraphrase_suffix(s, cfg, backend))))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("paraphrase worker panicked"))
                .collect()
        });
        for (s, r) in round.iter().zip(results) {
            cache.put(key(s), r?)?;
        }
    }

    let mut kept = Vec::new();
    let mut discarded = Vec::new();
    for s in samples {
        let r = cache
            .get(&key(s))
            .expect("every sample paraphrased or cached");
        if r.valid {
            let mut s = s.clone();
            s.paraphrased_suffix = Some(r.paraphrased_suffix);
            kept.push(s);
        } else {
            log::info!(
                "discarding {}: {}",
                s.id,
                r.rejection_reason.as_deref().unwrap_or("invalid")
            );
            discarded.push(r);
        }
    }
    Ok(ParaphraseRun {
        samples: kept,
        discarded,
        cache_hits,
    })
}

fn with_retries<T>(mut f: impl FnMut() -> Result<T>) -> Result<T> {
    const ATTEMPTS: u32 = 3;
    let mut attempt = 0;
    loop {
        match f() {
            Err(SmiError::Transport {
                retryable: true,
                message,
            }) if attempt + 1 < ATTEMPTS => {
                attempt += 1;
                log::warn!("paraphrase request failed ({message}); retry {attempt}");
                std::thread::sleep(Duration::from_millis(200 << attempt));
            }
            other => return other,
        }
    }
}
