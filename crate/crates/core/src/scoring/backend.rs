use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{TokenScore, Variant};
use crate::corpus::{read_jsonl, Tokenizer, WordTokenizer};
use crate::error::{Result, SmiError};

/// Chat prompt for backends that only expose the predicted token.
pub const APPENDIX_COMPLETION_PROMPT: &str =
    "Please complete the following sentence. Output the next words directly! The incomplete sentence is:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    FullVocabLogprobs,
    PredictedTokenOnly,
}

impl Capability {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" | "full_vocab_logprobs" => Ok(Capability::FullVocabLogprobs),
            "predicted_only" | "predicted_token_only" => Ok(Capability::PredictedTokenOnly),
            other => Err(SmiError::Config(format!("unknown capability \"{other}\""))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    /// `http(s)://…`, `mock:…` or `file:…`.
    pub endpoint: String,
    pub model_id: String,
    pub capability: Capability,
    pub max_in_flight: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_template: Option<String>,
}

impl BackendDescriptor {
    pub fn new(
        endpoint: impl Into<String>,
        model_id: impl Into<String>,
        capability: Capability,
    ) -> Self {
        let prompt_template = (capability == Capability::PredictedTokenOnly)
            .then(|| APPENDIX_COMPLETION_PROMPT.to_string());
        Self {
            endpoint: endpoint.into(),
            model_id: model_id.into(),
            capability,
            max_in_flight: 4,
            prompt_template,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Endpoint {
    Http(String),
    Mock(String),
    File(PathBuf),
}

pub fn parse_endpoint(uri: &str) -> Result<Endpoint> {
    if let Some(rest) = uri.strip_prefix("mock:") {
        Ok(Endpoint::Mock(rest.to_string()))
    } else if let Some(rest) = uri.strip_prefix("file:") {
        Ok(Endpoint::File(PathBuf::from(rest.trim_start_matches("//"))))
    } else if uri.starts_with("http://") || uri.starts_with("https://") {
        Ok(Endpoint::Http(uri.trim_end_matches('/').to_string()))
    } else {
        Err(SmiError::Config(format!(
            "unsupported backend endpoint \"{uri}\""
        )))
    }
}

/// Conditioning context sent alongside the scored text (VQA samples).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Conditioning {
    pub image_ref: Option<String>,
    pub question: Option<String>,
    /// `<sample id>/<variant>` of the sequence being scored. Local only;
    /// HTTP backends never send it.
    pub sequence_key: Option<String>,
}

/// One echoed prompt token. `offset` is a byte offset into the scored text.
#[derive(Debug, Clone, PartialEq)]
pub struct EchoToken {
    pub token: String,
    pub logprob: Option<f64>,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Prediction {
    pub token: String,
    pub logprob: f64,
    /// Alternatives with their log-probabilities, when the backend reports them.
    pub top: Vec<(String, f64)>,
}

/// A suspect model that can be asked for token log-probabilities.
pub trait ScoringBackend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    /// Per-token log-probabilities of `text` given `ctx`, as returned by a
    /// completions endpoint with echo enabled.
    fn echo_logprobs(&self, _text: &str, _ctx: &Conditioning) -> Result<Vec<EchoToken>> {
        Err(SmiError::Capability(format!(
            "backend {} does not return prompt log-probabilities",
            self.descriptor().endpoint
        )))
    }

    /// The model's greedy next token after `context`.
    fn predict_next(&self, _context: &str, _ctx: &Conditioning) -> Result<Prediction> {
        Err(SmiError::Capability(format!(
            "backend {} does not predict next tokens",
            self.descriptor().endpoint
        )))
    }

    /// Target tokenization used when walking a suffix token by token.
    fn tokenize(&self, text: &str) -> Vec<String> {
        WordTokenizer.tokenize(text)
    }

    /// Number of backend calls made so far.
    fn request_count(&self) -> usize {
        0
    }
}

/// How the mock assigns a log-probability to a token.
#[derive(Debug, Clone, PartialEq)]
pub enum MockLogprob {
    Constant(f64),
    /// Uniform over a vocabulary of this size.
    Uniform(usize),
    /// Pseudo-random in [−6.05, −0.05), a pure function of the seed, the
    /// preceding text and the token.
    Seeded(u64),
    /// Log-probability by 1-based position; positions past the end reuse
    /// the last entry.
    Script(Vec<f64>),
}

/// How the mock answers next-token queries.
#[derive(Debug, Clone, PartialEq)]
pub enum MockPredict {
    /// Always predicts the true continuation of a registered text: the
    /// text keyed by the request's sequence key if there is one, otherwise
    /// the first unkeyed text that extends the context.
    Perfect,
    /// Never predicts the true continuation.
    Never,
    /// Predicts correctly only at these 1-based positions.
    MatchAt(BTreeSet<usize>),
}

const NON_MATCH_TOKEN: &str = "\u{fffd}";

fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &b in *part {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Deterministic in-process backend for tests and dry runs.
pub struct MockBackend {
    descriptor: BackendDescriptor,
    logprob: MockLogprob,
    predict: MockPredict,
    corpus: Vec<String>,
    keyed: HashMap<String, String>,
    fail_after: Option<usize>,
    requests: AtomicUsize,
    seen: Mutex<Vec<Conditioning>>,
}

impl MockBackend {
    pub fn new(capability: Capability, logprob: MockLogprob, predict: MockPredict) -> Self {
        Self {
            descriptor: BackendDescriptor::new("mock:", "mock", capability),
            logprob,
            predict,
            corpus: Vec::new(),
            keyed: HashMap::new(),
            fail_after: None,
            requests: AtomicUsize::new(0),
            seen: Mutex::new(Vec::new()),
        }
    }

    /// Parses `kind:param[:predict][:fail_after=N]` where kind is
    /// `constant`, `uniform` or `seeded` and predict is `perfect` or `never`.
    pub fn from_spec(spec: &str, capability: Capability) -> Result<Self> {
        let bad = || SmiError::Config(format!("bad mock backend spec \"mock:{spec}\""));
        let mut parts = spec.split(':').filter(|p| !p.is_empty());
        let kind = parts.next().unwrap_or("seeded");
        let param = parts.next();
        let logprob = match kind {
            "constant" => MockLogprob::Constant(param.unwrap_or("0").parse().map_err(|_| bad())?),
            "uniform" => MockLogprob::Uniform(param.unwrap_or("4").parse().map_err(|_| bad())?),
            "seeded" => MockLogprob::Seeded(param.unwrap_or("0").parse().map_err(|_| bad())?),
            _ => return Err(bad()),
        };
        let mut predict = MockPredict::Perfect;
        let mut fail_after = None;
        for p in parts {
            match p {
                "perfect" => predict = MockPredict::Perfect,
                "never" => predict = MockPredict::Never,
                _ => {
                    let n = p.strip_prefix("fail_after=").ok_or_else(bad)?;
                    fail_after = Some(n.parse().map_err(|_| bad())?);
                }
            }
        }
        let mut mock = Self::new(capability, logprob, predict);
        mock.descriptor.endpoint = format!("mock:{spec}");
        mock.fail_after = fail_after;
        Ok(mock)
    }

    /// Texts the mock can continue in [`MockPredict::Perfect`] mode.
    pub fn with_corpus(mut self, texts: impl IntoIterator<Item = String>) -> Self {
        self.corpus.extend(texts);
        self
    }

    /// Texts looked up by [`Conditioning::sequence_key`]. A keyed request
    /// continues its own text, so samples sharing a prefix stay unambiguous.
    pub fn with_keyed_corpus(mut self, texts: impl IntoIterator<Item = (String, String)>) -> Self {
        self.keyed.extend(texts);
        self
    }

    /// Makes every call after the first `n` fail with a retryable transport error.
    pub fn failing_after(mut self, n: usize) -> Self {
        self.fail_after = Some(n);
        self
    }

    pub fn with_model_id(mut self, model_id: &str) -> Self {
        self.descriptor.model_id = model_id.to_string();
        self
    }

    /// Conditioning contexts received so far, in call order.
    pub fn seen_conditioning(&self) -> Vec<Conditioning> {
        self.seen.lock().expect("mock lock").clone()
    }

    fn begin_request(&self, ctx: &Conditioning) -> Result<()> {
        let n = self.requests.fetch_add(1, Ordering::SeqCst);
        if self.fail_after.is_some_and(|limit| n >= limit) {
            return Err(SmiError::transport(format!(
                "mock backend failed on request {}",
                n + 1
            )));
        }
        self.seen.lock().expect("mock lock").push(ctx.clone());
        Ok(())
    }

    fn logprob_of(&self, preceding: &str, token: &str, position: usize) -> f64 {
        match &self.logprob {
            MockLogprob::Constant(v) => *v,
            MockLogprob::Uniform(v) => -(*v as f64).ln(),
            MockLogprob::Seeded(seed) => {
                let h = fnv1a(&[&seed.to_le_bytes(), preceding.as_bytes(), token.as_bytes()]);
                let u = (h >> 11) as f64 / (1u64 << 53) as f64;
                -(0.05 + 6.0 * u)
            }
            MockLogprob::Script(v) => *v.get(position - 1).or(v.last()).unwrap_or(&0.0),
        }
    }

    fn true_continuation(&self, context: &str, ctx: &Conditioning) -> Option<String> {
        let keyed = ctx.sequence_key.as_ref().and_then(|k| self.keyed.get(k));
        keyed.into_iter().chain(&self.corpus).find_map(|text| {
            let rest = text.strip_prefix(context)?;
            if rest.is_empty() {
                return None;
            }
            // the next token of the full text starting at this boundary
            let toks = self.tokenize(text);
            let mut off = 0;
            for t in toks {
                if off == context.len() {
                    return Some(t);
                }
                off += t.len();
            }
            None
        })
    }
}

impl ScoringBackend for MockBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn echo_logprobs(&self, text: &str, ctx: &Conditioning) -> Result<Vec<EchoToken>> {
        if self.descriptor.capability != Capability::FullVocabLogprobs {
            return Err(SmiError::Capability(
                "mock configured as predicted-token-only".into(),
            ));
        }
        self.begin_request(ctx)?;
        let mut offset = 0;
        let tokens = self
            .tokenize(text)
            .into_iter()
            .enumerate()
            .map(|(i, token)| {
                let logprob = (i > 0).then(|| self.logprob_of(&text[..offset], &token, i + 1));
                let t = EchoToken {
                    offset,
                    logprob,
                    token,
                };
                offset += t.token.len();
                t
            })
            .collect();
        Ok(tokens)
    }

    fn predict_next(&self, context: &str, ctx: &Conditioning) -> Result<Prediction> {
        if self.descriptor.capability != Capability::PredictedTokenOnly {
            return Err(SmiError::Capability(
                "mock configured as full-vocabulary".into(),
            ));
        }
        self.begin_request(ctx)?;
        let position = self.tokenize(context).len() + 1;
        let matches = match &self.predict {
            MockPredict::Perfect => true,
            MockPredict::Never => false,
            MockPredict::MatchAt(set) => set.contains(&position),
        };
        let truth = if matches {
            self.true_continuation(context, ctx)
        } else {
            None
        };
        Ok(match truth {
            Some(token) => Prediction {
                logprob: self.logprob_of(context, &token, position),
                token,
                top: Vec::new(),
            },
            None => Prediction {
                token: NON_MATCH_TOKEN.to_string(),
                logprob: -0.1,
                top: Vec::new(),
            },
        })
    }

    fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, Deserialize)]
struct PrecomputedLine {
    sample_id: String,
    variant: Variant,
    logprobs: Vec<f64>,
    #[serde(default)]
    split_index: Option<usize>,
}

/// Per-token log-probabilities computed elsewhere, read from JSONL lines
/// `{"sample_id", "variant", "logprobs": [...], "split_index"?}`. Without a
/// split index every listed token is treated as a suffix token.
#[derive(Debug, Clone, Default)]
pub struct PrecomputedScores {
    entries: HashMap<(String, Variant), (Vec<TokenScore>, usize)>,
}

impl PrecomputedScores {
    pub fn load(path: &Path) -> Result<Self> {
        let lines: Vec<PrecomputedLine> = read_jsonl(path)?;
        let mut entries = HashMap::new();
        for (i, line) in lines.into_iter().enumerate() {
            if line.logprobs.is_empty() {
                return Err(SmiError::Schema {
                    line: i + 1,
                    message: format!("no logprobs for \"{}\"", line.sample_id),
                });
            }
            if line
                .logprobs
                .iter()
                .any(|lp| !(lp.is_finite() && *lp <= 0.0))
            {
                return Err(SmiError::Schema {
                    line: i + 1,
                    message: "logprobs must be finite and <= 0".into(),
                });
            }
            let split = line.split_index.unwrap_or(1);
            let scores = TokenScore::from_logprobs(&line.logprobs);
            if entries
                .insert((line.sample_id.clone(), line.variant), (scores, split))
                .is_some()
            {
                return Err(SmiError::Integrity(format!(
                    "duplicate precomputed entry for {} ({:?})",
                    line.sample_id, line.variant
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn get(&self, sample_id: &str, variant: Variant) -> Option<(&[TokenScore], usize)> {
        self.entries
            .get(&(sample_id.to_string(), variant))
            .map(|(s, i)| (s.as_slice(), *i))
    }
}
