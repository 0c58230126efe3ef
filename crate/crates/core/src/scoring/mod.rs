//! Per-token log-likelihood scoring and the membership metrics built on it.
//!
//! All log-probabilities are natural logs. A-NLL is the mean negative
//! log-probability over a token span; the suffix-conditional form averages
//! only over tokens after the split point while still conditioning on the
//! verbatim prefix.

mod backend;
mod cache;
mod driver;
pub mod http;

use std::io::Write;

use flate2::write::ZlibEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SmiError};

pub use backend::{
    parse_endpoint, BackendDescriptor, Capability, Conditioning, EchoToken, Endpoint, MockBackend,
    MockLogprob, MockPredict, PrecomputedScores, Prediction, ScoringBackend,
    APPENDIX_COMPLETION_PROMPT,
};
pub use cache::{CacheKey, ScoreCache};
pub use driver::{
    score_continuation, score_from_precomputed, score_predicted_only, score_samples, sequence_key,
    tokens_match, ScoreOptions, ScoreRegion, ScoreRun, ScoreSource,
};

/// Default probability assigned to a target token the model did not
/// predict: 1e-4, i.e. an NLL of −ln(1e-4).
pub const DEFAULT_FALLBACK_NLL: f64 = 9.210_340_371_976_184;

pub const DEFAULT_MIN_K_PERCENT: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Original,
    Paraphrased,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub token: String,
    pub logprob: f64,
    /// 1-based position in the scored sequence.
    pub position: usize,
    /// The fallback constant stood in for an unavailable probability.
    #[serde(default)]
    pub imputed: bool,
}

impl TokenScore {
    pub fn new(token: impl Into<String>, logprob: f64, position: usize) -> Self {
        Self {
            token: token.into(),
            logprob,
            position,
            imputed: false,
        }
    }

    /// Scores with positions 1..=n and empty token text.
    pub fn from_logprobs(logprobs: &[f64]) -> Vec<TokenScore> {
        logprobs
            .iter()
            .enumerate()
            .map(|(i, &lp)| TokenScore::new("", lp, i + 1))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceScore {
    pub sample_id: String,
    pub variant: Variant,
    pub token_scores: Vec<TokenScore>,
    /// Position of the first suffix token.
    pub split_index: usize,
    pub anll_whole: f64,
    pub anll_suffix: f64,
    /// Suffix text the scores refer to; used by the zlib metric.
    #[serde(default)]
    pub suffix_text: String,
}

impl SequenceScore {
    pub fn new(
        sample_id: impl Into<String>,
        variant: Variant,
        token_scores: Vec<TokenScore>,
        split_index: usize,
        suffix_text: impl Into<String>,
    ) -> Result<Self> {
        let anll_whole = a_nll(&token_scores)?;
        let anll_suffix = suffix_a_nll(&token_scores, split_index)?;
        Ok(Self {
            sample_id: sample_id.into(),
            variant,
            token_scores,
            split_index,
            anll_whole,
            anll_suffix,
            suffix_text: suffix_text.into(),
        })
    }

    pub fn suffix_scores(&self) -> &[TokenScore] {
        let start = self
            .token_scores
            .iter()
            .position(|t| t.position >= self.split_index)
            .unwrap_or(self.token_scores.len());
        &self.token_scores[start..]
    }
}

fn mean_nll<'a>(scores: impl ExactSizeIterator<Item = &'a TokenScore>) -> f64 {
    let n = scores.len() as f64;
    -scores.map(|t| t.logprob).sum::<f64>() / n
}

/// Average negative log-likelihood over every token.
pub fn a_nll(token_scores: &[TokenScore]) -> Result<f64> {
    if token_scores.is_empty() {
        return Err(SmiError::Domain("A-NLL of an empty token list".into()));
    }
    Ok(mean_nll(token_scores.iter()))
}

/// Average negative log-likelihood over tokens at positions ≥ `split_index`.
pub fn suffix_a_nll(token_scores: &[TokenScore], split_index: usize) -> Result<f64> {
    let last = token_scores.iter().map(|t| t.position).max().unwrap_or(0);
    if split_index < 1 || split_index > last {
        return Err(SmiError::Domain(format!(
            "split index {split_index} outside 1..={last}"
        )));
    }
    let suffix: Vec<&TokenScore> = token_scores
        .iter()
        .filter(|t| t.position >= split_index)
        .collect();
    Ok(mean_nll(suffix.into_iter()))
}

/// Mean NLL of the ⌈k%·T⌉ least likely tokens.
pub fn min_k_score(token_scores: &[TokenScore], k_percent: f64) -> Result<f64> {
    if !(k_percent > 0.0 && k_percent <= 100.0) {
        return Err(SmiError::Domain(format!(
            "k must be in (0, 100], got {k_percent}"
        )));
    }
    if token_scores.is_empty() {
        return Err(SmiError::Domain("Min-k% of an empty token list".into()));
    }
    let t = token_scores.len();
    // the small slack keeps exact products such as 20% of 5 from rounding up
    let count = ((k_percent * t as f64 / 100.0) - 1e-9).ceil().max(1.0) as usize;
    let mut lps: Vec<f64> = token_scores.iter().map(|s| s.logprob).collect();
    lps.sort_by(|a, b| a.total_cmp(b));
    Ok(-lps[..count.min(t)].iter().sum::<f64>() / count as f64)
}

/// Length in bytes of the zlib-compressed text.
pub fn zlib_len(text: &str) -> Result<usize> {
    if text.is_empty() {
        return Err(SmiError::Domain("cannot compress empty text".into()));
    }
    let mut enc = ZlibEncoder::new(Vec::new(), Compression::default());
    enc.write_all(text.as_bytes())
        .and_then(|_| enc.finish())
        .map(|v| v.len())
        .map_err(|e| SmiError::Domain(format!("compression failed: {e}")))
}

/// Total NLL in nats divided by the zlib-compressed byte length of `text`.
pub fn zlib_ratio(token_scores: &[TokenScore], text: &str) -> Result<f64> {
    let compressed = zlib_len(text)?;
    let total: f64 = -token_scores.iter().map(|t| t.logprob).sum::<f64>();
    Ok(total / compressed as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Metric {
    AnllSuffix,
    MinK { k: f64 },
    ZlibRatio,
}

impl Metric {
    pub fn id(&self) -> String {
        match self {
            Metric::AnllSuffix => "anll_suffix".into(),
            Metric::MinK { k } => format!("min_k({k})"),
            Metric::ZlibRatio => "zlib_ratio".into(),
        }
    }

    /// Parses `anll_suffix`, `min_k`, `min_k(20)` or `zlib_ratio`.
    pub fn parse(id: &str) -> Result<Self> {
        let id = id.trim();
        match id {
            "anll_suffix" | "anll" => return Ok(Metric::AnllSuffix),
            "zlib_ratio" | "zlib" => return Ok(Metric::ZlibRatio),
            "min_k" | "mink" => {
                return Ok(Metric::MinK {
                    k: DEFAULT_MIN_K_PERCENT,
                })
            }
            _ => {}
        }
        if let Some(arg) = id
            .strip_prefix("min_k(")
            .and_then(|rest| rest.strip_suffix(')'))
        {
            let k: f64 = arg
                .trim_end_matches('%')
                .parse()
                .map_err(|_| SmiError::Config(format!("bad Min-k percentage in \"{id}\"")))?;
            if !(k > 0.0 && k <= 100.0) {
                return Err(SmiError::Config(format!(
                    "Min-k percentage {k} outside (0, 100]"
                )));
            }
            return Ok(Metric::MinK { k });
        }
        Err(SmiError::Config(format!("unknown metric \"{id}\"")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub sample_id: String,
    pub metric: String,
    pub value: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores(lps: &[f64]) -> Vec<TokenScore> {
        TokenScore::from_logprobs(lps)
    }

    #[test]
    fn a_nll_examples() {
        assert_eq!(a_nll(&scores(&[0.0, 0.0, 0.0])).unwrap(), 0.0);
        assert_eq!(a_nll(&scores(&[-2.0])).unwrap(), 2.0);
        assert_eq!(a_nll(&scores(&[-0.5, -1.0, -1.5])).unwrap(), 1.0);
        assert!(matches!(a_nll(&[]), Err(SmiError::Domain(_))));
    }

    #[test]
    fn suffix_a_nll_examples() {
        let s = scores(&[-1.0, -2.0, -3.0, -4.0]);
        assert_eq!(suffix_a_nll(&s, 3).unwrap(), 3.5);
        assert_eq!(suffix_a_nll(&s, 1).unwrap(), a_nll(&s).unwrap());
        assert_eq!(suffix_a_nll(&s, 4).unwrap(), 4.0);
        assert!(matches!(suffix_a_nll(&s, 5), Err(SmiError::Domain(_))));
        assert!(matches!(suffix_a_nll(&s, 0), Err(SmiError::Domain(_))));
    }

    #[test]
    fn min_k_examples() {
        assert_eq!(
            min_k_score(&scores(&[-0.1, -0.2, -3.0, -4.0]), 50.0).unwrap(),
            3.5
        );
        let s = scores(&[-0.3, -1.7, -0.2, -2.2, -0.9]);
        assert!((min_k_score(&s, 100.0).unwrap() - a_nll(&s).unwrap()).abs() < 1e-15);
        assert_eq!(
            min_k_score(&scores(&[-1.0, -1.0, -1.0, -5.0]), 25.0).unwrap(),
            5.0
        );
        // 20% of 5 tokens is exactly one token
        assert_eq!(min_k_score(&s, 20.0).unwrap(), 2.2);
        assert!(min_k_score(&s, 0.0).is_err());
        assert!(min_k_score(&s, 100.5).is_err());
    }

    #[test]
    fn zlib_examples() {
        assert_eq!(
            zlib_ratio(&scores(&[0.0, 0.0]), "any text at all").unwrap(),
            0.0
        );
        // reference: Python zlib.compress(b"a" * 200) is 12 bytes
        let text = "a".repeat(200);
        assert_eq!(zlib_len(&text).unwrap(), 12);
        let fifty = scores(&[-25.0, -25.0]);
        assert!((zlib_ratio(&fifty, &text).unwrap() - 50.0 / 12.0).abs() < 1e-15);
        // reference: 51 bytes for the pangram
        assert_eq!(
            zlib_len("The quick brown fox jumps over the lazy dog.").unwrap(),
            51
        );
        assert!(matches!(zlib_ratio(&fifty, ""), Err(SmiError::Domain(_))));
    }

    #[test]
    fn zlib_linear_in_numerator() {
        let s = scores(&[-0.4, -1.3, -2.0]);
        let doubled = scores(&[-0.8, -2.6, -4.0]);
        let t = "some suffix text.";
        assert!(
            (zlib_ratio(&doubled, t).unwrap() - 2.0 * zlib_ratio(&s, t).unwrap()).abs() < 1e-12
        );
    }

    #[test]
    fn metric_ids_round_trip() {
        for m in [
            Metric::AnllSuffix,
            Metric::MinK { k: 50.0 },
            Metric::ZlibRatio,
        ] {
            assert_eq!(Metric::parse(&m.id()).unwrap(), m);
        }
        assert_eq!(Metric::parse("min_k").unwrap(), Metric::MinK { k: 20.0 });
        assert!(matches!(
            Metric::parse("max_k(5)"),
            Err(SmiError::Config(_))
        ));
    }

    #[test]
    fn fallback_constant_is_ln_ten_thousand() {
        assert!((DEFAULT_FALLBACK_NLL - 1e4f64.ln()).abs() < 1e-15);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn logprobs() -> impl Strategy<Value = Vec<f64>> {
            prop::collection::vec(-20.0f64..=0.0, 1..60)
        }

        proptest! {
            #[test]
            fn degenerate_cases_match_a_nll(lps in logprobs()) {
                let s = scores(&lps);
                let whole = a_nll(&s).unwrap();
                prop_assert_eq!(suffix_a_nll(&s, 1).unwrap(), whole);
                prop_assert!((min_k_score(&s, 100.0).unwrap() - whole).abs() <= 1e-12 * whole.max(1.0));
            }

            #[test]
            fn metrics_finite_nonnegative(lps in logprobs(), k in 0.5f64..=100.0, split in 1usize..60) {
                let s = scores(&lps);
                let split = split.min(lps.len());
                for v in [a_nll(&s).unwrap(), suffix_a_nll(&s, split).unwrap(), min_k_score(&s, k).unwrap(),
                          zlib_ratio(&s, "text").unwrap()] {
                    prop_assert!(v.is_finite() && v >= 0.0);
                }
            }

            #[test]
            fn recomputation_is_bit_stable(lps in logprobs()) {
                let s = scores(&lps);
                prop_assert_eq!(a_nll(&s).unwrap().to_bits(), a_nll(&s.clone()).unwrap().to_bits());
            }
        }
    }
}
