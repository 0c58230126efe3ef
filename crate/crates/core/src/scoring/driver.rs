use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::backend::{
    Capability, Conditioning, EchoToken, PrecomputedScores, Prediction, ScoringBackend,
};
use super::cache::{CacheKey, ScoreCache};
use super::{BackendDescriptor, SequenceScore, TokenScore, Variant, DEFAULT_FALLBACK_NLL};
use crate::corpus::SplitSample;
use crate::error::{Result, SmiError};

/// Which positions the predicted-token-only walk visits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreRegion {
    /// Suffix tokens only; the prefix is sent as context but never scored.
    #[default]
    Suffix,
    /// Every position from 2 on, mirroring what an echo request returns.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreOptions {
    /// NLL recorded when the model's prediction misses the target token.
    pub fallback_nll: f64,
    pub region: ScoreRegion,
    /// Use a target's logprob from the top alternatives instead of the fallback.
    pub use_top_k: bool,
    pub max_in_flight: usize,
    pub max_retries: u32,
    pub retry_backoff_ms: u64,
    /// Request rate cap across all workers; `None` disables it.
    pub requests_per_second: Option<f64>,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        Self {
            fallback_nll: DEFAULT_FALLBACK_NLL,
            region: ScoreRegion::Suffix,
            use_top_k: false,
            max_in_flight: 4,
            max_retries: 3,
            retry_backoff_ms: 500,
            requests_per_second: None,
        }
    }
}

fn variant_text(sample: &SplitSample, variant: Variant) -> Result<(String, &str)> {
    match variant {
        Variant::Original => Ok((sample.original_text(), &sample.suffix_text)),
        Variant::Paraphrased => {
            let text = sample.paraphrased_text().ok_or_else(|| {
                SmiError::Domain(format!("sample {} has no paraphrased suffix", sample.id))
            })?;
            Ok((
                text,
                sample.paraphrased_suffix.as_deref().unwrap_or_default(),
            ))
        }
    }
}

fn conditioning(sample: &SplitSample, variant: Variant) -> Conditioning {
    Conditioning {
        image_ref: sample.image_ref.clone(),
        question: sample.question.clone(),
        sequence_key: Some(sequence_key(&sample.id, variant)),
    }
}

/// Key under which a sample's variant is identified to local backends.
pub fn sequence_key(sample_id: &str, variant: Variant) -> String {
    let v = match variant {
        Variant::Original => "original",
        Variant::Paraphrased => "paraphrased",
    };
    format!("{sample_id}/{v}")
}

/// Index of the first token that reaches past the prefix. A token that
/// straddles the boundary counts as a suffix token.
fn suffix_start(ends: impl Iterator<Item = usize>, prefix_len: usize) -> Option<usize> {
    ends.enumerate()
        .find(|&(_, end)| end > prefix_len)
        .map(|(i, _)| i)
}

fn check_offsets(tokens: &[EchoToken], text: &str) -> Result<()> {
    if tokens.is_empty() {
        return Err(SmiError::Alignment("backend returned no tokens".into()));
    }
    if tokens[0].offset != 0 {
        return Err(SmiError::Alignment(format!(
            "first token \"{}\" starts at byte {}, expected 0",
            tokens[0].token, tokens[0].offset
        )));
    }
    for w in tokens.windows(2) {
        if w[1].offset <= w[0].offset {
            return Err(SmiError::Alignment(format!(
                "offsets not increasing at \"{}\" ({}) -> \"{}\" ({})",
                w[0].token, w[0].offset, w[1].token, w[1].offset
            )));
        }
    }
    let last = tokens.last().expect("nonempty");
    if last.offset >= text.len() {
        return Err(SmiError::Alignment(format!(
            "token \"{}\" at byte {} lies past the {}-byte text",
            last.token,
            last.offset,
            text.len()
        )));
    }
    Ok(())
}

/// Scores `variant` of `sample` with one echo request and averages over the
/// suffix tokens as the backend tokenized them.
pub fn score_continuation(
    sample: &SplitSample,
    variant: Variant,
    backend: &dyn ScoringBackend,
) -> Result<SequenceScore> {
    if backend.descriptor().capability != Capability::FullVocabLogprobs {
        return Err(SmiError::Capability(format!(
            "{} only exposes predicted tokens; use predicted-only scoring",
            backend.descriptor().endpoint
        )));
    }
    let (text, suffix) = variant_text(sample, variant)?;
    let tokens = backend.echo_logprobs(&text, &conditioning(sample, variant))?;
    check_offsets(&tokens, &text)?;

    let ends = tokens
        .iter()
        .skip(1)
        .map(|t| t.offset)
        .chain(std::iter::once(text.len()));
    let start = suffix_start(ends, sample.prefix_text.len()).ok_or_else(|| {
        SmiError::Alignment(format!(
            "no returned token reaches the suffix of {}",
            sample.id
        ))
    })?;

    let mut scores = Vec::with_capacity(tokens.len());
    for (i, t) in tokens.iter().enumerate() {
        match (i, t.logprob) {
            (0, _) => {}
            (_, Some(lp)) => scores.push(TokenScore::new(&t.token, lp.min(0.0), i + 1)),
            (_, None) => {
                return Err(SmiError::Alignment(format!(
                    "token {} (\"{}\") of {} has no logprob",
                    i + 1,
                    t.token,
                    sample.id
                )))
            }
        }
    }
    if start == 0 {
        return Err(SmiError::Alignment(format!(
            "first token of {} already belongs to the suffix",
            sample.id
        )));
    }
    SequenceScore::new(&sample.id, variant, scores, start + 1, suffix)
}

/// Exact string match after trimming one leading space from each side.
pub fn tokens_match(predicted: &str, target: &str) -> bool {
    let p = predicted.strip_prefix(' ').unwrap_or(predicted);
    let t = target.strip_prefix(' ').unwrap_or(target);
    !p.is_empty() && p == t
}

fn score_from_prediction(
    pred: &Prediction,
    target: &str,
    position: usize,
    opts: &ScoreOptions,
) -> TokenScore {
    if tokens_match(&pred.token, target) && pred.logprob.is_finite() {
        return TokenScore::new(target, pred.logprob.min(0.0), position);
    }
    if opts.use_top_k {
        if let Some((_, lp)) = pred
            .top
            .iter()
            .find(|(t, lp)| tokens_match(t, target) && lp.is_finite())
        {
            return TokenScore::new(target, lp.min(0.0), position);
        }
    }
    TokenScore {
        token: target.to_string(),
        logprob: -opts.fallback_nll,
        position,
        imputed: true,
    }
}

/// Scores `variant` of `sample` against a backend that only reveals its
/// greedy next token. Each target token is scored in turn: a matching
/// prediction contributes its own logprob, a miss contributes
/// −`fallback_nll`. The target token is then appended to the context.
///
/// `resume` holds positions already scored by an interrupted call; a
/// transport failure returns [`SmiError::Interrupted`] carrying everything
/// scored so far.
pub fn score_predicted_only(
    sample: &SplitSample,
    variant: Variant,
    backend: &dyn ScoringBackend,
    opts: &ScoreOptions,
    resume: &[TokenScore],
) -> Result<SequenceScore> {
    if backend.descriptor().capability != Capability::PredictedTokenOnly {
        return Err(SmiError::Capability(format!(
            "{} is a full-vocabulary backend; use continuation scoring",
            backend.descriptor().endpoint
        )));
    }
    if !(opts.fallback_nll > 0.0 && opts.fallback_nll.is_finite()) {
        return Err(SmiError::Config(format!(
            "fallback NLL must be positive, got {}",
            opts.fallback_nll
        )));
    }
    let (text, suffix) = variant_text(sample, variant)?;
    let targets = backend.tokenize(&text);
    let mut offsets = Vec::with_capacity(targets.len() + 1);
    let mut off = 0;
    for t in &targets {
        offsets.push(off);
        off += t.len();
    }
    offsets.push(off);
    if off != text.len() {
        return Err(SmiError::Alignment(format!(
            "target tokenization of {} covers {off} of {} bytes",
            sample.id,
            text.len()
        )));
    }
    let split = suffix_start(offsets[1..].iter().copied(), sample.prefix_text.len())
        .filter(|&i| i > 0)
        .ok_or_else(|| SmiError::Alignment(format!("cannot locate the suffix of {}", sample.id)))?
        + 1;
    let first = match opts.region {
        ScoreRegion::Suffix => split,
        ScoreRegion::Full => 2,
    };
    let total = targets.len() + 1 - first;

    let expected = (first..first + resume.len()).collect::<Vec<_>>();
    let resumable = resume.iter().map(|t| t.position).eq(expected);
    let mut scores: Vec<TokenScore> = if resumable {
        resume.to_vec()
    } else {
        log::warn!("ignoring non-contiguous resume state for {}", sample.id);
        Vec::new()
    };

    let ctx = conditioning(sample, variant);
    for position in first + scores.len()..=targets.len() {
        let context = &text[..offsets[position - 1]];
        let pred = match backend.predict_next(context, &ctx) {
            Ok(p) => p,
            Err(e @ SmiError::Transport { .. }) => {
                return Err(SmiError::Interrupted {
                    completed: scores,
                    total,
                    message: e.to_string(),
                })
            }
            Err(e) => return Err(e),
        };
        scores.push(score_from_prediction(
            &pred,
            &targets[position - 1],
            position,
            opts,
        ));
    }
    SequenceScore::new(&sample.id, variant, scores, split, suffix)
}

/// Builds a sequence score from precomputed logprobs.
pub fn score_from_precomputed(
    sample: &SplitSample,
    variant: Variant,
    scores: &PrecomputedScores,
) -> Result<SequenceScore> {
    let (_, suffix) = variant_text(sample, variant)?;
    let (tokens, split) = scores.get(&sample.id, variant).ok_or_else(|| {
        SmiError::Integrity(format!(
            "no precomputed scores for {} ({variant:?})",
            sample.id
        ))
    })?;
    SequenceScore::new(&sample.id, variant, tokens.to_vec(), split, suffix)
}

/// Spaces requests evenly to stay under a rate.
struct RateLimiter {
    interval: Duration,
    next: Mutex<Instant>,
}

impl RateLimiter {
    fn new(per_second: f64) -> Self {
        Self {
            interval: Duration::from_secs_f64(1.0 / per_second),
            next: Mutex::new(Instant::now()),
        }
    }

    fn acquire(&self) {
        let wait = {
            let mut next = self.next.lock().expect("limiter lock");
            let now = Instant::now();
            let slot = (*next).max(now);
            *next = slot + self.interval;
            slot - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

struct Limited<'a> {
    inner: &'a dyn ScoringBackend,
    limiter: Option<&'a RateLimiter>,
}

impl Limited<'_> {
    fn gate(&self) {
        if let Some(l) = self.limiter {
            l.acquire();
        }
    }
}

impl ScoringBackend for Limited<'_> {
    fn descriptor(&self) -> &BackendDescriptor {
        self.inner.descriptor()
    }
    fn echo_logprobs(&self, text: &str, ctx: &Conditioning) -> Result<Vec<EchoToken>> {
        self.gate();
        self.inner.echo_logprobs(text, ctx)
    }
    fn predict_next(&self, context: &str, ctx: &Conditioning) -> Result<Prediction> {
        self.gate();
        self.inner.predict_next(context, ctx)
    }
    fn tokenize(&self, text: &str) -> Vec<String> {
        self.inner.tokenize(text)
    }
    fn request_count(&self) -> usize {
        self.inner.request_count()
    }
}

/// Where sequence scores come from.
pub enum ScoreSource<'a> {
    Backend(&'a dyn ScoringBackend),
    Precomputed {
        scores: &'a PrecomputedScores,
        model_id: String,
    },
}

impl ScoreSource<'_> {
    fn model_id(&self) -> &str {
        match self {
            ScoreSource::Backend(b) => &b.descriptor().model_id,
            ScoreSource::Precomputed { model_id, .. } => model_id,
        }
    }

    fn capability(&self) -> Capability {
        match self {
            ScoreSource::Backend(b) => b.descriptor().capability,
            ScoreSource::Precomputed { .. } => Capability::FullVocabLogprobs,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRun {
    /// One entry per (sample, variant), samples in input order, original first.
    pub scores: Vec<SequenceScore>,
    pub cache_hits: usize,
    pub newly_scored: usize,
}

fn is_retryable(e: &SmiError) -> bool {
    matches!(
        e,
        SmiError::Transport {
            retryable: true,
            ..
        } | SmiError::Interrupted { .. }
    )
}

fn score_one(
    sample: &SplitSample,
    variant: Variant,
    source: &ScoreSource,
    limiter: Option<&RateLimiter>,
    opts: &ScoreOptions,
) -> Result<SequenceScore> {
    let backend = match source {
        ScoreSource::Precomputed { scores, .. } => {
            return score_from_precomputed(sample, variant, scores)
        }
        ScoreSource::Backend(b) => Limited { inner: *b, limiter },
    };
    let mut resume = Vec::new();
    let mut attempt = 0;
    loop {
        let result = match backend.descriptor().capability {
            Capability::FullVocabLogprobs => score_continuation(sample, variant, &backend),
            Capability::PredictedTokenOnly => {
                score_predicted_only(sample, variant, &backend, opts, &resume)
            }
        };
        match result {
            Err(e) if is_retryable(&e) && attempt < opts.max_retries => {
                attempt += 1;
                log::warn!("{} ({variant:?}) attempt {attempt} failed: {e}", sample.id);
                if let SmiError::Interrupted { completed, .. } = e {
                    resume = completed;
                }
                std::thread::sleep(Duration::from_millis(
                    opts.retry_backoff_ms << (attempt - 1).min(10),
                ));
            }
            other => return other,
        }
    }
}

/// Scores both variants of every sample, consulting and filling `cache`.
///
/// Work runs in rounds of at most `max_in_flight` concurrent requests. After
/// each round the successes are appended to the cache in input order up to
/// the first failure, so an interrupted run followed by a resumed one leaves
/// the same cache file as a single uninterrupted run.
pub fn score_samples(
    samples: &[SplitSample],
    source: &ScoreSource,
    cache: &ScoreCache,
    opts: &ScoreOptions,
) -> Result<ScoreRun> {
    let items: Vec<(usize, Variant)> = samples
        .iter()
        .enumerate()
        .flat_map(|(i, s)| {
            let para = s
                .paraphrased_suffix
                .is_some()
                .then_some((i, Variant::Paraphrased));
            std::iter::once((i, Variant::Original)).chain(para)
        })
        .collect();
    let key = |i: usize, variant: Variant| CacheKey {
        model_id: source.model_id().to_string(),
        sample_id: samples[i].id.clone(),
        variant,
        capability: source.capability(),
    };
    let pending: Vec<(usize, Variant)> = items
        .iter()
        .copied()
        .filter(|&(i, v)| cache.get(&key(i, v)).is_none())
        .collect();
    let cache_hits = items.len() - pending.len();
    let limiter = opts.requests_per_second.map(RateLimiter::new);
    let width = opts.max_in_flight.max(1);

    for round in pending.chunks(width) {
        let results: Vec<Result<SequenceScore>> = std::thread::scope(|scope| {
            let handles: Vec<_> = round
                .iter()
                .map(|&(i, v)| {
                    let limiter = limiter.as_ref();
                    scope.spawn(move || score_one(&samples[i], v, source, limiter, opts))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("scoring worker panicked"))
                .collect()
        });
        for (&(i, v), result) in round.iter().zip(results) {
            cache.put(key(i, v), result?)?;
        }
    }

    let scores = items
        .iter()
        .map(|&(i, v)| cache.get(&key(i, v)).expect("every item scored or cached"))
        .collect();
    Ok(ScoreRun {
        scores,
        cache_hits,
        newly_scored: pending.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::{a_nll, MockBackend, MockLogprob, MockPredict};
    use std::collections::BTreeSet;

    fn sample() -> SplitSample {
        // prefix "Today is sunny." is 4 tokens; suffix "We walk in the park." is 6
        let mut s = crate::corpus::split_half(
            "s1",
            "Today is sunny. We walk in the park.",
            &crate::corpus::WordTokenizer,
            1,
        )
        .unwrap();
        s.paraphrased_suffix = Some("We stroll through the park.".into());
        s
    }

    fn full(lp: MockLogprob) -> MockBackend {
        MockBackend::new(Capability::FullVocabLogprobs, lp, MockPredict::Perfect)
    }

    fn predict(lp: MockLogprob, p: MockPredict, s: &SplitSample) -> MockBackend {
        MockBackend::new(Capability::PredictedTokenOnly, lp, p)
            .with_corpus([s.original_text(), s.paraphrased_text().unwrap()])
    }

    fn fast() -> ScoreOptions {
        ScoreOptions {
            retry_backoff_ms: 0,
            ..ScoreOptions::default()
        }
    }

    #[test]
    fn certainty_gives_zero() {
        let r = score_continuation(
            &sample(),
            Variant::Original,
            &full(MockLogprob::Constant(0.0)),
        )
        .unwrap();
        assert_eq!(r.anll_suffix, 0.0);
        assert_eq!(r.anll_whole, 0.0);
    }

    #[test]
    fn uniform_over_four_symbols() {
        let r = score_continuation(
            &sample(),
            Variant::Paraphrased,
            &full(MockLogprob::Uniform(4)),
        )
        .unwrap();
        assert!((r.anll_suffix - 4f64.ln()).abs() < 1e-12);
        assert!((r.anll_suffix - 1.386_294).abs() < 1e-6);
    }

    #[test]
    fn suffix_region_matches_prefix_length() {
        let s = sample();
        let r =
            score_continuation(&s, Variant::Original, &full(MockLogprob::Constant(-1.0))).unwrap();
        assert_eq!(r.split_index, s.split_index);
        assert_eq!(r.suffix_scores().len(), s.suffix_token_count);
        assert_eq!(r.token_scores.first().unwrap().position, 2);
    }

    #[test]
    fn scripted_suffix_mean() {
        let s = crate::corpus::split_half("s", "One two. A b c.", &crate::corpus::WordTokenizer, 1)
            .unwrap();
        // positions: One two . | A b c . ; suffix starts at 4
        let script = MockLogprob::Script(vec![0.0, -9.0, -9.0, -0.5, -1.0, -1.5, -1.0]);
        let r = score_continuation(&s, Variant::Original, &full(script)).unwrap();
        assert_eq!(r.split_index, 4);
        assert!((r.anll_suffix - 1.0).abs() < 1e-15);
    }

    #[test]
    fn vqa_context_is_forwarded_unchanged() {
        let mut s = sample();
        s.image_ref = Some("img/cat.png".into());
        s.question = Some("What is shown?".into());
        let b = full(MockLogprob::Constant(-1.0));
        score_continuation(&s, Variant::Original, &b).unwrap();
        let seen = b.seen_conditioning();
        assert_eq!(seen[0].image_ref.as_deref(), Some("img/cat.png"));
        assert_eq!(seen[0].question.as_deref(), Some("What is shown?"));
    }

    #[test]
    fn capability_is_enforced() {
        let s = sample();
        let p = predict(MockLogprob::Constant(-1.0), MockPredict::Perfect, &s);
        assert!(matches!(
            score_continuation(&s, Variant::Original, &p),
            Err(SmiError::Capability(_))
        ));
        let f = full(MockLogprob::Constant(-1.0));
        assert!(matches!(
            score_predicted_only(&s, Variant::Original, &f, &fast(), &[]),
            Err(SmiError::Capability(_))
        ));
    }

    #[test]
    fn perfect_predictor_equals_continuation() {
        let s = sample();
        let opts = ScoreOptions {
            region: ScoreRegion::Full,
            ..fast()
        };
        // both texts share the prefix, so the mock needs the sequence key
        // to know which one is being walked
        let b = MockBackend::new(
            Capability::PredictedTokenOnly,
            MockLogprob::Seeded(11),
            MockPredict::Perfect,
        )
        .with_keyed_corpus([
            (sequence_key(&s.id, Variant::Original), s.original_text()),
            (
                sequence_key(&s.id, Variant::Paraphrased),
                s.paraphrased_text().unwrap(),
            ),
        ]);
        for v in [Variant::Original, Variant::Paraphrased] {
            let cont = score_continuation(&s, v, &full(MockLogprob::Seeded(11))).unwrap();
            let pred = score_predicted_only(&s, v, &b, &opts, &[]).unwrap();
            assert_eq!(cont, pred);
        }
    }

    #[test]
    fn never_matching_gives_fallback() {
        let s = sample();
        let b = predict(MockLogprob::Constant(-1.0), MockPredict::Never, &s);
        let opts = ScoreOptions {
            fallback_nll: 9.2103,
            ..fast()
        };
        let r = score_predicted_only(&s, Variant::Original, &b, &opts, &[]).unwrap();
        assert!(r.token_scores.iter().all(|t| t.imputed));
        assert!((r.anll_suffix - 9.2103).abs() < 1e-12);
    }

    #[test]
    fn three_of_five_matched() {
        // suffix "a b c d e" of five tokens at positions 4..=8
        let s = crate::corpus::split_half("s", "x y. a b c d e", &crate::corpus::WordTokenizer, 1)
            .unwrap();
        assert_eq!(s.split_index, 4);
        let hits: BTreeSet<usize> = [4, 5, 6].into();
        let b = MockBackend::new(
            Capability::PredictedTokenOnly,
            MockLogprob::Constant(-1.0),
            MockPredict::MatchAt(hits),
        )
        .with_corpus([s.original_text()]);
        let opts = ScoreOptions {
            fallback_nll: 9.2103,
            ..fast()
        };
        let r = score_predicted_only(&s, Variant::Original, &b, &opts, &[]).unwrap();
        assert_eq!(r.token_scores.len(), 5);
        assert_eq!(r.token_scores.iter().filter(|t| t.imputed).count(), 2);
        assert!((r.anll_suffix - 4.28412).abs() < 1e-12);
        // the target, never the prediction, extends the context
        assert_eq!(b.request_count(), 5);
    }

    #[test]
    fn top_k_shortcut_uses_alternative() {
        let pred = Prediction {
            token: " cat".into(),
            logprob: -0.3,
            top: vec![(" cat".into(), -0.3), (" dog".into(), -1.7)],
        };
        let off = score_from_prediction(&pred, " dog", 3, &fast());
        assert!(off.imputed);
        let on = score_from_prediction(
            &pred,
            " dog",
            3,
            &ScoreOptions {
                use_top_k: true,
                ..fast()
            },
        );
        assert_eq!((on.logprob, on.imputed), (-1.7, false));
    }

    #[test]
    fn match_rule_trims_one_space() {
        assert!(tokens_match(" and", "and"));
        assert!(tokens_match("and", " and"));
        assert!(!tokens_match("  and", "and"));
        assert!(!tokens_match("And", "and"));
        assert!(!tokens_match("", ""));
    }

    #[test]
    fn interruption_carries_progress_and_resumes() {
        let s = sample();
        let flaky = predict(MockLogprob::Seeded(2), MockPredict::Perfect, &s).failing_after(3);
        let err = score_predicted_only(&s, Variant::Original, &flaky, &fast(), &[]).unwrap_err();
        let SmiError::Interrupted {
            completed, total, ..
        } = err
        else {
            panic!("expected interruption")
        };
        assert_eq!((completed.len(), total), (3, 6));
        let healthy = predict(MockLogprob::Seeded(2), MockPredict::Perfect, &s);
        let resumed =
            score_predicted_only(&s, Variant::Original, &healthy, &fast(), &completed).unwrap();
        assert_eq!(healthy.request_count(), 3);
        let fresh = score_predicted_only(&s, Variant::Original, &healthy, &fast(), &[]).unwrap();
        assert_eq!(resumed, fresh);
    }

    #[test]
    fn imputation_accounting() {
        let s = sample();
        let hits: BTreeSet<usize> = [5, 7].into();
        let b = predict(MockLogprob::Constant(-0.4), MockPredict::MatchAt(hits), &s);
        let r = score_predicted_only(&s, Variant::Original, &b, &fast(), &[]).unwrap();
        let imputed = r.token_scores.iter().filter(|t| t.imputed).count();
        assert_eq!(imputed + 2, s.suffix_token_count);
        assert_eq!(a_nll(&r.token_scores).unwrap(), r.anll_suffix);
    }

    #[test]
    fn driver_uses_cache_on_rerun() {
        let samples = vec![sample()];
        let b = full(MockLogprob::Seeded(5));
        let cache = ScoreCache::in_memory();
        let first = score_samples(&samples, &ScoreSource::Backend(&b), &cache, &fast()).unwrap();
        assert_eq!((first.newly_scored, first.cache_hits), (2, 0));
        let before = b.request_count();
        let second = score_samples(&samples, &ScoreSource::Backend(&b), &cache, &fast()).unwrap();
        assert_eq!(b.request_count(), before);
        assert_eq!(second.cache_hits, 2);
        assert_eq!(first.scores, second.scores);
    }

    #[test]
    fn driver_retries_transient_failures() {
        let s = sample();
        // fails from the fourth request on, so retries cannot help
        let b = predict(MockLogprob::Constant(-1.0), MockPredict::Perfect, &s).failing_after(3);
        let opts = ScoreOptions {
            max_retries: 2,
            max_in_flight: 1,
            ..fast()
        };
        let err = score_samples(
            &[s],
            &ScoreSource::Backend(&b),
            &ScoreCache::in_memory(),
            &opts,
        )
        .unwrap_err();
        assert!(matches!(err, SmiError::Interrupted { .. }));
        assert_eq!(b.request_count(), 6);
    }

    #[test]
    fn rate_limiter_spaces_requests() {
        let l = RateLimiter::new(200.0);
        let t = Instant::now();
        for _ in 0..5 {
            l.acquire();
        }
        assert!(t.elapsed() >= Duration::from_millis(19));
    }
}
