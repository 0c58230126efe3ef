//! The library end to end: corpus to verdict with mock backends.

use smi_core::corpus::{ingest_reader, prepare_all, InputMode, PrepareConfig, WordTokenizer};
use smi_core::harness::ScoredSet;
use smi_core::inference::{smi_decide, Decision, SmiConfig};
use smi_core::paraphrase::{
    paraphrase_all, MockParaphrase, MockParaphraser, ParaphraseCache, ParaphraseConfig,
};
use smi_core::scoring::{
    score_samples, Capability, Metric, MockBackend, MockLogprob, MockPredict, ScoreCache,
    ScoreOptions, ScoreSource,
};
use smi_core::store::JsonlCache;

const SENTENCES: [&str; 5] = [
    "The bridge was closed for repairs all winter.",
    "Commuters took the ferry across the bay instead.",
    "Ticket prices rose twice before the spring.",
    "The city council promised a refund to regular riders.",
    "Nobody has seen that refund yet.",
];

fn corpus(n: usize) -> String {
    (0..n)
        .map(|i| {
            let text: Vec<&str> = (0..4)
                .map(|j| SENTENCES[(i + j) % SENTENCES.len()])
                .collect();
            format!(
                "{}\n",
                serde_json::json!({"id": format!("d{i:03}"), "text": text.join(" ")})
            )
        })
        .collect()
}

fn scored_set(n: usize, seed: u64) -> ScoredSet {
    let records = ingest_reader(corpus(n).as_bytes(), InputMode::Text, "t").unwrap();
    let (samples, discards) = prepare_all(&records, &PrepareConfig::default(), &WordTokenizer);
    assert!(discards.is_empty());
    let para = paraphrase_all(
        &samples,
        &ParaphraseConfig::default(),
        &MockParaphraser::new(MockParaphrase::Rewrite),
        &ParaphraseCache::in_memory(),
    )
    .unwrap();
    assert_eq!(para.samples.len(), n);
    let backend = MockBackend::new(
        Capability::FullVocabLogprobs,
        MockLogprob::Seeded(seed),
        MockPredict::Perfect,
    );
    let opts = ScoreOptions {
        retry_backoff_ms: 0,
        ..ScoreOptions::default()
    };
    let run = score_samples(
        &para.samples,
        &ScoreSource::Backend(&backend),
        &ScoreCache::in_memory(),
        &opts,
    )
    .unwrap();
    assert_eq!(run.scores.len(), 2 * n);
    ScoredSet::from_scores("corpus", None, &run.scores, &[Metric::AnllSuffix]).unwrap()
}

#[test]
fn seeded_mock_corpus_is_not_flagged_against_itself() {
    let set = scored_set(40, 3);
    let cfg = SmiConfig {
        k: 4,
        ..SmiConfig::default()
    };
    let series = smi_core::harness::smi_series(&set, &cfg).unwrap();
    let verdict = smi_decide(&series, &series, &cfg).unwrap();
    assert_eq!(verdict.decision, Decision::NonMember);
    assert_eq!(verdict.beta, verdict.beta_aux);
}

#[test]
fn scoring_is_reproducible_across_runs() {
    assert_eq!(scored_set(12, 9), scored_set(12, 9));
    assert_ne!(scored_set(12, 9).original, scored_set(12, 10).original);
}

#[test]
fn paraphrase_cache_survives_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("para.jsonl");
    let records = ingest_reader(corpus(6).as_bytes(), InputMode::Text, "t").unwrap();
    let (samples, _) = prepare_all(&records, &PrepareConfig::default(), &WordTokenizer);
    let backend = MockParaphraser::new(MockParaphrase::Rewrite);
    let cfg = ParaphraseConfig::default();
    let first =
        paraphrase_all(&samples, &cfg, &backend, &JsonlCache::open(&path).unwrap()).unwrap();
    let second =
        paraphrase_all(&samples, &cfg, &backend, &JsonlCache::open(&path).unwrap()).unwrap();
    assert_eq!(first.cache_hits, 0);
    assert_eq!(second.cache_hits, 6);
    assert_eq!(first.samples, second.samples);
}
