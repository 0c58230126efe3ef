//! prepare, paraphrase and score: the stages that touch corpora and backends.

use std::path::{Path, PathBuf};

use clap::Args;
use serde_json::json;
use smi_core::corpus::{
    ingest_jsonl, prepare_all, read_jsonl, write_jsonl, InputMode, PrepareConfig, SplitSample,
    Tokenizer, WordTokenizer,
};
use smi_core::harness::ScoredSet;
use smi_core::paraphrase::{paraphrase_all, paraphrase_backend, ParaphraseCache, ParaphraseConfig};
use smi_core::scoring::{
    http::http_backend, parse_endpoint, score_samples, sequence_key, BackendDescriptor, CacheKey,
    Capability, Endpoint, Metric, MockBackend, PrecomputedScores, ScoreCache, ScoreOptions,
    ScoreRegion, ScoreRun, ScoreSource, ScoringBackend, SequenceScore, Variant,
};
use smi_core::{ErrorClass, SmiError};

use crate::manifest::{BackendRecord, DecisionParams, RunManifest};
use crate::sets::{parse_label, write_json};
use crate::Context;

fn create_dir(dir: &Path) -> Result<(), SmiError> {
    std::fs::create_dir_all(dir).map_err(|e| SmiError::io(dir, e))
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// JSONL corpus with `id` and `text` (or `rounds` in vqa mode) fields.
    pub input: PathBuf,
    /// text or vqa
    #[arg(long)]
    pub mode: Option<String>,
    /// Token budget per sample.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Samples whose suffix is shorter than this are discarded.
    #[arg(long)]
    pub min_suffix: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn prepare(ctx: &Context, args: &PrepareArgs) -> anyhow::Result<()> {
    let section = &ctx.file.prepare;
    let mode_name = args
        .mode
        .clone()
        .or(section.mode.clone())
        .unwrap_or_else(|| "text".into());
    let mode = match mode_name.as_str() {
        "text" => InputMode::Text,
        "vqa" => InputMode::Vqa,
        other => {
            return Err(
                SmiError::Config(format!("unknown mode \"{other}\"; expected text or vqa")).into(),
            )
        }
    };
    let defaults = PrepareConfig::default();
    let cfg = PrepareConfig {
        budget: args.budget.or(section.budget).unwrap_or(defaults.budget),
        min_suffix_tokens: args
            .min_suffix
            .or(section.min_suffix_tokens)
            .unwrap_or(defaults.min_suffix_tokens),
    };
    let mut manifest = RunManifest::start(
        "prepare",
        ctx.seed,
        json!({"mode": mode_name, "prepare": cfg, "tokenizer": WordTokenizer.id()}),
    );
    let records = ingest_jsonl(&args.input, mode)?;
    manifest.fingerprint(&args.input)?;
    let (kept, discards) = prepare_all(&records, &cfg, &WordTokenizer);

    create_dir(&args.out)?;
    write_jsonl(&args.out.join("prepared.jsonl"), &kept)?;
    write_jsonl(&args.out.join("discards.jsonl"), &discards)?;
    manifest.outputs = vec!["prepared.jsonl".into(), "discards.jsonl".into()];
    manifest.stat("records", records.len());
    manifest.stat("prepared", kept.len());
    manifest.stat("discarded", discards.len());
    manifest.finish(&args.out.join("manifest.json"))?;
    eprintln!(
        "prepared {} of {} records ({} discarded)",
        kept.len(),
        records.len(),
        discards.len()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct ParaphraseArgs {
    /// prepared.jsonl from `smi prepare`.
    pub input: PathBuf,
    /// `mock:rewrite` or an OpenAI-compatible base URL.
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_attempts: Option<u32>,
    #[arg(long)]
    pub template: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn paraphrase(ctx: &Context, args: &ParaphraseArgs) -> anyhow::Result<()> {
    let s = &ctx.file.paraphrase;
    let d = ParaphraseConfig::default();
    let backend_endpoint = args
        .backend
        .clone()
        .or(s.backend.clone())
        .unwrap_or(d.backend_endpoint);
    let model = args.model.clone().or(s.model.clone());
    if model.is_none() && !backend_endpoint.starts_with("mock:") {
        return Err(
            SmiError::Config("--model is required for HTTP paraphrase backends".into()).into(),
        );
    }
    let cfg = ParaphraseConfig {
        backend_endpoint,
        model_id: model.unwrap_or(d.model_id),
        temperature: args.temperature.or(s.temperature).unwrap_or(d.temperature),
        max_attempts: args
            .max_attempts
            .or(s.max_attempts)
            .unwrap_or(d.max_attempts),
        length_ratio_bounds: s.length_ratio_bounds.unwrap_or(d.length_ratio_bounds),
        template: args
            .template
            .clone()
            .or(s.template.clone())
            .unwrap_or(d.template),
        max_in_flight: ctx.max_in_flight.unwrap_or(d.max_in_flight),
        seed: ctx.seed,
    };
    cfg.validate()?;
    let mut manifest = RunManifest::start("paraphrase", ctx.seed, json!({"paraphrase": cfg}));
    let samples: Vec<SplitSample> = read_jsonl(&args.input)?;
    manifest.fingerprint(&args.input)?;

    create_dir(&args.out)?;
    let backend = paraphrase_backend(&cfg)?;
    let cache = ParaphraseCache::open(&args.out.join("paraphrase_cache.jsonl"))?;
    let run = paraphrase_all(&samples, &cfg, backend.as_ref(), &cache)?;
    write_jsonl(&args.out.join("paraphrased.jsonl"), &run.samples)?;
    write_jsonl(&args.out.join("paraphrase_discards.jsonl"), &run.discarded)?;

    let mut record = BackendRecord::new(
        "paraphraser",
        &cfg.backend_endpoint,
        backend.model_id(),
        cfg.max_in_flight,
    );
    record.prompt_template = Some(cfg.template.clone());
    manifest.backends.push(record);
    manifest.outputs = vec![
        "paraphrased.jsonl".into(),
        "paraphrase_discards.jsonl".into(),
        "paraphrase_cache.jsonl".into(),
    ];
    manifest.stat("template_hash", cfg.template_hash());
    manifest.stat("requests", backend.request_count());
    manifest.stat("cache_hits", run.cache_hits);
    manifest.stat("paraphrased", run.samples.len());
    manifest.stat("discarded", run.discarded.len());
    manifest.finish(&args.out.join("manifest.json"))?;
    eprintln!(
        "paraphrased {} samples ({} discarded, {} cache hits, {} requests)",
        run.samples.len(),
        run.discarded.len(),
        run.cache_hits,
        backend.request_count()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// paraphrased.jsonl from `smi paraphrase`.
    pub input: PathBuf,
    /// `mock:<spec>`, `file:<path>` or an OpenAI-compatible base URL.
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// full or predicted_only
    #[arg(long)]
    pub capability: Option<String>,
    /// NLL imputed for mispredicted tokens (predicted_only).
    #[arg(long)]
    pub fallback_nll: Option<f64>,
    /// suffix or full (predicted_only)
    #[arg(long)]
    pub region: Option<String>,
    /// Look targets up among the returned top alternatives (predicted_only).
    #[arg(long)]
    pub top_k: bool,
    #[arg(long)]
    pub requests_per_second: Option<f64>,
    /// Name of the written set; defaults to the input file stem.
    #[arg(long)]
    pub name: Option<String>,
    /// member or non_member, when known.
    #[arg(long)]
    pub label: Option<String>,
    /// On backend failure, write what was scored and exit 0.
    #[arg(long)]
    pub allow_partial: bool,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn score(ctx: &Context, args: &ScoreArgs) -> anyhow::Result<()> {
    let s = &ctx.file.score;
    let d = ScoreOptions::default();
    let endpoint = args
        .backend
        .clone()
        .or(s.backend.clone())
        .ok_or_else(|| SmiError::Config("--backend is required".into()))?;
    let capability = Capability::parse(
        args.capability
            .as_deref()
            .or(s.capability.as_deref())
            .unwrap_or("full"),
    )?;
    let region = match args
        .region
        .as_deref()
        .or(s.region.as_deref())
        .unwrap_or("suffix")
    {
        "suffix" => ScoreRegion::Suffix,
        "full" => ScoreRegion::Full,
        other => return Err(SmiError::Config(format!("unknown region \"{other}\"")).into()),
    };
    let opts = ScoreOptions {
        fallback_nll: args
            .fallback_nll
            .or(s.fallback_nll)
            .unwrap_or(d.fallback_nll),
        region,
        use_top_k: args.top_k || s.use_top_k.unwrap_or(false),
        max_in_flight: ctx.max_in_flight.unwrap_or(d.max_in_flight),
        max_retries: s.max_retries.unwrap_or(d.max_retries),
        retry_backoff_ms: s.retry_backoff_ms.unwrap_or(d.retry_backoff_ms),
        requests_per_second: args.requests_per_second.or(s.requests_per_second),
    };
    if !(opts.fallback_nll.is_finite() && opts.fallback_nll >= 0.0) {
        return Err(SmiError::Config(format!("invalid fallback NLL {}", opts.fallback_nll)).into());
    }
    let parsed = parse_endpoint(&endpoint)?;
    let model = args.model.clone().or(s.model.clone());
    if model.is_none() && matches!(parsed, Endpoint::Http(_)) {
        return Err(
            SmiError::Config("--model is required for HTTP scoring backends".into()).into(),
        );
    }
    let model = model.unwrap_or_else(|| "mock".into());
    let label = args.label.as_deref().map(parse_label).transpose()?;
    let name = args.name.clone().unwrap_or_else(|| {
        args.input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "set".into())
    });

    let mut descriptor = BackendDescriptor::new(endpoint.clone(), model.clone(), capability);
    descriptor.max_in_flight = opts.max_in_flight;
    if let Some(t) = &s.prompt_template {
        descriptor.prompt_template = Some(t.clone());
    }
    let mut manifest = RunManifest::start(
        "score",
        ctx.seed,
        json!({"backend": descriptor, "options": opts, "name": name, "label": label}),
    );
    let samples: Vec<SplitSample> = read_jsonl(&args.input)?;
    manifest.fingerprint(&args.input)?;
    create_dir(&args.out)?;
    let cache = ScoreCache::open(&args.out.join("score_cache.jsonl"))?;

    let (outcome, requests) = match &parsed {
        Endpoint::File(path) => {
            let pre = PrecomputedScores::load(path)?;
            manifest.fingerprint(path)?;
            let source = ScoreSource::Precomputed {
                scores: &pre,
                model_id: model.clone(),
            };
            (score_samples(&samples, &source, &cache, &opts), 0)
        }
        Endpoint::Mock(spec) => score_with_mock(spec, capability, &model, &samples, &cache, &opts)?,
        Endpoint::Http(_) => {
            let backend = http_backend(descriptor.clone());
            let run = score_samples(
                &samples,
                &ScoreSource::Backend(backend.as_ref()),
                &cache,
                &opts,
            );
            (run, backend.request_count())
        }
    };
    let (run, partial) = match outcome {
        Ok(run) => (run, false),
        Err(e) if args.allow_partial && e.class() == ErrorClass::Backend => {
            log::warn!("scoring stopped early: {e}");
            (
                partial_from_cache(&samples, &cache, &model, capability),
                true,
            )
        }
        Err(e) => {
            return Err(anyhow::Error::new(e).context(format!(
                "progress is kept in {}; rerun the same command to resume",
                args.out.join("score_cache.jsonl").display()
            )))
        }
    };

    write_jsonl(&args.out.join("scores.jsonl"), &run.scores)?;
    let metrics = [
        Metric::MinK {
            k: ctx.file.baseline.min_k_percent,
        },
        Metric::ZlibRatio,
    ];
    let set = ScoredSet::from_scores(&name, label, &run.scores, &metrics)?;
    write_json(&args.out.join("set.json"), &set)?;

    let mut record = BackendRecord::new("scorer", &endpoint, &model, opts.max_in_flight);
    record.capability = Some(capability_name(capability).into());
    record.prompt_template = descriptor.prompt_template.clone();
    manifest.backends.push(record);
    manifest.decision = DecisionParams {
        fallback_nll: (capability == Capability::PredictedTokenOnly).then_some(opts.fallback_nll),
        min_k_percent: Some(ctx.file.baseline.min_k_percent),
        ..DecisionParams::default()
    };
    manifest.outputs = vec![
        "scores.jsonl".into(),
        "set.json".into(),
        "score_cache.jsonl".into(),
    ];
    manifest.stat("partial", partial);
    manifest.stat("requests", requests);
    manifest.stat("cache_hits", run.cache_hits);
    manifest.stat("newly_scored", run.newly_scored);
    manifest.stat("paired_samples", set.len());
    manifest.finish(&args.out.join("manifest.json"))?;
    eprintln!(
        "scored {} sequences ({} from cache){}",
        run.scores.len(),
        run.cache_hits,
        if partial { "; run is partial" } else { "" }
    );
    Ok(())
}

fn capability_name(c: Capability) -> &'static str {
    match c {
        Capability::FullVocabLogprobs => "full",
        Capability::PredictedTokenOnly => "predicted_only",
    }
}

type Outcome = (Result<ScoreRun, SmiError>, usize);

/// Mock backends see every sample's texts under their sequence keys, so a
/// perfect predictor continues the right text even when samples share a prefix.
fn score_with_mock(
    spec: &str,
    capability: Capability,
    model: &str,
    samples: &[SplitSample],
    cache: &ScoreCache,
    opts: &ScoreOptions,
) -> anyhow::Result<Outcome> {
    let keyed = samples.iter().flat_map(|s| {
        let para = s
            .paraphrased_text()
            .map(|t| (sequence_key(&s.id, Variant::Paraphrased), t));
        std::iter::once((sequence_key(&s.id, Variant::Original), s.original_text())).chain(para)
    });
    let backend = MockBackend::from_spec(spec, capability)?
        .with_model_id(model)
        .with_keyed_corpus(keyed);
    let run = score_samples(samples, &ScoreSource::Backend(&backend), cache, opts);
    Ok((run, backend.request_count()))
}

/// Scores already in the cache, in input order, for samples with every
/// variant present.
fn partial_from_cache(
    samples: &[SplitSample],
    cache: &ScoreCache,
    model: &str,
    capability: Capability,
) -> ScoreRun {
    let get = |s: &SplitSample, variant| {
        cache.get(&CacheKey {
            model_id: model.to_string(),
            sample_id: s.id.clone(),
            variant,
            capability,
        })
    };
    let mut scores: Vec<SequenceScore> = Vec::new();
    for s in samples {
        let orig = get(s, Variant::Original);
        let para = s
            .paraphrased_suffix
            .as_ref()
            .map(|_| get(s, Variant::Paraphrased));
        match (orig, para) {
            (Some(o), None) => scores.push(o),
            (Some(o), Some(Some(p))) => scores.extend([o, p]),
            _ => {}
        }
    }
    ScoreRun {
        cache_hits: scores.len(),
        newly_scored: 0,
        scores,
    }
}
