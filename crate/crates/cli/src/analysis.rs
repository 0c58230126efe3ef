//! infer, baseline, evaluate and synth: everything downstream of scoring.

use std::path::{Path, PathBuf};

use clap::Args;
use serde_json::json;
use smi_core::baselines::{run_baseline, BaselineConfig, BaselineMethod};
use smi_core::harness::{
    ablate_margins, ablate_sample_size, emit_plot_data, evaluate_methods, generate_synthetic,
    series_csv, smi_series, EvalConfig, EvalResult, Method, PlotData, ScoredSet, SyntheticSpec,
};
use smi_core::inference::{smi_decide, SmiConfig};
use smi_core::scoring::Metric;
use smi_core::SmiError;

use crate::manifest::{DecisionParams, RunManifest};
use crate::sets::{load_set, read_benchmark, split_halves, write_benchmark, write_json};
use crate::Context;

fn smi_decision_params(cfg: &SmiConfig) -> DecisionParams {
    DecisionParams {
        k: Some(cfg.k),
        epsilon_1: Some(cfg.epsilon_1),
        epsilon_2: Some(cfg.epsilon_2),
        paired: Some(cfg.paired),
        asymptotic_switch: Some(cfg.asymptotic_switch),
        ..DecisionParams::default()
    }
}

fn baseline_decision_params(cfg: &BaselineConfig, into: &mut DecisionParams) {
    into.percentile = Some(cfg.percentile);
    into.alpha = Some(cfg.alpha);
    into.min_k_percent = Some(cfg.min_k_percent);
    into.asymptotic_switch = Some(cfg.asymptotic_switch);
}

/// `<report>.manifest.json` next to a report file.
fn manifest_path(report: &Path) -> PathBuf {
    let stem = report
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    report.with_file_name(format!("{stem}.manifest.json"))
}

fn create_parent(path: &Path) -> Result<(), SmiError> {
    match path.parent().filter(|p| !p.as_os_str().is_empty()) {
        Some(dir) => std::fs::create_dir_all(dir).map_err(|e| SmiError::io(dir, e)),
        None => Ok(()),
    }
}

fn set_metrics(cfg: &BaselineConfig) -> [Metric; 2] {
    [
        Metric::MinK {
            k: cfg.min_k_percent,
        },
        Metric::ZlibRatio,
    ]
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Candidate set: set.json, or scores.jsonl from `smi score`.
    #[arg(long)]
    pub candidate: PathBuf,
    /// Auxiliary non-member set, same formats.
    #[arg(long, required_unless_present = "self_audit")]
    pub aux: Option<PathBuf>,
    /// Audit the candidate against a seeded half of itself.
    #[arg(long, conflicts_with = "aux")]
    pub self_audit: bool,
    #[arg(long = "K", alias = "k")]
    pub k: Option<usize>,
    #[arg(long)]
    pub eps1: Option<f64>,
    #[arg(long)]
    pub eps2: Option<f64>,
    /// Use the paired z-test on per-sample differences.
    #[arg(long)]
    pub paired: bool,
    /// Verdict JSON.
    #[arg(long)]
    pub report: PathBuf,
    /// p-value series CSV; defaults to `<report>.series.csv`.
    #[arg(long)]
    pub series: Option<PathBuf>,
}

pub fn infer(ctx: &Context, args: &InferArgs) -> anyhow::Result<()> {
    let mut cfg = ctx.file.smi;
    cfg.k = args.k.unwrap_or(cfg.k);
    cfg.epsilon_1 = args.eps1.unwrap_or(cfg.epsilon_1);
    cfg.epsilon_2 = args.eps2.unwrap_or(cfg.epsilon_2);
    cfg.paired |= args.paired;
    cfg.order_seed = ctx.seed;
    cfg.validate()?;

    let mut manifest = RunManifest::start(
        "infer",
        ctx.seed,
        json!({"smi": cfg, "self_audit": args.self_audit}),
    );
    let metrics = set_metrics(&ctx.file.baseline);
    let candidate = load_set(&args.candidate, &metrics)?;
    manifest.fingerprint(&args.candidate)?;
    let (candidate, aux) = match &args.aux {
        Some(path) => {
            manifest.fingerprint(path)?;
            (candidate, load_set(path, &metrics)?)
        }
        None => split_halves(&candidate, ctx.seed)?,
    };
    let cand_series = smi_series(&candidate, &cfg)?;
    let aux_series = smi_series(&aux, &cfg)?;
    let verdict = smi_decide(&cand_series, &aux_series, &cfg)?;

    create_parent(&args.report)?;
    write_json(&args.report, &verdict)?;
    let series_path = args.series.clone().unwrap_or_else(|| {
        let stem = args
            .report
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        args.report.with_file_name(format!("{stem}.series.csv"))
    });
    create_parent(&series_path)?;
    std::fs::write(&series_path, series_csv(&[cand_series, aux_series]))
        .map_err(|e| SmiError::io(&series_path, e))?;

    manifest.decision = smi_decision_params(&cfg);
    manifest.outputs = vec![
        args.report.display().to_string(),
        series_path.display().to_string(),
    ];
    manifest.stat("candidate", candidate.name.clone());
    manifest.stat("aux", aux.name.clone());
    manifest.finish(&manifest_path(&args.report))?;
    println!(
        "{}: {} (beta {:.6} vs {:.6}, log p {:.4} vs {:.4})",
        verdict.set_name,
        if verdict.decision.is_member() {
            "member"
        } else {
            "non_member"
        },
        verdict.beta,
        verdict.beta_aux,
        verdict.log_p,
        verdict.log_p_aux
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    /// anll, mink, zlib or ddi (the `_dataset` suffixes are accepted too).
    #[arg(long)]
    pub method: String,
    #[arg(long)]
    pub candidate: PathBuf,
    #[arg(long)]
    pub aux: PathBuf,
    /// Percentile of the aux scores used as the sample threshold.
    #[arg(long)]
    pub percentile: Option<f64>,
    /// DDI significance level.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// k of the Min-k% score.
    #[arg(long)]
    pub min_k: Option<f64>,
    #[arg(long)]
    pub report: PathBuf,
}

pub fn baseline(ctx: &Context, args: &BaselineArgs) -> anyhow::Result<()> {
    let method = BaselineMethod::parse(&args.method)?;
    let mut cfg = ctx.file.baseline;
    cfg.percentile = args.percentile.unwrap_or(cfg.percentile);
    cfg.alpha = args.alpha.unwrap_or(cfg.alpha);
    cfg.min_k_percent = args.min_k.unwrap_or(cfg.min_k_percent);

    let mut manifest = RunManifest::start(
        "baseline",
        ctx.seed,
        json!({"method": method, "baseline": cfg}),
    );
    let metrics = set_metrics(&cfg);
    let candidate = load_set(&args.candidate, &metrics)?;
    let aux = load_set(&args.aux, &metrics)?;
    manifest.fingerprint(&args.candidate)?;
    manifest.fingerprint(&args.aux)?;
    let metric = cfg.metric_for(method);
    let verdict = run_baseline(
        method,
        &candidate.name,
        &candidate.metric_values(&metric)?,
        &aux.metric_values(&metric)?,
        &cfg,
    )?;

    create_parent(&args.report)?;
    write_json(&args.report, &verdict)?;
    baseline_decision_params(&cfg, &mut manifest.decision);
    manifest.outputs = vec![args.report.display().to_string()];
    manifest.finish(&manifest_path(&args.report))?;
    println!(
        "{}: {} by {}",
        verdict.set_name,
        if verdict.decision.is_member() {
            "member"
        } else {
            "non_member"
        },
        verdict.method
    );
    Ok(())
}

fn synthetic_spec(ctx: &Context) -> SyntheticSpec {
    SyntheticSpec {
        seed: ctx.seed,
        ..ctx.file.synthetic.clone()
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
}

pub fn synth(ctx: &Context, args: &SynthArgs) -> anyhow::Result<()> {
    let spec = synthetic_spec(ctx);
    let mut manifest = RunManifest::start("synth", ctx.seed, json!({"synthetic": spec}));
    let bench = generate_synthetic(&spec)?;
    let written = write_benchmark(&args.out, &spec, &bench)?;
    manifest.outputs = vec!["benchmark.json".into(), "sets/".into()];
    manifest.stat("sets", written);
    manifest.finish(&args.out.join("manifest.json"))?;
    eprintln!(
        "wrote {written} sets ({} member, {} non-member, {} aux)",
        bench.members.len(),
        bench.non_members.len(),
        bench.aux.len()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Output directory of `smi synth`; without it the benchmark is
    /// generated from the config's [synthetic] section.
    #[arg(long)]
    pub sets: Option<PathBuf>,
    /// Comma-separated methods: smi, anll, mink, zlib, ddi.
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<String>,
    /// Comma-separated sample sizes for the size ablation.
    #[arg(long, value_delimiter = ',')]
    pub ablate_n: Vec<usize>,
    /// Use the paired z-test for SMI.
    #[arg(long)]
    pub paired: bool,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn evaluate(ctx: &Context, args: &EvaluateArgs) -> anyhow::Result<()> {
    let section = &ctx.file.evaluate;
    let method_names = if args.methods.is_empty() {
        &section.methods
    } else {
        &args.methods
    };
    let methods = method_names
        .iter()
        .map(|m| Method::parse(m))
        .collect::<Result<Vec<_>, _>>()?;
    let mut cfg = EvalConfig {
        smi: ctx.file.smi,
        baseline: ctx.file.baseline,
    };
    cfg.smi.order_seed = ctx.seed;
    cfg.smi.paired |= args.paired;
    cfg.smi.validate()?;
    let ablate_n = if args.ablate_n.is_empty() {
        &section.ablate_n
    } else {
        &args.ablate_n
    };

    let spec = synthetic_spec(ctx);
    let mut manifest = RunManifest::start(
        "evaluate",
        ctx.seed,
        json!({
            "eval": cfg,
            "methods": method_names,
            "ablate_n": ablate_n,
            "margins": section.margins,
            "synthetic": if args.sets.is_none() { Some(&spec) } else { None },
        }),
    );
    let bench = match &args.sets {
        Some(dir) => {
            manifest.fingerprint(&dir.join(crate::sets::INDEX_FILE))?;
            read_benchmark(dir)?
        }
        None => generate_synthetic(&spec)?,
    };
    let candidates = bench.candidates();
    let results = evaluate_methods(&candidates, &bench.aux, &methods, &cfg)?;

    let mut ablation: Vec<(String, String, EvalResult)> = Vec::new();
    if !ablate_n.is_empty() {
        for (n, rs) in
            ablate_sample_size(&candidates, &bench.aux, ablate_n, &methods, &cfg, ctx.seed)?
        {
            ablation.extend(rs.into_iter().map(|r| ("n".to_string(), n.to_string(), r)));
        }
    }
    if !section.margins.is_empty() {
        for ((e1, e2), r) in ablate_margins(&candidates, &bench.aux, &section.margins, &cfg)? {
            ablation.push(("margins".into(), format!("{e1}/{e2}"), r));
        }
    }
    let series = candidates
        .iter()
        .chain(&bench.aux)
        .map(|s| smi_series(s, &cfg.smi))
        .collect::<Result<Vec<_>, _>>()?;
    let all_sets: Vec<ScoredSet> = candidates.iter().chain(&bench.aux).cloned().collect();
    let files = emit_plot_data(
        &args.out,
        &PlotData {
            series: &series,
            sets: &all_sets,
            ablation: &ablation,
            results: &results,
        },
    )?;

    manifest.decision = smi_decision_params(&cfg.smi);
    baseline_decision_params(&cfg.baseline, &mut manifest.decision);
    manifest.outputs = files;
    manifest.stat("candidate_sets", candidates.len());
    manifest.stat("aux_sets", bench.aux.len());
    manifest.finish(&args.out.join("manifest.json"))?;
    println!(
        "{:<14} {:>6} {:>7} {:>9}",
        "method", "f1", "recall", "precision"
    );
    for r in &results {
        println!(
            "{:<14} {:>6.3} {:>7.3} {:>9.3}",
            r.method, r.f1, r.recall, r.precision
        );
    }
    Ok(())
}
