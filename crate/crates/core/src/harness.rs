//! Evaluation harness: synthetic benchmarks with known labels, partial
//! membership mixes, method comparison by F1, ablations and plot data.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{run_baseline, BaselineConfig, BaselineMethod, BaselineVerdict};
use crate::error::{Result, SmiError};
use crate::inference::{
    p_value_series, slope_fit, smi_decide, Decision, PValueSeries, SeriesOrder, SmiConfig,
    SmiEvidence,
};
use crate::scoring::{Metric, MetricValue, SequenceScore, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Member,
    NonMember,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetCounts {
    pub member: usize,
    pub non_member: usize,
    pub aux: usize,
}

impl Default for SetCounts {
    fn default() -> Self {
        Self {
            member: 100,
            non_member: 100,
            aux: 100,
        }
    }
}

/// Gaussian model of per-sample A-NLL before and after paraphrasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_sets: SetCounts,
    pub set_size: usize,
    pub base_mean: f64,
    pub base_sd: f64,
    /// Mean paraphrase shift of member samples.
    pub member_shift: f64,
    /// Mean paraphrase shift of non-member and auxiliary samples.
    pub non_member_shift: f64,
    pub shift_sd: f64,
    /// Added to the original A-NLL mean of member sets.
    pub member_base_offset: f64,
    /// Added to the original A-NLL mean of non-member candidate sets. The
    /// auxiliary sets always sit at `base_mean`.
    pub non_member_base_offset: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let base_sd = 0.6;
        Self {
            n_sets: SetCounts::default(),
            set_size: 500,
            base_mean: 3.0,
            base_sd,
            member_shift: 0.3 * base_sd,
            non_member_shift: 0.0,
            shift_sd: 0.2 * base_sd,
            member_base_offset: 0.0,
            non_member_base_offset: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SmiError::Config(m));
        if self.set_size < 2 {
            return bad(format!(
                "set_size must be at least 2, got {}",
                self.set_size
            ));
        }
        if self.n_sets.member + self.n_sets.non_member == 0 || self.n_sets.aux == 0 {
            return bad("need at least one candidate set and one aux set".into());
        }
        if !(self.base_sd > 0.0 && self.shift_sd >= 0.0) {
            return bad("standard deviations must be positive".into());
        }
        if self.member_shift < 0.0 || self.non_member_shift < 0.0 {
            return bad("paraphrase shifts must be non-negative".into());
        }
        if self.member_shift < self.non_member_shift {
            return bad("member shift must not be below the non-member shift".into());
        }
        let finite = [
            self.base_mean,
            self.member_base_offset,
            self.non_member_base_offset,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("means must be finite".into());
        }
        Ok(())
    }
}

/// Paired per-sample scores of one set, plus any extra metric columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSet {
    pub name: String,
    /// Ground truth; `None` for auxiliary sets.
    pub label: Option<Label>,
    pub ids: Vec<String>,
    /// Suffix A-NLL of the original samples.
    pub original: Vec<f64>,
    /// Suffix A-NLL of the half-paraphrased samples.
    pub paraphrased: Vec<f64>,
    /// Membership scores by metric id, aligned with `ids`. Suffix A-NLL is
    /// always available through `original`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metrics: BTreeMap<String, Vec<f64>>,
    /// (member, non-member) sample counts when the set is a mix.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub composition: Option<(usize, usize)>,
}

impl ScoredSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Builds a set from sequence scores, pairing variants by sample id.
    /// Samples without both variants are dropped from both sides.
    pub fn from_scores(
        name: &str,
        label: Option<Label>,
        scores: &[SequenceScore],
        metrics: &[Metric],
    ) -> Result<Self> {
        let mut orig: BTreeMap<&str, &SequenceScore> = BTreeMap::new();
        let mut para: BTreeMap<&str, &SequenceScore> = BTreeMap::new();
        let mut order = Vec::new();
        for s in scores {
            match s.variant {
                Variant::Original => {
                    if orig.insert(&s.sample_id, s).is_none() {
                        order.push(s.sample_id.as_str());
                    }
                }
                Variant::Paraphrased => {
                    para.insert(&s.sample_id, s);
                }
            }
        }
        let mut set = ScoredSet {
            name: name.to_string(),
            label,
            ids: Vec::new(),
            original: Vec::new(),
            paraphrased: Vec::new(),
            metrics: BTreeMap::new(),
            composition: None,
        };
        for id in order {
            let Some(p) = para.get(id) else {
                log::info!("{name}: {id} has no paraphrased score; dropping the pair");
                continue;
            };
            let o = orig[id];
            set.ids.push(id.to_string());
            set.original.push(o.anll_suffix);
            set.paraphrased.push(p.anll_suffix);
            for m in metrics {
                let v = crate::baselines::aggregate_membership_score(o, m)?;
                set.metrics.entry(v.metric).or_default().push(v.value);
            }
        }
        Ok(set)
    }

    /// Per-sample membership scores for `metric`.
    pub fn metric_values(&self, metric: &Metric) -> Result<Vec<MetricValue>> {
        let id = metric.id();
        let values = match metric {
            Metric::AnllSuffix => &self.original,
            _ => self
                .metrics
                .get(&id)
                .ok_or_else(|| SmiError::Config(format!("set {} has no {id} scores", self.name)))?,
        };
        Ok(self
            .ids
            .iter()
            .zip(values)
            .map(|(sid, &value)| MetricValue {
                sample_id: sid.clone(),
                metric: id.clone(),
                value,
            })
            .collect())
    }

    /// Keeps the samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> ScoredSet {
        ScoredSet {
            name: self.name.clone(),
            label: self.label,
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            original: indices.iter().map(|&i| self.original[i]).collect(),
            paraphrased: indices.iter().map(|&i| self.paraphrased[i]).collect(),
            metrics: self
                .metrics
                .iter()
                .map(|(k, v)| (k.clone(), indices.iter().map(|&i| v[i]).collect()))
                .collect(),
            composition: self.composition,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticBenchmark {
    pub members: Vec<ScoredSet>,
    pub non_members: Vec<ScoredSet>,
    pub aux: Vec<ScoredSet>,
}

impl SyntheticBenchmark {
    /// Member sets followed by non-member sets.
    pub fn candidates(&self) -> Vec<ScoredSet> {
        self.members
            .iter()
            .chain(&self.non_members)
            .cloned()
            .collect()
    }
}

fn synth_set(
    spec: &SyntheticSpec,
    stream: u64,
    name: String,
    label: Option<Label>,
    mean: f64,
    shift: f64,
) -> ScoredSet {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream);
    let base = Normal::new(mean, spec.base_sd).expect("validated sd");
    let delta = Normal::new(shift, spec.shift_sd).expect("validated sd");
    let mut original = Vec::with_capacity(spec.set_size);
    let mut paraphrased = Vec::with_capacity(spec.set_size);
    for _ in 0..spec.set_size {
        let o = base.sample(&mut rng).max(0.0);
        original.push(o);
        paraphrased.push((o + delta.sample(&mut rng)).max(0.0));
    }
    ScoredSet {
        ids: (0..spec.set_size)
            .map(|i| format!("{name}/{i:05}"))
            .collect(),
        name,
        label,
        original,
        paraphrased,
        metrics: BTreeMap::new(),
        composition: None,
    }
}

/// Draws every set of the benchmark. Each set has its own ChaCha stream, so
/// generation order does not affect the values.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticBenchmark> {
    spec.validate()?;
    let c = spec.n_sets;
    let make = |range: std::ops::Range<usize>, offset: usize, prefix: &str, label, mean, shift| {
        range
            .into_par_iter()
            .map(|i| {
                synth_set(
                    spec,
                    (offset + i) as u64,
                    format!("{prefix}-{i:03}"),
                    label,
                    mean,
                    shift,
                )
            })
            .collect::<Vec<_>>()
    };
    Ok(SyntheticBenchmark {
        members: make(
            0..c.member,
            0,
            "member",
            Some(Label::Member),
            spec.base_mean + spec.member_base_offset,
            spec.member_shift,
        ),
        non_members: make(
            0..c.non_member,
            c.member,
            "non_member",
            Some(Label::NonMember),
            spec.base_mean + spec.non_member_base_offset,
            spec.non_member_shift,
        ),
        aux: make(
            0..c.aux,
            c.member + c.non_member,
            "aux",
            None,
            spec.base_mean,
            spec.non_member_shift,
        ),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixSpec {
    pub member_fraction: f64,
    pub set_size: usize,
    pub seed: u64,
}

impl MixSpec {
    pub fn member_count(&self) -> usize {
        (self.member_fraction * self.set_size as f64).round() as usize
    }
}

/// Draws round(r·N) samples from the member pool and the rest from the
/// non-member pool, then shuffles them together. The set is labelled member
/// when it contains any member data.
pub fn mix_partial_membership(
    member_pool: &ScoredSet,
    non_member_pool: &ScoredSet,
    spec: &MixSpec,
) -> Result<ScoredSet> {
    if !(0.0..=1.0).contains(&spec.member_fraction) {
        return Err(SmiError::Config(format!(
            "member fraction {} outside [0, 1]",
            spec.member_fraction
        )));
    }
    let m = spec.member_count();
    let nm = spec.set_size - m;
    if member_pool.len() < m || non_member_pool.len() < nm {
        return Err(SmiError::Config(format!(
            "pools of {} and {} cannot supply {m} members and {nm} non-members",
            member_pool.len(),
            non_member_pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pick = |pool: &ScoredSet, k: usize, rng: &mut ChaCha8Rng| {
        let mut idx = rand::seq::index::sample(rng, pool.len(), k).into_vec();
        idx.sort_unstable();
        pool.select(&idx)
    };
    let a = pick(member_pool, m, &mut rng);
    let b = pick(non_member_pool, nm, &mut rng);
    let mut rows: Vec<(String, f64, f64)> = a
        .ids
        .into_iter()
        .zip(a.original)
        .zip(a.paraphrased)
        .chain(b.ids.into_iter().zip(b.original).zip(b.paraphrased))
        .map(|((id, o), p)| (id, o, p))
        .collect();
    rows.shuffle(&mut rng);
    Ok(ScoredSet {
        name: format!("mix-r{:.2}-{}", spec.member_fraction, spec.seed),
        label: Some(if m > 0 {
            Label::Member
        } else {
            Label::NonMember
        }),
        ids: rows.iter().map(|r| r.0.clone()).collect(),
        original: rows.iter().map(|r| r.1).collect(),
        paraphrased: rows.iter().map(|r| r.2).collect(),
        metrics: BTreeMap::new(),
        composition: Some((m, nm)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum Method {
    Smi,
    Baseline { baseline: BaselineMethod },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Smi => "smi",
            Method::Baseline { baseline } => baseline.name(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        if s == "smi" {
            return Ok(Method::Smi);
        }
        BaselineMethod::parse(s).map(|baseline| Method::Baseline { baseline })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub smi: SmiConfig,
    pub baseline: BaselineConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn add(&mut self, truth: Label, predicted: Decision) {
        match (truth, predicted) {
            (Label::Member, Decision::Member) => self.tp += 1,
            (Label::NonMember, Decision::Member) => self.fp += 1,
            (Label::NonMember, Decision::NonMember) => self.tn += 1,
            (Label::Member, Decision::NonMember) => self.fn_ += 1,
        }
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    /// Share of sets predicted member.
    pub fn positive_rate(&self) -> f64 {
        ratio(self.tp + self.fp, self.tp + self.fp + self.tn + self.fn_)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetVerdict {
    pub set_name: String,
    pub label: Label,
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub method: String,
    pub f1: f64,
    pub recall: f64,
    pub precision: f64,
    pub confusion: Confusion,
    pub per_set_verdicts: Vec<SetVerdict>,
    pub config: EvalConfig,
}

impl EvalResult {
    pub fn from_verdicts(method: &str, verdicts: Vec<SetVerdict>, config: EvalConfig) -> Self {
        let mut confusion = Confusion::default();
        for v in &verdicts {
            confusion.add(v.label, v.decision);
        }
        Self {
            method: method.to_string(),
            f1: confusion.f1(),
            recall: confusion.recall(),
            precision: confusion.precision(),
            confusion,
            per_set_verdicts: verdicts,
            config,
        }
    }

    pub fn member_rate(&self) -> f64 {
        self.confusion.positive_rate()
    }
}

fn label_of(set: &ScoredSet) -> Result<Label> {
    set.label
        .ok_or_else(|| SmiError::Config(format!("candidate set {} has no label", set.name)))
}

fn aux_for(aux: &[ScoredSet], i: usize) -> Result<&ScoredSet> {
    if aux.is_empty() {
        return Err(SmiError::Config("no auxiliary sets".into()));
    }
    Ok(&aux[i % aux.len()])
}

pub fn smi_series(set: &ScoredSet, cfg: &SmiConfig) -> Result<PValueSeries> {
    p_value_series(
        &set.name,
        &set.original,
        &set.paraphrased,
        cfg,
        SeriesOrder::Seeded(cfg.order_seed),
    )
}

/// Series-derived evidence for one candidate/aux pair; margins can be
/// re-applied to it without recomputing anything.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmiRecord {
    pub set_name: String,
    pub label: Label,
    pub evidence: SmiEvidence,
}

/// Computes the SMI evidence of every candidate against aux set `i mod |aux|`.
pub fn smi_evidence(
    candidates: &[ScoredSet],
    aux: &[ScoredSet],
    cfg: &SmiConfig,
) -> Result<Vec<SmiRecord>> {
    cfg.validate()?;
    candidates
        .par_iter()
        .enumerate()
        .map(|(i, set)| {
            let cand = smi_series(set, cfg)?;
            let reference = smi_series(aux_for(aux, i)?, cfg)?;
            let verdict = smi_decide(&cand, &reference, cfg)?;
            Ok(SmiRecord {
                set_name: set.name.clone(),
                label: label_of(set)?,
                evidence: SmiEvidence {
                    beta: verdict.beta,
                    beta_aux: verdict.beta_aux,
                    log_p: verdict.log_p,
                    log_p_aux: verdict.log_p_aux,
                },
            })
        })
        .collect()
}

/// Applies margins to stored evidence.
pub fn decide_from_evidence(
    records: &[SmiRecord],
    epsilon_1: f64,
    epsilon_2: f64,
    cfg: &EvalConfig,
) -> EvalResult {
    let verdicts = records
        .iter()
        .map(|r| SetVerdict {
            set_name: r.set_name.clone(),
            label: r.label,
            decision: r.evidence.decide(epsilon_1, epsilon_2),
        })
        .collect();
    let mut config = *cfg;
    config.smi.epsilon_1 = epsilon_1;
    config.smi.epsilon_2 = epsilon_2;
    EvalResult::from_verdicts("smi", verdicts, config)
}

/// Per-set baseline verdicts of candidate `i` against aux set `i mod |aux|`.
pub fn baseline_verdicts(
    method: BaselineMethod,
    candidates: &[ScoredSet],
    aux: &[ScoredSet],
    cfg: &BaselineConfig,
) -> Result<Vec<BaselineVerdict>> {
    let metric = cfg.metric_for(method);
    candidates
        .par_iter()
        .enumerate()
        .map(|(i, set)| {
            let a = aux_for(aux, i)?;
            run_baseline(
                method,
                &set.name,
                &set.metric_values(&metric)?,
                &a.metric_values(&metric)?,
                cfg,
            )
        })
        .collect()
}

/// Runs each method on every labelled candidate set and scores the
/// dataset-level predictions with member as the positive class.
pub fn evaluate_methods(
    candidates: &[ScoredSet],
    aux: &[ScoredSet],
    methods: &[Method],
    cfg: &EvalConfig,
) -> Result<Vec<EvalResult>> {
    methods
        .iter()
        .map(|method| match method {
            Method::Smi => {
                let records = smi_evidence(candidates, aux, &cfg.smi)?;
                Ok(decide_from_evidence(
                    &records,
                    cfg.smi.epsilon_1,
                    cfg.smi.epsilon_2,
                    cfg,
                ))
            }
            Method::Baseline { baseline } => {
                let verdicts = baseline_verdicts(*baseline, candidates, aux, &cfg.baseline)?
                    .into_iter()
                    .zip(candidates)
                    .map(|(v, set)| {
                        Ok(SetVerdict {
                            set_name: v.set_name,
                            label: label_of(set)?,
                            decision: v.decision,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(EvalResult::from_verdicts(method.name(), verdicts, *cfg))
            }
        })
        .collect()
}

/// Re-evaluates with every set cut to its first `n` samples in a seeded order.
pub fn ablate_sample_size(
    candidates: &[ScoredSet],
    aux: &[ScoredSet],
    n_grid: &[usize],
    methods: &[Method],
    cfg: &EvalConfig,
    seed: u64,
) -> Result<Vec<(usize, Vec<EvalResult>)>> {
    let smallest = candidates
        .iter()
        .chain(aux)
        .map(ScoredSet::len)
        .min()
        .unwrap_or(0);
    if let Some(&n) = n_grid.iter().find(|&&n| n > smallest) {
        return Err(SmiError::Config(format!(
            "sample size {n} exceeds the smallest set ({smallest})"
        )));
    }
    let truncate = |sets: &[ScoredSet], n: usize| -> Vec<ScoredSet> {
        sets.iter()
            .map(|s| {
                let perm = SeriesOrder::Seeded(seed).permutation(s.len());
                s.select(&perm[..n])
            })
            .collect()
    };
    n_grid
        .iter()
        .map(|&n| {
            Ok((
                n,
                evaluate_methods(&truncate(candidates, n), &truncate(aux, n), methods, cfg)?,
            ))
        })
        .collect()
}

/// Re-decides SMI verdicts for each margin pair from one evidence pass.
pub fn ablate_margins(
    candidates: &[ScoredSet],
    aux: &[ScoredSet],
    grid: &[(f64, f64)],
    cfg: &EvalConfig,
) -> Result<Vec<((f64, f64), EvalResult)>> {
    if grid.is_empty() {
        return Err(SmiError::Config("margin grid is empty".into()));
    }
    let records = smi_evidence(candidates, aux, &cfg.smi)?;
    Ok(grid
        .iter()
        .map(|&(e1, e2)| ((e1, e2), decide_from_evidence(&records, e1, e2, cfg)))
        .collect())
}

/// Dataset-level A-NLL vote with a fixed threshold in place of the aux percentile.
pub fn threshold_sweep(
    candidates: &[ScoredSet],
    thresholds: &[f64],
    cfg: &EvalConfig,
) -> Result<Vec<(f64, EvalResult)>> {
    thresholds
        .iter()
        .map(|&t| {
            let verdicts = candidates
                .iter()
                .map(|set| {
                    let values = set.metric_values(&Metric::AnllSuffix)?;
                    let sv = crate::baselines::sample_level_classify(&values, t);
                    Ok(SetVerdict {
                        set_name: set.name.clone(),
                        label: label_of(set)?,
                        decision: crate::baselines::dataset_level_vote(&sv)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((t, EvalResult::from_verdicts("anll_dataset", verdicts, *cfg)))
        })
        .collect()
}

pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(SmiError::Domain("median of an empty list".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    Ok(if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    })
}

/// Default histogram bin width in nats.
pub const HISTOGRAM_BIN_WIDTH: f64 = 0.1;

/// Inputs to [`emit_plot_data`]; any part may be empty.
#[derive(Debug, Clone, Default)]
pub struct PlotData<'a> {
    pub series: &'a [PValueSeries],
    pub sets: &'a [ScoredSet],
    /// (axis name, axis value, result) rows.
    pub ablation: &'a [(String, String, EvalResult)],
    pub results: &'a [EvalResult],
}

/// Columns: set_name,n,log_p.
pub fn series_csv(series: &[PValueSeries]) -> String {
    let mut out = String::from("set_name,n,log_p\n");
    for s in series {
        for p in &s.points {
            let _ = writeln!(out, "{},{},{}", s.set_name, p.n, p.log_p);
        }
    }
    out
}

/// Columns: set_name,variant,bin_start,bin_end,count. Bins of `width` nats
/// start at 0 and cover the largest A-NLL across all sets.
pub fn histogram_csv(sets: &[ScoredSet], width: f64) -> String {
    let max = sets
        .iter()
        .flat_map(|s| s.original.iter().chain(&s.paraphrased))
        .fold(0.0f64, |a, &b| a.max(b));
    let bins = ((max / width).floor() as usize + 1).max(1);
    let mut out = String::from("set_name,variant,bin_start,bin_end,count\n");
    for s in sets {
        for (variant, values) in [("original", &s.original), ("paraphrased", &s.paraphrased)] {
            let mut counts = vec![0usize; bins];
            for &v in values {
                counts[((v / width).floor() as usize).min(bins - 1)] += 1;
            }
            for (b, c) in counts.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{variant},{},{},{c}",
                    s.name,
                    b as f64 * width,
                    (b + 1) as f64 * width
                );
            }
        }
    }
    out
}

/// Columns: axis,value,method,f1,recall,precision.
pub fn ablation_csv(rows: &[(String, String, EvalResult)]) -> String {
    let mut out = String::from("axis,value,method,f1,recall,precision\n");
    for (axis, value, r) in rows {
        let _ = writeln!(
            out,
            "{axis},{value},{},{},{},{}",
            r.method, r.f1, r.recall, r.precision
        );
    }
    out
}

/// Writes series.csv, histogram.csv, ablation.csv and results.json under
/// `dir`, skipping parts with no data. Returns the written file names.
pub fn emit_plot_data(dir: &Path, data: &PlotData) -> Result<Vec<String>> {
    if data.series.is_empty()
        && data.sets.is_empty()
        && data.ablation.is_empty()
        && data.results.is_empty()
    {
        return Err(SmiError::Domain("nothing to emit".into()));
    }
    fs::create_dir_all(dir).map_err(|e| SmiError::io(dir, e))?;
    let mut files = Vec::new();
    let mut write = |name: &str, body: String| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| SmiError::io(&path, e))?;
        files.push(name.to_string());
        Ok(())
    };
    if !data.series.is_empty() {
        write("series.csv", series_csv(data.series))?;
    }
    if !data.sets.is_empty() {
        write(
            "histogram.csv",
            histogram_csv(data.sets, HISTOGRAM_BIN_WIDTH),
        )?;
    }
    if !data.ablation.is_empty() {
        write("ablation.csv", ablation_csv(data.ablation))?;
    }
    if !data.results.is_empty() {
        write(
            "results.json",
            serde_json::to_string_pretty(data.results)? + "\n",
        )?;
    }
    Ok(files)
}

/// Slope of the p-value series of each set; used by plots and diagnostics.
pub fn slopes(sets: &[ScoredSet], cfg: &SmiConfig) -> Result<Vec<(String, f64)>> {
    sets.par_iter()
        .map(|s| Ok((s.name.clone(), slope_fit(&smi_series(s, cfg)?)?.beta)))
        .collect()
}
