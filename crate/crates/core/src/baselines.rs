//! Comparison methods that only see the candidate set and an auxiliary
//! non-member set: thresholded sample-level scores with a dataset-level
//! vote, and a two-sided z-test between the two score distributions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SmiError};
use crate::inference::{z_test_two_sided, Decision, ScoreSet};
use crate::scoring::{min_k_score, suffix_a_nll, zlib_ratio, Metric, MetricValue, SequenceScore};

pub const DEFAULT_PERCENTILE: f64 = 45.0;
pub const DEFAULT_ALPHA: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRule {
    pub metric: Metric,
    pub percentile: f64,
}

impl ThresholdRule {
    pub fn new(metric: Metric) -> Self {
        Self {
            metric,
            percentile: DEFAULT_PERCENTILE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.percentile > 0.0 && self.percentile < 100.0) {
            return Err(SmiError::Config(format!(
                "percentile must be in (0, 100), got {}",
                self.percentile
            )));
        }
        Ok(())
    }
}

/// Nearest-rank percentile: the ⌈p/100·n⌉-th smallest value.
pub fn percentile_threshold(values: &[f64], percentile: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(SmiError::Domain("percentile of an empty list".into()));
    }
    if !(percentile > 0.0 && percentile <= 100.0) {
        return Err(SmiError::Domain(format!(
            "percentile {percentile} outside (0, 100]"
        )));
    }
    let n = values.len();
    let rank = ((percentile * n as f64 / 100.0) - 1e-9)
        .ceil()
        .clamp(1.0, n as f64) as usize;
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    Ok(sorted[rank - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleVerdicts {
    pub predictions: BTreeMap<String, bool>,
    pub positive_fraction: f64,
}

/// Predicts member for every value strictly below `threshold`.
pub fn sample_level_classify(values: &[MetricValue], threshold: f64) -> SampleVerdicts {
    let predictions: BTreeMap<String, bool> = values
        .iter()
        .map(|v| (v.sample_id.clone(), v.value < threshold))
        .collect();
    let positives = predictions.values().filter(|&&m| m).count();
    SampleVerdicts {
        positive_fraction: if predictions.is_empty() {
            0.0
        } else {
            positives as f64 / predictions.len() as f64
        },
        predictions,
    }
}

/// Member iff strictly more than half the samples are predicted members.
pub fn dataset_level_vote(verdicts: &SampleVerdicts) -> Result<Decision> {
    if verdicts.predictions.is_empty() {
        return Err(SmiError::Domain("vote over zero samples".into()));
    }
    let positives = verdicts.predictions.values().filter(|&&m| m).count();
    Ok(if 2 * positives > verdicts.predictions.len() {
        Decision::Member
    } else {
        Decision::NonMember
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DdiOutcome {
    pub decision: Decision,
    pub z: f64,
    pub log_p: f64,
}

/// Two-sided z-test between candidate and auxiliary scores; member iff p < α.
pub fn ddi_decide(candidate: &[f64], aux: &[f64], alpha: f64, switch: f64) -> Result<DdiOutcome> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(SmiError::Config(format!(
            "alpha must be in (0, 1), got {alpha}"
        )));
    }
    let r = z_test_two_sided(
        &ScoreSet::from_values(candidate)?,
        &ScoreSet::from_values(aux)?,
        switch,
    );
    Ok(DdiOutcome {
        decision: if r.log_p < alpha.ln() {
            Decision::Member
        } else {
            Decision::NonMember
        },
        z: r.z,
        log_p: r.log_p,
    })
}

/// Computes `metric` over the suffix tokens of `score`.
pub fn aggregate_membership_score(score: &SequenceScore, metric: &Metric) -> Result<MetricValue> {
    let value = match metric {
        Metric::AnllSuffix => suffix_a_nll(&score.token_scores, score.split_index)?,
        Metric::MinK { k } => min_k_score(score.suffix_scores(), *k)?,
        Metric::ZlibRatio => zlib_ratio(score.suffix_scores(), &score.suffix_text)?,
    };
    Ok(MetricValue {
        sample_id: score.sample_id.clone(),
        metric: metric.id(),
        value,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    AnllDataset,
    MinkDataset,
    ZlibDataset,
    Ddi,
}

impl BaselineMethod {
    pub const ALL: [BaselineMethod; 4] = [
        BaselineMethod::AnllDataset,
        BaselineMethod::MinkDataset,
        BaselineMethod::ZlibDataset,
        BaselineMethod::Ddi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineMethod::AnllDataset => "anll_dataset",
            BaselineMethod::MinkDataset => "mink_dataset",
            BaselineMethod::ZlibDataset => "zlib_dataset",
            BaselineMethod::Ddi => "ddi",
        }
    }

    /// Accepts the full name or the short form without `_dataset`.
    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s || m.name().strip_suffix("_dataset") == Some(s))
            .ok_or_else(|| SmiError::Config(format!("unknown baseline \"{s}\"")))
    }

    /// Metric a thresholded method scores with; DDI uses its own setting.
    pub fn default_metric(self) -> Metric {
        match self {
            BaselineMethod::AnllDataset | BaselineMethod::Ddi => Metric::AnllSuffix,
            BaselineMethod::MinkDataset => Metric::MinK {
                k: crate::scoring::DEFAULT_MIN_K_PERCENT,
            },
            BaselineMethod::ZlibDataset => Metric::ZlibRatio,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub percentile: f64,
    pub alpha: f64,
    pub min_k_percent: f64,
    pub ddi_metric: Metric,
    pub asymptotic_switch: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            percentile: DEFAULT_PERCENTILE,
            alpha: DEFAULT_ALPHA,
            min_k_percent: crate::scoring::DEFAULT_MIN_K_PERCENT,
            ddi_metric: Metric::AnllSuffix,
            asymptotic_switch: 8.0,
        }
    }
}

impl BaselineConfig {
    pub fn metric_for(&self, method: BaselineMethod) -> Metric {
        match method {
            BaselineMethod::Ddi => self.ddi_metric,
            BaselineMethod::MinkDataset => Metric::MinK {
                k: self.min_k_percent,
            },
            other => other.default_metric(),
        }
    }
}

/// Dataset-level verdict of one baseline, in the same shape as the SMI verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineVerdict {
    pub method: String,
    pub set_name: String,
    pub decision: Decision,
    pub metric: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_p: Option<f64>,
}

/// Runs `method` on per-sample metric values of the candidate and auxiliary
/// sets; both must already be computed with `cfg.metric_for(method)`.
pub fn run_baseline(
    method: BaselineMethod,
    set_name: &str,
    candidate: &[MetricValue],
    aux: &[MetricValue],
    cfg: &BaselineConfig,
) -> Result<BaselineVerdict> {
    let metric = cfg.metric_for(method).id();
    let aux_values: Vec<f64> = aux.iter().map(|v| v.value).collect();
    if method == BaselineMethod::Ddi {
        let cand: Vec<f64> = candidate.iter().map(|v| v.value).collect();
        let out = ddi_decide(&cand, &aux_values, cfg.alpha, cfg.asymptotic_switch)?;
        return Ok(BaselineVerdict {
            method: method.name().into(),
            set_name: set_name.into(),
            decision: out.decision,
            metric,
            threshold: None,
            positive_fraction: None,
            z: Some(out.z),
            log_p: Some(out.log_p),
        });
    }
    let threshold = percentile_threshold(&aux_values, cfg.percentile)?;
    let verdicts = sample_level_classify(candidate, threshold);
    Ok(BaselineVerdict {
        method: method.name().into(),
        set_name: set_name.into(),
        decision: dataset_level_vote(&verdicts)?,
        metric,
        threshold: Some(threshold),
        positive_fraction: Some(verdicts.positive_fraction),
        z: None,
        log_p: None,
    })
}
