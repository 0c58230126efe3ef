//! Self-comparison statistics: p-value series over growing sample
//! prefixes, the least-squares slope of log p against n, and the
//! two-margin membership decision against an auxiliary non-member set.

pub mod normal;
mod ztest;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SmiError};

pub use ztest::{
    lower_tail, paired_z_test_one_tailed, z_statistic, z_test_one_tailed, z_test_two_sided,
    ScoreSet, TailMethod, ZTestResult, VARIANCE_FLOOR,
};

/// Tunables for the self-comparison test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmiConfig {
    /// Number of points in the p-value series.
    pub k: usize,
    /// Slope margin.
    pub epsilon_1: f64,
    /// Final log-p margin.
    pub epsilon_2: f64,
    /// |z| beyond which the asymptotic tail is used.
    pub asymptotic_switch: f64,
    /// Use the paired z statistic on per-sample differences.
    pub paired: bool,
    /// Seed for the sample order the series prefixes are taken from.
    pub order_seed: u64,
}

impl Default for SmiConfig {
    fn default() -> Self {
        Self {
            k: 10,
            epsilon_1: 0.01,
            epsilon_2: 10.0,
            asymptotic_switch: 8.0,
            paired: false,
            order_seed: 0,
        }
    }
}

impl SmiConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(SmiError::Config(format!(
                "K must be at least 2, got {}",
                self.k
            )));
        }
        if !(self.epsilon_1 >= 0.0 && self.epsilon_2 >= 0.0) {
            return Err(SmiError::Config("margins must be non-negative".into()));
        }
        if self.asymptotic_switch.is_nan() || self.asymptotic_switch <= 0.0 {
            return Err(SmiError::Config(
                "asymptotic switch must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Runs the configured one-tailed test on two aligned score lists.
    pub fn test(&self, original: &[f64], paraphrased: &[f64]) -> Result<ZTestResult> {
        if self.paired {
            paired_z_test_one_tailed(original, paraphrased, self.asymptotic_switch)
        } else {
            Ok(z_test_one_tailed(
                &ScoreSet::from_values(original)?,
                &ScoreSet::from_values(paraphrased)?,
                self.asymptotic_switch,
            ))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub n: usize,
    pub log_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueSeries {
    pub set_name: String,
    pub k: usize,
    pub points: Vec<SeriesPoint>,
}

impl PValueSeries {
    pub fn last_log_p(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.log_p)
    }

    pub fn grid(&self) -> Vec<usize> {
        self.points.iter().map(|p| p.n).collect()
    }
}

/// Order in which samples enter the nested prefixes of a series.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesOrder {
    Identity,
    Seeded(u64),
}

impl SeriesOrder {
    pub fn permutation(self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        if let SeriesOrder::Seeded(seed) = self {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            idx.shuffle(&mut rng);
        }
        idx
    }
}

/// n_i = round(i·N/K) for i = 1..=K, rounding halves up.
pub fn series_grid(n: usize, k: usize) -> Vec<usize> {
    (1..=k).map(|i| (2 * i * n + k) / (2 * k)).collect()
}

/// Computes log p at K nested sample prefixes. `original[j]` and
/// `paraphrased[j]` must be scores of the same sample.
pub fn p_value_series(
    set_name: &str,
    original: &[f64],
    paraphrased: &[f64],
    cfg: &SmiConfig,
    order: SeriesOrder,
) -> Result<PValueSeries> {
    cfg.validate()?;
    let n = original.len();
    if paraphrased.len() != n {
        return Err(SmiError::Domain(format!(
            "unpaired score lists: {} original vs {} paraphrased",
            n,
            paraphrased.len()
        )));
    }
    if n < cfg.k {
        return Err(SmiError::Domain(format!(
            "N = {n} is smaller than K = {}",
            cfg.k
        )));
    }
    let grid = series_grid(n, cfg.k);
    if grid[0] < 2 {
        return Err(SmiError::Domain(format!(
            "first interval holds {} sample(s); need at least 2",
            grid[0]
        )));
    }
    let perm = order.permutation(n);
    let org: Vec<f64> = perm.iter().map(|&i| original[i]).collect();
    let para: Vec<f64> = perm.iter().map(|&i| paraphrased[i]).collect();
    let points = grid
        .into_iter()
        .map(|ni| {
            cfg.test(&org[..ni], &para[..ni]).map(|r| SeriesPoint {
                n: ni,
                log_p: r.log_p,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PValueSeries {
        set_name: set_name.to_string(),
        k: cfg.k,
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub beta: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares of `ys` on `xs`.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> Result<SlopeFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(SmiError::Domain(format!(
            "line fit needs at least 2 paired points, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let m = xs.len() as f64;
    let x_bar = xs.iter().sum::<f64>() / m;
    let y_bar = ys.iter().sum::<f64>() / m;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - x_bar;
        let dy = y - y_bar;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(SmiError::Domain("all x values are equal".into()));
    }
    let beta = sxy / sxx;
    let intercept = y_bar - beta * x_bar;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        let ss_res: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| {
                let e = y - (intercept + beta * x);
                e * e
            })
            .sum();
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    Ok(SlopeFit {
        beta,
        intercept,
        r_squared,
    })
}

/// Least-squares slope of log p_i against n_i.
pub fn slope_fit(series: &PValueSeries) -> Result<SlopeFit> {
    let xs: Vec<f64> = series.points.iter().map(|p| p.n as f64).collect();
    let ys: Vec<f64> = series.points.iter().map(|p| p.log_p).collect();
    fit_line(&xs, &ys)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Member,
    NonMember,
}

impl Decision {
    pub fn is_member(self) -> bool {
        self == Decision::Member
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Criteria {
    pub slope_met: bool,
    pub pvalue_met: bool,
}

/// The numbers a decision is made from. Margins can be re-applied to the
/// same evidence without recomputing any series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmiEvidence {
    pub beta: f64,
    pub beta_aux: f64,
    pub log_p: f64,
    pub log_p_aux: f64,
}

impl SmiEvidence {
    pub fn criteria(&self, epsilon_1: f64, epsilon_2: f64) -> Criteria {
        Criteria {
            slope_met: self.beta < self.beta_aux - epsilon_1,
            pvalue_met: self.log_p < self.log_p_aux - epsilon_2,
        }
    }

    pub fn decide(&self, epsilon_1: f64, epsilon_2: f64) -> Decision {
        let c = self.criteria(epsilon_1, epsilon_2);
        if c.slope_met && c.pvalue_met {
            Decision::Member
        } else {
            Decision::NonMember
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub method: String,
    pub set_name: String,
    pub decision: Decision,
    pub beta: f64,
    pub beta_aux: f64,
    /// log p at the full sample size.
    pub log_p: f64,
    pub log_p_aux: f64,
    pub criteria: Criteria,
    pub series: Vec<SeriesPoint>,
    pub aux_series: Vec<SeriesPoint>,
    pub config: SmiConfig,
}

/// Applies the slope and p-value criteria to a candidate series against
/// an auxiliary series on the same grid.
pub fn smi_decide(
    candidate: &PValueSeries,
    aux: &PValueSeries,
    cfg: &SmiConfig,
) -> Result<Verdict> {
    if candidate.k != aux.k || candidate.grid() != aux.grid() {
        return Err(SmiError::Domain(format!(
            "series grids differ: {:?} vs {:?}",
            candidate.grid(),
            aux.grid()
        )));
    }
    let evidence = SmiEvidence {
        beta: slope_fit(candidate)?.beta,
        beta_aux: slope_fit(aux)?.beta,
        log_p: candidate.last_log_p(),
        log_p_aux: aux.last_log_p(),
    };
    Ok(Verdict {
        method: "smi".into(),
        set_name: candidate.set_name.clone(),
        decision: evidence.decide(cfg.epsilon_1, cfg.epsilon_2),
        beta: evidence.beta,
        beta_aux: evidence.beta_aux,
        log_p: evidence.log_p,
        log_p_aux: evidence.log_p_aux,
        criteria: evidence.criteria(cfg.epsilon_1, cfg.epsilon_2),
        series: candidate.points.clone(),
        aux_series: aux.points.clone(),
        config: *cfg,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearityCheck {
    /// Estimate of −c in log p ≈ −c·n + b.
    pub fitted_slope: f64,
    pub r_squared: f64,
}

/// Fits log p_i on n_i to check for the exponential decay of p in n.
pub fn linearity_check(series: &PValueSeries) -> Result<LinearityCheck> {
    if series.points.len() < 3 {
        return Err(SmiError::Domain(format!(
            "linearity check needs K >= 3, got {}",
            series.points.len()
        )));
    }
    let fit = slope_fit(series)?;
    Ok(LinearityCheck {
        fitted_slope: fit.beta,
        r_squared: fit.r_squared,
    })
}
