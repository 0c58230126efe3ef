use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SplitSample;
use crate::error::{Result, SmiError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SetRole {
    Candidate,
    Auxiliary,
    Validation,
}

/// A named collection of prepared samples with a fixed role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSet {
    pub name: String,
    role: SetRole,
    pub samples: Vec<SplitSample>,
}

impl CandidateSet {
    pub fn new(name: impl Into<String>, role: SetRole, samples: Vec<SplitSample>) -> Self {
        Self {
            name: name.into(),
            role,
            samples,
        }
    }

    pub fn role(&self) -> SetRole {
        self.role
    }

    pub fn size(&self) -> usize {
        self.samples.len()
    }

    /// Checks that the set is large enough for a `k`-point p-value series.
    pub fn check_series_size(&self, k: usize) -> Result<()> {
        if self.size() < k {
            return Err(SmiError::Config(format!(
                "set \"{}\" has {} samples, fewer than K = {k}",
                self.name,
                self.size()
            )));
        }
        Ok(())
    }

    pub fn ids(&self) -> Vec<&str> {
        self.samples.iter().map(|s| s.id.as_str()).collect()
    }
}

/// How many random subsets to draw and how large each is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetPlan {
    pub seed: u64,
    pub subset_size: usize,
    pub count: usize,
}

impl Default for SubsetPlan {
    fn default() -> Self {
        Self {
            seed: 0,
            subset_size: 500,
            count: 100,
        }
    }
}

/// Draws `plan.count` subsets from `source`. Samples are distinct within a
/// subset and keep their source order; subsets may overlap. Subset `i`
/// uses its own ChaCha stream, so the result does not depend on how many
/// subsets precede it.
pub fn sample_subsets(source: &CandidateSet, plan: &SubsetPlan) -> Result<Vec<CandidateSet>> {
    if plan.subset_size > source.size() {
        return Err(SmiError::Config(format!(
            "subset size {} exceeds source \"{}\" size {}",
            plan.subset_size,
            source.name,
            source.size()
        )));
    }
    if plan.subset_size == 0 {
        return Err(SmiError::Config("subset size must be at least 1".into()));
    }
    let subsets = (0..plan.count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
            rng.set_stream(i as u64);
            let mut picks = index::sample(&mut rng, source.size(), plan.subset_size).into_vec();
            picks.sort_unstable();
            CandidateSet::new(
                format!("{}-{i:03}", source.name),
                source.role(),
                picks
                    .into_iter()
                    .map(|p| source.samples[p].clone())
                    .collect(),
            )
        })
        .collect();
    Ok(subsets)
}
