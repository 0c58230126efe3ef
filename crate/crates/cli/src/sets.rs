//! Reading and writing scored sets and synthetic benchmarks on disk.

use std::path::Path;

use serde::{Deserialize, Serialize};
use smi_core::corpus::read_jsonl;
use smi_core::harness::{Label, ScoredSet, SyntheticBenchmark, SyntheticSpec};
use smi_core::inference::SeriesOrder;
use smi_core::scoring::{Metric, SequenceScore};
use smi_core::{Result, SmiError};

pub fn parse_label(s: &str) -> Result<Label> {
    match s {
        "member" => Ok(Label::Member),
        "non_member" | "non-member" => Ok(Label::NonMember),
        other => Err(SmiError::Config(format!(
            "unknown label \"{other}\"; expected member or non_member"
        ))),
    }
}

/// Loads a set from a `.json` ScoredSet file or a `.jsonl` file of sequence
/// scores. `metrics` are computed for the latter only.
pub fn load_set(path: &Path, metrics: &[Metric]) -> Result<ScoredSet> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        let scores: Vec<SequenceScore> = read_jsonl(path)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        return ScoredSet::from_scores(&name, None, &scores, metrics);
    }
    let text = std::fs::read_to_string(path).map_err(|e| SmiError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| SmiError::io(path, e))
}

/// Seeded split of one set into two disjoint halves of equal size.
pub fn split_halves(set: &ScoredSet, seed: u64) -> Result<(ScoredSet, ScoredSet)> {
    let half = set.len() / 2;
    if half < 2 {
        return Err(SmiError::Domain(format!(
            "set {} has {} samples; too few to split",
            set.name,
            set.len()
        )));
    }
    let perm = SeriesOrder::Seeded(seed).permutation(set.len());
    let mut a = set.select(&perm[..half]);
    let mut b = set.select(&perm[half..2 * half]);
    a.name = format!("{}-half-a", set.name);
    b.name = format!("{}-half-b", set.name);
    Ok((a, b))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkIndex {
    pub spec: SyntheticSpec,
    pub members: Vec<String>,
    pub non_members: Vec<String>,
    pub aux: Vec<String>,
}

pub const INDEX_FILE: &str = "benchmark.json";

/// Writes every set to `dir/sets/<name>.json` plus an index.
pub fn write_benchmark(
    dir: &Path,
    spec: &SyntheticSpec,
    bench: &SyntheticBenchmark,
) -> Result<usize> {
    let sets_dir = dir.join("sets");
    std::fs::create_dir_all(&sets_dir).map_err(|e| SmiError::io(&sets_dir, e))?;
    let all = bench
        .members
        .iter()
        .chain(&bench.non_members)
        .chain(&bench.aux);
    let mut written = 0;
    for set in all {
        write_json(&sets_dir.join(format!("{}.json", set.name)), set)?;
        written += 1;
    }
    let names = |sets: &[ScoredSet]| sets.iter().map(|s| s.name.clone()).collect();
    let index = BenchmarkIndex {
        spec: spec.clone(),
        members: names(&bench.members),
        non_members: names(&bench.non_members),
        aux: names(&bench.aux),
    };
    write_json(&dir.join(INDEX_FILE), &index)?;
    Ok(written)
}

pub fn read_benchmark(dir: &Path) -> Result<SyntheticBenchmark> {
    let index_path = dir.join(INDEX_FILE);
    let text = std::fs::read_to_string(&index_path).map_err(|e| SmiError::io(&index_path, e))?;
    let index: BenchmarkIndex = serde_json::from_str(&text)?;
    let load = |names: &[String]| -> Result<Vec<ScoredSet>> {
        names
            .iter()
            .map(|n| load_set(&dir.join("sets").join(format!("{n}.json")), &[]))
            .collect()
    };
    Ok(SyntheticBenchmark {
        members: load(&index.members)?,
        non_members: load(&index.non_members)?,
        aux: load(&index.aux)?,
    })
}
