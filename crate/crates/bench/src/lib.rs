//! Criterion benchmarks for the audit pipeline; see `benches/`.
