//! Criterion benchmarks for `lindiff`; see `benches/`.
