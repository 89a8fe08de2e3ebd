//! Criterion benchmarks for the learning core live in `benches/`.
