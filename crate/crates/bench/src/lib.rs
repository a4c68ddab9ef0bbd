//! Criterion benchmarks for the `betaint` crate; see `benches/`.
