//! Criterion benchmarks for the hot paths of `vacts-core`; see `benches/`.
