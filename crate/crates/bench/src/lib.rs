//! Criterion benchmarks for the cdnmf pipeline live in `benches/`.
