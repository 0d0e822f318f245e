//! Criterion benchmarks for the moralchain pipeline; see `benches/pipeline.rs`.
