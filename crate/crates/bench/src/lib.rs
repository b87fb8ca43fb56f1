//! Criterion benchmarks for the structpop solvers live in `benches/`.
