//! Criterion benchmarks for the eqseg kernels live in `benches/`.
