//! Criterion benchmarks for the matrix kernels and one FNN training
//! iteration. Run with `cargo bench -p rtgl-bench`.
