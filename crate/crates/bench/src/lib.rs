//! Criterion benchmarks for the feature front end, the distortion metric and
//! the training loss. Run with `cargo bench -p cyclevc-bench`.
