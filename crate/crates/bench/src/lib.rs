//! Benchmarks live in `benches/`; run them with `cargo bench -p rpn3d-bench`.
