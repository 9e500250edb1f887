//! Benchmark-only crate; the measured code lives in `beckmann-core` and the
//! scenarios in `benches/pipeline.rs`. Run with `cargo bench -p beckmann-bench`.
