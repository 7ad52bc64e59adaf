//! Benchmark-only crate; see `benches/meta.rs`.
