//! Criterion benchmarks for `tsnet-core`; run them with `cargo bench -p tsnet-bench`.
