//! Benchmarks and the acceptance suite live under `benches/` and `tests/`.
