//! Benchmark-only crate; see benches/guardrails.rs.
