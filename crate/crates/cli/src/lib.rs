//! Command-line driver: smoke training, packing benchmarks, balancer
//! simulation, tokenizer workflows and the acceptance checks.

pub mod checks;
pub mod commands;
pub mod manifest;
