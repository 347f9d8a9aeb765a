//! Oracles shared by the dedicated test files and the acceptance run.
#![allow(dead_code)]

pub mod contracts;
pub mod gradient;
pub mod metrics;
pub mod rerank;
pub mod pipeline;
