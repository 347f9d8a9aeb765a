pub mod cli;
pub mod eval;
pub mod graph;
pub mod hashing;
pub mod ingest;
pub mod models;
pub mod pipeline;
pub mod rerank;
pub mod synth;
