//! LLM-driven SQL query rewriting backed by a growing repository of
//! natural-language rewrite rules.

pub mod db;
pub mod embed;
pub mod cli;
pub mod corrector;
pub mod error;
pub mod evaluator;
pub mod llm;
pub mod model;
pub mod orchestrator;
pub mod repo;
pub mod report;
pub mod sqltext;

pub use error::{Error, Result};
