//! Crash-bug reproduction engine.
//!
//! The pipeline turns an initial-version bug report into titled step clusters
//! ([`step_synthesizer`]) and then drives a game backend through an
//! annotate / propose / verify / execute / reflect loop ([`action_model`])
//! until the game crashes or the iteration cap is hit. Every model call goes
//! through [`llm_gateway`], which can record and replay fixtures so that whole
//! benchmark runs are deterministic.

pub mod action_model;
pub mod annotation;
pub mod bench_harness;
pub mod config;
pub mod knowledge_base;
pub mod llm_gateway;
pub mod macro_api;
pub mod pipeline;
pub mod prompts;
pub mod report_ingest;
pub mod sandbox_sim;
pub mod step_synthesizer;
pub mod util;

pub use config::EngineConfig;
pub use pipeline::Engine;
