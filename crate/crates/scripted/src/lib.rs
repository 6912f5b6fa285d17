//! A deterministic stand-in for the hosted models.
//!
//! It answers every prompt the engine sends by reading the prompt text. For
//! synthesis it looks the report up among known simulator scenarios; the agent
//! stages need nothing but the prompt. Recording a benchmark with it fills the
//! fixture store so that replay runs work offline.
//!
//! Model ids of the form `scripted-noisy-K` make the clustering replies drop,
//! duplicate or move a step, seeded by `K`.

pub mod agent;
pub mod steps;
pub mod synth;

use std::sync::Arc;

use crashrepro::llm_gateway::{ChatRequest, GatewayError, MessageRole, Provider, ProviderReply, Usage};
use crashrepro::prompts::task_of;
use crashrepro::sandbox_sim::ScenarioSpec;
use crashrepro::util::estimate_tokens;
use serde_json::Value;

pub const MODEL_ID: &str = "scripted";
pub const NOISY_PREFIX: &str = "scripted-noisy-";

pub struct ScriptedModel {
    scenarios: Vec<Arc<ScenarioSpec>>,
}

impl ScriptedModel {
    pub fn new(scenarios: Vec<Arc<ScenarioSpec>>) -> Self {
        Self { scenarios }
    }

    fn scenario_for(&self, user: &str) -> Option<&ScenarioSpec> {
        let title = user.lines().find_map(|l| l.strip_prefix("Title: "))?;
        self.scenarios.iter().find(|s| s.report.title == title).map(|s| s.as_ref())
    }

    pub fn answer(&self, request: &ChatRequest) -> Result<Value, GatewayError> {
        let task = task_of(request).ok_or_else(|| GatewayError::Provider { status: 400, body: "request names no task".into() })?;
        let text_of = |role| request.messages.iter().find(|m| m.role == role).map(|m| m.text.as_str()).unwrap_or("");
        let (system, user) = (text_of(MessageRole::System), text_of(MessageRole::User));
        let spec = self.scenario_for(user);
        let noise = request.model_id.strip_prefix(NOISY_PREFIX).and_then(|k| k.parse::<u64>().ok());
        let value = match task {
            "extract_entities" => synth::entities(spec, user),
            "select_titles" => synth::select_titles(spec, user, system),
            "page_trajectory" => synth::page_trajectory(spec, user),
            "initial_s2r" => synth::initial_steps(spec, user),
            "critique_plan_consistency" => synth::critique_plan_consistency(spec, user),
            "critique_mob_behavior" => synth::critique_mob_behavior(spec, user),
            "rewrite" => synth::rewrite(user),
            "cluster" | "critique_clusters" => {
                let mut clusters = if task == "cluster" {
                    synth::cluster_steps(&synth::numbered_steps(user, "Steps:"))
                } else {
                    synth::parse_clusters(user)
                };
                if let Some(k) = noise {
                    synth::perturb(&mut clusters, k, user);
                }
                synth::clusters_json(&clusters)
            }
            "propose" => agent::propose(user),
            "verify" => agent::verify(user),
            "reflect" => agent::reflect(user),
            "confirm" => agent::confirm(user),
            other => return Err(GatewayError::Provider { status: 400, body: format!("no scripted answer for task {other:?}") }),
        };
        Ok(value)
    }
}

impl Provider for ScriptedModel {
    fn send(&self, request: &ChatRequest) -> Result<ProviderReply, GatewayError> {
        let value = self.answer(request)?;
        let text = serde_json::to_string(&value).map_err(|e| GatewayError::Transport(e.to_string()))?;
        let prompt_tokens = request.messages.iter().map(|m| estimate_tokens(&m.text)).sum();
        let usage = Usage { prompt_tokens, completion_tokens: estimate_tokens(&text) };
        Ok(ProviderReply { text, usage })
    }
}
