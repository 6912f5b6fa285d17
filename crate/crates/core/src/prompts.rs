//! Prompt templates. Templates are data files: a header with the task name
//! and version, the system text, a `=== user ===` separator and the user
//! text. `{{name}}` placeholders are filled at render time.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde_json::Value;
use thiserror::Error;

use crate::llm_gateway::{ChatMessage, ChatRequest, GatewayError, ImageRef, Session, Structured};

const USER_SEPARATOR: &str = "=== user ===";

macro_rules! builtin {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../prompts/", $name, ".md")))),*]
    };
}

const BUILTIN: &[(&str, &str)] = builtin![
    "extract_entities",
    "select_titles",
    "page_trajectory",
    "initial_s2r",
    "critique_plan_consistency",
    "critique_mob_behavior",
    "rewrite",
    "cluster",
    "critique_clusters",
    "propose",
    "verify",
    "reflect",
    "confirm",
];

const BUILTIN_FEWSHOT: &[(&str, &str)] = &[
    ("plan_consistency", include_str!("../prompts/fewshot/plan_consistency.md")),
    ("mob_behavior", include_str!("../prompts/fewshot/mob_behavior.md")),
    ("propose", include_str!("../prompts/fewshot/propose.md")),
];

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template {name}: {message}")]
    Malformed { name: String, message: String },
    #[error("unknown template {0:?}")]
    Unknown(String),
    #[error("template {name} uses {{{{{var}}}}} but no value was given")]
    MissingVar { name: String, var: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub task: String,
    pub version: String,
    pub system: String,
    pub user: String,
}

impl Template {
    pub fn parse(name: &str, text: &str) -> Result<Self, PromptError> {
        let bad = |message: &str| PromptError::Malformed { name: name.to_string(), message: message.to_string() };
        let mut lines = text.lines();
        let task = lines.next().and_then(|l| l.strip_prefix("TASK: ")).ok_or_else(|| bad("first line must be `TASK: <name>`"))?;
        let version = lines.next().and_then(|l| l.strip_prefix("VERSION: ")).ok_or_else(|| bad("second line must be `VERSION: <v>`"))?;
        let rest: Vec<&str> = lines.collect();
        let sep = rest.iter().position(|l| l.trim() == USER_SEPARATOR).ok_or_else(|| bad("missing `=== user ===` separator"))?;
        Ok(Template {
            task: task.trim().to_string(),
            version: version.trim().to_string(),
            system: rest[..sep].join("\n").trim().to_string(),
            user: rest[sep + 1..].join("\n").trim().to_string(),
        })
    }

    /// Placeholder names used by the template, in order of first use.
    pub fn placeholders(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for text in [&self.system, &self.user] {
            let mut rest = text.as_str();
            while let Some(open) = rest.find("{{") {
                let Some(close) = rest[open..].find("}}") else { break };
                let name = rest[open + 2..open + close].to_string();
                if !out.contains(&name) {
                    out.push(name);
                }
                rest = &rest[open + close + 2..];
            }
        }
        out
    }

    /// Returns (system, user). The system text begins with the task line so
    /// providers and fixture readers can tell requests apart.
    pub fn render(&self, vars: &[(&str, &str)]) -> Result<(String, String), PromptError> {
        let fill = |text: &str| -> Result<String, PromptError> {
            let mut out = String::with_capacity(text.len());
            let mut rest = text;
            while let Some(open) = rest.find("{{") {
                out.push_str(&rest[..open]);
                let Some(close) = rest[open..].find("}}") else {
                    out.push_str(&rest[open..]);
                    rest = "";
                    break;
                };
                let name = &rest[open + 2..open + close];
                let value = vars
                    .iter()
                    .find(|(k, _)| *k == name)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| PromptError::MissingVar { name: self.task.clone(), var: name.to_string() })?;
                out.push_str(value);
                rest = &rest[open + close + 2..];
            }
            out.push_str(rest);
            Ok(out)
        };
        let system = format!("TASK: {}\n{}", self.task, fill(&self.system)?);
        Ok((system, fill(&self.user)?))
    }
}

#[derive(Debug, Clone)]
pub struct PromptSet {
    templates: BTreeMap<String, Template>,
    fewshot: BTreeMap<String, String>,
}

impl PromptSet {
    pub fn builtin() -> Self {
        let templates = BUILTIN
            .iter()
            .map(|(name, text)| (name.to_string(), Template::parse(name, text).expect("built-in templates parse")))
            .collect();
        let fewshot = BUILTIN_FEWSHOT.iter().map(|(n, t)| (n.to_string(), t.trim().to_string())).collect();
        Self { templates, fewshot }
    }

    /// Built-in set with `<dir>/<name>.md` and `<dir>/fewshot/<name>.md` overrides.
    pub fn with_overrides(dir: &Path) -> Result<Self, PromptError> {
        let mut set = Self::builtin();
        for name in set.templates.keys().cloned().collect::<Vec<_>>() {
            let path = dir.join(format!("{name}.md"));
            if path.is_file() {
                let t = Template::parse(&name, &std::fs::read_to_string(path)?)?;
                set.templates.insert(name, t);
            }
        }
        for name in set.fewshot.keys().cloned().collect::<Vec<_>>() {
            let path = dir.join("fewshot").join(format!("{name}.md"));
            if path.is_file() {
                set.fewshot.insert(name, std::fs::read_to_string(path)?.trim().to_string());
            }
        }
        Ok(set)
    }

    pub fn get(&self, name: &str) -> Result<&Template, PromptError> {
        self.templates.get(name).ok_or_else(|| PromptError::Unknown(name.to_string()))
    }

    pub fn fewshot(&self, name: &str) -> &str {
        self.fewshot.get(name).map(String::as_str).unwrap_or("")
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }
}

/// Heading under which the wiki analysis is appended to synthesis prompts.
pub const KNOWLEDGE_HEADING: &str = "## Wiki analysis";

/// A model bound to a transcript and a template set.
#[derive(Clone, Copy)]
pub struct Llm<'a> {
    pub session: Session<'a>,
    pub model_id: &'a str,
    pub prompts: &'a PromptSet,
}

impl<'a> Llm<'a> {
    pub fn new(session: Session<'a>, model_id: &'a str, prompts: &'a PromptSet) -> Self {
        Self { session, model_id, prompts }
    }

    pub fn request(
        &self,
        task: &str,
        vars: &[(&str, &str)],
        schema: Value,
        images: Vec<ImageRef>,
        knowledge: Option<&str>,
    ) -> Result<ChatRequest, GatewayError> {
        let template = self.prompts.get(task).map_err(|e| GatewayError::InvalidSchema(e.to_string()))?;
        let (system, mut user) = template.render(vars).map_err(|e| GatewayError::InvalidSchema(e.to_string()))?;
        if let Some(block) = knowledge {
            user.push_str("\n\n");
            user.push_str(KNOWLEDGE_HEADING);
            user.push('\n');
            user.push_str(if block.trim().is_empty() { "(no relevant wiki pages)" } else { block.trim_end() });
        }
        let mut user_msg = ChatMessage::user(user);
        if !images.is_empty() {
            user_msg = user_msg.with_images(images);
        }
        Ok(ChatRequest::new(self.model_id, vec![ChatMessage::system(system), user_msg]).with_schema(task, schema))
    }

    /// Renders `task`, sends it under `stage` and validates the reply.
    pub fn call<T: DeserializeOwned>(
        &self,
        stage: &str,
        task: &str,
        vars: &[(&str, &str)],
        schema: Value,
        images: Vec<ImageRef>,
        knowledge: Option<&str>,
    ) -> Result<Structured<T>, GatewayError> {
        let request = self.request(task, vars, schema, images, knowledge)?;
        self.session.complete_structured(stage, &request)
    }
}

/// The task name a request was rendered from, read from its system message.
pub fn task_of(request: &ChatRequest) -> Option<&str> {
    request
        .messages
        .iter()
        .find(|m| m.role == crate::llm_gateway::MessageRole::System)
        .and_then(|m| m.text.lines().next())
        .and_then(|l| l.strip_prefix("TASK: "))
}
