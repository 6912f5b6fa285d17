//! Engine configuration, read from TOML. Secrets come from the environment only.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::action_model::Limits;
use crate::knowledge_base::KbConfig;
use crate::llm_gateway::{FixtureMode, HttpProviderConfig, PriceTable, RetryPolicy};
use crate::step_synthesizer::SynthConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Models {
    pub synth: String,
    pub agent: String,
}

impl Default for Models {
    fn default() -> Self {
        Self { synth: "gpt-4o".into(), agent: "gpt-4o".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnnotatorConfig {
    /// Simulator frames carry their own elements; live frames are rejected.
    Sim,
    Http { url: String },
}

impl Default for AnnotatorConfig {
    fn default() -> Self {
        AnnotatorConfig::Sim
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub mode: FixtureMode,
    pub fixture_dir: PathBuf,
    pub scenario_dir: PathBuf,
    pub kb_dir: PathBuf,
    pub run_root: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompts_dir: Option<PathBuf>,
    pub models: Models,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub provider: Option<HttpProviderConfig>,
    pub annotator: AnnotatorConfig,
    pub limits: Limits,
    pub synth: SynthConfig,
    pub kb: KbConfig,
    pub retry: RetryPolicy,
    pub prices: PriceTable,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            mode: FixtureMode::Replay,
            fixture_dir: "fixtures".into(),
            scenario_dir: "scenarios".into(),
            kb_dir: "wiki".into(),
            run_root: "runs".into(),
            prompts_dir: None,
            models: Models::default(),
            provider: None,
            annotator: AnnotatorConfig::Sim,
            limits: Limits::default(),
            synth: SynthConfig::default(),
            kb: KbConfig::default(),
            retry: RetryPolicy::default(),
            prices: PriceTable::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config {path} is invalid: {message}")]
    Invalid { path: PathBuf, message: String },
}

impl EngineConfig {
    /// Parses `path`; relative paths inside are taken relative to its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let mut cfg: EngineConfig =
            toml::from_str(&text).map_err(|e| ConfigError::Invalid { path: path.to_path_buf(), message: e.to_string() })?;
        cfg.rebase(path.parent().unwrap_or(Path::new(".")));
        cfg.validate().map_err(|message| ConfigError::Invalid { path: path.to_path_buf(), message })?;
        Ok(cfg)
    }

    /// Makes relative paths relative to `base`.
    pub fn rebase(&mut self, base: &Path) {
        for p in [&mut self.fixture_dir, &mut self.scenario_dir, &mut self.kb_dir, &mut self.run_root] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(p) = &mut self.prompts_dir {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.limits.max_iterations == 0 {
            return Err("limits.max_iterations must be positive".into());
        }
        if self.limits.window == 0 {
            return Err("limits.window must be positive".into());
        }
        if !(self.kb.threshold > 0.0 && self.kb.threshold <= 1.0) {
            return Err("kb.threshold must be in (0, 1]".into());
        }
        if self.synth.hard_max_clusters == 0 {
            return Err("synth.hard_max_clusters must be positive".into());
        }
        Ok(())
    }

    /// The settings that change what a run does, for resume digests.
    pub fn run_settings(&self) -> serde_json::Value {
        serde_json::json!({
            "models": self.models,
            "limits": self.limits,
            "synth": self.synth,
            "kb": self.kb,
            "schema_reprompts": self.retry.schema_reprompts,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_fills_defaults_and_rebases() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("engine.toml");
        std::fs::write(
            &path,
            "mode = \"record\"\n[limits]\nmax_iterations = 12\n[prices.models.m]\nprompt_per_mtok = 2.5\ncompletion_per_mtok = 10.0\n",
        )
        .unwrap();
        let cfg = EngineConfig::load(&path).unwrap();
        assert_eq!(cfg.mode, FixtureMode::Record);
        assert_eq!(cfg.limits.max_iterations, 12);
        assert_eq!(cfg.limits.window, 25);
        assert_eq!(cfg.scenario_dir, dir.path().join("scenarios"));
        assert_eq!(cfg.prices.models["m"].prompt_per_mtok, 2.5);
    }

    #[test]
    fn rejects_zero_cap() {
        let cfg = EngineConfig { limits: Limits { max_iterations: 0, ..Limits::default() }, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
