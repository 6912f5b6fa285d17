//! Wires configuration, the gateway, the knowledge base and the backends into
//! one engine that can synthesize plans and run benchmark items.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use thiserror::Error;

use crate::action_model::{AgentLoop, Outcome, RunDir, RunResult};
use crate::annotation::{Annotator, HttpAnnotator, SimOnlyAnnotator};
use crate::bench_harness::{BenchItem, Binding, ItemRunner};
use crate::config::{AnnotatorConfig, EngineConfig};
use crate::knowledge_base::{Corpus, KbError};
use crate::llm_gateway::{usage_report_from_entries, FixtureMode, FixtureStore, Gateway, HttpProvider, Provider, Session, Transcript};
use crate::macro_api::Backend;
use crate::prompts::{Llm, PromptError, PromptSet};
use crate::report_ingest::ReportSnapshot;
use crate::sandbox_sim::{load_scenarios, ScenarioError, ScenarioSpec, SimBackend};
use crate::step_synthesizer::{SynthError, SynthesisPlan, Synthesizer};
use crate::util::{canonical_json, sha256_hex};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("fixture store: {0}")]
    Fixtures(std::io::Error),
    #[error("{0:?} mode needs a model provider")]
    NoProvider(FixtureMode),
    #[error(transparent)]
    Prompts(#[from] PromptError),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Scenarios(#[from] ScenarioError),
}

/// Builds a backend for a live binding (a game version).
pub trait LiveBackends: Sync {
    fn backend(&self, version: &str) -> Result<Box<dyn Backend>, String>;
}

pub struct Engine {
    pub config: EngineConfig,
    gateway: Gateway,
    prompts: PromptSet,
    corpus: Corpus,
    scenarios: BTreeMap<String, Arc<ScenarioSpec>>,
    annotator: Box<dyn Annotator>,
    live: Option<Box<dyn LiveBackends>>,
}

impl Engine {
    /// `provider` is used in record and live modes. Live mode falls back to
    /// the HTTP provider from the config. Replay mode never holds one.
    pub fn new(config: EngineConfig, provider: Option<Arc<dyn Provider>>) -> Result<Self, EngineError> {
        let gateway = match config.mode {
            FixtureMode::Replay => Gateway::replay(Arc::new(FixtureStore::open(&config.fixture_dir).map_err(EngineError::Fixtures)?)),
            FixtureMode::Record => {
                let provider = provider.ok_or(EngineError::NoProvider(FixtureMode::Record))?;
                Gateway::record(Arc::new(FixtureStore::open(&config.fixture_dir).map_err(EngineError::Fixtures)?), provider)
            }
            FixtureMode::Live => {
                let provider = match (provider, &config.provider) {
                    (Some(p), _) => p,
                    (None, Some(c)) => Arc::new(HttpProvider::new(c.clone())) as Arc<dyn Provider>,
                    (None, None) => return Err(EngineError::NoProvider(FixtureMode::Live)),
                };
                Gateway::live(provider)
            }
        }
        .with_retry(config.retry);
        let prompts = match &config.prompts_dir {
            Some(dir) => PromptSet::with_overrides(dir)?,
            None => PromptSet::builtin(),
        };
        let corpus = if config.kb_dir.join("manifest.json").exists() {
            Corpus::load(&config.kb_dir)?
        } else {
            tracing::warn!("no knowledge base at {}; retrieval will find nothing", config.kb_dir.display());
            Corpus::ingest(Vec::new()).0
        };
        let mut scenarios = BTreeMap::new();
        for dir in [config.scenario_dir.clone(), config.scenario_dir.join("negative")] {
            if dir.is_dir() {
                scenarios.extend(load_scenarios(&dir)?.into_iter().map(|(k, v)| (k, Arc::new(v))));
            }
        }
        let annotator: Box<dyn Annotator> = match &config.annotator {
            AnnotatorConfig::Sim => Box::new(SimOnlyAnnotator),
            AnnotatorConfig::Http { url } => Box::new(HttpAnnotator::new(url.clone())),
        };
        Ok(Self { config, gateway, prompts, corpus, scenarios, annotator, live: None })
    }

    pub fn with_annotator(mut self, annotator: Box<dyn Annotator>) -> Self {
        self.annotator = annotator;
        self
    }

    pub fn with_live_backends(mut self, live: Box<dyn LiveBackends>) -> Self {
        self.live = Some(live);
        self
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn scenario(&self, id: &str) -> Option<&Arc<ScenarioSpec>> {
        self.scenarios.get(id)
    }

    pub fn scenarios(&self) -> impl Iterator<Item = &Arc<ScenarioSpec>> {
        self.scenarios.values()
    }

    /// Step clusters for one report. Model calls go to `transcript`.
    pub fn synthesize(&self, snapshot: &ReportSnapshot, transcript: &Transcript) -> Result<SynthesisPlan, SynthError> {
        let llm = Llm::new(Session::new(&self.gateway, transcript), &self.config.models.synth, &self.prompts);
        Synthesizer::new(llm, self.config.synth.clone()).synthesize(snapshot, &self.corpus, &self.config.kb)
    }

    /// The agent loop for `plan` on `backend`.
    pub fn execute(&self, plan: &SynthesisPlan, backend: &mut dyn Backend, transcript: &Transcript, dir: Option<&Path>) -> RunResult {
        let llm = Llm::new(Session::new(&self.gateway, transcript), &self.config.models.agent, &self.prompts);
        let agent = AgentLoop { llm, annotator: self.annotator.as_ref(), limits: self.config.limits, prices: &self.config.prices };
        agent.run(plan, backend, dir)
    }

    pub fn backend_for(&self, binding: &Binding) -> Result<Box<dyn Backend>, String> {
        match binding {
            Binding::Scenario(id) => match self.scenarios.get(id) {
                Some(s) => Ok(Box::new(SimBackend::new(Arc::clone(s)))),
                None => Err(format!("no scenario {id:?} in {}", self.config.scenario_dir.display())),
            },
            Binding::Version(v) => match &self.live {
                Some(l) => l.backend(v),
                None => Err(format!("item is bound to live version {v:?} but no live backend is configured")),
            },
        }
    }

    /// Synthesis followed by the agent loop, with artifacts under `dir`.
    pub fn run_report(&self, snapshot: &ReportSnapshot, binding: &Binding, dir: &Path) -> RunResult {
        let started = Instant::now();
        let transcript = Transcript::persistent(snapshot.source_key.clone(), dir.join(RunDir::TRANSCRIPTS));
        let aborted = |kind: &str, detail: String| {
            let usage = usage_report_from_entries(&snapshot.source_key, &transcript.entries(), &self.config.prices);
            RunResult {
                run_id: snapshot.source_key.clone(),
                source_key: snapshot.source_key.clone(),
                outcome: Outcome::Error { kind: kind.into(), detail },
                iterations_used: 0,
                final_cluster_index: 0,
                crash: None,
                usage: usage.total,
                cost_usd: usage.cost_usd,
                model_calls: usage.calls,
                wall_time_ms: started.elapsed().as_millis() as u64,
            }
        };
        let mut backend = match self.backend_for(binding) {
            Ok(b) => b,
            Err(e) => return aborted("Unbound", e),
        };
        let plan = match self.synthesize(snapshot, &transcript) {
            Ok(p) => p,
            Err(e) => {
                let kind = e.gateway_error().map(|g| g.kind()).unwrap_or("EmptyReport");
                return aborted(kind, e.to_string());
            }
        };
        let mut result = self.execute(&plan, backend.as_mut(), &transcript, Some(dir));
        result.wall_time_ms = started.elapsed().as_millis() as u64;
        result
    }
}

impl ItemRunner for Engine {
    fn check_binding(&self, item: &BenchItem) -> Result<(), String> {
        match &item.binding {
            Binding::Scenario(id) if !self.scenarios.contains_key(id) => Err(format!("unknown scenario {id:?}")),
            Binding::Version(v) if self.live.is_none() => Err(format!("live version {v:?} needs a live backend")),
            _ => Ok(()),
        }
    }

    fn config_digest(&self) -> String {
        let prompts: Vec<(String, String)> = self
            .prompts
            .names()
            .map(|n| (n.to_string(), self.prompts.get(n).map(|t| format!("{t:?}")).unwrap_or_default()))
            .collect();
        let doc = serde_json::json!({
            "settings": self.config.run_settings(),
            "prompts": sha256_hex(canonical_json(&prompts).expect("prompt list serializes").as_bytes()),
            "corpus": self.corpus.digest(),
        });
        sha256_hex(canonical_json(&doc).expect("digest input serializes").as_bytes())
    }

    fn run_item(&self, item: &BenchItem, dir: &Path) -> RunResult {
        let result = self.run_report(&item.report, &item.binding, dir);
        if !dir.join(RunDir::RESULT).exists() {
            if let Ok(text) = crate::util::canonical_json_pretty(&result) {
                let _ = crate::util::write_atomic(&dir.join(RunDir::RESULT), text.as_bytes());
            }
        }
        result
    }
}
