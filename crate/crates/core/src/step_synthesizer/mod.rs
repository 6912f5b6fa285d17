//! Report to plan: retrieval, an initial draft of reproduction steps, two
//! critique-and-rewrite rounds, clustering and a cluster review.

mod repair;

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::knowledge_base::{retrieve, Corpus, KbConfig, Retrieval};
use crate::llm_gateway::GatewayError;
use crate::prompts::Llm;
use crate::report_ingest::ReportSnapshot;
use crate::util::{canonical_json_pretty, write_atomic};

pub use repair::{multiset, repair_clusters, Repair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DraftStage {
    Initial,
    PostCritique1,
    PostCritique2,
    Final,
}

impl DraftStage {
    fn next(self) -> Self {
        match self {
            DraftStage::Initial => DraftStage::PostCritique1,
            DraftStage::PostCritique1 => DraftStage::PostCritique2,
            DraftStage::PostCritique2 | DraftStage::Final => DraftStage::Final,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct S2RDraft {
    pub steps: Vec<String>,
    pub stage: DraftStage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Aspect {
    PlanConsistency,
    MobBehavior,
}

impl Aspect {
    /// Review order within a synthesis.
    pub const ORDER: [Aspect; 2] = [Aspect::PlanConsistency, Aspect::MobBehavior];

    fn task(self) -> &'static str {
        match self {
            Aspect::PlanConsistency => "critique_plan_consistency",
            Aspect::MobBehavior => "critique_mob_behavior",
        }
    }

    fn fewshot(self) -> &'static str {
        match self {
            Aspect::PlanConsistency => "plan_consistency",
            Aspect::MobBehavior => "mob_behavior",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Aspect::PlanConsistency => "plan consistency",
            Aspect::MobBehavior => "mob behavior",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CritiqueReport {
    pub aspect: Aspect,
    pub suggestions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepCluster {
    pub title: String,
    pub steps: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub stage: String,
    pub transcript_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisPlan {
    pub source_key: String,
    pub clusters: Vec<StepCluster>,
    pub final_steps: Vec<String>,
    pub knowledge_block: String,
    pub provenance: Vec<Provenance>,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieval: Option<Retrieval>,
}

impl SynthesisPlan {
    /// A plan with no provenance, for runs driven from a hand-written plan.
    pub fn manual(source_key: &str, clusters: Vec<StepCluster>) -> Self {
        let final_steps = clusters.iter().flat_map(|c| c.steps.clone()).collect();
        Self {
            source_key: source_key.to_string(),
            clusters,
            final_steps,
            knowledge_block: String::new(),
            provenance: Vec::new(),
            warnings: Vec::new(),
            retrieval: None,
        }
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let text = canonical_json_pretty(self).map_err(std::io::Error::other)?;
        write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        serde_json::from_str(&std::fs::read_to_string(path)?).map_err(std::io::Error::other)
    }

    /// The plan as shown to the action model.
    pub fn render(&self) -> String {
        render_clusters(&self.clusters)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Cluster count asked for in the prompt; exceeding it only warns.
    pub max_clusters: usize,
    /// Above this many clusters the trailing ones are merged.
    pub hard_max_clusters: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { max_clusters: 4, hard_max_clusters: 6 }
    }
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("synthesis stage {stage} failed{}: {source}", transcript_id.as_ref().map(|t| format!(" (transcript {t})")).unwrap_or_default())]
    Stage { stage: String, transcript_id: Option<String>, source: GatewayError },
    #[error("report {0} is empty")]
    EmptyReport(String),
}

impl SynthError {
    pub fn gateway_error(&self) -> Option<&GatewayError> {
        match self {
            SynthError::Stage { source, .. } => Some(source),
            SynthError::EmptyReport(_) => None,
        }
    }
}

pub fn render_steps(steps: &[String]) -> String {
    steps.iter().enumerate().map(|(i, s)| format!("{}. {s}", i + 1)).collect::<Vec<_>>().join("\n")
}

pub fn render_clusters(clusters: &[StepCluster]) -> String {
    let mut out = String::new();
    for (i, c) in clusters.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!("Cluster {}: {}\n", i + 1, c.title));
        for s in &c.steps {
            out.push_str(&format!("- {s}\n"));
        }
    }
    out.trim_end().to_string()
}

fn steps_schema() -> Value {
    json!({
        "type": "object",
        "properties": {"steps": {"type": "array", "minItems": 1, "items": {"type": "string", "minLength": 1}}},
        "required": ["steps"]
    })
}

fn clusters_schema() -> Value {
    json!({
        "type": "object",
        "properties": {
            "clusters": {
                "type": "array",
                "minItems": 1,
                "items": {
                    "type": "object",
                    "properties": {
                        "title": {"type": "string"},
                        "steps": {"type": "array", "items": {"type": "string"}}
                    },
                    "required": ["title", "steps"]
                }
            }
        },
        "required": ["clusters"]
    })
}

#[derive(Deserialize)]
struct StepsReply {
    steps: Vec<String>,
}

#[derive(Deserialize)]
struct SuggestionsReply {
    suggestions: Vec<String>,
}

#[derive(Deserialize)]
struct ClustersReply {
    clusters: Vec<StepCluster>,
}

/// Context shared by the synthesis stages.
pub struct Synthesizer<'a> {
    pub llm: Llm<'a>,
    pub config: SynthConfig,
    provenance: std::cell::RefCell<Vec<Provenance>>,
    warnings: std::cell::RefCell<Vec<String>>,
}

fn clean(steps: Vec<String>) -> Vec<String> {
    steps.into_iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
}

impl<'a> Synthesizer<'a> {
    pub fn new(llm: Llm<'a>, config: SynthConfig) -> Self {
        Self { llm, config, provenance: Default::default(), warnings: Default::default() }
    }

    fn fail(&self, stage: &str, source: GatewayError) -> SynthError {
        let transcript_id = self.llm.session.transcript.entries().last().filter(|e| e.stage == stage).map(|e| e.id.clone());
        SynthError::Stage { stage: stage.to_string(), transcript_id, source }
    }

    fn call<T: serde::de::DeserializeOwned>(
        &self,
        stage: &str,
        task: &str,
        vars: &[(&str, &str)],
        schema: Value,
        knowledge: &str,
    ) -> Result<T, SynthError> {
        let reply = self.llm.call::<T>(stage, task, vars, schema, vec![], Some(knowledge)).map_err(|e| self.fail(stage, e))?;
        self.provenance.borrow_mut().push(Provenance { stage: stage.to_string(), transcript_id: reply.transcript_id });
        Ok(reply.value)
    }

    fn warn(&self, message: String) {
        tracing::warn!("{message}");
        self.warnings.borrow_mut().push(message);
    }

    pub fn generate_initial(&self, snapshot: &ReportSnapshot, knowledge: &str) -> Result<S2RDraft, SynthError> {
        let report = snapshot.render();
        let reply: StepsReply = self.call("synth/initial", "initial_s2r", &[("report", &report)], steps_schema(), knowledge)?;
        let steps = clean(reply.steps);
        if steps.is_empty() {
            return Err(self.fail("synth/initial", GatewayError::SchemaViolation { stage: "synth/initial".into(), detail: "no steps".into() }));
        }
        Ok(S2RDraft { steps, stage: DraftStage::Initial })
    }

    pub fn critique(&self, snapshot: &ReportSnapshot, draft: &S2RDraft, aspect: Aspect, knowledge: &str) -> Result<CritiqueReport, SynthError> {
        assert!(draft.stage != DraftStage::Final, "final drafts are not critiqued");
        let stage = format!("synth/critique/{}", aspect.task().trim_start_matches("critique_"));
        let report = snapshot.render();
        let steps = render_steps(&draft.steps);
        let schema = json!({
            "type": "object",
            "properties": {"suggestions": {"type": "array", "items": {"type": "string"}}},
            "required": ["suggestions"]
        });
        let reply: SuggestionsReply = self.call(
            &stage,
            aspect.task(),
            &[("report", &report), ("steps", &steps), ("examples", self.llm.prompts.fewshot(aspect.fewshot()))],
            schema,
            knowledge,
        )?;
        Ok(CritiqueReport { aspect, suggestions: clean(reply.suggestions) })
    }

    /// Applies a critique. An empty critique returns the draft unchanged
    /// without a model call.
    pub fn rewrite(&self, snapshot: &ReportSnapshot, draft: &S2RDraft, critique: &CritiqueReport, knowledge: &str) -> Result<S2RDraft, SynthError> {
        if critique.suggestions.is_empty() {
            return Ok(S2RDraft { steps: draft.steps.clone(), stage: draft.stage.next() });
        }
        let report = snapshot.render();
        let steps = render_steps(&draft.steps);
        let suggestions = critique.suggestions.iter().map(|s| format!("- {s}")).collect::<Vec<_>>().join("\n");
        let reply: StepsReply = self.call(
            "synth/rewrite",
            "rewrite",
            &[("report", &report), ("steps", &steps), ("aspect", critique.aspect.label()), ("suggestions", &suggestions)],
            steps_schema(),
            knowledge,
        )?;
        let steps = clean(reply.steps);
        if steps.is_empty() {
            return Err(self.fail("synth/rewrite", GatewayError::SchemaViolation { stage: "synth/rewrite".into(), detail: "no steps".into() }));
        }
        Ok(S2RDraft { steps, stage: draft.stage.next() })
    }

    fn apply_repair(&self, stage: &str, input: &[String], clusters: Vec<StepCluster>) -> Vec<StepCluster> {
        let repaired = repair_clusters(input, clusters, self.config.hard_max_clusters);
        for w in repaired.warnings {
            self.warn(format!("{stage}: {w}"));
        }
        if repaired.clusters.len() > self.config.max_clusters {
            self.warn(format!("{stage}: {} clusters, more than the configured {}", repaired.clusters.len(), self.config.max_clusters));
        }
        repaired.clusters
    }

    pub fn cluster_steps(&self, draft: &S2RDraft, knowledge: &str) -> Result<Vec<StepCluster>, SynthError> {
        assert_eq!(draft.stage, DraftStage::Final, "only the final draft is clustered");
        if draft.steps.len() == 1 {
            return Ok(vec![StepCluster { title: "Trigger the Crash".into(), steps: draft.steps.clone() }]);
        }
        let steps = render_steps(&draft.steps);
        let max = self.config.max_clusters.to_string();
        let reply: ClustersReply =
            self.call("synth/cluster", "cluster", &[("steps", &steps), ("max_clusters", &max)], clusters_schema(), knowledge)?;
        Ok(self.apply_repair("synth/cluster", &draft.steps, reply.clusters))
    }

    /// Moves misplaced steps between clusters. A single cluster is returned as is.
    pub fn critique_clusters(&self, clusters: Vec<StepCluster>, knowledge: &str) -> Result<Vec<StepCluster>, SynthError> {
        if clusters.len() <= 1 {
            return Ok(clusters);
        }
        let input: Vec<String> = clusters.iter().flat_map(|c| c.steps.clone()).collect();
        let rendered = render_clusters(&clusters);
        let reply: ClustersReply =
            self.call("synth/cluster-critique", "critique_clusters", &[("clusters", &rendered)], clusters_schema(), knowledge)?;
        Ok(self.apply_repair("synth/cluster-critique", &input, reply.clusters))
    }

    /// The full pipeline for one report.
    pub fn synthesize(&self, snapshot: &ReportSnapshot, corpus: &Corpus, kb: &KbConfig) -> Result<SynthesisPlan, SynthError> {
        if snapshot.title.trim().is_empty() && snapshot.description.trim().is_empty() {
            return Err(SynthError::EmptyReport(snapshot.source_key.clone()));
        }
        let retrieval = retrieve(snapshot, corpus, &self.llm, kb).map_err(|e| {
            let stage = self.llm.session.transcript.entries().last().map(|e| e.stage.clone()).unwrap_or_else(|| "kb".into());
            self.fail(&stage, e)
        })?;
        for e in self.llm.session.transcript.entries().iter().filter(|e| e.stage.starts_with("kb/") && e.response.is_some()) {
            self.provenance.borrow_mut().push(Provenance { stage: e.stage.clone(), transcript_id: e.id.clone() });
        }
        let knowledge = retrieval.block.clone();
        let mut draft = self.generate_initial(snapshot, &knowledge)?;
        for aspect in Aspect::ORDER {
            let critique = self.critique(snapshot, &draft, aspect, &knowledge)?;
            draft = self.rewrite(snapshot, &draft, &critique, &knowledge)?;
        }
        draft.stage = DraftStage::Final;
        let clusters = self.cluster_steps(&draft, &knowledge)?;
        let clusters = self.critique_clusters(clusters, &knowledge)?;
        Ok(SynthesisPlan {
            source_key: snapshot.source_key.clone(),
            clusters,
            final_steps: draft.steps,
            knowledge_block: knowledge,
            provenance: self.provenance.take(),
            warnings: self.warnings.take(),
            retrieval: Some(retrieval),
        })
    }
}
