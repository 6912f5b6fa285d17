//! The agent loop: observe and annotate the screen, propose a thought and
//! actions, have them checked once, execute, reflect on the result and move
//! through the plan's clusters, until the game crashes or the cap is reached.

mod window;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::annotation::{annotate, render_table, Annotator, Frame, UiElement};
use crate::llm_gateway::{usage_report_from_entries, GatewayError, ImageRef, PriceTable, Usage};
use crate::macro_api::{execute_batch, Action, ActionBatch, ActionLog, Backend, CrashReport, InputContext, LogRecord, MacroError, MACRO_BATCH_SCHEMA};
use crate::prompts::Llm;
use crate::step_synthesizer::SynthesisPlan;
use crate::util::{append_jsonl, canonical_json_pretty, write_atomic};

pub use window::{render_window, WINDOW_MARKER};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Limits {
    pub max_iterations: u32,
    /// Trajectory entries shown in each prompt.
    pub window: usize,
    /// Logical ticks the game runs at the end of every iteration.
    pub settle_ticks: u64,
}

impl Default for Limits {
    fn default() -> Self {
        Self { max_iterations: 30, window: 25, settle_ticks: 20 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    #[serde(rename = "SUCCESS")]
    Success,
    #[serde(rename = "FAILURE")]
    Failure,
}

impl Classification {
    pub fn as_str(&self) -> &'static str {
        match self {
            Classification::Success => "SUCCESS",
            Classification::Failure => "FAILURE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEntry {
    pub iteration: u32,
    pub cluster_index: usize,
    pub cluster_title: String,
    pub thought: String,
    /// Verbal descriptions of what ran, never the wire payload.
    pub action_verbal: String,
    pub reflection: String,
    pub classification: Classification,
    #[serde(default)]
    pub regenerated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verifier_feedback: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub execution_error: Option<String>,
    #[serde(default)]
    pub advance_proposed: bool,
    #[serde(default)]
    pub advance_confirmed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome")]
pub enum Outcome {
    Success { crash_id: String },
    Failure,
    Error { kind: String, detail: String },
}

impl Outcome {
    pub fn is_success(&self) -> bool {
        matches!(self, Outcome::Success { .. })
    }

    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Success { .. } => "Success",
            Outcome::Failure => "Failure",
            Outcome::Error { .. } => "Error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run_id: String,
    pub source_key: String,
    pub outcome: Outcome,
    pub iterations_used: u32,
    pub final_cluster_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crash: Option<CrashReport>,
    pub usage: Usage,
    pub cost_usd: f64,
    pub model_calls: usize,
    /// Milliseconds of real time; not part of any determinism check.
    pub wall_time_ms: u64,
}

impl RunResult {
    /// The result without timing, for comparisons across runs.
    pub fn comparable(&self) -> RunResult {
        RunResult { wall_time_ms: 0, ..self.clone() }
    }
}

/// Where a run keeps its artifacts.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub const PLAN: &'static str = "plan.json";
    pub const TRAJECTORY: &'static str = "trajectory.jsonl";
    pub const ACTIONS: &'static str = "actions.jsonl";
    pub const FRAMES: &'static str = "frames";
    pub const RESULT: &'static str = "result.json";
    pub const TRANSCRIPTS: &'static str = "transcripts";

    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn load_result(&self) -> std::io::Result<RunResult> {
        serde_json::from_str(&std::fs::read_to_string(self.path(Self::RESULT))?).map_err(std::io::Error::other)
    }

    pub fn load_trajectory(&self) -> std::io::Result<Vec<TrajectoryEntry>> {
        crate::util::read_jsonl(&self.path(Self::TRAJECTORY))
    }

    pub fn load_actions(&self) -> std::io::Result<Vec<LogRecord>> {
        crate::util::read_jsonl(&self.path(Self::ACTIONS))
    }
}

#[derive(Debug, Deserialize)]
struct Proposal {
    thought: String,
    actions: Vec<Action>,
    #[serde(default)]
    advance_cluster: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Verdict {
    Pass,
    Revise,
}

#[derive(Debug, Deserialize)]
struct Verification {
    verdict: Verdict,
    #[serde(default)]
    feedback: String,
}

#[derive(Debug, Deserialize)]
struct Reflection {
    reflection: String,
    classification: Classification,
    #[serde(default)]
    advance_proposed: bool,
}

#[derive(Debug, Deserialize)]
struct Confirmation {
    complete: bool,
}

pub fn propose_schema() -> Value {
    let batch: Value = serde_json::from_str(MACRO_BATCH_SCHEMA).expect("macro schema is JSON");
    json!({
        "type": "object",
        "properties": {
            "thought": {"type": "string", "minLength": 1},
            "actions": {"type": "array", "items": {"$ref": "#/$defs/action"}},
            "advance_cluster": {"type": "boolean"}
        },
        "required": ["thought", "actions", "advance_cluster"],
        "$defs": batch["$defs"].clone()
    })
}

fn verify_schema() -> Value {
    json!({
        "type": "object",
        "properties": {"verdict": {"enum": ["pass", "revise"]}, "feedback": {"type": "string"}},
        "required": ["verdict", "feedback"]
    })
}

fn reflect_schema() -> Value {
    json!({
        "type": "object",
        "properties": {
            "reflection": {"type": "string"},
            "classification": {"enum": ["SUCCESS", "FAILURE"]},
            "advance_proposed": {"type": "boolean"}
        },
        "required": ["reflection", "classification", "advance_proposed"]
    })
}

fn confirm_schema() -> Value {
    json!({
        "type": "object",
        "properties": {"complete": {"type": "boolean"}, "rationale": {"type": "string"}},
        "required": ["complete", "rationale"]
    })
}

fn context_name(c: InputContext) -> &'static str {
    match c {
        InputContext::Menu => "menu",
        InputContext::InGame => "in game",
        InputContext::Chat => "chat open",
        InputContext::Crashed => "crashed",
        InputContext::Unknown => "unknown",
    }
}

fn describe_actions(actions: &[Action]) -> String {
    if actions.is_empty() {
        return "(none)".into();
    }
    actions.iter().map(|a| serde_json::to_string(a).expect("action serializes")).collect::<Vec<_>>().join("\n")
}

struct Observation {
    frame: Frame,
    elements: Vec<UiElement>,
    table: String,
    context: InputContext,
}

enum Stop {
    Error(String, String),
}

impl From<GatewayError> for Stop {
    fn from(e: GatewayError) -> Self {
        Stop::Error(e.kind().to_string(), e.to_string())
    }
}

impl From<std::io::Error> for Stop {
    fn from(e: std::io::Error) -> Self {
        Stop::Error("Io".into(), e.to_string())
    }
}

/// Everything one run needs besides the backend.
pub struct AgentLoop<'a> {
    pub llm: Llm<'a>,
    pub annotator: &'a dyn Annotator,
    pub limits: Limits,
    pub prices: &'a PriceTable,
}

struct RunState<'p> {
    plan: &'p SynthesisPlan,
    cluster_index: usize,
    trajectory: Vec<TrajectoryEntry>,
    dir: Option<RunDir>,
}

impl RunState<'_> {
    fn cluster_title(&self) -> String {
        self.plan.clusters.get(self.cluster_index).map(|c| c.title.clone()).unwrap_or_default()
    }

    fn active_cluster(&self) -> String {
        match self.plan.clusters.get(self.cluster_index) {
            Some(c) => {
                let steps: Vec<String> = c.steps.iter().map(|s| format!("- {s}")).collect();
                format!("{} ({} of {})\n{}", c.title, self.cluster_index + 1, self.plan.clusters.len(), steps.join("\n"))
            }
            None => "(none)".into(),
        }
    }
}

impl<'a> AgentLoop<'a> {
    fn observe(&self, backend: &mut dyn Backend) -> Result<Observation, Stop> {
        let frame = backend.observe();
        let elements = annotate(&frame, self.annotator).map_err(|e| {
            let kind = match e {
                crate::annotation::AnnotationError::AnnotatorUnavailable(_) => "AnnotatorUnavailable",
                crate::annotation::AnnotationError::MalformedAnnotation(_) => "MalformedAnnotation",
                crate::annotation::AnnotationError::InvalidFrame(_) => "InvalidFrame",
            };
            Stop::Error(kind.into(), e.to_string())
        })?;
        let table = render_table(&elements);
        Ok(Observation { frame, elements, table, context: backend.context() })
    }

    fn save_frame(&self, state: &RunState, iteration: u32, tag: &str, obs: &Observation) -> Result<(), Stop> {
        if let Some(dir) = &state.dir {
            let path = dir.path(RunDir::FRAMES).join(format!("{iteration:04}-{tag}.json"));
            let doc = json!({"frame": obs.frame, "elements": obs.elements, "table": obs.table});
            write_atomic(&path, canonical_json_pretty(&doc).map_err(std::io::Error::other)?.as_bytes())?;
        }
        Ok(())
    }

    fn images(obs: &Observation) -> Vec<ImageRef> {
        obs.frame.image.as_ref().map(|b| vec![ImageRef::from_bytes("image/png", b.clone())]).unwrap_or_default()
    }

    fn propose(&self, state: &RunState, obs: &Observation, feedback: Option<&str>) -> Result<Proposal, Stop> {
        let window = render_window(&state.trajectory, self.limits.window);
        let plan = state.plan.render();
        let active = state.active_cluster();
        let feedback = feedback.map(|f| format!("\nFeedback on your previous proposal: {f}\nPropose again.")).unwrap_or_default();
        let reply = self.llm.call::<Proposal>(
            "agent/propose",
            "propose",
            &[
                ("plan", &plan),
                ("active_cluster", &active),
                ("window", &window),
                ("context", context_name(obs.context)),
                ("table", obs.table.trim_end()),
                ("examples", self.llm.prompts.fewshot("propose")),
                ("feedback", &feedback),
            ],
            propose_schema(),
            Self::images(obs),
            None,
        )?;
        Ok(reply.value)
    }

    fn verify(&self, state: &RunState, obs: &Observation, proposal: &Proposal) -> Result<Verification, Stop> {
        let window = render_window(&state.trajectory, self.limits.window);
        let plan = state.plan.render();
        let active = state.active_cluster();
        let actions = describe_actions(&proposal.actions);
        let reply = self.llm.call::<Verification>(
            "agent/verify",
            "verify",
            &[
                ("plan", &plan),
                ("active_cluster", &active),
                ("window", &window),
                ("context", context_name(obs.context)),
                ("table", obs.table.trim_end()),
                ("thought", &proposal.thought),
                ("actions", &actions),
            ],
            verify_schema(),
            Self::images(obs),
            None,
        )?;
        Ok(reply.value)
    }

    #[allow(clippy::too_many_arguments)]
    fn reflect(
        &self,
        state: &RunState,
        before: &Observation,
        after: &Observation,
        thought: &str,
        verbal: &str,
        result: &str,
    ) -> Result<Reflection, Stop> {
        let window = render_window(&state.trajectory, self.limits.window);
        let plan = state.plan.render();
        let active = state.active_cluster();
        let mut images = Self::images(before);
        images.extend(Self::images(after));
        let reply = self.llm.call::<Reflection>(
            "agent/reflect",
            "reflect",
            &[
                ("plan", &plan),
                ("active_cluster", &active),
                ("window", &window),
                ("thought", thought),
                ("actions", verbal),
                ("result", result),
                ("context_before", context_name(before.context)),
                ("before", before.table.trim_end()),
                ("context_after", context_name(after.context)),
                ("after", after.table.trim_end()),
            ],
            reflect_schema(),
            images,
            None,
        )?;
        Ok(reply.value)
    }

    /// The redundant completion check. A reply that violates the schema
    /// counts as "not complete" rather than failing the run.
    fn confirm(&self, state: &RunState, obs: &Observation) -> Result<bool, Stop> {
        let window = render_window(&state.trajectory, self.limits.window);
        let plan = state.plan.render();
        let active = state.active_cluster();
        let result = self.llm.call::<Confirmation>(
            "agent/confirm",
            "confirm",
            &[("plan", &plan), ("active_cluster", &active), ("window", &window), ("context", context_name(obs.context)), ("table", obs.table.trim_end())],
            confirm_schema(),
            Self::images(obs),
            None,
        );
        match result {
            Ok(r) => Ok(r.value.complete),
            Err(GatewayError::SchemaViolation { detail, .. }) => {
                tracing::warn!("confirmation reply violated its schema; treating as not complete: {detail}");
                Ok(false)
            }
            Err(e) => Err(e.into()),
        }
    }

    fn record_entry(&self, state: &mut RunState, entry: TrajectoryEntry) -> Result<(), Stop> {
        if let Some(dir) = &state.dir {
            append_jsonl(&dir.path(RunDir::TRAJECTORY), &entry)?;
        }
        state.trajectory.push(entry);
        Ok(())
    }

    fn iterate(
        &self,
        state: &mut RunState,
        backend: &mut dyn Backend,
        log: &mut ActionLog,
        iteration: u32,
        before: Observation,
    ) -> Result<Observation, Stop> {
        self.save_frame(state, iteration, "before", &before)?;
        let mut proposal = self.propose(state, &before, None)?;
        let mut regenerated = false;
        let mut verifier_feedback = None;
        if !proposal.actions.is_empty() {
            let v = self.verify(state, &before, &proposal)?;
            if v.verdict == Verdict::Revise {
                let feedback = if v.feedback.trim().is_empty() { "The proposal was rejected.".to_string() } else { v.feedback };
                proposal = self.propose(state, &before, Some(&feedback))?;
                regenerated = true;
                verifier_feedback = Some(feedback);
            }
        }

        let batch = ActionBatch { actions: proposal.actions.clone(), issued_against_frame: before.frame.sequence };
        let outcome = execute_batch(&batch, backend, &before.elements, before.frame.sequence);
        let verbal: Vec<String> = outcome.entries.iter().map(|e| e.verbal.clone()).collect();
        for e in outcome.entries {
            log.push(LogRecord::Action(e))?;
        }
        if let Some(MacroError::BackendError(msg)) = &outcome.error {
            return Err(Stop::Error("BackendError".into(), msg.clone()));
        }
        let execution_error = outcome.error.as_ref().map(|e| e.to_string());
        // The game keeps running between turns, also when nothing was sent.
        if backend.crash().is_none() {
            let at = backend.now();
            let backend_events = backend.idle(self.limits.settle_ticks);
            log.push(LogRecord::Idle { at, ticks: self.limits.settle_ticks, backend_events })?;
        }
        let action_verbal = if verbal.is_empty() { "No action was executed.".to_string() } else { verbal.join(" ") };
        let after = self.observe(backend)?;

        let mut entry = TrajectoryEntry {
            iteration,
            cluster_index: state.cluster_index,
            cluster_title: state.cluster_title(),
            thought: proposal.thought.clone(),
            action_verbal: action_verbal.clone(),
            reflection: String::new(),
            classification: Classification::Failure,
            regenerated,
            verifier_feedback,
            execution_error: execution_error.clone(),
            advance_proposed: false,
            advance_confirmed: false,
        };

        if let Some(crash) = backend.crash() {
            self.save_frame(state, iteration, "after", &after)?;
            entry.reflection = format!("The game crashed ({}).", crash.crash_id);
            entry.classification = Classification::Success;
            self.record_entry(state, entry)?;
            return Ok(after);
        }

        let result = match &execution_error {
            Some(e) => format!("stopped with an error: {e}"),
            None if proposal.actions.is_empty() => "no actions were sent".to_string(),
            None => "all actions were executed".to_string(),
        };
        let r = self.reflect(state, &before, &after, &proposal.thought, &action_verbal, &result)?;
        entry.reflection = r.reflection;
        entry.classification = r.classification;
        entry.advance_proposed = r.advance_proposed || (proposal.advance_cluster && proposal.actions.is_empty());
        let proposed = entry.advance_proposed;
        // The confirmation sees this iteration in its window.
        state.trajectory.push(entry);
        let confirmed = proposed && self.confirm(state, &after)?;
        let mut entry = state.trajectory.pop().expect("entry was just pushed");
        if confirmed {
            entry.advance_confirmed = true;
            if state.cluster_index + 1 < state.plan.clusters.len() {
                state.cluster_index += 1;
            }
        }
        self.save_frame(state, iteration, "after", &after)?;
        self.record_entry(state, entry)?;
        Ok(after)
    }

    /// Runs the loop on `backend`. With `dir`, artifacts are written there.
    pub fn run(&self, plan: &SynthesisPlan, backend: &mut dyn Backend, dir: Option<&Path>) -> RunResult {
        let started = Instant::now();
        let run_dir = dir.map(RunDir::new);
        let mut state = RunState { plan, cluster_index: 0, trajectory: Vec::new(), dir: run_dir.clone() };
        let mut iterations = 0;
        let outcome = match self.run_inner(&mut state, backend, &mut iterations) {
            Ok(o) => o,
            Err(Stop::Error(kind, detail)) => Outcome::Error { kind, detail },
        };
        let entries = self.llm.session.transcript.entries();
        let usage = usage_report_from_entries(self.llm.session.transcript.run_id(), &entries, self.prices);
        let result = RunResult {
            run_id: self.llm.session.transcript.run_id().to_string(),
            source_key: plan.source_key.clone(),
            outcome,
            iterations_used: iterations,
            final_cluster_index: state.cluster_index,
            crash: backend.crash(),
            usage: usage.total,
            cost_usd: usage.cost_usd,
            model_calls: usage.calls,
            wall_time_ms: started.elapsed().as_millis() as u64,
        };
        if let Some(d) = &run_dir {
            let write = || -> std::io::Result<()> {
                let text = canonical_json_pretty(&result).map_err(std::io::Error::other)?;
                write_atomic(&d.path(RunDir::RESULT), text.as_bytes())
            };
            if let Err(e) = write() {
                tracing::error!("could not write run result: {e}");
            }
        }
        result
    }

    fn run_inner(&self, state: &mut RunState, backend: &mut dyn Backend, iterations: &mut u32) -> Result<Outcome, Stop> {
        let mut log = match &state.dir {
            Some(d) => {
                std::fs::create_dir_all(d.path(RunDir::FRAMES))?;
                let _ = std::fs::remove_file(d.path(RunDir::TRAJECTORY));
                state.plan.save(&d.path(RunDir::PLAN))?;
                ActionLog::create(&d.path(RunDir::ACTIONS))?
            }
            None => ActionLog::in_memory(),
        };
        if state.plan.clusters.is_empty() {
            return Err(Stop::Error("EmptyPlan".into(), "the plan has no clusters".into()));
        }
        let mut obs = self.observe(backend)?;
        let outcome = loop {
            if let Some(c) = backend.crash() {
                break Outcome::Success { crash_id: c.crash_id };
            }
            if *iterations >= self.limits.max_iterations {
                break Outcome::Failure;
            }
            *iterations += 1;
            obs = self.iterate(state, backend, &mut log, *iterations, obs)?;
        };
        log.push(LogRecord::Outcome { at: backend.now(), crash: backend.crash() })?;
        Ok(outcome)
    }
}
