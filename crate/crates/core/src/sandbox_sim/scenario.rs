use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::command::Vocabulary;
use super::layout::Widget;
use crate::macro_api::{Action, Key};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("scenario {path} is malformed: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error("unknown scenario {0:?}")]
    Unknown(String),
}

/// A comment as it appears in the scenario's synthetic bug report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioComment {
    pub author: String,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub key: String,
    pub title: String,
    pub description: String,
    #[serde(default)]
    pub comments: Vec<ScenarioComment>,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub pos: [i64; 3],
    pub block: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntitySpec {
    #[serde(rename = "type")]
    pub entity_type: String,
    pub pos: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialState {
    #[serde(default)]
    pub settings: BTreeMap<String, String>,
    #[serde(default)]
    pub blocks: Vec<BlockSpec>,
    #[serde(default)]
    pub entities: Vec<EntitySpec>,
    #[serde(default = "default_player_pos")]
    pub player_pos: [f64; 3],
    #[serde(default)]
    pub time_of_day: u32,
    #[serde(default)]
    pub rng_seed: u64,
}

impl Default for InitialState {
    fn default() -> Self {
        Self {
            settings: BTreeMap::new(),
            blocks: Vec::new(),
            entities: Vec::new(),
            player_pos: default_player_pos(),
            time_of_day: 0,
            rng_seed: 0,
        }
    }
}

fn default_player_pos() -> [f64; 3] {
    [0.5, 64.0, 0.5]
}

/// Straight-line movement of an entity type toward the nearest block of a kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Motion {
    pub entity_type: String,
    pub toward_block: String,
    /// Blocks per tick.
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trigger {
    EntityTouchesBlock { entity_type: String, block: String },
    /// Regex matched against the whole text of any accepted command.
    CommandExecuted { pattern: String },
    /// Regexes matched in order against a subsequence of the event trail.
    UiSequence { events: Vec<String> },
    TickReached { n: u64 },
    AllOf { triggers: Vec<Trigger> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrashRule {
    pub crash_id: String,
    pub trigger: Trigger,
}

/// One step of a scenario's reference solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolutionStep {
    /// Click the first interactable element whose content equals the text.
    ClickText(String),
    Action(Action),
    Idle(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: String,
    pub report: ScenarioReport,
    #[serde(default)]
    pub initial: InitialState,
    #[serde(default)]
    pub vocabulary: Vocabulary,
    #[serde(default)]
    pub motion: Vec<Motion>,
    #[serde(default)]
    pub daylight_burning: Vec<String>,
    pub rules: Vec<CrashRule>,
    /// Replaces the built-in layout of the named screens.
    #[serde(default)]
    pub ui_layout: BTreeMap<String, Vec<Widget>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chat_key: Option<Key>,
    #[serde(default)]
    pub solution: Vec<SolutionStep>,
    /// Scenarios the reference agent is not expected to solve.
    #[serde(default)]
    pub negative: bool,
}

impl ScenarioSpec {
    pub fn from_json(path: &Path, text: &str) -> Result<Self, ScenarioError> {
        let spec: ScenarioSpec = serde_json::from_str(text)
            .map_err(|e| ScenarioError::Malformed { path: path.to_path_buf(), message: e.to_string() })?;
        spec.check().map_err(|message| ScenarioError::Malformed { path: path.to_path_buf(), message })?;
        Ok(spec)
    }

    fn check(&self) -> Result<(), String> {
        if self.rules.is_empty() {
            return Err("scenario has no crash rules".into());
        }
        for rule in &self.rules {
            check_trigger(&rule.trigger)?;
        }
        for widgets in self.ui_layout.values() {
            if let Some(w) = widgets.iter().find(|w| !w.bbox.is_valid()) {
                return Err(format!("widget {} has an invalid bbox", w.id));
            }
        }
        Ok(())
    }
}

fn check_trigger(t: &Trigger) -> Result<(), String> {
    match t {
        Trigger::CommandExecuted { pattern } => compile(pattern).map(|_| ()),
        Trigger::UiSequence { events } => events.iter().try_for_each(|p| compile(p).map(|_| ())),
        Trigger::AllOf { triggers } => triggers.iter().try_for_each(check_trigger),
        _ => Ok(()),
    }
}

pub(super) fn compile(pattern: &str) -> Result<regex::Regex, String> {
    regex::Regex::new(&format!("^(?:{pattern})$")).map_err(|e| format!("bad pattern {pattern:?}: {e}"))
}

pub fn load_scenario(path: &Path) -> Result<ScenarioSpec, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.to_path_buf(), source })?;
    ScenarioSpec::from_json(path, &text)
}

/// All `*.json` scenarios directly under `dir` (solution logs excluded), by id.
pub fn load_scenarios(dir: &Path) -> Result<BTreeMap<String, ScenarioSpec>, ScenarioError> {
    let rd = std::fs::read_dir(dir).map_err(|source| ScenarioError::Io { path: dir.to_path_buf(), source })?;
    let mut out = BTreeMap::new();
    for entry in rd {
        let path = entry.map_err(|source| ScenarioError::Io { path: dir.to_path_buf(), source })?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("json") {
            let spec = load_scenario(&path)?;
            out.insert(spec.id.clone(), spec);
        }
    }
    Ok(out)
}

/// Finds a scenario by id in `dir` or its `negative/` subdirectory.
pub fn find_scenario(dir: &Path, id: &str) -> Result<ScenarioSpec, ScenarioError> {
    for sub in [dir.to_path_buf(), dir.join("negative")] {
        let path = sub.join(format!("{id}.json"));
        if path.is_file() {
            return load_scenario(&path);
        }
    }
    Err(ScenarioError::Unknown(id.to_string()))
}
