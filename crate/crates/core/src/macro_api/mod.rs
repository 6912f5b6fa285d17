//! The action surface the agent drives the game through: a frozen JSON wire
//! format, sequential batch execution against a [`Backend`], verbal action
//! descriptions and a replayable action log.

mod executor;
mod keys;
pub mod live;
pub mod service;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{center, BBox, Frame, Point, UiElement};

pub use executor::{execute_batch, replay, ActionLog, BatchOutcome, ReplayOutcome};
pub use keys::Key;

/// JSON Schema of an [`ActionBatch`]; the field names are part of the contract.
pub const MACRO_BATCH_SCHEMA: &str = include_str!("../../contracts/macro_batch.schema.json");

/// Default key that opens the chat line.
pub const DEFAULT_CHAT_KEY: Key = Key::T;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Action {
    /// All keys go down together. Without a hold time they are released at once.
    Press {
        #[serde(deserialize_with = "keys::one_or_many")]
        keys: Vec<Key>,
        #[serde(rename = "time", default, skip_serializing_if = "Option::is_none")]
        hold_seconds: Option<f64>,
    },
    Write {
        #[serde(rename = "str")]
        text: String,
    },
    /// Shortcut for opening chat, typing the instruction and pressing enter.
    Command { instruction: String },
    Click { coordinates: Point },
    ClickPlace { element_index: u32 },
}

impl Action {
    pub fn press(key: Key) -> Self {
        Action::Press { keys: vec![key], hold_seconds: None }
    }

    pub fn write(text: impl Into<String>) -> Self {
        Action::Write { text: text.into() }
    }

    pub fn command(instruction: impl Into<String>) -> Self {
        Action::Command { instruction: instruction.into() }
    }

    pub fn click(x: f64, y: f64) -> Self {
        Action::Click { coordinates: Point::new(x, y) }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Action::Press { .. } => "press",
            Action::Write { .. } => "write",
            Action::Command { .. } => "command",
            Action::Click { .. } => "click",
            Action::ClickPlace { .. } => "click_place",
        }
    }

    fn validate(&self) -> Result<(), MacroError> {
        match self {
            Action::Press { keys, hold_seconds } => {
                if keys.is_empty() {
                    return Err(MacroError::InvalidAction("press needs at least one key".into()));
                }
                if let Some(t) = hold_seconds {
                    if !(t.is_finite() && *t > 0.0) {
                        return Err(MacroError::InvalidAction(format!("hold time must be > 0 seconds, got {t}")));
                    }
                }
                Ok(())
            }
            Action::Click { coordinates: p } => {
                if (0.0..=1.0).contains(&p.x) && (0.0..=1.0).contains(&p.y) {
                    Ok(())
                } else {
                    Err(MacroError::InvalidAction(format!("click outside the screen at ({}, {})", p.x, p.y)))
                }
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionBatch {
    pub actions: Vec<Action>,
    /// Sequence number of the frame whose element indices the batch refers to.
    pub issued_against_frame: u64,
}

/// Inputs a backend understands. `Command` and `ClickPlace` never get here.
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    Press { keys: Vec<Key>, hold_seconds: Option<f64> },
    Write { text: String },
    Click { point: Point },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputContext {
    Menu,
    InGame,
    Chat,
    Crashed,
    /// The backend cannot tell (live game); the game itself enforces context.
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrashReport {
    pub crash_id: String,
    pub tick: u64,
}

/// Observable effect of an input or of time passing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum BackendEvent {
    Screen { to: String },
    Widget { id: String },
    Setting { id: String, value: String },
    Text { target: String, value: String },
    CommandAccepted { text: String },
    CommandRejected { text: String, message: String },
    World { detail: String },
    Death { entity: String, cause: String },
    Input { detail: String },
    NoEffect { reason: String },
    Crash { crash_id: String, tick: u64 },
}

pub trait Backend: Send {
    fn context(&self) -> InputContext;
    /// Changes whenever the element layout may have changed.
    fn ui_epoch(&self) -> u64;
    fn apply(&mut self, input: &Primitive) -> Result<Vec<BackendEvent>, MacroError>;
    /// Lets `ticks` logical ticks (50 ms each) pass.
    fn idle(&mut self, ticks: u64) -> Vec<BackendEvent>;
    fn now(&self) -> DateTime<Utc>;
    fn observe(&mut self) -> Frame;
    fn crash(&self) -> Option<CrashReport>;
    fn chat_key(&self) -> Key {
        DEFAULT_CHAT_KEY
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MacroError {
    #[error("element index {index} is stale: {reason}")]
    StaleElementIndex { index: u32, reason: String },
    #[error("command {instruction:?} issued in a menu context")]
    CommandInMenuContext { instruction: String },
    #[error("command text is empty")]
    InvalidCommandText,
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("backend error: {0}")]
    BackendError(String),
    #[error("replay diverged at record {step}: {detail}")]
    ReplayDivergence { step: usize, detail: String },
}

impl MacroError {
    pub fn kind(&self) -> &'static str {
        match self {
            MacroError::StaleElementIndex { .. } => "StaleElementIndex",
            MacroError::CommandInMenuContext { .. } => "CommandInMenuContext",
            MacroError::InvalidCommandText => "InvalidCommandText",
            MacroError::InvalidAction(_) => "InvalidAction",
            MacroError::BackendError(_) => "BackendError",
            MacroError::ReplayDivergence { .. } => "ReplayDivergence",
        }
    }
}

/// The element a resolved click came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementRef {
    pub index: u32,
    pub content: String,
    pub bbox: BBox,
}

/// Click at the centre of element `element_index`.
pub fn resolve_click_place(element_index: u32, elements: &[UiElement]) -> Result<(Action, ElementRef), MacroError> {
    let el = elements.iter().find(|e| e.index == element_index).ok_or_else(|| MacroError::StaleElementIndex {
        index: element_index,
        reason: format!("no element with that index among {} elements", elements.len()),
    })?;
    Ok((
        Action::Click { coordinates: center(&el.bbox) },
        ElementRef { index: el.index, content: el.content.clone(), bbox: el.bbox },
    ))
}

pub fn expand_command(instruction: &str) -> Result<Vec<Primitive>, MacroError> {
    expand_command_with(instruction, DEFAULT_CHAT_KEY)
}

/// Open chat, type the trimmed instruction, press enter.
pub fn expand_command_with(instruction: &str, chat_key: Key) -> Result<Vec<Primitive>, MacroError> {
    let text = instruction.trim();
    if text.is_empty() {
        return Err(MacroError::InvalidCommandText);
    }
    Ok(vec![
        Primitive::Press { keys: vec![chat_key], hold_seconds: None },
        Primitive::Write { text: text.to_string() },
        Primitive::Press { keys: vec![Key::Enter], hold_seconds: None },
    ])
}

/// Human-readable description of a resolved action, as stored in trajectories.
pub fn describe(action: &Action, source: Option<&ElementRef>) -> String {
    match action {
        Action::Press { keys, hold_seconds } => {
            let names: Vec<&str> = keys.iter().map(|k| k.name()).collect();
            let what = if names.len() == 1 { format!("key {}", names[0]) } else { format!("keys {}", names.join(" + ")) };
            match hold_seconds {
                Some(t) => format!("Held {what} for {t} seconds."),
                None => format!("Pressed {what}."),
            }
        }
        Action::Write { text } => format!("Typed the text: {text:?}."),
        Action::Command { instruction } => format!("Ran the command: {}.", instruction.trim()),
        Action::Click { coordinates } => match source {
            Some(el) => format!(
                "Clicked the place that had content: {}. at coordinates: [x1: {:.2}, y1: {:.2}, x2: {:.2}, y2: {:.2}]",
                el.content, el.bbox.x1, el.bbox.y1, el.bbox.x2, el.bbox.y2
            ),
            None => format!("Clicked at coordinates ({:.3}, {:.3}).", coordinates.x, coordinates.y),
        },
        Action::ClickPlace { element_index } => format!("Clicked element {element_index}."),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionLogEntry {
    pub at: DateTime<Utc>,
    pub context: InputContext,
    /// Never a `ClickPlace`.
    pub resolved: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_element: Option<ElementRef>,
    pub verbal: String,
    pub backend_events: Vec<BackendEvent>,
}

/// One line of `actions.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LogRecord {
    Action(ActionLogEntry),
    Idle { at: DateTime<Utc>, ticks: u64, backend_events: Vec<BackendEvent> },
    Outcome { at: DateTime<Utc>, crash: Option<CrashReport> },
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::ElementKind;
    use serde_json::json;

    #[test]
    fn wire_names_are_frozen() {
        let batch = ActionBatch {
            actions: vec![
                Action::Press { keys: vec![Key::Shift, Key::W], hold_seconds: Some(1.5) },
                Action::write("hi"),
                Action::command("/time set day"),
                Action::click(0.5, 0.25),
                Action::ClickPlace { element_index: 12 },
            ],
            issued_against_frame: 3,
        };
        let v = serde_json::to_value(&batch).unwrap();
        assert_eq!(
            v,
            json!({"actions": [
                {"type": "press", "keys": ["shift", "w"], "time": 1.5},
                {"type": "write", "str": "hi"},
                {"type": "command", "instruction": "/time set day"},
                {"type": "click", "coordinates": {"x": 0.5, "y": 0.25}},
                {"type": "click_place", "element_index": 12}
            ], "issued_against_frame": 3})
        );
        let single: Action = serde_json::from_value(json!({"type": "press", "keys": "escape"})).unwrap();
        assert_eq!(single, Action::press(Key::Escape));
        assert!(serde_json::from_value::<Action>(json!({"type": "press", "keys": "Escape"})).is_err());
        assert!(serde_json::from_value::<Action>(json!({"type": "write", "text": "x"})).is_err());
    }

    #[test]
    fn schema_file_accepts_serialized_batches() {
        let schema: serde_json::Value = serde_json::from_str(MACRO_BATCH_SCHEMA).unwrap();
        let validator = jsonschema::validator_for(&schema).unwrap();
        let ok = json!({"actions": [{"type": "press", "keys": "escape"}, {"type": "click_place", "element_index": 0}], "issued_against_frame": 0});
        assert!(validator.is_valid(&ok));
        let bad = json!({"actions": [{"type": "press", "keys": ["Escape"]}], "issued_against_frame": 0});
        assert!(!validator.is_valid(&bad));
        let every_key = json!({"actions": [{"type": "press", "keys": Key::ALL.iter().map(|k| k.name()).collect::<Vec<_>>()}], "issued_against_frame": 0});
        assert!(validator.is_valid(&every_key));
    }

    #[test]
    fn click_place_resolves_to_centre() {
        let elements: Vec<UiElement> = (0..13)
            .map(|i| UiElement {
                index: i,
                kind: ElementKind::Text,
                content: if i == 12 { "World".into() } else { format!("e{i}") },
                bbox: if i == 12 { BBox::new(0.41, 0.06, 0.60, 0.12) } else { BBox::new(0.0, 0.0, 1.0, 1.0) },
                interactable: true,
            })
            .collect();
        let (click, src) = resolve_click_place(12, &elements).unwrap();
        let Action::Click { coordinates } = click else { panic!("not a click") };
        assert!((coordinates.x - 0.505).abs() < 1e-12 && (coordinates.y - 0.09).abs() < 1e-12);
        assert_eq!(src.content, "World");
        let (unit, _) = resolve_click_place(0, &elements).unwrap();
        assert_eq!(unit, Action::click(0.5, 0.5));
        assert!(matches!(resolve_click_place(13, &elements), Err(MacroError::StaleElementIndex { index: 13, .. })));
        assert_eq!(
            describe(&Action::Click { coordinates }, Some(&src)),
            "Clicked the place that had content: World. at coordinates: [x1: 0.41, y1: 0.06, x2: 0.60, y2: 0.12]"
        );
    }

    #[test]
    fn command_expansion() {
        let p = expand_command("/setblock 0 64 0 water  ").unwrap();
        assert_eq!(p.len(), 3);
        assert_eq!(p[0], Primitive::Press { keys: vec![Key::T], hold_seconds: None });
        assert_eq!(p[1], Primitive::Write { text: "/setblock 0 64 0 water".into() });
        assert_eq!(p[2], Primitive::Press { keys: vec![Key::Enter], hold_seconds: None });
        assert_eq!(expand_command("   "), Err(MacroError::InvalidCommandText));
        assert_eq!(expand_command_with("/kill @e", Key::Slash).unwrap()[0], Primitive::Press { keys: vec![Key::Slash], hold_seconds: None });
    }
}
