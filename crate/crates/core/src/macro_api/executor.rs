use std::path::{Path, PathBuf};

use super::{
    describe, expand_command_with, resolve_click_place, Action, ActionBatch, ActionLogEntry, Backend, BackendEvent,
    CrashReport, InputContext, Key, LogRecord, MacroError, Primitive,
};
use crate::annotation::UiElement;
use crate::util::{append_jsonl, read_jsonl};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BatchOutcome {
    pub entries: Vec<ActionLogEntry>,
    /// Set when the batch stopped early; `entries` holds what ran before it.
    pub error: Option<MacroError>,
}

/// Runs the actions of `batch` in order, stopping at the first failure or as
/// soon as the game crashes.
///
/// `elements` and `frame_sequence` describe the frame the agent looked at;
/// a `ClickPlace` is stale if the batch names a different frame or if an
/// earlier action in the batch changed the layout.
pub fn execute_batch(
    batch: &ActionBatch,
    backend: &mut dyn Backend,
    elements: &[UiElement],
    frame_sequence: u64,
) -> BatchOutcome {
    let mut out = BatchOutcome::default();
    let epoch = backend.ui_epoch();
    for action in &batch.actions {
        if backend.crash().is_some() {
            break;
        }
        match execute_one(action, backend, elements, batch.issued_against_frame == frame_sequence, epoch) {
            Ok(entry) => out.entries.push(entry),
            Err(e) => {
                out.error = Some(e);
                break;
            }
        }
    }
    out
}

fn execute_one(
    action: &Action,
    backend: &mut dyn Backend,
    elements: &[UiElement],
    frame_matches: bool,
    epoch: u64,
) -> Result<ActionLogEntry, MacroError> {
    action.validate()?;
    let at = backend.now();
    let context = backend.context();
    let (resolved, source) = match action {
        Action::ClickPlace { element_index } => {
            if !frame_matches {
                return Err(MacroError::StaleElementIndex {
                    index: *element_index,
                    reason: "batch was issued against a different frame".into(),
                });
            }
            if backend.ui_epoch() != epoch {
                return Err(MacroError::StaleElementIndex {
                    index: *element_index,
                    reason: "the screen changed earlier in this batch".into(),
                });
            }
            let (click, source) = resolve_click_place(*element_index, elements)?;
            (click, Some(source))
        }
        other => (other.clone(), None),
    };
    let backend_events = apply_resolved(&resolved, backend)?;
    let verbal = describe(&resolved, source.as_ref());
    Ok(ActionLogEntry { at, context, resolved, source_element: source, verbal, backend_events })
}

/// Sends an already-resolved action to the backend.
fn apply_resolved(action: &Action, backend: &mut dyn Backend) -> Result<Vec<BackendEvent>, MacroError> {
    let primitives = match action {
        Action::Press { keys, hold_seconds } => vec![Primitive::Press { keys: keys.clone(), hold_seconds: *hold_seconds }],
        Action::Write { text } => vec![Primitive::Write { text: text.clone() }],
        Action::Click { coordinates } => vec![Primitive::Click { point: *coordinates }],
        Action::Command { instruction } => {
            let mut expanded = expand_command_with(instruction, backend.chat_key())?;
            match backend.context() {
                InputContext::Menu | InputContext::Crashed => {
                    return Err(MacroError::CommandInMenuContext { instruction: instruction.clone() })
                }
                // Close the open chat line so the shortcut starts from a clean state.
                InputContext::Chat => expanded.insert(0, Primitive::Press { keys: vec![Key::Escape], hold_seconds: None }),
                InputContext::InGame | InputContext::Unknown => {}
            }
            expanded
        }
        Action::ClickPlace { element_index } => {
            return Err(MacroError::InvalidAction(format!("unresolved click_place {element_index} reached the backend")))
        }
    };
    let mut events = Vec::new();
    for p in &primitives {
        events.extend(backend.apply(p)?);
        if backend.crash().is_some() {
            break;
        }
    }
    Ok(events)
}

/// Append-only action log, mirrored to `actions.jsonl` when a path is set.
#[derive(Debug, Default)]
pub struct ActionLog {
    path: Option<PathBuf>,
    records: Vec<LogRecord>,
}

impl ActionLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Starts a fresh log file at `path`, replacing any previous one.
    pub fn create(path: &Path) -> std::io::Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, b"")?;
        Ok(Self { path: Some(path.to_path_buf()), records: Vec::new() })
    }

    pub fn push(&mut self, record: LogRecord) -> std::io::Result<()> {
        if let Some(path) = &self.path {
            append_jsonl(path, &record)?;
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn load(path: &Path) -> std::io::Result<Vec<LogRecord>> {
        read_jsonl(path)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutcome {
    pub crash: Option<CrashReport>,
    pub steps: usize,
}

/// Re-executes a log against a backend in its initial state, checking every
/// record's backend events and the final crash against what was recorded.
pub fn replay(records: &[LogRecord], backend: &mut dyn Backend) -> Result<ReplayOutcome, MacroError> {
    for (step, record) in records.iter().enumerate() {
        let diverged = |detail: String| MacroError::ReplayDivergence { step, detail };
        match record {
            LogRecord::Action(entry) => {
                let events = apply_resolved(&entry.resolved, backend)
                    .map_err(|e| diverged(format!("action failed on replay: {e}")))?;
                if events != entry.backend_events {
                    return Err(diverged(format!(
                        "expected events {:?}, got {:?}",
                        entry.backend_events, events
                    )));
                }
            }
            LogRecord::Idle { ticks, backend_events, .. } => {
                let events = backend.idle(*ticks);
                if &events != backend_events {
                    return Err(diverged(format!("expected idle events {backend_events:?}, got {events:?}")));
                }
            }
            LogRecord::Outcome { crash, .. } => {
                let actual = backend.crash();
                if &actual != crash {
                    return Err(diverged(format!("expected crash {crash:?}, got {actual:?}")));
                }
            }
        }
    }
    Ok(ReplayOutcome { crash: backend.crash(), steps: records.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::{BBox, ElementKind, Frame, FrameSource};
    use chrono::{DateTime, Utc};

    /// Counter backend: clicks bump a layout epoch, writes append to a buffer.
    struct Toy {
        ctx: InputContext,
        epoch: u64,
        buffer: String,
        applied: Vec<Primitive>,
        crash_on: Option<String>,
        crashed: Option<CrashReport>,
    }

    impl Toy {
        fn new(ctx: InputContext) -> Self {
            Self { ctx, epoch: 0, buffer: String::new(), applied: vec![], crash_on: None, crashed: None }
        }
    }

    impl Backend for Toy {
        fn context(&self) -> InputContext {
            self.ctx
        }
        fn ui_epoch(&self) -> u64 {
            self.epoch
        }
        fn apply(&mut self, input: &Primitive) -> Result<Vec<BackendEvent>, MacroError> {
            self.applied.push(input.clone());
            match input {
                Primitive::Click { .. } => {
                    self.epoch += 1;
                    Ok(vec![BackendEvent::Screen { to: format!("s{}", self.epoch) }])
                }
                Primitive::Write { text } => {
                    self.buffer.push_str(text);
                    if self.crash_on.as_deref() == Some(text.as_str()) {
                        self.crashed = Some(CrashReport { crash_id: "boom".into(), tick: 0 });
                    }
                    Ok(vec![BackendEvent::Text { target: "box".into(), value: self.buffer.clone() }])
                }
                Primitive::Press { keys, .. } => Ok(vec![BackendEvent::Input { detail: keys[0].name().into() }]),
            }
        }
        fn idle(&mut self, _ticks: u64) -> Vec<BackendEvent> {
            vec![]
        }
        fn now(&self) -> DateTime<Utc> {
            DateTime::UNIX_EPOCH
        }
        fn observe(&mut self) -> Frame {
            Frame { source: FrameSource::Sim, image: None, sim_elements: Some(vec![]), captured_at: self.now(), sequence: 0 }
        }
        fn crash(&self) -> Option<CrashReport> {
            self.crashed.clone()
        }
    }

    fn elements() -> Vec<UiElement> {
        vec![UiElement { index: 0, kind: ElementKind::Text, content: "Play".into(), bbox: BBox::new(0.0, 0.0, 1.0, 1.0), interactable: true }]
    }

    fn batch(actions: Vec<Action>) -> ActionBatch {
        ActionBatch { actions, issued_against_frame: 7 }
    }

    #[test]
    fn effects_are_sequential() {
        let mut b = Toy::new(InputContext::Menu);
        let out = execute_batch(&batch(vec![Action::write("hel"), Action::write("lo")]), &mut b, &[], 7);
        assert!(out.error.is_none());
        assert_eq!(b.buffer, "hello");
        assert_eq!(out.entries[1].backend_events, vec![BackendEvent::Text { target: "box".into(), value: "hello".into() }]);
    }

    #[test]
    fn click_place_is_resolved_before_the_backend() {
        let mut b = Toy::new(InputContext::Menu);
        let out = execute_batch(&batch(vec![Action::ClickPlace { element_index: 0 }]), &mut b, &elements(), 7);
        assert_eq!(b.applied, vec![Primitive::Click { point: crate::annotation::Point::new(0.5, 0.5) }]);
        assert_eq!(out.entries[0].resolved, Action::click(0.5, 0.5));
        assert_eq!(out.entries[0].source_element.as_ref().unwrap().content, "Play");
    }

    #[test]
    fn stale_indices_stop_the_batch() {
        let mut b = Toy::new(InputContext::Menu);
        let two_clicks = batch(vec![Action::ClickPlace { element_index: 0 }, Action::ClickPlace { element_index: 0 }]);
        let out = execute_batch(&two_clicks, &mut b, &elements(), 7);
        assert_eq!(out.entries.len(), 1);
        assert!(matches!(out.error, Some(MacroError::StaleElementIndex { index: 0, .. })));

        let mut b = Toy::new(InputContext::Menu);
        let out = execute_batch(&batch(vec![Action::ClickPlace { element_index: 0 }]), &mut b, &elements(), 8);
        assert!(matches!(out.error, Some(MacroError::StaleElementIndex { .. })));
        assert!(b.applied.is_empty());
    }

    #[test]
    fn command_in_menu_changes_nothing() {
        let mut b = Toy::new(InputContext::Menu);
        let out = execute_batch(&batch(vec![Action::command("/time set day"), Action::write("x")]), &mut b, &[], 7);
        assert!(matches!(out.error, Some(MacroError::CommandInMenuContext { .. })));
        assert!(out.entries.is_empty());
        assert!(b.applied.is_empty());
    }

    #[test]
    fn command_from_open_chat_closes_it_first() {
        let mut b = Toy::new(InputContext::Chat);
        execute_batch(&batch(vec![Action::command(" /time set day ")]), &mut b, &[], 7);
        assert_eq!(
            b.applied,
            vec![
                Primitive::Press { keys: vec![Key::Escape], hold_seconds: None },
                Primitive::Press { keys: vec![Key::T], hold_seconds: None },
                Primitive::Write { text: "/time set day".into() },
                Primitive::Press { keys: vec![Key::Enter], hold_seconds: None },
            ]
        );
    }

    #[test]
    fn execution_stops_after_a_crash() {
        let mut b = Toy::new(InputContext::InGame);
        b.crash_on = Some("boom".into());
        let out = execute_batch(&batch(vec![Action::write("boom"), Action::write("after")]), &mut b, &[], 7);
        assert_eq!(out.entries.len(), 1);
        assert!(out.error.is_none());
        assert_eq!(b.buffer, "boom");
    }

    #[test]
    fn empty_log_replays_to_nothing() {
        let mut b = Toy::new(InputContext::Menu);
        assert_eq!(replay(&[], &mut b).unwrap(), ReplayOutcome { crash: None, steps: 0 });
    }

    #[test]
    fn replay_detects_divergence() {
        let mut b = Toy::new(InputContext::InGame);
        let out = execute_batch(&batch(vec![Action::write("a"), Action::write("b")]), &mut b, &[], 7);
        let mut log: Vec<LogRecord> = out.entries.into_iter().map(LogRecord::Action).collect();
        log.push(LogRecord::Outcome { at: DateTime::UNIX_EPOCH, crash: None });
        assert!(replay(&log, &mut Toy::new(InputContext::InGame)).is_ok());

        let mut dirty = Toy::new(InputContext::InGame);
        dirty.buffer.push('z');
        assert!(matches!(replay(&log, &mut dirty), Err(MacroError::ReplayDivergence { step: 0, .. })));
    }

    #[test]
    fn log_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("actions.jsonl");
        let mut log = ActionLog::create(&path).unwrap();
        log.push(LogRecord::Idle { at: DateTime::UNIX_EPOCH, ticks: 20, backend_events: vec![] }).unwrap();
        log.push(LogRecord::Outcome { at: DateTime::UNIX_EPOCH, crash: Some(CrashReport { crash_id: "c".into(), tick: 20 }) }).unwrap();
        assert_eq!(ActionLog::load(&path).unwrap(), log.records());
    }
}
