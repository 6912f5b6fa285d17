use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action_model::{Outcome, RunResult, TrajectoryEntry};
use crate::macro_api::{Action, BackendEvent, InputContext, LogRecord};
use crate::util::{canonical_json_pretty, write_atomic};

#[derive(Debug, Error, PartialEq)]
pub enum LabelError {
    #[error("a Faulty plan label needs at least one reason, other labels none")]
    FaultyReasons,
    #[error("{leaf} is not allowed when the synthesized plan {branch}")]
    WrongBranch { leaf: String, branch: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PlanOutcome {
    True,
    Faulty,
    Irreproducible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FaultReason {
    WrongCommand,
    MissingStep,
    LogicError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanLabel {
    pub label: PlanOutcome,
    #[serde(default)]
    pub faulty_reasons: BTreeSet<FaultReason>,
}

impl PlanLabel {
    pub fn new(label: PlanOutcome, reasons: impl IntoIterator<Item = FaultReason>) -> Result<Self, LabelError> {
        let l = Self { label, faulty_reasons: reasons.into_iter().collect() };
        l.validate()?;
        Ok(l)
    }

    pub fn validate(&self) -> Result<(), LabelError> {
        if (self.label == PlanOutcome::Faulty) != !self.faulty_reasons.is_empty() {
            return Err(LabelError::FaultyReasons);
        }
        Ok(())
    }

    pub fn is_faulty(&self) -> bool {
        self.label == PlanOutcome::Faulty
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Branch {
    OnSynthSuccess,
    OnSynthFailure,
}

impl Branch {
    fn describe(self) -> &'static str {
        match self {
            Branch::OnSynthSuccess => "was correct",
            Branch::OnSynthFailure => "was faulty",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LoopKind {
    Menu,
    Command,
    Death,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "leaf", content = "loop")]
pub enum Leaf {
    Success,
    StuckInLoop(LoopKind),
    PoorDecisionMaking,
    FrameworkIncapability,
    Error,
    Recovery,
    TotalFailure,
}

impl Leaf {
    pub fn name(&self) -> String {
        match self {
            Leaf::StuckInLoop(k) => format!("StuckInLoop({k:?})"),
            other => format!("{other:?}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunLabel {
    pub branch: Branch,
    pub leaf: Leaf,
}

impl RunLabel {
    pub fn new(branch: Branch, leaf: Leaf) -> Result<Self, LabelError> {
        let l = Self { branch, leaf };
        l.validate()?;
        Ok(l)
    }

    pub fn validate(&self) -> Result<(), LabelError> {
        let ok = match self.leaf {
            Leaf::Error => true,
            Leaf::Recovery | Leaf::TotalFailure => self.branch == Branch::OnSynthFailure,
            Leaf::Success | Leaf::StuckInLoop(_) | Leaf::PoorDecisionMaking | Leaf::FrameworkIncapability => {
                self.branch == Branch::OnSynthSuccess
            }
        };
        if ok {
            Ok(())
        } else {
            Err(LabelError::WrongBranch { leaf: self.leaf.name(), branch: self.branch.describe() })
        }
    }

    pub fn is_success(&self) -> bool {
        matches!(self.leaf, Leaf::Success | Leaf::Recovery)
    }
}

/// Human labels for one item, kept next to the run artifacts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<PlanLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunLabel>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub rater: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub note: String,
}

impl LabelFile {
    pub const NAME: &'static str = "labels.json";
    pub const SUGGESTED: &'static str = "suggested_label.json";

    pub fn load(run_dir: &Path) -> std::io::Result<Option<LabelFile>> {
        let path = run_dir.join(Self::NAME);
        if !path.exists() {
            return Ok(None);
        }
        let l: LabelFile = serde_json::from_str(&std::fs::read_to_string(&path)?).map_err(std::io::Error::other)?;
        if let Some(p) = &l.plan {
            p.validate().map_err(std::io::Error::other)?;
        }
        if let Some(r) = &l.run {
            r.validate().map_err(std::io::Error::other)?;
        }
        Ok(Some(l))
    }

    pub fn save(&self, run_dir: &Path) -> std::io::Result<()> {
        let text = canonical_json_pretty(self).map_err(std::io::Error::other)?;
        write_atomic(&run_dir.join(Self::NAME), text.as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub label: RunLabel,
    pub evidence: Vec<String>,
    /// Always true; a suggestion never stands in for a human label.
    pub suggested: bool,
}

impl Suggestion {
    /// Writes the suggestion beside the run. Human labels are not touched.
    pub fn save(&self, run_dir: &Path) -> std::io::Result<()> {
        let text = canonical_json_pretty(self).map_err(std::io::Error::other)?;
        write_atomic(&run_dir.join(LabelFile::SUGGESTED), text.as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifyConfig {
    /// Identical actions on the same kind of screen before a loop is suspected.
    pub repeat_threshold: usize,
    pub death_threshold: usize,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self { repeat_threshold: 8, death_threshold: 3 }
    }
}

fn action_key(a: &Action) -> String {
    serde_json::to_string(a).expect("action serializes")
}

/// A first-pass label from the run artifacts, for a human to confirm or edit.
pub fn classify_run(
    result: &RunResult,
    trajectory: &[TrajectoryEntry],
    actions: &[LogRecord],
    plan: Option<&PlanLabel>,
    config: &ClassifyConfig,
) -> Suggestion {
    let faulty = plan.is_some_and(PlanLabel::is_faulty);
    let branch = if faulty { Branch::OnSynthFailure } else { Branch::OnSynthSuccess };
    let mut evidence = Vec::new();
    if plan.is_none() {
        evidence.push("no plan label; assumed the plan was correct".to_string());
    }
    let leaf = match &result.outcome {
        Outcome::Error { kind, detail } => {
            evidence.push(format!("run aborted with {kind}: {detail}"));
            Leaf::Error
        }
        Outcome::Success { crash_id } => {
            evidence.push(format!("crash {crash_id} after {} iteration(s)", result.iterations_used));
            if faulty {
                Leaf::Recovery
            } else {
                Leaf::Success
            }
        }
        Outcome::Failure if faulty => {
            evidence.push("no crash within the iteration cap and the plan was faulty".into());
            Leaf::TotalFailure
        }
        Outcome::Failure => failure_leaf(trajectory, actions, config, &mut evidence),
    };
    Suggestion { label: RunLabel { branch, leaf }, evidence, suggested: true }
}

fn failure_leaf(trajectory: &[TrajectoryEntry], actions: &[LogRecord], config: &ClassifyConfig, evidence: &mut Vec<String>) -> Leaf {
    let deaths = actions
        .iter()
        .flat_map(|r| match r {
            LogRecord::Action(e) => e.backend_events.as_slice(),
            LogRecord::Idle { backend_events, .. } => backend_events.as_slice(),
            LogRecord::Outcome { .. } => &[],
        })
        .filter(|e| matches!(e, BackendEvent::Death { entity, .. } if entity == "player"))
        .count();
    if deaths >= config.death_threshold {
        evidence.push(format!("the player died {deaths} times"));
        return Leaf::StuckInLoop(LoopKind::Death);
    }

    let mut counts: BTreeMap<(String, String), (usize, InputContext, bool)> = BTreeMap::new();
    for r in actions {
        if let LogRecord::Action(e) = r {
            let is_command = matches!(e.resolved, Action::Command { .. }) || e.context == InputContext::Chat;
            let slot = counts.entry((format!("{:?}", e.context), action_key(&e.resolved))).or_insert((0, e.context, is_command));
            slot.0 += 1;
        }
    }
    let worst = counts.iter().max_by_key(|(k, v)| (v.0, std::cmp::Reverse((*k).clone())));
    if let Some(((_, action), (n, ctx, is_command))) = worst {
        if *n >= config.repeat_threshold {
            let kind = if *is_command { LoopKind::Command } else if *ctx == InputContext::Menu { LoopKind::Menu } else { LoopKind::Command };
            evidence.push(format!("{action} was repeated {n} times on a {ctx:?} screen"));
            return Leaf::StuckInLoop(kind);
        }
    }
    let failures = trajectory.iter().filter(|t| t.classification == crate::action_model::Classification::Failure).count();
    evidence.push(format!("no loop pattern; {failures} of {} iteration(s) judged unsuccessful", trajectory.len()));
    Leaf::PoorDecisionMaking
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_invariants() {
        assert!(PlanLabel::new(PlanOutcome::Faulty, []).is_err());
        assert!(PlanLabel::new(PlanOutcome::True, [FaultReason::MissingStep]).is_err());
        assert!(PlanLabel::new(PlanOutcome::Faulty, [FaultReason::MissingStep, FaultReason::LogicError]).is_ok());
        assert!(RunLabel::new(Branch::OnSynthSuccess, Leaf::Recovery).is_err());
        assert!(RunLabel::new(Branch::OnSynthFailure, Leaf::StuckInLoop(LoopKind::Menu)).is_err());
        assert!(RunLabel::new(Branch::OnSynthFailure, Leaf::Error).is_ok());
        assert!(RunLabel::new(Branch::OnSynthSuccess, Leaf::FrameworkIncapability).is_ok());
    }

    #[test]
    fn leaf_wire_format() {
        let l = RunLabel { branch: Branch::OnSynthSuccess, leaf: Leaf::StuckInLoop(LoopKind::Menu) };
        let v = serde_json::to_value(l).unwrap();
        assert_eq!(v, serde_json::json!({"branch": "OnSynthSuccess", "leaf": {"leaf": "StuckInLoop", "loop": "Menu"}}));
        let back: RunLabel = serde_json::from_value(v).unwrap();
        assert_eq!(back, l);
    }
}
