//! Replies for the agent stages. They read only the prompt, so they work for
//! any plan on any screen.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use serde_json::{json, Value};

use crate::steps::{parse_step, Intent};

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub index: u32,
    pub content: String,
    pub bbox: [f64; 4],
    pub interactable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub cluster: usize,
    pub thought: String,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Active {
    /// 1-based.
    pub index: usize,
    pub of: usize,
    pub steps: Vec<String>,
}

pub fn parse_active(user: &str, header: &str) -> Option<Active> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"^.* \((\d+) of (\d+)\)$").unwrap());
    let start = user.find(header)? + header.len();
    let mut lines = user[start..].lines();
    let c = re.captures(lines.next()?.trim())?;
    let steps = lines.map_while(|l| l.strip_prefix("- ").map(str::to_string)).collect();
    Some(Active { index: c[1].parse().ok()?, of: c[2].parse().ok()?, steps })
}

/// Trajectory entries from the window in the prompt, oldest first.
pub fn parse_window(user: &str) -> Vec<Entry> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"^### Iteration \d+ \(cluster (\d+): ").unwrap());
    let Some(start) = user.find("Recent trajectory:\n") else { return Vec::new() };
    let mut out: Vec<Entry> = Vec::new();
    let mut in_entry = false;
    for line in user[start..].lines().skip(1) {
        if let Some(c) = re.captures(line) {
            out.push(Entry { cluster: c[1].parse().unwrap_or(0), thought: String::new(), success: false });
            in_entry = true;
        } else if line.is_empty() {
            in_entry = false;
        } else if !in_entry {
            break;
        } else if let Some(last) = out.last_mut() {
            if let Some(t) = line.strip_prefix("Thought: ") {
                last.thought = t.to_string();
            } else if let Some(r) = line.strip_prefix("Result: ") {
                last.success = r == "SUCCESS";
            }
        }
    }
    out
}

fn unescape(cell: &str) -> String {
    let mut out = String::new();
    let mut chars = cell.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            if let Some(n) = chars.next() {
                out.push(n);
            }
        } else {
            out.push(c);
        }
    }
    out
}

/// The screen that follows `header`: its context and its element rows.
pub fn parse_screen(user: &str, header: &str) -> Option<(String, Vec<Row>)> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r"^\| (\d+) \| \w+ \| (.*) \| \[([-0-9.e]+), ([-0-9.e]+), ([-0-9.e]+), ([-0-9.e]+)\] \| (true|false) \|$").unwrap()
    });
    let start = user.find(header)? + header.len();
    let rest = &user[start..];
    let (context, rest) = rest.split_once("):\n")?;
    let rows = rest
        .lines()
        .take_while(|l| l.starts_with('|'))
        .filter_map(|l| {
            let c = re.captures(l)?;
            Some(Row {
                index: c[1].parse().ok()?,
                content: unescape(&c[2]),
                bbox: [c[3].parse().ok()?, c[4].parse().ok()?, c[5].parse().ok()?, c[6].parse().ok()?],
                interactable: &c[7] == "true",
            })
        })
        .collect();
    Some((context.to_string(), rows))
}

fn step_of(thought: &str) -> Option<usize> {
    thought.strip_prefix("Step ")?.split_once(':')?.0.parse().ok()
}

fn done_steps(entries: &[Entry], cluster: usize) -> BTreeSet<usize> {
    entries.iter().filter(|e| e.cluster == cluster && e.success).filter_map(|e| step_of(&e.thought)).collect()
}

fn error_shown(rows: &[Row]) -> bool {
    const PHRASES: &[&str] = &["Unknown or incomplete command", "do not have permission", "No entity was found", "Only players may be affected"];
    rows.iter().any(|r| PHRASES.iter().any(|p| r.content.contains(p)))
}

pub fn propose(user: &str) -> Value {
    let Some(active) = parse_active(user, "Active cluster: ") else {
        return json!({"thought": "There is no active cluster; waiting.", "actions": [], "advance_cluster": false});
    };
    let entries = parse_window(user);
    let done = done_steps(&entries, active.index);
    let next = (1..=active.steps.len()).find(|k| !done.contains(k));
    let Some(k) = next else {
        if active.index < active.of {
            return json!({"thought": format!("Every step of cluster {} is done.", active.index), "actions": [], "advance_cluster": true});
        }
        return json!({"thought": "All steps are done; waiting for the crash.", "actions": [], "advance_cluster": false});
    };
    let step = &active.steps[k - 1];
    let thought = format!("Step {k}: {step}");
    let feedback = user.contains("\nFeedback on your previous proposal:");
    let rows = parse_screen(user, "Current screen (").map(|s| s.1).unwrap_or_default();
    let actions = match parse_step(step) {
        Intent::Click(text) => match rows.iter().find(|r| r.interactable && r.content == text) {
            Some(r) if feedback => {
                vec![json!({"type": "click", "coordinates": {"x": (r.bbox[0] + r.bbox[2]) / 2.0, "y": (r.bbox[1] + r.bbox[3]) / 2.0}})]
            }
            Some(r) => vec![json!({"type": "click_place", "element_index": r.index})],
            None => Vec::new(),
        },
        Intent::Command(c) => vec![json!({"type": "command", "instruction": c})],
        Intent::Type(t) => vec![json!({"type": "write", "str": t})],
        Intent::Hold(keys, t) => vec![json!({"type": "press", "keys": keys, "time": t})],
        Intent::Press(keys) => vec![json!({"type": "press", "keys": keys})],
        Intent::Wait | Intent::Other => Vec::new(),
    };
    json!({"thought": thought, "actions": actions, "advance_cluster": false})
}

pub fn verify(user: &str) -> Value {
    let proposed = user.lines().find_map(|l| l.strip_prefix("Proposed thought: ")).unwrap_or("");
    let entries = parse_window(user);
    match entries.last() {
        Some(last) if !last.success && last.thought == proposed => json!({
            "verdict": "revise",
            "feedback": "This repeats the attempt that just failed. Try a different way of doing the same step."
        }),
        _ => json!({"verdict": "pass", "feedback": ""}),
    }
}

fn current_thought(user: &str) -> String {
    let Some(at) = user.find("\nActions taken:\n") else { return String::new() };
    user[..at].lines().last().and_then(|l| l.strip_prefix("Thought: ")).unwrap_or("").to_string()
}

pub fn reflect(user: &str) -> Value {
    let thought = current_thought(user);
    let active = parse_active(user, "Active cluster: ");
    let before = parse_screen(user, "Screen before (");
    let after = parse_screen(user, "Screen after (");
    let result = user.lines().find_map(|l| l.strip_prefix("Execution result: ")).unwrap_or("");
    let changed = before != after;
    let step = step_of(&thought);
    let step_text = match (&active, step) {
        (Some(a), Some(k)) if k >= 1 && k <= a.steps.len() => a.steps[k - 1].clone(),
        _ => String::new(),
    };
    let (success, why) = if result.starts_with("stopped with an error") {
        (false, "The actions stopped with an error.".to_string())
    } else {
        match parse_step(&step_text) {
            Intent::Command(_) => {
                if after.as_ref().is_some_and(|a| error_shown(&a.1)) {
                    (false, "The game answered the command with an error.".into())
                } else {
                    (true, "The command ran without an error.".into())
                }
            }
            Intent::Click(_) => {
                let next_is_typing = match (&active, step) {
                    (Some(a), Some(k)) => a.steps.get(k).is_some_and(|s| matches!(parse_step(s), Intent::Type(_))),
                    _ => false,
                };
                if result == "no actions were sent" {
                    (false, "The element was not on the screen.".into())
                } else if changed {
                    (true, "The screen changed after the click.".into())
                } else if next_is_typing {
                    (true, "The text box now has focus.".into())
                } else {
                    (false, "Nothing on the screen changed.".into())
                }
            }
            Intent::Type(_) => {
                if changed {
                    (true, "The text appeared on the screen.".into())
                } else {
                    (false, "The text did not appear.".into())
                }
            }
            _ => (true, "Nothing to check for this step.".into()),
        }
    };
    let advance = match (&active, step) {
        (Some(a), Some(k)) if success && a.index < a.of => {
            let mut done = done_steps(&parse_window(user), a.index);
            done.insert(k);
            (1..=a.steps.len()).all(|i| done.contains(&i))
        }
        _ => false,
    };
    json!({
        "reflection": why,
        "classification": if success { "SUCCESS" } else { "FAILURE" },
        "advance_proposed": advance,
    })
}

pub fn confirm(user: &str) -> Value {
    let Some(active) = parse_active(user, "Cluster to confirm: ") else {
        return json!({"complete": false, "rationale": "No cluster to confirm."});
    };
    let done = done_steps(&parse_window(user), active.index);
    let missing: Vec<usize> = (1..=active.steps.len()).filter(|k| !done.contains(k)).collect();
    if missing.is_empty() {
        json!({"complete": true, "rationale": "Every step of the cluster succeeded."})
    } else {
        json!({"complete": false, "rationale": format!("Steps {missing:?} have not succeeded yet.")})
    }
}
