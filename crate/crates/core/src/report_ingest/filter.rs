//! Benchmark candidate selection. Each predicate is a keyword heuristic that
//! can be switched off; reviewers can pin extra rejections per key.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{backtrack, ConfirmationStatus, IssueRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub multiplayer: bool,
    pub cross_version: bool,
    pub external_resources: bool,
    pub not_in_game: bool,
    pub resubmitted: bool,
    /// Keep only Confirmed and Community Consensus reports.
    pub confirmation: bool,
    pub multiplayer_terms: Vec<String>,
    pub cross_version_terms: Vec<String>,
    pub external_terms: Vec<String>,
    pub external_extensions: Vec<String>,
    pub outside_game_terms: Vec<String>,
    /// Below this similarity between the initial and final description the
    /// report counts as a new submission.
    pub resubmission_similarity: f64,
    /// Reviewer decisions: issue key to predicate names it fails.
    pub manual: BTreeMap<String, Vec<String>>,
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            multiplayer: true,
            cross_version: true,
            external_resources: true,
            not_in_game: true,
            resubmitted: true,
            confirmation: false,
            multiplayer_terms: strings(&["multiplayer", "server", "realms", "lan world", "open to lan", "second player", "another player"]),
            cross_version_terms: strings(&["older version", "previous version", "upgraded world", "upgrading the world", "world from", "downgrad"]),
            external_terms: strings(&["attached world", "download the world", "datapack", "data pack", "resource pack", "modded", "fabric", "forge", "optifine"]),
            external_extensions: strings(&["zip", "mcworld", "jar", "mcpack", "mcaddon", "nbt", "schem"]),
            outside_game_terms: strings(&["launcher", "installer", "minecraft.net", "website", "account migration"]),
            resubmission_similarity: 0.25,
            manual: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub key: String,
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub key: String,
    pub retained: bool,
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterOutcome {
    pub retained: Vec<IssueRecord>,
    pub rejected: Vec<Rejection>,
}

impl FilterOutcome {
    pub fn verdicts(&self) -> Vec<FilterVerdict> {
        let mut v: Vec<FilterVerdict> = self
            .retained
            .iter()
            .map(|i| FilterVerdict { key: i.key.clone(), retained: true, reasons: Vec::new() })
            .chain(self.rejected.iter().map(|r| FilterVerdict { key: r.key.clone(), retained: false, reasons: r.reasons.clone() }))
            .collect();
        v.sort_by(|a, b| a.key.cmp(&b.key));
        v
    }
}

fn haystack(issue: &IssueRecord) -> String {
    let mut text = format!("{}\n{}", issue.title, issue.description);
    for c in &issue.comments {
        text.push('\n');
        text.push_str(&c.body);
    }
    text.to_lowercase()
}

fn mentions(text: &str, terms: &[String]) -> bool {
    terms.iter().any(|t| {
        let t = t.to_lowercase();
        text.match_indices(&t).any(|(i, _)| {
            let before = text[..i].chars().next_back();
            let after = text[i + t.len()..].chars().next();
            !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
        })
    })
}

fn has_label(issue: &IssueRecord, label: &str) -> bool {
    issue.labels.iter().any(|l| l.eq_ignore_ascii_case(label))
}

/// Names of the enabled predicates the issue fails, in a fixed order.
pub fn failed_predicates(issue: &IssueRecord, config: &FilterConfig) -> Vec<String> {
    let text = haystack(issue);
    let mut reasons = Vec::new();
    if config.multiplayer && (has_label(issue, "multiplayer") || mentions(&text, &config.multiplayer_terms)) {
        reasons.push("multiplayer".to_string());
    }
    if config.cross_version && mentions(&text, &config.cross_version_terms) {
        reasons.push("cross_version".to_string());
    }
    if config.external_resources {
        let attached = issue.attachments.iter().any(|a| {
            a.filename
                .rsplit_once('.')
                .is_some_and(|(_, ext)| config.external_extensions.iter().any(|e| e.eq_ignore_ascii_case(ext)))
        });
        if attached || mentions(&text, &config.external_terms) {
            reasons.push("external_resources".to_string());
        }
    }
    if config.not_in_game && mentions(&text, &config.outside_game_terms) {
        reasons.push("not_in_game".to_string());
    }
    if config.resubmitted {
        if let Ok(initial) = backtrack(issue) {
            let sim = strsim::normalized_levenshtein(&initial.description, &issue.description);
            if sim < config.resubmission_similarity {
                reasons.push("resubmitted".to_string());
            }
        }
    }
    if config.confirmation
        && !matches!(issue.confirmation_status, ConfirmationStatus::Confirmed | ConfirmationStatus::CommunityConsensus)
    {
        reasons.push("confirmation_status".to_string());
    }
    for manual in config.manual.get(&issue.key).into_iter().flatten() {
        if !reasons.contains(manual) {
            reasons.push(manual.clone());
        }
    }
    reasons
}

pub fn filter_candidates(issues: &[IssueRecord], config: &FilterConfig) -> FilterOutcome {
    let mut out = FilterOutcome::default();
    for issue in issues {
        let reasons = failed_predicates(issue, config);
        if reasons.is_empty() {
            out.retained.push(issue.clone());
        } else {
            out.rejected.push(Rejection { key: issue.key.clone(), reasons });
        }
    }
    out
}
