//! Issue-tracker ingestion: Jira payload parsing, reconstruction of a report
//! as it stood before any trusted-role edit, link extraction and benchmark
//! candidate filtering.

mod filter;
mod jira;
mod tracker;

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use filter::{filter_candidates, FilterConfig, FilterOutcome, FilterVerdict, Rejection};
pub use jira::{parse_issue, parse_jira_time, TrackerConfig};
pub use tracker::{check_key, save_fixture, FixtureTracker, HttpTracker, Tracker};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("issue {0} not found")]
    NotFound(String),
    #[error("tracker transport error: {0}")]
    Transport(String),
    #[error("malformed tracker payload: {0}")]
    MalformedPayload(String),
    #[error("invalid issue key {0:?}")]
    InvalidKey(String),
    #[error("changelog chain broken on field {field:?}: {detail}")]
    InconsistentChangelog { field: String, detail: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    Reporter,
    Mod,
    Helper,
    Mojang,
    Other,
}

impl Role {
    pub fn is_trusted(&self) -> bool {
        matches!(self, Role::Mod | Role::Helper | Role::Mojang)
    }

    pub fn parse(s: &str) -> Option<Role> {
        match s.to_ascii_lowercase().as_str() {
            "reporter" => Some(Role::Reporter),
            "mod" | "moderator" => Some(Role::Mod),
            "helper" => Some(Role::Helper),
            "mojang" => Some(Role::Mojang),
            "other" => Some(Role::Other),
            _ => None,
        }
    }
}

pub fn any_trusted(roles: &BTreeSet<Role>) -> bool {
    roles.iter().any(Role::is_trusted)
}

/// Roles of a user. An entry in `role_map` (keyed by user id or display
/// name) overrides the bracketed tags in the display name, such as
/// `"Jane [Helper]"`.
pub fn resolve_roles(
    user_id: &str,
    display_name: &str,
    reporter_id: &str,
    role_map: &BTreeMap<String, Vec<Role>>,
) -> BTreeSet<Role> {
    let mut roles: BTreeSet<Role> = match role_map.get(user_id).or_else(|| role_map.get(display_name)) {
        Some(configured) => configured.iter().copied().collect(),
        None => {
            let tag = regex::Regex::new(r"\[([A-Za-z]+)\]").expect("static regex");
            tag.captures_iter(display_name).filter_map(|c| Role::parse(&c[1])).filter(Role::is_trusted).collect()
        }
    };
    if !reporter_id.is_empty() && user_id == reporter_id {
        roles.insert(Role::Reporter);
    }
    if roles.is_empty() {
        roles.insert(Role::Other);
    }
    roles
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConfirmationStatus {
    #[serde(rename = "Confirmed")]
    Confirmed,
    #[serde(rename = "Community Consensus")]
    CommunityConsensus,
    #[serde(rename = "Plausible")]
    Plausible,
    #[serde(rename = "Unconfirmed")]
    Unconfirmed,
}

impl ConfirmationStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            ConfirmationStatus::Confirmed => "Confirmed",
            ConfirmationStatus::CommunityConsensus => "Community Consensus",
            ConfirmationStatus::Plausible => "Plausible",
            ConfirmationStatus::Unconfirmed => "Unconfirmed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::Confirmed, Self::CommunityConsensus, Self::Plausible, Self::Unconfirmed]
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s.trim()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comment {
    pub id: String,
    pub author: String,
    pub author_roles: BTreeSet<Role>,
    pub created_at: DateTime<Utc>,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeItem {
    pub at: DateTime<Utc>,
    pub author: String,
    pub author_roles: BTreeSet<Role>,
    pub field: String,
    pub from_value: String,
    pub to_value: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attachment {
    pub filename: String,
    #[serde(default)]
    pub size: u64,
    #[serde(default)]
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssueRecord {
    pub key: String,
    pub title: String,
    pub description: String,
    pub created_at: DateTime<Utc>,
    pub confirmation_status: ConfirmationStatus,
    pub affected_version: String,
    pub comments: Vec<Comment>,
    pub changelog: Vec<ChangeItem>,
    #[serde(default)]
    pub attachments: Vec<Attachment>,
    #[serde(default)]
    pub external_links: Vec<String>,
    #[serde(default)]
    pub labels: Vec<String>,
    /// Other tracker fields that may appear in the changelog.
    #[serde(default)]
    pub fields: BTreeMap<String, String>,
    pub retrieved_at: DateTime<Utc>,
}

/// Changelog field names with a dedicated slot in [`IssueRecord`].
pub const FIELD_TITLE: &str = "summary";
pub const FIELD_DESCRIPTION: &str = "description";
pub const FIELD_CONFIRMATION: &str = "Confirmation Status";
pub const FIELD_VERSION: &str = "Version";
pub const FIELD_LABELS: &str = "labels";

impl IssueRecord {
    /// Current value of a changelog field as a string.
    pub fn field(&self, name: &str) -> String {
        match name {
            FIELD_TITLE => self.title.clone(),
            FIELD_DESCRIPTION => self.description.clone(),
            FIELD_CONFIRMATION => self.confirmation_status.as_str().to_string(),
            FIELD_VERSION => self.affected_version.clone(),
            FIELD_LABELS => self.labels.join(" "),
            other => self.fields.get(other).cloned().unwrap_or_default(),
        }
    }

    pub fn set_field(&mut self, name: &str, value: &str) {
        match name {
            FIELD_TITLE => self.title = value.to_string(),
            FIELD_DESCRIPTION => self.description = value.to_string(),
            FIELD_CONFIRMATION => {
                self.confirmation_status = ConfirmationStatus::parse(value).unwrap_or(ConfirmationStatus::Unconfirmed)
            }
            FIELD_VERSION => self.affected_version = value.to_string(),
            FIELD_LABELS => self.labels = value.split_whitespace().map(str::to_string).collect(),
            other => {
                if value.is_empty() {
                    self.fields.remove(other);
                } else {
                    self.fields.insert(other.to_string(), value.to_string());
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSnapshot {
    pub source_key: String,
    pub title: String,
    pub description: String,
    pub comments: Vec<Comment>,
    pub cutoff: DateTime<Utc>,
    pub reconstruction_note: String,
    #[serde(default)]
    pub affected_version: String,
    #[serde(default = "unconfirmed")]
    pub confirmation_status: ConfirmationStatus,
    #[serde(default)]
    pub labels: Vec<String>,
    #[serde(default)]
    pub fields: BTreeMap<String, String>,
    /// Untrusted changes applied before the cutoff, kept so the snapshot can
    /// be turned back into an issue.
    #[serde(default)]
    pub history: Vec<ChangeItem>,
    #[serde(default)]
    pub created_at: Option<DateTime<Utc>>,
}

fn unconfirmed() -> ConfirmationStatus {
    ConfirmationStatus::Unconfirmed
}

impl ReportSnapshot {
    /// The snapshot as an issue retrieved at the cutoff.
    pub fn as_issue(&self) -> IssueRecord {
        IssueRecord {
            key: self.source_key.clone(),
            title: self.title.clone(),
            description: self.description.clone(),
            created_at: self.created_at.unwrap_or(self.cutoff),
            confirmation_status: self.confirmation_status,
            affected_version: self.affected_version.clone(),
            comments: self.comments.clone(),
            changelog: self.history.clone(),
            attachments: Vec::new(),
            external_links: Vec::new(),
            labels: self.labels.clone(),
            fields: self.fields.clone(),
            retrieved_at: self.cutoff,
        }
    }

    /// Everything except the audit note.
    pub fn same_content(&self, other: &ReportSnapshot) -> bool {
        ReportSnapshot { reconstruction_note: String::new(), ..self.clone() }
            == ReportSnapshot { reconstruction_note: String::new(), ..other.clone() }
    }

    /// Report text as given to the models: title, description and kept comments.
    pub fn render(&self) -> String {
        let mut out = format!("Title: {}\nAffected version: {}\n\nDescription:\n{}\n", self.title, self.affected_version, self.description.trim_end());
        if !self.comments.is_empty() {
            out.push_str("\nComments:\n");
            for c in &self.comments {
                out.push_str(&format!("- {}: {}\n", c.author, c.body.trim_end()));
            }
        }
        out
    }
}

/// Checks that each field's changes chain into each other and into the
/// issue's current value.
pub fn check_chains(issue: &IssueRecord) -> Result<(), IngestError> {
    let mut last: BTreeMap<&str, &str> = BTreeMap::new();
    for (i, c) in issue.changelog.iter().enumerate() {
        if i > 0 && issue.changelog[i - 1].at > c.at {
            return Err(IngestError::InconsistentChangelog {
                field: c.field.clone(),
                detail: format!("change {i} is older than the change before it"),
            });
        }
        if let Some(prev) = last.get(c.field.as_str()) {
            if *prev != c.from_value {
                return Err(IngestError::InconsistentChangelog {
                    field: c.field.clone(),
                    detail: format!("change {i} starts from {:?} but the previous change ended at {prev:?}", c.from_value),
                });
            }
        }
        last.insert(&c.field, &c.to_value);
    }
    for (field, value) in last {
        let current = issue.field(field);
        if current != value {
            return Err(IngestError::InconsistentChangelog {
                field: field.to_string(),
                detail: format!("last change ends at {value:?} but the current value is {current:?}"),
            });
        }
    }
    Ok(())
}

/// Rewinds an issue to the moment before the first change by a trusted role.
///
/// Changes at or after that instant are undone, newest first; comments
/// created after it are dropped. Comments at exactly the same instant are
/// kept. Without any trusted change, the cutoff is the retrieval time and
/// nothing is undone.
pub fn backtrack(issue: &IssueRecord) -> Result<ReportSnapshot, IngestError> {
    check_chains(issue)?;
    let first_trusted = issue.changelog.iter().position(|c| any_trusted(&c.author_roles));
    let mut rewound = issue.clone();
    let mut note = Vec::new();
    let (cutoff, history) = match first_trusted {
        None => {
            note.push("No change by a trusted role; the report is taken as retrieved.".to_string());
            (issue.retrieved_at, issue.changelog.clone())
        }
        Some(t) => {
            let trusted = &issue.changelog[t];
            let cutoff = trusted.at;
            note.push(format!(
                "Rewound to before the first trusted change ({} by {} at {}).",
                trusted.field,
                trusted.author,
                cutoff.to_rfc3339()
            ));
            let mut reverted = Vec::new();
            for c in issue.changelog.iter().rev().filter(|c| c.at >= cutoff) {
                rewound.set_field(&c.field, &c.from_value);
                reverted.push(c);
            }
            reverted.reverse();
            for c in &reverted {
                note.push(format!("Reverted {:?} by {} at {}.", c.field, c.author, c.at.to_rfc3339()));
            }
            let untrusted_later = reverted.iter().filter(|c| !any_trusted(&c.author_roles)).count();
            if untrusted_later > 0 {
                note.push(format!(
                    "{untrusted_later} untrusted edit(s) made after the first trusted change were also reverted; \
                     only the state before the first trusted change is reconstructed."
                ));
            }
            (cutoff, issue.changelog.iter().filter(|c| c.at < cutoff).cloned().collect())
        }
    };
    let kept: Vec<Comment> = issue.comments.iter().filter(|c| c.created_at <= cutoff).cloned().collect();
    let dropped = issue.comments.len() - kept.len();
    if dropped > 0 {
        note.push(format!("Dropped {dropped} comment(s) added after the cutoff."));
    }
    Ok(ReportSnapshot {
        source_key: issue.key.clone(),
        title: rewound.title,
        description: rewound.description,
        comments: kept,
        cutoff,
        reconstruction_note: note.join(" "),
        affected_version: rewound.affected_version,
        confirmation_status: rewound.confirmation_status,
        labels: rewound.labels,
        fields: rewound.fields,
        history,
        created_at: Some(issue.created_at),
    })
}

/// URLs in `text`, deduplicated in order of first appearance.
pub fn extract_links(text: &str) -> Vec<String> {
    let re = regex::Regex::new(r#"https?://[^\s<>"'|\[\]{}()^`\\]+"#).expect("static regex");
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for m in re.find_iter(text) {
        let url = m.as_str().trim_end_matches(['.', ',', ';', ':', '!', '?']);
        let host = url.split_once("://").map(|(_, rest)| rest.split(['/', '?', '#']).next().unwrap_or("")).unwrap_or("");
        if host.is_empty() {
            continue;
        }
        if seen.insert(url.to_string()) {
            out.push(url.to_string());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn t(s: i64) -> DateTime<Utc> {
        Utc.timestamp_opt(1_700_000_000 + s, 0).unwrap()
    }

    fn roles(r: &[Role]) -> BTreeSet<Role> {
        r.iter().copied().collect()
    }

    fn issue() -> IssueRecord {
        IssueRecord {
            key: "MC-1".into(),
            title: "Crash".into(),
            description: "initial".into(),
            created_at: t(0),
            confirmation_status: ConfirmationStatus::Unconfirmed,
            affected_version: "1.21".into(),
            comments: vec![],
            changelog: vec![],
            attachments: vec![],
            external_links: vec![],
            labels: vec![],
            fields: BTreeMap::new(),
            retrieved_at: t(1000),
        }
    }

    fn comment(at: i64, body: &str) -> Comment {
        Comment { id: body.into(), author: "u".into(), author_roles: roles(&[Role::Other]), created_at: t(at), body: body.into() }
    }

    #[test]
    fn empty_changelog_keeps_current_state() {
        let mut i = issue();
        i.comments.push(comment(5, "hi"));
        let s = backtrack(&i).unwrap();
        assert_eq!(s.description, "initial");
        assert_eq!(s.cutoff, i.retrieved_at);
        assert_eq!(s.comments.len(), 1);
    }

    #[test]
    fn trusted_edit_is_undone_and_later_comment_dropped() {
        let mut i = issue();
        i.description = "edited by helper".into();
        i.changelog.push(ChangeItem {
            at: t(10),
            author: "h".into(),
            author_roles: roles(&[Role::Helper]),
            field: FIELD_DESCRIPTION.into(),
            from_value: "initial".into(),
            to_value: "edited by helper".into(),
        });
        i.comments = vec![comment(5, "before"), comment(10, "same instant"), comment(20, "after")];
        let s = backtrack(&i).unwrap();
        assert_eq!(s.description, "initial");
        assert_eq!(s.cutoff, t(10));
        let bodies: Vec<_> = s.comments.iter().map(|c| c.body.as_str()).collect();
        assert_eq!(bodies, ["before", "same instant"]);
        assert!(s.reconstruction_note.contains("Reverted \"description\""));
    }

    #[test]
    fn broken_chain_names_the_field() {
        let mut i = issue();
        i.changelog.push(ChangeItem {
            at: t(1),
            author: "r".into(),
            author_roles: roles(&[Role::Reporter]),
            field: FIELD_TITLE.into(),
            from_value: "x".into(),
            to_value: "y".into(),
        });
        match backtrack(&i) {
            Err(IngestError::InconsistentChangelog { field, .. }) => assert_eq!(field, "summary"),
            other => panic!("expected InconsistentChangelog, got {other:?}"),
        }
    }

    #[test]
    fn role_tags_and_config_override() {
        let mut map = BTreeMap::new();
        assert_eq!(resolve_roles("j", "Jane [Helper]", "r", &map), roles(&[Role::Helper]));
        assert_eq!(resolve_roles("j", "Jane", "r", &map), roles(&[Role::Other]));
        map.insert("j".to_string(), vec![Role::Other]);
        assert_eq!(resolve_roles("j", "Jane [Helper]", "r", &map), roles(&[Role::Other]));
        assert_eq!(resolve_roles("r", "Rep", "r", &BTreeMap::new()), roles(&[Role::Reporter]));
    }

    #[test]
    fn links() {
        assert_eq!(extract_links("see https://youtu.be/x and https://youtu.be/x"), ["https://youtu.be/x"]);
        assert!(extract_links("no links here, just http:// and text").is_empty());
        assert_eq!(
            extract_links("[video|https://a.example/v?id=1]. Also (http://b.example/p), done."),
            ["https://a.example/v?id=1", "http://b.example/p"]
        );
    }
}
