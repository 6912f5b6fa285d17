//! Forward-replay reconstruction of a report: start from each field's
//! original value and apply changes in time order until the first trusted one.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, TimeZone, Utc};
use crashrepro::report_ingest::{
    ChangeItem, Comment, ConfirmationStatus, IssueRecord, Role, FIELD_CONFIRMATION, FIELD_DESCRIPTION, FIELD_LABELS, FIELD_TITLE,
    FIELD_VERSION,
};
use rand::seq::IndexedRandom;
use rand::Rng;

/// What the reporter's version of the report looked like.
#[derive(Debug, Clone, PartialEq)]
pub struct Expected {
    pub cutoff: DateTime<Utc>,
    /// Every field the changelog touches, plus the fixed ones.
    pub fields: BTreeMap<String, String>,
    pub comment_ids: Vec<String>,
    pub history_len: usize,
}

fn is_trusted(roles: &BTreeSet<Role>) -> bool {
    roles.contains(&Role::Mod) || roles.contains(&Role::Helper) || roles.contains(&Role::Mojang)
}

pub const FIXED_FIELDS: &[&str] = &[FIELD_TITLE, FIELD_DESCRIPTION, FIELD_CONFIRMATION, FIELD_VERSION, FIELD_LABELS];

pub fn forward_replay(issue: &IssueRecord) -> Expected {
    let cutoff = issue.changelog.iter().find(|c| is_trusted(&c.author_roles)).map(|c| c.at).unwrap_or(issue.retrieved_at);
    let mut fields: BTreeMap<String, String> = BTreeMap::new();
    for f in FIXED_FIELDS {
        fields.insert(f.to_string(), issue.field(f));
    }
    // Original values: the "from" of each field's earliest change.
    let mut seen = BTreeSet::new();
    for c in &issue.changelog {
        if seen.insert(c.field.clone()) {
            fields.insert(c.field.clone(), c.from_value.clone());
        }
    }
    let mut history_len = 0;
    for c in issue.changelog.iter().filter(|c| c.at < cutoff) {
        fields.insert(c.field.clone(), c.to_value.clone());
        history_len += 1;
    }
    let comment_ids = issue.comments.iter().filter(|c| c.created_at <= cutoff).map(|c| c.id.clone()).collect();
    Expected { cutoff, fields, comment_ids, history_len }
}

fn t(s: i64) -> DateTime<Utc> {
    Utc.timestamp_opt(1_600_000_000 + s, 0).single().expect("valid timestamp")
}

const STATUSES: &[&str] = &["Unconfirmed", "Plausible", "Community Consensus", "Confirmed"];
const EXTRA_FIELDS: &[&str] = &["Mojang Priority", "environment", "Category"];

fn random_value(rng: &mut impl Rng, field: &str) -> String {
    match field {
        FIELD_CONFIRMATION => STATUSES.choose(rng).expect("nonempty").to_string(),
        FIELD_LABELS => {
            let n = rng.random_range(0..3);
            (0..n).map(|_| format!("l{}", rng.random_range(0..5))).collect::<Vec<_>>().join(" ")
        }
        FIELD_VERSION => format!("1.{}", rng.random_range(18..22)),
        _ => {
            if rng.random_bool(0.15) {
                String::new()
            } else {
                format!("{field} v{}", rng.random_range(0..1000))
            }
        }
    }
}

fn random_roles(rng: &mut impl Rng, reporter: bool) -> BTreeSet<Role> {
    let mut r = BTreeSet::new();
    if reporter {
        r.insert(Role::Reporter);
    }
    match rng.random_range(0..6) {
        0 => {
            r.insert(Role::Mod);
        }
        1 => {
            r.insert(Role::Helper);
        }
        2 => {
            r.insert(Role::Mojang);
        }
        _ => {}
    }
    if r.is_empty() {
        r.insert(Role::Other);
    }
    r
}

/// A consistent issue with a random changelog and comments. Timestamps
/// often collide so that same-instant ordering is exercised.
pub fn random_issue(rng: &mut impl Rng) -> IssueRecord {
    let all_fields: Vec<&str> = FIXED_FIELDS.iter().chain(EXTRA_FIELDS).copied().collect();
    let mut current: BTreeMap<String, String> = all_fields.iter().map(|f| (f.to_string(), random_value(rng, f))).collect();
    current.insert(FIELD_CONFIRMATION.into(), "Unconfirmed".into());
    let mut clock = 0i64;
    let mut changelog = Vec::new();
    for _ in 0..rng.random_range(0..12) {
        clock += rng.random_range(0..3) * 60;
        let field = *all_fields.choose(rng).expect("nonempty");
        let from = current[field].clone();
        let mut to = random_value(rng, field);
        if to == from {
            to = if to.is_empty() { "edited".into() } else { format!("{to} edited") };
            if field == FIELD_CONFIRMATION {
                to = if from == "Confirmed" { "Plausible".into() } else { "Confirmed".into() };
            }
        }
        let reporter = rng.random_bool(0.5);
        changelog.push(ChangeItem {
            at: t(clock),
            author: if reporter { "reporter".into() } else { format!("user{}", rng.random_range(0..4)) },
            author_roles: random_roles(rng, reporter),
            field: field.to_string(),
            from_value: from,
            to_value: to.clone(),
        });
        current.insert(field.to_string(), to);
    }
    let horizon = clock + 180;
    let mut comments: Vec<Comment> = (0..rng.random_range(0..6))
        .map(|i| Comment {
            id: format!("c{i}"),
            author: format!("user{}", rng.random_range(0..4)),
            author_roles: random_roles(rng, false),
            created_at: t(rng.random_range(0..=horizon / 60) * 60),
            body: format!("comment {i}"),
        })
        .collect();
    comments.sort_by(|a, b| a.created_at.cmp(&b.created_at).then(a.id.cmp(&b.id)));
    let mut issue = IssueRecord {
        key: "MC-1".into(),
        title: String::new(),
        description: String::new(),
        created_at: t(0),
        confirmation_status: ConfirmationStatus::Unconfirmed,
        affected_version: String::new(),
        comments,
        changelog,
        attachments: Vec::new(),
        external_links: Vec::new(),
        labels: Vec::new(),
        fields: BTreeMap::new(),
        retrieved_at: t(horizon + 60),
    };
    for (f, v) in &current {
        issue.set_field(f, v);
    }
    issue
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn untouched_issue_is_taken_as_is() {
        let mut rng = rand::rng();
        let mut issue = random_issue(&mut rng);
        issue.changelog.clear();
        let e = forward_replay(&issue);
        assert_eq!(e.cutoff, issue.retrieved_at);
        assert_eq!(e.comment_ids.len(), issue.comments.len());
        assert_eq!(e.fields[FIELD_TITLE], issue.title);
    }
}
