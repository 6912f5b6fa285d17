use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    extract_links, resolve_roles, Attachment, ChangeItem, Comment, ConfirmationStatus, IngestError, IssueRecord, Role,
    FIELD_CONFIRMATION,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    pub base_url: String,
    /// Custom field holding the confirmation status.
    #[serde(default = "default_confirmation_field")]
    pub confirmation_field: String,
    /// Explicit roles by user id or display name; overrides display-name tags.
    #[serde(default)]
    pub role_map: BTreeMap<String, Vec<Role>>,
    /// JQL selecting crash reports.
    #[serde(default = "default_crash_query")]
    pub crash_query: String,
    #[serde(default = "default_min_interval_ms")]
    pub min_interval_ms: u64,
}

fn default_confirmation_field() -> String {
    "customfield_10500".into()
}

fn default_crash_query() -> String {
    "project = MC AND category = Crash ORDER BY created DESC".into()
}

fn default_min_interval_ms() -> u64 {
    500
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            base_url: "https://bugs.mojang.com".into(),
            confirmation_field: default_confirmation_field(),
            role_map: BTreeMap::new(),
            crash_query: default_crash_query(),
            min_interval_ms: default_min_interval_ms(),
        }
    }
}

/// Accepts Jira's `2024-10-30T12:34:56.000+0000` as well as RFC 3339.
pub fn parse_jira_time(s: &str) -> Option<DateTime<Utc>> {
    DateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S%.f%z")
        .or_else(|_| DateTime::parse_from_rfc3339(s))
        .ok()
        .map(|d| d.with_timezone(&Utc))
}

fn malformed(what: impl Into<String>) -> IngestError {
    IngestError::MalformedPayload(what.into())
}

fn time_at(v: &Value, what: &str) -> Result<DateTime<Utc>, IngestError> {
    let s = v.as_str().ok_or_else(|| malformed(format!("{what} is not a timestamp string")))?;
    parse_jira_time(s).ok_or_else(|| malformed(format!("{what} has unparseable timestamp {s:?}")))
}

fn str_or_empty(v: &Value) -> String {
    v.as_str().unwrap_or_default().to_string()
}

fn user(v: &Value) -> (String, String) {
    let id = v.get("name").or_else(|| v.get("accountId")).map(str_or_empty).unwrap_or_default();
    let display = v.get("displayName").map(str_or_empty).unwrap_or_else(|| id.clone());
    (id, display)
}

/// Builds an [`IssueRecord`] from an issue payload fetched with
/// `expand=changelog`. A top-level `retrieved_at` is honoured if present.
pub fn parse_issue(payload: &Value, config: &TrackerConfig) -> Result<IssueRecord, IngestError> {
    let key = payload.get("key").and_then(Value::as_str).ok_or_else(|| malformed("missing key"))?.to_string();
    let fields = payload.get("fields").filter(|f| f.is_object()).ok_or_else(|| malformed("missing fields object"))?;
    let title = fields.get("summary").and_then(Value::as_str).ok_or_else(|| malformed("missing summary"))?.to_string();
    let description = fields.get("description").map(str_or_empty).unwrap_or_default();
    let created_at = time_at(fields.get("created").unwrap_or(&Value::Null), "fields.created")?;
    let (reporter_id, _) = fields.get("reporter").map(user).unwrap_or_default();

    let confirmation_status = fields
        .get(&config.confirmation_field)
        .and_then(|v| v.get("value").or(Some(v)))
        .and_then(Value::as_str)
        .and_then(ConfirmationStatus::parse)
        .unwrap_or(ConfirmationStatus::Unconfirmed);
    let affected_version = fields
        .get("versions")
        .and_then(Value::as_array)
        .and_then(|v| v.first())
        .and_then(|v| v.get("name"))
        .map(str_or_empty)
        .unwrap_or_default();
    let labels = fields
        .get("labels")
        .and_then(Value::as_array)
        .map(|ls| ls.iter().filter_map(Value::as_str).map(str::to_string).collect())
        .unwrap_or_default();

    let mut extra = BTreeMap::new();
    for name in ["status", "resolution"] {
        if let Some(v) = fields.get(name).and_then(|v| v.get("name").or(Some(v))).and_then(Value::as_str) {
            extra.insert(name.to_string(), v.to_string());
        }
    }

    let mut comments = Vec::new();
    if let Some(list) = fields.get("comment").and_then(|c| c.get("comments")).and_then(Value::as_array) {
        for (i, c) in list.iter().enumerate() {
            let (id, display) = c.get("author").map(user).unwrap_or_default();
            comments.push(Comment {
                id: c.get("id").map(str_or_empty).unwrap_or_else(|| i.to_string()),
                author: display.clone(),
                author_roles: resolve_roles(&id, &display, &reporter_id, &config.role_map),
                created_at: time_at(c.get("created").unwrap_or(&Value::Null), &format!("comment {i}"))?,
                body: c.get("body").map(str_or_empty).unwrap_or_default(),
            });
        }
    }
    comments.sort_by_key(|c| c.created_at);

    let mut changelog = Vec::new();
    if let Some(histories) = payload.get("changelog").and_then(|c| c.get("histories")).and_then(Value::as_array) {
        for (i, h) in histories.iter().enumerate() {
            let (id, display) = h.get("author").map(user).unwrap_or_default();
            let roles = resolve_roles(&id, &display, &reporter_id, &config.role_map);
            let at = time_at(h.get("created").unwrap_or(&Value::Null), &format!("history {i}"))?;
            for item in h.get("items").and_then(Value::as_array).into_iter().flatten() {
                let raw_field = item.get("field").and_then(Value::as_str).ok_or_else(|| malformed(format!("history {i} item without field")))?;
                let field = if raw_field == config.confirmation_field { FIELD_CONFIRMATION.to_string() } else { raw_field.to_string() };
                changelog.push(ChangeItem {
                    at,
                    author: display.clone(),
                    author_roles: roles.clone(),
                    field,
                    from_value: item.get("fromString").map(str_or_empty).unwrap_or_default(),
                    to_value: item.get("toString").map(str_or_empty).unwrap_or_default(),
                });
            }
        }
    }
    changelog.sort_by_key(|c| c.at);

    let attachments = fields
        .get("attachment")
        .and_then(Value::as_array)
        .map(|list| {
            list.iter()
                .map(|a| Attachment {
                    filename: a.get("filename").map(str_or_empty).unwrap_or_default(),
                    size: a.get("size").and_then(Value::as_u64).unwrap_or(0),
                    url: a.get("content").map(str_or_empty).unwrap_or_default(),
                })
                .collect()
        })
        .unwrap_or_default();

    let mut text = description.clone();
    for c in &comments {
        text.push('\n');
        text.push_str(&c.body);
    }
    let external_links = extract_links(&text);

    let retrieved_at = match payload.get("retrieved_at") {
        Some(v) => time_at(v, "retrieved_at")?,
        None => comments
            .iter()
            .map(|c| c.created_at)
            .chain(changelog.iter().map(|c| c.at))
            .chain([created_at])
            .max()
            .unwrap_or(created_at),
    };

    Ok(IssueRecord {
        key,
        title,
        description,
        created_at,
        confirmation_status,
        affected_version,
        comments,
        changelog,
        attachments,
        external_links,
        labels,
        fields: extra,
        retrieved_at,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn parses_a_minimal_payload() {
        let p = json!({
            "key": "MC-5",
            "fields": {
                "summary": "Crash",
                "created": "2024-10-30T12:00:00.000+0000",
                "reporter": {"name": "rep", "displayName": "Rep"},
                "customfield_10500": {"value": "Community Consensus"},
                "versions": [{"name": "24w44a"}],
                "comment": {"comments": [{"id": "1", "author": {"name": "h", "displayName": "Hal [Mod]"}, "body": "see https://x.example/a", "created": "2024-10-30T13:00:00.000+0000"}]}
            },
            "changelog": {"histories": []}
        });
        let r = parse_issue(&p, &TrackerConfig::default()).unwrap();
        assert_eq!(r.confirmation_status, ConfirmationStatus::CommunityConsensus);
        assert_eq!(r.affected_version, "24w44a");
        assert!(r.changelog.is_empty());
        assert!(r.comments[0].author_roles.contains(&Role::Mod));
        assert_eq!(r.external_links, ["https://x.example/a"]);
        assert_eq!(r.retrieved_at, r.comments[0].created_at);
    }

    #[test]
    fn missing_summary_is_malformed() {
        let p = json!({"key": "MC-5", "fields": {"created": "2024-10-30T12:00:00.000+0000"}});
        assert!(matches!(parse_issue(&p, &TrackerConfig::default()), Err(IngestError::MalformedPayload(_))));
    }
}
