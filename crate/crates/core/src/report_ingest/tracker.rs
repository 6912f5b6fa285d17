use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use chrono::Utc;
use serde_json::Value;

use super::{parse_issue, IngestError, IssueRecord, TrackerConfig};
use crate::util::{canonical_json_pretty, write_atomic};

pub trait Tracker {
    /// The raw issue payload with changelog expansion.
    fn fetch_raw(&self, key: &str) -> Result<Value, IngestError>;

    fn config(&self) -> &TrackerConfig;

    fn fetch_issue(&self, key: &str) -> Result<IssueRecord, IngestError> {
        check_key(key)?;
        parse_issue(&self.fetch_raw(key)?, self.config())
    }
}

pub fn check_key(key: &str) -> Result<(), IngestError> {
    let re = regex::Regex::new(r"^[A-Z][A-Z0-9]+-\d+$").expect("static regex");
    if re.is_match(key) {
        Ok(())
    } else {
        Err(IngestError::InvalidKey(key.to_string()))
    }
}

/// Reads `<dir>/<KEY>.json` payloads as written by [`HttpTracker`] in record mode.
pub struct FixtureTracker {
    dir: PathBuf,
    config: TrackerConfig,
}

impl FixtureTracker {
    pub fn new(dir: impl Into<PathBuf>, config: TrackerConfig) -> Self {
        Self { dir: dir.into(), config }
    }

    pub fn path_of(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    /// Keys of all stored payloads, sorted.
    pub fn keys(&self) -> Result<Vec<String>, IngestError> {
        let mut keys = Vec::new();
        for entry in std::fs::read_dir(&self.dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) == Some("json") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    if check_key(stem).is_ok() {
                        keys.push(stem.to_string());
                    }
                }
            }
        }
        keys.sort();
        Ok(keys)
    }
}

impl Tracker for FixtureTracker {
    fn fetch_raw(&self, key: &str) -> Result<Value, IngestError> {
        check_key(key)?;
        let path = self.path_of(key);
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(IngestError::NotFound(key.to_string())),
            Err(e) => return Err(e.into()),
        };
        serde_json::from_str(&text).map_err(|e| IngestError::MalformedPayload(format!("{}: {e}", path.display())))
    }

    fn config(&self) -> &TrackerConfig {
        &self.config
    }
}

/// Stores a payload in the fixture format: one canonical JSON file per issue.
pub fn save_fixture(dir: &Path, key: &str, payload: &Value) -> Result<PathBuf, IngestError> {
    check_key(key)?;
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{key}.json"));
    let text = canonical_json_pretty(payload).map_err(|e| IngestError::MalformedPayload(e.to_string()))?;
    write_atomic(&path, text.as_bytes())?;
    Ok(path)
}

/// Jira REST client. Requests are serialized and spaced by
/// `min_interval_ms`; with a record dir every payload is also saved as a
/// fixture.
pub struct HttpTracker {
    config: TrackerConfig,
    agent: ureq::Agent,
    last_request: Mutex<Option<Instant>>,
    record_dir: Option<PathBuf>,
}

impl HttpTracker {
    pub fn new(config: TrackerConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(30)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent, last_request: Mutex::new(None), record_dir: None }
    }

    pub fn recording_to(mut self, dir: impl Into<PathBuf>) -> Self {
        self.record_dir = Some(dir.into());
        self
    }

    fn get(&self, url: &str, query: &[(&str, &str)]) -> Result<(u16, String), IngestError> {
        let mut last = self.last_request.lock().expect("tracker lock");
        if let Some(at) = *last {
            let gap = Duration::from_millis(self.config.min_interval_ms);
            let elapsed = at.elapsed();
            if elapsed < gap {
                std::thread::sleep(gap - elapsed);
            }
        }
        let mut req = self.agent.get(url).header("Accept", "application/json");
        for (k, v) in query {
            req = req.query(*k, *v);
        }
        let result = req.call();
        *last = Some(Instant::now());
        let mut resp = result.map_err(|e| IngestError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(|e| IngestError::Transport(e.to_string()))?;
        Ok((status, body))
    }

    /// Keys matching the configured crash query, up to `limit`.
    pub fn search(&self, limit: usize) -> Result<Vec<String>, IngestError> {
        let url = format!("{}/rest/api/2/search", self.config.base_url.trim_end_matches('/'));
        let mut keys = Vec::new();
        while keys.len() < limit {
            let start = keys.len().to_string();
            let max = (limit - keys.len()).min(100).to_string();
            let (status, body) =
                self.get(&url, &[("jql", &self.config.crash_query), ("fields", "key"), ("startAt", &start), ("maxResults", &max)])?;
            if status != 200 {
                return Err(IngestError::Transport(format!("search returned HTTP {status}")));
            }
            let v: Value = serde_json::from_str(&body).map_err(|e| IngestError::MalformedPayload(e.to_string()))?;
            let page: Vec<String> = v
                .get("issues")
                .and_then(Value::as_array)
                .ok_or_else(|| IngestError::MalformedPayload("search result without issues".into()))?
                .iter()
                .filter_map(|i| i.get("key").and_then(Value::as_str).map(str::to_string))
                .collect();
            if page.is_empty() {
                break;
            }
            keys.extend(page);
        }
        Ok(keys)
    }
}

impl Tracker for HttpTracker {
    fn fetch_raw(&self, key: &str) -> Result<Value, IngestError> {
        check_key(key)?;
        let url = format!("{}/rest/api/2/issue/{key}", self.config.base_url.trim_end_matches('/'));
        let (status, body) = self.get(&url, &[("expand", "changelog")])?;
        match status {
            200 => {}
            404 => return Err(IngestError::NotFound(key.to_string())),
            s => return Err(IngestError::Transport(format!("HTTP {s} for {key}"))),
        }
        let mut payload: Value = serde_json::from_str(&body).map_err(|e| IngestError::MalformedPayload(e.to_string()))?;
        if let Some(obj) = payload.as_object_mut() {
            obj.entry("retrieved_at").or_insert_with(|| Value::String(Utc::now().to_rfc3339()));
        } else {
            return Err(IngestError::MalformedPayload("issue payload is not an object".into()));
        }
        if let Some(dir) = &self.record_dir {
            save_fixture(dir, key, &payload)?;
        }
        Ok(payload)
    }

    fn config(&self) -> &TrackerConfig {
        &self.config
    }
}
