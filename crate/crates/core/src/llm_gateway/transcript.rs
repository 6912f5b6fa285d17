use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatRequest, ChatResponse, GatewayError};
use crate::util::{canonical_json_pretty, write_atomic};

/// One gateway call as seen by a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub seq: u32,
    pub id: String,
    pub stage: String,
    pub digest: String,
    pub request: ChatRequest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<ChatResponse>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Ordered record of every model call made for one run. When a directory is
/// attached, each entry is also written to `<dir>/<id>.json`.
#[derive(Debug)]
pub struct Transcript {
    run_id: String,
    dir: Option<PathBuf>,
    entries: Mutex<Vec<TranscriptEntry>>,
}

impl Transcript {
    pub fn in_memory(run_id: impl Into<String>) -> Self {
        Self { run_id: run_id.into(), dir: None, entries: Mutex::new(Vec::new()) }
    }

    pub fn persistent(run_id: impl Into<String>, dir: impl Into<PathBuf>) -> Self {
        Self { run_id: run_id.into(), dir: Some(dir.into()), entries: Mutex::new(Vec::new()) }
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn record(
        &self,
        stage: &str,
        request: &ChatRequest,
        result: &Result<ChatResponse, GatewayError>,
    ) -> String {
        let mut entries = self.entries.lock().expect("transcript lock");
        let seq = entries.len() as u32;
        let id = format!("{seq:04}-{}", stage.replace('/', "-"));
        let entry = TranscriptEntry {
            seq,
            id: id.clone(),
            stage: stage.to_string(),
            digest: request.digest(),
            request: request.clone(),
            response: result.as_ref().ok().cloned(),
            error: result.as_ref().err().map(|e| e.to_string()),
        };
        if let Some(dir) = &self.dir {
            if let Ok(json) = canonical_json_pretty(&entry) {
                if let Err(e) = write_atomic(&dir.join(format!("{id}.json")), json.as_bytes()) {
                    tracing::warn!("could not persist transcript entry {id}: {e}");
                }
            }
        }
        entries.push(entry);
        id
    }

    pub fn entries(&self) -> Vec<TranscriptEntry> {
        self.entries.lock().expect("transcript lock").clone()
    }

    pub fn count_stage(&self, prefix: &str) -> usize {
        self.entries
            .lock()
            .expect("transcript lock")
            .iter()
            .filter(|e| e.stage.starts_with(prefix))
            .count()
    }

    /// Loads the entries persisted under `dir`, ordered by sequence number.
    pub fn load_dir(dir: &Path) -> std::io::Result<Vec<TranscriptEntry>> {
        let mut out = Vec::new();
        if !dir.is_dir() {
            return Ok(out);
        }
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) == Some("json") {
                let text = std::fs::read_to_string(&path)?;
                out.push(serde_json::from_str::<TranscriptEntry>(&text).map_err(std::io::Error::other)?);
            }
        }
        out.sort_by_key(|e| e.seq);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm_gateway::{ChatMessage, Usage};

    #[test]
    fn persisted_entries_load_back_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let t = Transcript::persistent("r", dir.path());
        let req = ChatRequest::new("m", vec![ChatMessage::user("hi")]);
        let ok = Ok(ChatResponse { text: "{}".into(), structured: None, usage: Usage::default() });
        assert_eq!(t.record("agent/propose", &req, &ok), "0000-agent-propose");
        t.record("agent/verify", &req, &Err(GatewayError::Transport("down".into())));
        let loaded = Transcript::load_dir(dir.path()).unwrap();
        assert_eq!(loaded, t.entries());
        assert_eq!(loaded[1].stage, "agent/verify");
        assert_eq!(t.count_stage("agent/"), 2);
    }
}
