use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::{ChatRequest, Usage};
use crate::util::{canonical_json_pretty, write_atomic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FixtureMode {
    Record,
    Replay,
    Live,
}

impl std::str::FromStr for FixtureMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "record" => Ok(Self::Record),
            "replay" => Ok(Self::Replay),
            "live" => Ok(Self::Live),
            other => Err(format!("unknown fixture mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredResponse {
    pub text: String,
    pub usage: Usage,
}

/// Directory of `<digest>.request` / `<digest>.response` pairs, with image
/// payloads deduplicated under `images/<digest>`.
///
/// All responses are loaded at open; lookups afterwards only take a read lock.
#[derive(Debug)]
pub struct FixtureStore {
    dir: PathBuf,
    entries: RwLock<HashMap<String, StoredResponse>>,
    write_lock: Mutex<()>,
}

impl FixtureStore {
    pub fn open(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        let mut entries = HashMap::new();
        if dir.is_dir() {
            for entry in std::fs::read_dir(&dir)? {
                let path = entry?.path();
                if path.extension().and_then(|e| e.to_str()) != Some("response") {
                    continue;
                }
                let Some(digest) = path.file_stem().and_then(|s| s.to_str()) else { continue };
                let text = std::fs::read_to_string(&path)?;
                let stored: StoredResponse = serde_json::from_str(&text)
                    .map_err(|e| std::io::Error::other(format!("{}: {e}", path.display())))?;
                entries.insert(digest.to_string(), stored);
            }
        }
        Ok(Self { dir, entries: RwLock::new(entries), write_lock: Mutex::new(()) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("fixture lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, digest: &str) -> Option<StoredResponse> {
        self.entries.read().expect("fixture lock").get(digest).cloned()
    }

    pub fn put(&self, request: &ChatRequest, response: &StoredResponse) -> std::io::Result<()> {
        let digest = request.digest();
        let _guard = self.write_lock.lock().expect("fixture write lock");
        std::fs::create_dir_all(&self.dir)?;
        for image in request.messages.iter().flat_map(|m| &m.images) {
            let path = self.dir.join("images").join(&image.digest);
            if let (Some(data), false) = (&image.data, path.exists()) {
                write_atomic(&path, data)?;
            }
        }
        let req_json = canonical_json_pretty(request).map_err(std::io::Error::other)?;
        write_atomic(&self.dir.join(format!("{digest}.request")), req_json.as_bytes())?;
        let resp_json = canonical_json_pretty(response).map_err(std::io::Error::other)?;
        write_atomic(&self.dir.join(format!("{digest}.response")), resp_json.as_bytes())?;
        self.entries.write().expect("fixture lock").insert(digest, response.clone());
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm_gateway::{ChatMessage, ImageRef};

    #[test]
    fn put_then_reopen_serves_same_response() {
        let dir = tempfile::tempdir().unwrap();
        let store = FixtureStore::open(dir.path()).unwrap();
        let req = ChatRequest::new(
            "m",
            vec![ChatMessage::user("look").with_images(vec![ImageRef::from_bytes("image/png", vec![9; 16])])],
        );
        let resp = StoredResponse { text: "seen".into(), usage: Usage { prompt_tokens: 5, completion_tokens: 1 } };
        store.put(&req, &resp).unwrap();
        store.put(&req, &resp).unwrap();

        let reopened = FixtureStore::open(dir.path()).unwrap();
        assert_eq!(reopened.get(&req.digest()), Some(resp));
        assert_eq!(reopened.len(), 1);
        let images: Vec<_> = std::fs::read_dir(dir.path().join("images")).unwrap().collect();
        assert_eq!(images.len(), 1);
    }
}
