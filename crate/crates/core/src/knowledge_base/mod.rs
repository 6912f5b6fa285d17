//! Wiki corpus storage, fuzzy title matching and per-page relevance analysis.

mod rag;
mod source;

use std::collections::BTreeMap;
use std::path::Path;

use percent_encoding::{percent_decode_str, utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::{canonical_json, canonical_json_pretty, sha256_hex, write_atomic};

pub use rag::{
    build_trajectories, extract_entities, render_block, retrieve, select_titles, EntityList, Retrieval, TrajectoryNote,
};
pub use source::{read_source_dir, ApiSource};

#[derive(Debug, Error)]
pub enum KbError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("corpus file {path} is malformed: {message}")]
    Malformed { path: String, message: String },
    #[error("corpus digest mismatch: manifest says {expected}, pages hash to {actual}")]
    DigestMismatch { expected: String, actual: String },
    #[error("wiki api error: {0}")]
    Api(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> KbError + '_ {
    move |source| KbError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WikiPage {
    pub title: String,
    pub body: String,
    #[serde(default)]
    pub is_redirect: bool,
    #[serde(default)]
    pub revision: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KbConfig {
    pub threshold: f64,
    pub top_k: usize,
    /// Cap on model-selected titles; general pages do not count toward it.
    pub max_selected: usize,
    /// Characters of each page body shown to the model, from the start.
    pub page_char_budget: usize,
    /// Mechanics and command pages always consulted.
    pub general_pages: Vec<String>,
}

impl Default for KbConfig {
    fn default() -> Self {
        Self {
            threshold: 0.75,
            top_k: 3,
            max_selected: 8,
            page_char_budget: 6000,
            general_pages: vec!["Commands".into(), "Mob".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub count: usize,
    pub redirects_dropped: usize,
    /// Titles seen more than once; the last occurrence was kept.
    pub duplicates: Vec<String>,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    count: usize,
    digest: String,
}

const MANIFEST: &str = "manifest.json";

/// Characters escaped in page file names.
const FILENAME_ESCAPES: &AsciiSet = &NON_ALPHANUMERIC.remove(b'-').remove(b'_').remove(b'.').remove(b' ');

pub fn page_filename(title: &str) -> String {
    let mut name = utf8_percent_encode(title, FILENAME_ESCAPES).to_string();
    if name.starts_with('.') {
        name.replace_range(..1, "%2E");
    }
    format!("{name}.json")
}

fn title_from_filename(name: &str) -> Option<String> {
    let stem = name.strip_suffix(".json")?;
    percent_decode_str(stem).decode_utf8().ok().map(|s| s.into_owned())
}

/// Immutable set of non-redirect pages addressable by exact title.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pages: BTreeMap<String, WikiPage>,
}

impl Corpus {
    pub fn ingest(source: impl IntoIterator<Item = WikiPage>) -> (Corpus, IngestReport) {
        let mut pages = BTreeMap::new();
        let mut redirects_dropped = 0;
        let mut duplicates = Vec::new();
        for page in source {
            if page.is_redirect {
                redirects_dropped += 1;
                continue;
            }
            let title = page.title.clone();
            if pages.insert(title.clone(), page).is_some() {
                tracing::warn!("duplicate wiki title {title:?}; keeping the last one");
                duplicates.push(title);
            }
        }
        let corpus = Corpus { pages };
        let report = IngestReport { count: corpus.len(), redirects_dropped, duplicates, digest: corpus.digest() };
        (corpus, report)
    }

    pub fn len(&self) -> usize {
        self.pages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pages.is_empty()
    }

    pub fn get(&self, title: &str) -> Option<&WikiPage> {
        self.pages.get(title)
    }

    pub fn titles(&self) -> impl Iterator<Item = &str> {
        self.pages.keys().map(String::as_str)
    }

    /// SHA-256 over the canonical JSON of the pages in title order.
    pub fn digest(&self) -> String {
        let pages: Vec<&WikiPage> = self.pages.values().collect();
        sha256_hex(canonical_json(&pages).expect("pages serialize").as_bytes())
    }

    /// One file per page plus a manifest with count and digest.
    pub fn save(&self, dir: &Path) -> Result<(), KbError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        for page in self.pages.values() {
            let path = dir.join(page_filename(&page.title));
            let text = canonical_json_pretty(page).expect("page serializes");
            write_atomic(&path, text.as_bytes()).map_err(io_err(&path))?;
        }
        let path = dir.join(MANIFEST);
        let manifest = Manifest { count: self.len(), digest: self.digest() };
        write_atomic(&path, canonical_json_pretty(&manifest).expect("manifest serializes").as_bytes()).map_err(io_err(&path))
    }

    /// Loads a saved corpus and checks it against its manifest.
    pub fn load(dir: &Path) -> Result<Corpus, KbError> {
        let mut pages = BTreeMap::new();
        let mut manifest = None;
        for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
            let path = entry.map_err(io_err(dir))?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
            let text = || std::fs::read_to_string(&path).map_err(io_err(&path));
            let malformed = |message: String| KbError::Malformed { path: path.display().to_string(), message };
            if name == MANIFEST {
                manifest = Some(serde_json::from_str::<Manifest>(&text()?).map_err(|e| malformed(e.to_string()))?);
            } else if let Some(title) = title_from_filename(&name) {
                let page: WikiPage = serde_json::from_str(&text()?).map_err(|e| malformed(e.to_string()))?;
                if page.title != title {
                    return Err(malformed(format!("file name decodes to {title:?} but the page is titled {:?}", page.title)));
                }
                pages.insert(title, page);
            }
        }
        let corpus = Corpus { pages };
        if let Some(m) = manifest {
            let actual = corpus.digest();
            if m.digest != actual || m.count != corpus.len() {
                return Err(KbError::DigestMismatch { expected: m.digest, actual });
            }
        }
        Ok(corpus)
    }
}

/// Similarity in [0, 1]: the larger of normalized Damerau-Levenshtein on
/// case-folded strings and Jaccard overlap of their word sets.
pub fn similarity(a: &str, b: &str) -> f64 {
    let a = a.trim().to_lowercase();
    let b = b.trim().to_lowercase();
    let edit = strsim::normalized_damerau_levenshtein(&a, &b);
    edit.max(token_jaccard(&a, &b))
}

fn token_jaccard(a: &str, b: &str) -> f64 {
    let words = |s: &str| -> std::collections::BTreeSet<String> {
        s.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).map(str::to_string).collect()
    };
    let (wa, wb) = (words(a), words(b));
    if wa.is_empty() && wb.is_empty() {
        return 0.0;
    }
    let inter = wa.intersection(&wb).count();
    let union = wa.union(&wb).count();
    inter as f64 / union as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TitleMatch {
    pub entity: String,
    pub title: String,
    pub score: f64,
}

/// For each entity, its `top_k` best titles scoring at least `threshold`,
/// ordered by score (descending) and then title.
pub fn match_titles(entities: &[String], corpus: &Corpus, threshold: f64, top_k: usize) -> Vec<TitleMatch> {
    assert!(threshold > 0.0 && threshold <= 1.0, "threshold must lie in (0, 1]");
    let mut out = Vec::new();
    for entity in entities {
        let mut scored: Vec<TitleMatch> = corpus
            .titles()
            .map(|t| TitleMatch { entity: entity.clone(), title: t.to_string(), score: similarity(entity, t) })
            .filter(|m| m.score >= threshold)
            .collect();
        scored.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.title.cmp(&b.title)));
        scored.truncate(top_k);
        out.extend(scored);
    }
    out
}

/// The version's own page when present, then the configured general pages
/// that exist in the corpus.
pub fn general_pages(version: &str, corpus: &Corpus, config: &KbConfig) -> Vec<String> {
    let mut out = Vec::new();
    if !version.is_empty() {
        let candidates = [version.to_string(), format!("Java Edition {version}")];
        match candidates.iter().find(|t| corpus.get(t).is_some()) {
            Some(t) => out.push(t.clone()),
            None => tracing::warn!("no wiki page for version {version:?}"),
        }
    }
    for title in &config.general_pages {
        if corpus.get(title).is_none() {
            tracing::warn!("configured general page {title:?} is not in the corpus");
        } else if !out.contains(title) {
            out.push(title.clone());
        }
    }
    out
}

/// Head of `body` limited to `budget` characters, on a char boundary.
pub fn truncate_head(body: &str, budget: usize) -> &str {
    match body.char_indices().nth(budget) {
        Some((i, _)) => &body[..i],
        None => body,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn page(title: &str, redirect: bool) -> WikiPage {
        WikiPage { title: title.into(), body: format!("body of {title}"), is_redirect: redirect, revision: "1".into() }
    }

    #[test]
    fn redirects_are_dropped_and_digest_is_stable() {
        let src = vec![page("Water", false), page("H2O", true), page("Strider", false)];
        let (c, r) = Corpus::ingest(src.clone());
        assert_eq!(c.len(), 2);
        assert_eq!(r.redirects_dropped, 1);
        assert_eq!(Corpus::ingest(src).1.digest, r.digest);
    }

    #[test]
    fn duplicate_title_keeps_last() {
        let mut second = page("Water", false);
        second.body = "newer".into();
        let (c, r) = Corpus::ingest(vec![page("Water", false), second]);
        assert_eq!(c.get("Water").unwrap().body, "newer");
        assert_eq!(r.duplicates, ["Water"]);
    }

    #[test]
    fn filenames_round_trip() {
        for t in ["Water", "Java Edition 1.21/Changes", ".hidden", "Bucket of Salmon?", "Ünïcode"] {
            assert_eq!(title_from_filename(&page_filename(t)).as_deref(), Some(t));
            assert!(!page_filename(t).contains('/'));
        }
    }

    #[test]
    fn matching_orders_by_score_then_title() {
        let (c, _) = Corpus::ingest(["Water", "Water Bucket", "Strider", "Lava"].map(|t| page(t, false)));
        let m = match_titles(&["water".to_string()], &c, 0.3, 3);
        assert_eq!(m[0].title, "Water");
        assert_eq!(m[0].score, 1.0);
        assert!(m.windows(2).all(|w| w[0].score >= w[1].score));
        assert!(match_titles(&["zzzz".to_string()], &c, 0.75, 3).is_empty());
    }

    #[test]
    fn truncation_respects_char_boundaries() {
        assert_eq!(truncate_head("héllo", 2), "hé");
        assert_eq!(truncate_head("abc", 10), "abc");
    }
}
