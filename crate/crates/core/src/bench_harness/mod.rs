//! Benchmark items, resumable batch runs, labeling and the reported statistics.

pub mod labels;
pub mod metrics;
pub mod stats;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::action_model::{Outcome, RunResult};
use crate::action_model::RunDir;
use crate::report_ingest::{Comment, ConfirmationStatus, ReportSnapshot};
use crate::sandbox_sim::{sim_time, ScenarioSpec};
use crate::util::{canonical_json, canonical_json_pretty, sha256_hex, write_atomic};
pub use labels::{classify_run, Branch, ClassifyConfig, FaultReason, LabelFile, Leaf, LoopKind, PlanLabel, PlanOutcome, RunLabel, Suggestion};
pub use metrics::{metrics_report, Comparisons, ImportedFigures, MetricsReport};
pub use stats::{cohen_kappa, mcnemar_exact, oracle_coverage, percent, success_rate, Coverage, Kappa, McNemar, Rate, StatsError};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("benchmark directory {0} does not exist")]
    MissingDir(PathBuf),
    #[error("malformed benchmark item {file}: {message}")]
    MalformedItem { file: String, message: String },
    #[error("duplicate benchmark item {0}")]
    DuplicateItem(String),
    #[error("sample of {want} requested from {have} items")]
    SampleTooLarge { want: usize, have: usize },
    #[error("item {key} cannot be bound: {message}")]
    Unbound { key: String, message: String },
    #[error("i/o error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "snake_case")]
pub enum Binding {
    /// A simulator scenario id.
    Scenario(String),
    /// A game version for a live run.
    Version(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchItem {
    pub report: ReportSnapshot,
    pub binding: Binding,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<LabelFile>,
    /// Where the item came from: tracker fixture, filter verdicts and the like.
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub provenance: serde_json::Value,
}

impl BenchItem {
    pub fn key(&self) -> &str {
        &self.report.source_key
    }

    pub fn digest(&self) -> String {
        sha256_hex(canonical_json(self).expect("item serializes").as_bytes())
    }

    /// The scenario's bug report as an item bound to that scenario.
    pub fn from_scenario(spec: &ScenarioSpec) -> Self {
        let r = &spec.report;
        let comments = r
            .comments
            .iter()
            .enumerate()
            .map(|(i, c)| Comment {
                id: format!("{}", i + 1),
                author: c.author.clone(),
                author_roles: Default::default(),
                created_at: sim_time(0),
                body: c.body.clone(),
            })
            .collect();
        let report = ReportSnapshot {
            source_key: r.key.clone(),
            title: r.title.clone(),
            description: r.description.clone(),
            comments,
            cutoff: sim_time(0),
            reconstruction_note: format!("taken from scenario {}", spec.id),
            affected_version: r.version.clone(),
            confirmation_status: ConfirmationStatus::Confirmed,
            labels: Vec::new(),
            fields: Default::default(),
            history: Vec::new(),
            created_at: None,
        };
        BenchItem {
            report,
            binding: Binding::Scenario(spec.id.clone()),
            ground_truth: None,
            provenance: serde_json::json!({"scenario": spec.id, "negative": spec.negative}),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSet {
    pub items: Vec<BenchItem>,
    /// Seed of the subsample, when one was drawn.
    pub sample_seed: Option<u64>,
}

/// Reads every `*.json` item in `dir`, sorted by key. With `sample`, keeps a
/// seeded random subset of that size.
pub fn load_bench(dir: &Path, sample: Option<(usize, u64)>) -> Result<BenchSet, BenchError> {
    if !dir.is_dir() {
        return Err(BenchError::MissingDir(dir.to_path_buf()));
    }
    let io = |source| BenchError::Io { path: dir.to_path_buf(), source };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    let mut items: Vec<BenchItem> = Vec::with_capacity(paths.len());
    for p in paths {
        let file = p.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let text = std::fs::read_to_string(&p).map_err(|source| BenchError::Io { path: p.clone(), source })?;
        let item: BenchItem = serde_json::from_str(&text).map_err(|e| BenchError::MalformedItem { file: file.clone(), message: e.to_string() })?;
        if let Some(l) = &item.ground_truth {
            let bad = l.plan.as_ref().map(|p| p.validate()).transpose().and(l.run.as_ref().map(|r| r.validate()).transpose());
            if let Err(e) = bad {
                return Err(BenchError::MalformedItem { file, message: e.to_string() });
            }
        }
        items.push(item);
    }
    items.sort_by(|a, b| a.key().cmp(b.key()));
    for w in items.windows(2) {
        if w[0].key() == w[1].key() {
            return Err(BenchError::DuplicateItem(w[0].key().to_string()));
        }
    }
    let Some((n, seed)) = sample else {
        return Ok(BenchSet { items, sample_seed: None });
    };
    if n > items.len() {
        return Err(BenchError::SampleTooLarge { want: n, have: items.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<BenchItem> = items.choose_multiple(&mut rng, n).cloned().collect();
    picked.sort_by(|a, b| a.key().cmp(b.key()));
    Ok(BenchSet { items: picked, sample_seed: Some(seed) })
}

/// Something that can run one benchmark item into a run directory.
pub trait ItemRunner: Sync {
    /// Fails if the item's binding cannot be resolved.
    fn check_binding(&self, item: &BenchItem) -> Result<(), String>;
    /// Run-affecting configuration, folded into the resume digest.
    fn config_digest(&self) -> String;
    /// Never fails: errors are reported through the result's outcome.
    fn run_item(&self, item: &BenchItem, dir: &Path) -> RunResult;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub key: String,
    pub digest: String,
    pub result: RunResult,
    /// Loaded from an earlier run instead of executed.
    #[serde(skip)]
    pub resumed: bool,
}

pub const DIGEST_FILE: &str = "item.digest";

fn run_digest(item: &BenchItem, runner: &dyn ItemRunner) -> String {
    sha256_hex(format!("{}\n{}", item.digest(), runner.config_digest()).as_bytes())
}

fn completed(dir: &Path, digest: &str) -> Option<RunResult> {
    let stored = std::fs::read_to_string(dir.join(DIGEST_FILE)).ok()?;
    if stored.trim() != digest {
        return None;
    }
    RunDir::new(dir).load_result().ok()
}

fn run_one(item: &BenchItem, runner: &dyn ItemRunner, out: &Path) -> Result<ItemResult, BenchError> {
    let dir = out.join(item.key());
    let digest = run_digest(item, runner);
    if let Some(result) = completed(&dir, &digest) {
        return Ok(ItemResult { key: item.key().to_string(), digest, result, resumed: true });
    }
    let io = |source| BenchError::Io { path: dir.clone(), source };
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(io)?;
    }
    std::fs::create_dir_all(&dir).map_err(io)?;
    let result = runner.run_item(item, &dir);
    if !dir.join(RunDir::RESULT).exists() {
        let text = canonical_json_pretty(&result).map_err(|e| io(std::io::Error::other(e)))?;
        write_atomic(&dir.join(RunDir::RESULT), text.as_bytes()).map_err(io)?;
    }
    write_atomic(&dir.join(DIGEST_FILE), digest.as_bytes()).map_err(io)?;
    Ok(ItemResult { key: item.key().to_string(), digest, result, resumed: false })
}

/// Runs every item under `out/<key>/` with up to `parallelism` workers.
/// Items whose digest and result are already on disk are not run again.
/// Results come back in item order whatever the parallelism.
pub fn run_bench(items: &[BenchItem], runner: &dyn ItemRunner, parallelism: usize, out: &Path) -> Result<Vec<ItemResult>, BenchError> {
    for item in items {
        runner.check_binding(item).map_err(|message| BenchError::Unbound { key: item.key().to_string(), message })?;
    }
    std::fs::create_dir_all(out).map_err(|source| BenchError::Io { path: out.to_path_buf(), source })?;
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<ItemResult, BenchError>>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    let workers = parallelism.clamp(1, items.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = run_one(&items[i], runner, out);
                if let Ok(r) = &r {
                    tracing::info!("{}: {} after {} iteration(s)", r.key, r.result.outcome.label(), r.result.iterations_used);
                }
                slots.lock().expect("result slots")[i] = Some(r);
            });
        }
    });
    slots.into_inner().expect("result slots").into_iter().map(|r| r.expect("every item ran")).collect()
}

/// Pairs results with the human labels stored next to them.
pub fn collect_labeled(out: &Path, results: &[ItemResult]) -> std::io::Result<Vec<(RunResult, Option<LabelFile>)>> {
    results.iter().map(|r| Ok((r.result.clone(), LabelFile::load(&out.join(&r.key))?))).collect()
}

/// Results of every completed run under `out`, sorted by key.
pub fn load_results(out: &Path) -> std::io::Result<Vec<ItemResult>> {
    let mut found = Vec::new();
    for e in std::fs::read_dir(out)? {
        let dir = e?.path();
        if !dir.is_dir() || !dir.join(RunDir::RESULT).exists() {
            continue;
        }
        let key = dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let digest = std::fs::read_to_string(dir.join(DIGEST_FILE)).unwrap_or_default().trim().to_string();
        found.push(ItemResult { key, digest, result: RunDir::new(&dir).load_result()?, resumed: true });
    }
    found.sort_by(|a, b| a.key.cmp(&b.key));
    Ok(found)
}
