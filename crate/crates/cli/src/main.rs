use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use crashrepro::bench_harness::{
    classify_run, collect_labeled, load_bench, load_results, metrics_report, oracle_coverage, run_bench, BenchItem, Binding, ClassifyConfig,
    Comparisons, ImportedFigures, LabelFile,
};
use crashrepro::action_model::RunDir;
use crashrepro::knowledge_base::{read_source_dir, ApiSource, Corpus};
use crashrepro::llm_gateway::{FixtureMode, Provider, Transcript};
use crashrepro::macro_api::{replay, ActionLog};
use crashrepro::report_ingest::{backtrack, filter_candidates, save_fixture, FilterConfig, FixtureTracker, HttpTracker, ReportSnapshot, Tracker, TrackerConfig};
use crashrepro::sandbox_sim::{load_scenarios, ScenarioSpec, SimBackend};
use crashrepro::util::{canonical_json_pretty, write_atomic};
use crashrepro::{Engine, EngineConfig};
use crashrepro_scripted::ScriptedModel;

#[derive(Parser)]
#[command(name = "crashrepro", version, about = "Reproduce game crashes from bug reports")]
struct Cli {
    /// Engine config; relative paths inside it resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's fixture mode.
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
    /// Model provider for record and live modes.
    #[arg(long, global = true, value_enum, default_value_t = ProviderArg::Http)]
    provider: ProviderArg,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Replay,
    Record,
    Live,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum ProviderArg {
    /// The endpoint in the config's [provider] table.
    Http,
    /// The deterministic offline model, for recording fixtures.
    Scripted,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum BackendArg {
    Sim,
    Live,
}

#[derive(Args)]
struct TrackerArgs {
    /// Directory of recorded issue payloads.
    #[arg(long, default_value = "tracker")]
    tracker_dir: PathBuf,
    /// Tracker settings (TOML); defaults to the public tracker.
    #[arg(long)]
    tracker_config: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Issue key of the report.
    #[arg(long)]
    report: String,
    /// Benchmark item directory to look the key up in.
    #[arg(long)]
    items: Option<PathBuf>,
    #[command(flatten)]
    tracker: TrackerArgs,
}

#[derive(Subcommand)]
enum Command {
    /// Download issues with their changelogs into the tracker directory.
    Fetch {
        keys: Vec<String>,
        #[command(flatten)]
        tracker: TrackerArgs,
    },
    /// Print the report as it stood before the first trusted edit.
    Backtrack {
        key: String,
        #[command(flatten)]
        tracker: TrackerArgs,
    },
    /// Apply the benchmark filters to every recorded issue and write items.
    Filter {
        /// Filter settings (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        tracker: TrackerArgs,
        #[arg(long, default_value = "items")]
        out: PathBuf,
    },
    /// Knowledge base maintenance.
    Kb {
        #[command(subcommand)]
        command: KbCommand,
    },
    /// Synthesize clustered steps for one report.
    Synthesize {
        #[command(flatten)]
        report: ReportArgs,
        #[arg(long)]
        out: PathBuf,
        /// Synthesis model id, overriding the config.
        #[arg(long)]
        model: Option<String>,
    },
    /// Synthesize and execute one report.
    Run {
        #[command(flatten)]
        report: ReportArgs,
        #[arg(long, value_enum, default_value_t = BackendArg::Sim)]
        backend: BackendArg,
        /// Scenario to bind in the simulator; defaults to the one whose report has this key.
        #[arg(long)]
        scenario: Option<String>,
        /// Fixture directory, overriding the config.
        #[arg(long)]
        fixtures: Option<PathBuf>,
        #[arg(long)]
        max_iter: Option<u32>,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a set of benchmark items, resuming completed ones.
    Bench {
        /// Directory of benchmark items.
        #[arg(long, conflicts_with = "scenarios")]
        items: Option<PathBuf>,
        /// Use every positive scenario of the scenario bank as an item.
        #[arg(long)]
        scenarios: bool,
        /// With --scenarios, also include the negative scenarios.
        #[arg(long)]
        include_negative: bool,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        #[arg(long)]
        sample: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-execute a recorded action log against its scenario.
    Replay {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        scenario: String,
    },
    /// Aggregate results and labels into the report tables.
    Metrics {
        #[arg(long)]
        results: PathBuf,
        /// JSON 3x3 matrix of plan labels from two raters (True, Faulty, Irreproducible).
        #[arg(long)]
        rater_matrix: Option<PathBuf>,
        /// Results of a second agent on the same items.
        #[arg(long)]
        compare: Option<PathBuf>,
        /// JSON with figures measured outside the engine.
        #[arg(long)]
        imported: Option<PathBuf>,
        /// Also write the report as JSON here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Write suggested run labels next to each result. Human labels are left alone.
    Label {
        #[arg(long)]
        results: PathBuf,
        #[arg(long, default_value_t = ClassifyConfig::default().repeat_threshold)]
        repeat_threshold: usize,
    },
}

#[derive(Subcommand)]
enum KbCommand {
    /// Build the corpus from a directory of pages or a MediaWiki api.php URL.
    Ingest {
        #[arg(long)]
        from: String,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Page limit for API ingest.
        #[arg(long, default_value_t = 5000)]
        limit: usize,
    },
}

fn load_config(cli: &Cli) -> Result<EngineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => EngineConfig::load(p)?,
        None if Path::new("engine.toml").exists() => EngineConfig::load(Path::new("engine.toml"))?,
        None => EngineConfig::default(),
    };
    if let Some(m) = cli.mode {
        cfg.mode = match m {
            ModeArg::Replay => FixtureMode::Replay,
            ModeArg::Record => FixtureMode::Record,
            ModeArg::Live => FixtureMode::Live,
        };
    }
    Ok(cfg)
}

/// Positive scenarios plus those under `negative/`.
fn all_scenarios(dir: &Path) -> Result<Vec<Arc<ScenarioSpec>>> {
    let mut out = Vec::new();
    for d in [dir.to_path_buf(), dir.join("negative")] {
        if d.is_dir() {
            out.extend(load_scenarios(&d)?.into_values().map(Arc::new));
        }
    }
    Ok(out)
}

fn build_engine(cli: &Cli, cfg: EngineConfig) -> Result<Engine> {
    let provider: Option<Arc<dyn Provider>> = match (cfg.mode, cli.provider) {
        (FixtureMode::Replay, _) | (_, ProviderArg::Http) => None,
        (_, ProviderArg::Scripted) => Some(Arc::new(ScriptedModel::new(all_scenarios(&cfg.scenario_dir)?))),
    };
    Ok(Engine::new(cfg, provider)?)
}

fn tracker_config(args: &TrackerArgs) -> Result<TrackerConfig> {
    match &args.tracker_config {
        Some(p) => Ok(toml::from_str(&std::fs::read_to_string(p)?).with_context(|| format!("reading {}", p.display()))?),
        None => Ok(TrackerConfig::default()),
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    write_atomic(path, canonical_json_pretty(value)?.as_bytes())?;
    Ok(())
}

/// A scenario report, a benchmark item, or a backtracked tracker fixture.
fn find_report(args: &ReportArgs, engine: &Engine) -> Result<ReportSnapshot> {
    if let Some(s) = engine.scenarios().find(|s| s.report.key == args.report) {
        return Ok(BenchItem::from_scenario(s).report);
    }
    if let Some(dir) = &args.items {
        if let Some(item) = load_bench(dir, None)?.items.into_iter().find(|i| i.key() == args.report) {
            return Ok(item.report);
        }
    }
    let tracker = FixtureTracker::new(&args.tracker.tracker_dir, tracker_config(&args.tracker)?);
    let issue = tracker.fetch_issue(&args.report).with_context(|| format!("no scenario, item or tracker fixture for {}", args.report))?;
    Ok(backtrack(&issue)?)
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match &cli.command {
        Command::Fetch { keys, tracker } => {
            let http = HttpTracker::new(tracker_config(tracker)?).recording_to(&tracker.tracker_dir);
            for key in keys {
                let payload = http.fetch_raw(key)?;
                let path = save_fixture(&tracker.tracker_dir, key, &payload)?;
                println!("{key}: {}", path.display());
            }
        }
        Command::Backtrack { key, tracker } => {
            let issue = FixtureTracker::new(&tracker.tracker_dir, tracker_config(tracker)?).fetch_issue(key)?;
            let snap = backtrack(&issue)?;
            println!("{}", canonical_json_pretty(&snap)?);
        }
        Command::Filter { config, tracker, out } => {
            let filter: FilterConfig = match config {
                Some(p) => toml::from_str(&std::fs::read_to_string(p)?).with_context(|| format!("reading {}", p.display()))?,
                None => FilterConfig::default(),
            };
            let source = FixtureTracker::new(&tracker.tracker_dir, tracker_config(tracker)?);
            let issues = source.keys()?.iter().map(|k| source.fetch_issue(k)).collect::<Result<Vec<_>, _>>()?;
            let outcome = filter_candidates(&issues, &filter);
            for issue in &outcome.retained {
                let snap = backtrack(issue)?;
                let item = BenchItem {
                    binding: Binding::Version(snap.affected_version.clone()),
                    report: snap,
                    ground_truth: None,
                    provenance: serde_json::json!({"tracker_fixture": source.path_of(&issue.key), "filter": "retained"}),
                };
                write_json(&out.join(format!("{}.json", issue.key)), &item)?;
            }
            write_json(&out.join("filter_verdicts.json"), &outcome.verdicts())?;
            println!("{} retained, {} rejected", outcome.retained.len(), outcome.rejected.len());
            for r in &outcome.rejected {
                println!("  {}: {}", r.key, r.reasons.join(", "));
            }
        }
        Command::Kb { command: KbCommand::Ingest { from, out, limit } } => {
            let cfg = load_config(&cli)?;
            let out = out.clone().unwrap_or(cfg.kb_dir);
            let pages = if from.starts_with("http://") || from.starts_with("https://") {
                let api = ApiSource::new(from.clone());
                let titles = api.list_titles(*limit)?;
                api.fetch_pages(&titles)?
            } else {
                read_source_dir(Path::new(from))?
            };
            let (corpus, report) = Corpus::ingest(pages);
            corpus.save(&out)?;
            println!(
                "{} pages ({} redirects dropped, {} duplicates) -> {} [{}]",
                report.count,
                report.redirects_dropped,
                report.duplicates.len(),
                out.display(),
                &report.digest[..12]
            );
        }
        Command::Synthesize { report, out, model } => {
            let mut cfg = load_config(&cli)?;
            if let Some(m) = model {
                cfg.models.synth = m.clone();
            }
            let engine = build_engine(&cli, cfg)?;
            let snap = find_report(report, &engine)?;
            let transcript = Transcript::persistent(snap.source_key.clone(), out.join(RunDir::TRANSCRIPTS));
            let plan = engine.synthesize(&snap, &transcript)?;
            plan.save(&out.join(RunDir::PLAN))?;
            print!("{}", crashrepro::step_synthesizer::render_clusters(&plan.clusters));
            println!();
        }
        Command::Run { report, backend, scenario, fixtures, max_iter, window, out } => {
            let mut cfg = load_config(&cli)?;
            if let Some(f) = fixtures {
                cfg.fixture_dir = f.clone();
            }
            if let Some(n) = max_iter {
                cfg.limits.max_iterations = *n;
            }
            if let Some(w) = window {
                cfg.limits.window = *w;
            }
            cfg.validate().map_err(|e| anyhow!(e))?;
            let out = out.clone().unwrap_or_else(|| cfg.run_root.join(&report.report));
            let engine = build_engine(&cli, cfg)?;
            let snap = find_report(report, &engine)?;
            let binding = match backend {
                BackendArg::Sim => {
                    let id = match scenario {
                        Some(id) => id.clone(),
                        None => engine
                            .scenarios()
                            .find(|s| s.report.key == report.report)
                            .map(|s| s.id.clone())
                            .ok_or_else(|| anyhow!("no scenario has report {}; pass --scenario", report.report))?,
                    };
                    Binding::Scenario(id)
                }
                BackendArg::Live => Binding::Version(snap.affected_version.clone()),
            };
            std::fs::create_dir_all(&out)?;
            let result = engine.run_report(&snap, &binding, &out);
            println!("{}", canonical_json_pretty(&result)?);
        }
        Command::Bench { items, scenarios, include_negative, parallel, sample, seed, out } => {
            let cfg = load_config(&cli)?;
            let out = out.clone().unwrap_or_else(|| cfg.run_root.join("bench"));
            let engine = build_engine(&cli, cfg)?;
            let set: Vec<BenchItem> = match (items, scenarios) {
                (Some(dir), false) => load_bench(dir, sample.map(|n| (n, *seed)))?.items,
                (None, true) => {
                    let mut v: Vec<BenchItem> =
                        engine.scenarios().filter(|s| *include_negative || !s.negative).map(|s| BenchItem::from_scenario(s)).collect();
                    v.sort_by(|a, b| a.key().cmp(b.key()));
                    v
                }
                _ => bail!("pass either --items DIR or --scenarios"),
            };
            let results = run_bench(&set, &engine, *parallel, &out)?;
            let mut solved = 0;
            for r in &results {
                if r.result.outcome.is_success() {
                    solved += 1;
                }
                println!(
                    "{:<14} {:<8} iterations={:<3} calls={:<4}{}",
                    r.key,
                    r.result.outcome.label(),
                    r.result.iterations_used,
                    r.result.model_calls,
                    if r.resumed { " (resumed)" } else { "" }
                );
            }
            println!("{solved}/{} reproduced; results in {}", results.len(), out.display());
        }
        Command::Replay { log, scenario } => {
            let cfg = load_config(&cli)?;
            let spec = all_scenarios(&cfg.scenario_dir)?
                .into_iter()
                .find(|s| &s.id == scenario)
                .ok_or_else(|| anyhow!("no scenario {scenario:?} in {}", cfg.scenario_dir.display()))?;
            let records = ActionLog::load(log)?;
            let mut backend = SimBackend::new(spec);
            let outcome = replay(&records, &mut backend)?;
            match outcome.crash {
                Some(c) => println!("crash {} after {} record(s)", c.crash_id, outcome.steps),
                None => println!("no crash after {} record(s)", outcome.steps),
            }
        }
        Command::Metrics { results, rater_matrix, compare, imported, json } => {
            let found = load_results(results).with_context(|| format!("reading results in {}", results.display()))?;
            let labeled = collect_labeled(results, &found)?;
            let mut comparisons = Comparisons::default();
            if let Some(p) = rater_matrix {
                comparisons.rater_matrix = Some(serde_json::from_str(&std::fs::read_to_string(p)?)?);
            }
            if let Some(p) = imported {
                comparisons.imported = serde_json::from_str::<ImportedFigures>(&std::fs::read_to_string(p)?)?;
            }
            if let Some(dir) = compare {
                let solved = |rs: &[crashrepro::bench_harness::ItemResult]| -> BTreeMap<String, bool> {
                    rs.iter().map(|r| (r.key.clone(), r.result.outcome.is_success())).collect()
                };
                comparisons.coverage = Some(oracle_coverage(&solved(&found), &solved(&load_results(dir).with_context(|| format!("reading results in {}", dir.display()))?))?);
            }
            let report = metrics_report(&labeled, &comparisons);
            print!("{}", report.render());
            if let Some(p) = json {
                write_json(p, &report)?;
            }
        }
        Command::Label { results, repeat_threshold } => {
            let config = ClassifyConfig { repeat_threshold: *repeat_threshold, ..ClassifyConfig::default() };
            for r in load_results(results).with_context(|| format!("reading results in {}", results.display()))? {
                let dir = RunDir::new(results.join(&r.key));
                let trajectory = dir.load_trajectory().unwrap_or_default();
                let actions = dir.load_actions().unwrap_or_default();
                let human = LabelFile::load(&dir.root)?;
                let suggestion = classify_run(&r.result, &trajectory, &actions, human.as_ref().and_then(|l| l.plan.as_ref()), &config);
                suggestion.save(&dir.root)?;
                let state = if human.as_ref().is_some_and(|l| l.run.is_some()) { "labeled" } else { "needs label" };
                println!("{:<14} suggested {:<28} ({state})", r.key, suggestion.label.leaf.name());
            }
        }
    }
    Ok(())
}
