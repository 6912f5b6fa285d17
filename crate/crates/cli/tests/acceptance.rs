//! Acceptance suite: one line per criterion, then a single verdict.
//!
//! Run with `cargo test -p crashrepro-cli --test acceptance -- --nocapture`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use crashrepro::action_model::{Outcome, RunDir, RunResult, WINDOW_MARKER};
use crashrepro::annotation::UiElement;
use crashrepro::bench_harness::metrics::PlanCounts;
use crashrepro::bench_harness::{
    cohen_kappa, load_results, mcnemar_exact, metrics_report, run_bench, BenchItem, Comparisons, Coverage, FaultReason, ImportedFigures,
    LabelFile, PlanLabel, PlanOutcome, Rate,
};
use crashrepro::llm_gateway::{CountingProvider, FixtureMode, MessageRole, Transcript, TranscriptEntry, Usage};
use crashrepro::macro_api::{execute_batch, resolve_click_place, Action, ActionBatch, Backend, MacroError};
use crashrepro::report_ingest::{backtrack, parse_issue, TrackerConfig};
use crashrepro::sandbox_sim::{load_scenarios, ScenarioSpec, SimBackend};
use crashrepro::{Engine, EngineConfig};
use crashrepro_oracles::backtrack::{forward_replay, random_issue};
use crashrepro_oracles::stats as oracle;
use crashrepro_scripted::ScriptedModel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria known to be out of reach, with the substring their failure must contain.
const KNOWN_UNATTAINABLE: &[(u32, &str)] = &[(4, "Missing Step")];

type Check = Result<String, String>;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().expect("workspace root")
}

fn config() -> EngineConfig {
    EngineConfig::load(&root().join("engine.toml")).expect("engine.toml loads")
}

fn positive_scenarios() -> BTreeMap<String, ScenarioSpec> {
    load_scenarios(&root().join("scenarios")).expect("scenario bank loads")
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn cli(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_crashrepro"))
        .current_dir(root())
        .arg("--config")
        .arg(root().join("engine.toml"))
        .arg("--mode")
        .arg("replay")
        .args(args)
        .output()
        .map_err(|e| format!("cannot start crashrepro: {e}"))?;
    if !out.status.success() {
        return Err(format!("crashrepro {args:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn bench_once(out: &Path) -> Result<Duration, String> {
    let started = Instant::now();
    cli(&["bench", "--scenarios", "--out", out.to_str().unwrap()])?;
    Ok(started.elapsed())
}

fn criterion_1(a: &Path, b: &Path) -> Check {
    let first = bench_once(a)?;
    let second = bench_once(b)?;
    let results = load_results(a).map_err(|e| e.to_string())?;
    ensure(results.len() == 10, || format!("expected 10 results, found {}", results.len()))?;
    for r in &results {
        ensure(r.result.outcome.is_success(), || format!("{} ended {}", r.key, r.result.outcome.label()))?;
        ensure(r.result.iterations_used <= 30, || format!("{} used {} iterations", r.key, r.result.iterations_used))?;
        let la = std::fs::read(a.join(&r.key).join(RunDir::ACTIONS)).map_err(|e| e.to_string())?;
        let lb = std::fs::read(b.join(&r.key).join(RunDir::ACTIONS)).map_err(|e| e.to_string())?;
        ensure(!la.is_empty() && la == lb, || format!("{} action logs differ between runs", r.key))?;
    }
    for (i, t) in [first, second].iter().enumerate() {
        ensure(t.as_secs_f64() < 60.0, || format!("run {} took {:.1}s", i + 1, t.as_secs_f64()))?;
    }
    let worst = results.iter().map(|r| r.result.iterations_used).max().unwrap_or(0);
    Ok(format!(
        "10/10 reproduced, at most {worst} iterations, {:.1}s and {:.1}s, logs byte-identical",
        first.as_secs_f64(),
        second.as_secs_f64()
    ))
}

fn criterion_2(runs: &Path) -> Check {
    let by_key: BTreeMap<String, String> = positive_scenarios().into_values().map(|s| (s.report.key.clone(), s.id)).collect();
    let results = load_results(runs).map_err(|e| e.to_string())?;
    ensure(results.len() == 10, || format!("expected 10 recorded runs, found {}", results.len()))?;
    let mut matched = 0;
    for r in &results {
        let want = r.result.crash.as_ref().map(|c| c.crash_id.clone()).ok_or_else(|| format!("{} has no crash", r.key))?;
        let scenario = by_key.get(&r.key).ok_or_else(|| format!("no scenario for {}", r.key))?;
        let log = runs.join(&r.key).join(RunDir::ACTIONS);
        let out = cli(&["replay", "--log", log.to_str().unwrap(), "--scenario", scenario])?;
        let got = out.split_whitespace().nth(1).unwrap_or_default();
        ensure(out.starts_with("crash ") && got == want, || format!("{}: replay said {:?}, run recorded {want}", r.key, out.trim()))?;
        matched += 1;
    }
    Ok(format!("{matched}/10 replays hit the recorded crash id"))
}

fn criterion_3() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce);
    for case in 0..1000 {
        let issue = random_issue(&mut rng);
        let snap = backtrack(&issue).map_err(|e| format!("case {case}: {e}"))?;
        let want = forward_replay(&issue);
        ensure(snap.cutoff == want.cutoff, || format!("case {case}: cutoff {} vs {}", snap.cutoff, want.cutoff))?;
        let got = snap.as_issue();
        for (field, value) in &want.fields {
            ensure(&got.field(field) == value, || format!("case {case}: field {field}"))?;
        }
        let ids: Vec<String> = snap.comments.iter().map(|c| c.id.clone()).collect();
        ensure(ids == want.comment_ids, || format!("case {case}: comments {ids:?} vs {:?}", want.comment_ids))?;
        ensure(snap.history.len() == want.history_len, || format!("case {case}: history length"))?;
    }

    let raw: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(root().join("tracker/MC-276621.json")).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let issue = parse_issue(&raw, &TrackerConfig::default()).map_err(|e| e.to_string())?;
    let snap = backtrack(&issue).map_err(|e| e.to_string())?;
    let want = forward_replay(&issue);
    ensure(snap.cutoff == want.cutoff, || "MC-276621 cutoff".into())?;
    ensure(snap.confirmation_status.as_str() == "Unconfirmed", || format!("MC-276621 status {}", snap.confirmation_status.as_str()))?;
    ensure(issue.comments.len() > snap.comments.len(), || "MC-276621 kept the later comment".into())?;
    ensure(snap.description != issue.description, || "MC-276621 kept the edited description".into())?;
    let ids: Vec<String> = snap.comments.iter().map(|c| c.id.clone()).collect();
    ensure(ids == want.comment_ids, || "MC-276621 comments".into())?;
    Ok(format!("1000/1000 random changelogs agree; MC-276621 cut at {}", snap.cutoff))
}

fn result_with(outcome: Outcome) -> RunResult {
    RunResult {
        run_id: "r".into(),
        source_key: "r".into(),
        outcome,
        iterations_used: 1,
        final_cluster_index: 0,
        crash: None,
        usage: Usage::default(),
        cost_usd: 0.0,
        model_calls: 0,
        wall_time_ms: 0,
    }
}

/// 57 true plans and 29 faulty ones carrying 14, 10 and 9 reasons.
fn table_one_labels() -> Vec<(RunResult, Option<LabelFile>)> {
    let label = |plan: PlanLabel| LabelFile { plan: Some(plan), run: None, rater: "a".into(), note: String::new() };
    let mut out = Vec::new();
    for _ in 0..57 {
        out.push((result_with(Outcome::Failure), Some(label(PlanLabel::new(PlanOutcome::True, vec![]).unwrap()))));
    }
    for i in 0..29 {
        let mut reasons = Vec::new();
        if i < 14 {
            reasons.push(FaultReason::WrongCommand);
        }
        if (14..24).contains(&i) {
            reasons.push(FaultReason::MissingStep);
        }
        if i >= 20 {
            reasons.push(FaultReason::LogicError);
        }
        out.push((result_with(Outcome::Failure), Some(label(PlanLabel::new(PlanOutcome::Faulty, reasons).unwrap()))));
    }
    out
}

fn criterion_4() -> Check {
    let mut failures = Vec::new();
    let mut expect = |what: &str, got: String, printed: &str| {
        if got != printed {
            failures.push(format!("{what}: computed {got}, printed {printed}"));
        }
    };
    let mut outcomes: Vec<(RunResult, Option<LabelFile>)> = Vec::new();
    for i in 0..86 {
        let o = if i < 26 { Outcome::Success { crash_id: format!("c{i}") } } else { Outcome::Failure };
        outcomes.push((result_with(o), None));
    }
    let report = metrics_report(&outcomes, &Comparisons::default());
    expect("26/86", report.success.map(|s| s.display(2)).unwrap_or_default(), "30.23%");
    expect("30/86", Rate::new(30, 86).display(1), "34.9%");

    let plan = metrics_report(&table_one_labels(), &Comparisons::default()).plan;
    ensure(
        plan == PlanCounts { true_: 57, faulty: 29, irreproducible: 0, wrong_command: 14, missing_step: 10, logic_error: 9 },
        || format!("label counts {plan:?}"),
    )?;
    let printed = [("True", "66.28%"), ("Faulty", "33.72%"), ("Wrong Command", "48.28%"), ("Missing Step", "34.49%"), ("Logic Error", "31.03%")];
    let rows = plan.rows();
    for (label, want) in printed {
        let row = rows.iter().find(|r| r.label == label).ok_or_else(|| format!("no row {label}"))?;
        expect(label, row.rate.map(|r| r.display(2)).unwrap_or_default(), want);
    }

    let cov = Coverage::from_counts(20, 10, 6, 86);
    let union = cov.union;
    expect("overlap union", union.to_string(), "36");
    expect("overlap rate", cov.rate().display(1), "41.9%");
    if failures.is_empty() {
        Ok("30.23%, 34.9%, Table 1 rows, union 36 (41.9%) all match".into())
    } else {
        Err(failures.join("; "))
    }
}

fn criterion_5() -> Check {
    let got = mcnemar_exact(10, 6);
    let want = oracle::mcnemar_exact(10, 6);
    ensure((got.p - want).abs() < 1e-12, || format!("p {} vs oracle {want}", got.p))?;
    ensure(format!("{:.2}", got.p) == "0.45", || format!("p displays as {:.2}", got.p))?;
    let report = metrics_report(&[], &Comparisons { coverage: Some(Coverage::from_counts(20, 10, 6, 86)), ..Default::default() });
    ensure(report.render().contains("McNemar exact p: 0.45"), || "report does not show p = 0.45".into())?;
    Ok(format!("p = {:.6} (oracle {want:.6})", got.p))
}

fn criterion_6() -> Check {
    let diag = vec![vec![9, 0, 0], vec![0, 4, 0], vec![0, 0, 6]];
    ensure(cohen_kappa(&diag).map_err(|e| e.to_string())?.kappa == Some(1.0), || "diagonal kappa is not 1".into())?;
    let indep = vec![vec![2, 4, 6], vec![3, 6, 9], vec![1, 2, 3]];
    let k = cohen_kappa(&indep).map_err(|e| e.to_string())?.kappa.unwrap_or(f64::NAN);
    ensure(k.abs() < 1e-12, || format!("independence kappa {k}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x6b);
    let mut checked = 0;
    while checked < 200 {
        let m: Vec<Vec<u64>> = (0..3).map(|_| (0..3).map(|_| rng.random_range(0..30)).collect()).collect();
        let Some((want, _)) = oracle::cohen_kappa(&m) else { continue };
        let got = cohen_kappa(&m).map_err(|e| e.to_string())?.kappa.unwrap_or(f64::NAN);
        ensure((got - want).abs() < 1e-9, || format!("{m:?}: {got} vs {want}"))?;
        checked += 1;
    }
    let imported = ImportedFigures { reported_kappa: Some(0.70), reported_agreement: Some(83.0), ..Default::default() };
    let text = metrics_report(&[], &Comparisons { imported, ..Default::default() }).render();
    ensure(text.contains("Reported kappa (imported): 0.70, agreement 83.0%"), || "imported kappa not shown".into())?;
    Ok("diagonal 1, independence 0, 200/200 random matrices agree; 0.70 / 83.0% imported".into())
}

fn user_text(e: &TranscriptEntry) -> &str {
    e.request.messages.iter().find(|m| m.role == MessageRole::User).map(|m| m.text.as_str()).unwrap_or("")
}

fn criterion_7(dir: &Path) -> Check {
    let cfg = config();
    let window = cfg.limits.window;
    let engine = Engine::new(cfg, None).map_err(|e| e.to_string())?;
    let spec = engine.scenarios().find(|s| s.negative).cloned().ok_or("no negative scenario")?;
    let item = BenchItem::from_scenario(&spec);
    let result = engine.run_report(&item.report, &item.binding, dir);
    ensure(result.outcome == Outcome::Failure, || format!("negative scenario ended {:?}", result.outcome))?;
    ensure(result.iterations_used == 30, || format!("{} iterations", result.iterations_used))?;

    let run = RunDir::new(dir);
    let trajectory = run.load_trajectory().map_err(|e| e.to_string())?;
    let entries = Transcript::load_dir(&run.path(RunDir::TRANSCRIPTS)).map_err(|e| e.to_string())?;
    ensure(trajectory.len() == 30, || format!("{} trajectory entries", trajectory.len()))?;

    let agent: Vec<&TranscriptEntry> = entries.iter().filter(|e| e.stage.starts_with("agent/")).collect();
    for e in &agent {
        let shown = user_text(e).matches(WINDOW_MARKER).count();
        ensure(shown <= window, || format!("{} shows {shown} entries", e.id))?;
    }
    // A propose that follows a verify is a regeneration; any other opens an iteration.
    let mut iteration = 0usize;
    let mut proposes_this_iteration = 0;
    let mut regenerations = 0;
    let mut previous = "";
    for e in &agent {
        if e.stage == "agent/propose" {
            if previous == "agent/verify" {
                proposes_this_iteration += 1;
                regenerations += 1;
                ensure(proposes_this_iteration <= 2, || format!("iteration {iteration} regenerated twice"))?;
            } else {
                iteration += 1;
                proposes_this_iteration = 1;
            }
            let shown = user_text(e).matches(WINDOW_MARKER).count();
            let want = (iteration - 1).min(window);
            ensure(shown == want, || format!("{}: window has {shown} entries in iteration {iteration}, want {want}", e.id))?;
        }
        previous = e.stage.as_str();
    }
    ensure(iteration == 30, || format!("{iteration} iterations seen in transcripts"))?;
    let flagged = trajectory.iter().filter(|t| t.regenerated).count();
    ensure(flagged == regenerations, || format!("{flagged} entries flagged regenerated, {regenerations} in transcripts"))?;

    let confirms = agent.iter().filter(|e| e.stage == "agent/confirm").count();
    let proposed = trajectory.iter().filter(|t| t.advance_proposed).count();
    ensure(confirms == proposed, || format!("{confirms} confirmations for {proposed} proposed advances"))?;
    let mut advances = 0;
    for w in trajectory.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        ensure(b.cluster_index >= a.cluster_index, || format!("cluster index fell at iteration {}", b.iteration))?;
        if b.cluster_index > a.cluster_index {
            advances += 1;
            ensure(b.cluster_index == a.cluster_index + 1 && a.advance_confirmed, || {
                format!("cluster moved at iteration {} without a confirmed advance", b.iteration)
            })?;
        }
        ensure(!a.advance_confirmed || a.advance_proposed, || format!("iteration {} confirmed without a proposal", a.iteration))?;
    }
    ensure(regenerations > 0 && advances > 0, || format!("run exercised {regenerations} regenerations and {advances} advances"))?;
    Ok(format!(
        "30 iterations, windows exact, {regenerations} regeneration(s) at most one each, {advances} confirmed advance(s) of {proposed} proposed"
    ))
}

fn click(backend: &mut SimBackend, label: &str) -> Result<(), String> {
    let frame = backend.observe();
    let elements = frame.sim_elements.unwrap_or_default();
    let el = elements.iter().find(|e| e.content == label).ok_or_else(|| format!("no {label:?} on screen"))?;
    let batch = ActionBatch { actions: vec![Action::ClickPlace { element_index: el.index }], issued_against_frame: frame.sequence };
    match execute_batch(&batch, backend, &elements, frame.sequence).error {
        None => Ok(()),
        Some(e) => Err(format!("clicking {label:?}: {e}")),
    }
}

fn criterion_8() -> Check {
    let spec = positive_scenarios().into_values().next().ok_or("empty scenario bank")?;
    let mut backend = SimBackend::new(Arc::new(spec));

    let title_frame = backend.observe();
    let before = backend.state().digest();
    let batch = ActionBatch { actions: vec![Action::command("/time set night")], issued_against_frame: title_frame.sequence };
    let out = execute_batch(&batch, &mut backend, &title_frame.sim_elements.clone().unwrap_or_default(), title_frame.sequence);
    ensure(matches!(out.error, Some(MacroError::CommandInMenuContext { .. })), || format!("command in menu gave {:?}", out.error))?;
    ensure(out.entries.is_empty() && backend.state().digest() == before, || "command in menu changed the game state".into())?;

    click(&mut backend, "Singleplayer")?;
    click(&mut backend, "Create New World")?;
    click(&mut backend, "More")?;
    let frame = backend.observe();
    let elements: Vec<UiElement> = frame.sim_elements.unwrap_or_default();
    let (action, el) = resolve_click_place(12, &elements).map_err(|e| e.to_string())?;
    ensure(<[f64; 4]>::from(el.bbox) == [0.41, 0.06, 0.60, 0.12], || format!("element 12 has bbox {:?}", el.bbox))?;
    let Action::Click { coordinates } = action else { return Err(format!("resolved to {action:?}")) };
    ensure((coordinates.x - 0.505).abs() < 1e-12 && (coordinates.y - 0.09).abs() < 1e-12, || format!("click at {coordinates:?}"))?;

    // The first click changes the layout, so the second index is stale.
    let batch = ActionBatch {
        actions: vec![Action::ClickPlace { element_index: 12 }, Action::ClickPlace { element_index: 12 }],
        issued_against_frame: frame.sequence,
    };
    let out = execute_batch(&batch, &mut backend, &elements, frame.sequence);
    ensure(out.entries.len() == 1, || format!("{} clicks ran", out.entries.len()))?;
    ensure(matches!(out.error, Some(MacroError::StaleElementIndex { index: 12, .. })), || format!("second click gave {:?}", out.error))?;
    // Indices from an older frame are refused outright.
    let current = backend.observe();
    let batch = ActionBatch { actions: vec![Action::ClickPlace { element_index: 12 }], issued_against_frame: frame.sequence };
    let out = execute_batch(&batch, &mut backend, &elements, current.sequence);
    ensure(matches!(out.error, Some(MacroError::StaleElementIndex { .. })), || format!("old frame gave {:?}", out.error))?;
    Ok("element 12 -> (0.505, 0.09); stale index and command in menu are typed errors".into())
}

fn criterion_9() -> Check {
    let mut syntheses = 0;
    let mut repaired = 0;
    for k in 1..=5 {
        let mut cfg = config();
        cfg.models.synth = format!("{}{k}", crashrepro_scripted::NOISY_PREFIX);
        let engine = Engine::new(cfg, None).map_err(|e| e.to_string())?;
        for spec in engine.scenarios().filter(|s| !s.negative) {
            let item = BenchItem::from_scenario(spec);
            let transcript = Transcript::in_memory(item.key());
            let plan = engine.synthesize(&item.report, &transcript).map_err(|e| format!("noisy {k} {}: {e}", item.key()))?;
            let mut flat: Vec<&String> = plan.clusters.iter().flat_map(|c| &c.steps).collect();
            let mut want: Vec<&String> = plan.final_steps.iter().collect();
            flat.sort();
            want.sort();
            ensure(flat == want, || format!("noisy {k} {}: clusters do not hold the final steps", item.key()))?;
            let critiques = transcript.count_stage("synth/critique/");
            ensure(critiques == 2, || format!("noisy {k} {}: {critiques} critiques", item.key()))?;
            if !plan.warnings.is_empty() {
                repaired += 1;
            }
            syntheses += 1;
        }
    }
    ensure(syntheses == 50, || format!("{syntheses} syntheses"))?;
    ensure(repaired > 0, || "no noisy reply needed repair".into())?;
    Ok(format!("50/50 multisets preserved, 2 critiques each, {repaired} repaired"))
}

fn criterion_10(out: &Path, control: &Path) -> Check {
    let all: Vec<Arc<ScenarioSpec>> = {
        let mut v: Vec<_> = positive_scenarios().into_values().map(Arc::new).collect();
        v.extend(load_scenarios(&root().join("scenarios/negative")).map_err(|e| e.to_string())?.into_values().map(Arc::new));
        v
    };
    let counting = Arc::new(CountingProvider::new(ScriptedModel::new(all)));
    let engine = Engine::new(config(), Some(counting.clone())).map_err(|e| e.to_string())?;
    let items: Vec<BenchItem> = engine.scenarios().map(|s| BenchItem::from_scenario(s)).collect();
    let results = run_bench(&items, &engine, 4, out).map_err(|e| e.to_string())?;
    let solved = results.iter().filter(|r| r.result.outcome.is_success()).count();
    ensure(counting.calls() == 0, || format!("replay bench made {} provider calls", counting.calls()))?;
    ensure(solved == 10, || format!("replay bench solved {solved}"))?;
    let model_calls: usize = results.iter().map(|r| r.result.model_calls).sum();

    // The same counter sees every call when the gateway may record.
    let mut cfg = config();
    cfg.mode = FixtureMode::Record;
    cfg.fixture_dir = control.join("fixtures");
    let recording = Engine::new(cfg, Some(counting.clone())).map_err(|e| e.to_string())?;
    let first = items.iter().find(|i| !i.provenance["negative"].as_bool().unwrap_or(false)).ok_or("no items")?;
    run_bench(std::slice::from_ref(first), &recording, 1, &control.join("runs")).map_err(|e| e.to_string())?;
    ensure(counting.calls() > 0, || "counter saw nothing in record mode".into())?;
    Ok(format!("{} items, {model_calls} model calls answered from fixtures, 0 provider calls", items.len()))
}

#[test]
fn acceptance() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let c1 = criterion_1(&t.join("bench-a"), &t.join("bench-b"));
    let c2 = if c1.is_ok() { criterion_2(&t.join("bench-a")) } else { Err("needs criterion 1's runs".into()) };
    let checks: Vec<(u32, Check)> = vec![
        (1, c1),
        (2, c2),
        (3, criterion_3()),
        (4, criterion_4()),
        (5, criterion_5()),
        (6, criterion_6()),
        (7, criterion_7(&t.join("loop"))),
        (8, criterion_8()),
        (9, criterion_9()),
        (10, criterion_10(&t.join("closure"), &t.join("control"))),
    ];
    let mut unexpected = Vec::new();
    for (n, check) in &checks {
        match check {
            Ok(detail) => println!("criterion {n}: PASS {detail}"),
            Err(detail) => {
                println!("criterion {n}: FAIL {detail}");
                let known = KNOWN_UNATTAINABLE.iter().any(|(k, sig)| k == n && detail.contains(sig));
                if !known {
                    unexpected.push(*n);
                }
            }
        }
    }
    for (n, _) in KNOWN_UNATTAINABLE {
        let now_passes = checks.iter().any(|(k, c)| k == n && c.is_ok());
        assert!(!now_passes, "criterion {n} now passes; drop it from KNOWN_UNATTAINABLE");
    }
    assert!(unexpected.is_empty(), "criteria failed: {unexpected:?}");
}
