//! The scripted model driven through the engine in live mode, without fixtures.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use crashrepro::bench_harness::BenchItem;
use crashrepro::llm_gateway::{ChatMessage, ChatRequest, FixtureMode, GatewayError, MessageRole, Provider, Transcript};
use crashrepro::sandbox_sim::{load_scenarios, ScenarioSpec};
use crashrepro::{Engine, EngineConfig};
use crashrepro_scripted::{ScriptedModel, MODEL_ID, NOISY_PREFIX};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn scenarios() -> Vec<Arc<ScenarioSpec>> {
    let mut all: Vec<_> = load_scenarios(&root().join("scenarios")).unwrap().into_values().map(Arc::new).collect();
    all.extend(load_scenarios(&root().join("scenarios/negative")).unwrap().into_values().map(Arc::new));
    all
}

fn live_engine(synth_model: &str) -> Engine {
    let mut cfg = EngineConfig::load(&root().join("engine.toml")).unwrap();
    cfg.mode = FixtureMode::Live;
    cfg.models.synth = synth_model.to_string();
    cfg.models.agent = MODEL_ID.to_string();
    Engine::new(cfg, Some(Arc::new(ScriptedModel::new(scenarios())))).unwrap()
}

fn item(engine: &Engine, id: &str) -> BenchItem {
    BenchItem::from_scenario(engine.scenario(id).unwrap())
}

fn reply_text(t: &Transcript, stage: &str) -> String {
    t.entries().into_iter().find(|e| e.stage == stage).and_then(|e| e.response).map(|r| r.text).unwrap_or_default()
}

#[test]
fn critique_restores_the_night_step() {
    let engine = live_engine(MODEL_ID);
    let it = item(&engine, "zombie-lava");
    let transcript = Transcript::in_memory(it.key());
    let plan = engine.synthesize(&it.report, &transcript).unwrap();
    assert!(!reply_text(&transcript, "synth/initial").contains("/time set night"));
    assert!(plan.final_steps.iter().any(|s| s.contains("/time set night")), "{:?}", plan.final_steps);
    assert_eq!(transcript.count_stage("synth/critique/"), 2);
    assert!(plan.warnings.is_empty(), "{:?}", plan.warnings);
}

#[test]
fn noisy_clusters_are_repaired_back_to_the_draft() {
    let mut repaired = 0;
    for k in 1..=5 {
        let engine = live_engine(&format!("{NOISY_PREFIX}{k}"));
        let it = item(&engine, "fox-berries");
        let transcript = Transcript::in_memory(it.key());
        let plan = engine.synthesize(&it.report, &transcript).unwrap();
        let mut flat: Vec<_> = plan.clusters.iter().flat_map(|c| c.steps.clone()).collect();
        let mut want = plan.final_steps.clone();
        flat.sort();
        want.sort();
        assert_eq!(flat, want, "noise {k}");
        repaired += usize::from(!plan.warnings.is_empty());
    }
    assert!(repaired > 0);
}

#[test]
fn live_run_reaches_the_crash() {
    let engine = live_engine(MODEL_ID);
    let it = item(&engine, "strider-water");
    let dir = tempfile::tempdir().unwrap();
    let result = engine.run_report(&it.report, &it.binding, dir.path());
    assert!(result.outcome.is_success(), "{:?}", result.outcome);
    assert!(result.iterations_used <= 30);
    assert!(dir.path().join("actions.jsonl").exists());
}

#[test]
fn unknown_task_is_a_client_error() {
    let model = ScriptedModel::new(scenarios());
    let request = ChatRequest::new(MODEL_ID, vec![ChatMessage::system("TASK: juggle"), ChatMessage::user("hello")]);
    assert_eq!(request.messages[0].role, MessageRole::System);
    match model.send(&request) {
        Err(GatewayError::Provider { status, .. }) => assert_eq!(status, 400),
        other => panic!("{other:?}"),
    }
}
