use std::path::PathBuf;
use std::sync::Arc;

use crashrepro::sandbox_sim::{load_scenarios, run_solution};

fn bank() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

#[test]
fn every_positive_solution_crashes_with_its_rule() {
    let scenarios = load_scenarios(&bank()).unwrap();
    assert_eq!(scenarios.len(), 10);
    for (id, spec) in scenarios {
        assert!(!spec.negative, "{id}");
        let ids: Vec<String> = spec.rules.iter().map(|r| r.crash_id.clone()).collect();
        let (_, crash) = run_solution(Arc::new(spec)).unwrap_or_else(|e| panic!("{id}: {e}"));
        let crash = crash.unwrap_or_else(|| panic!("{id}: solution did not crash"));
        assert!(ids.contains(&crash.crash_id), "{id}: {}", crash.crash_id);
    }
}

#[test]
fn negative_scenarios_never_crash() {
    let scenarios = load_scenarios(&bank().join("negative")).unwrap();
    assert!(!scenarios.is_empty());
    for (id, spec) in scenarios {
        assert!(spec.negative, "{id}");
        let (_, crash) = run_solution(Arc::new(spec)).unwrap();
        assert!(crash.is_none(), "{id}");
    }
}
