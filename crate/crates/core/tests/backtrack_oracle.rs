use std::collections::BTreeSet;

use chrono::{TimeZone, Utc};
use crashrepro::report_ingest::{backtrack, parse_issue, IssueRecord, TrackerConfig};
use crashrepro_oracles::backtrack::{forward_replay, random_issue};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

fn agrees(issue: &IssueRecord) -> Result<(), String> {
    let snap = backtrack(issue).map_err(|e| e.to_string())?;
    let want = forward_replay(issue);
    if snap.cutoff != want.cutoff {
        return Err(format!("cutoff {} != {}", snap.cutoff, want.cutoff));
    }
    let got = snap.as_issue();
    for (field, value) in &want.fields {
        if &got.field(field) != value {
            return Err(format!("field {field:?}: {:?} != {value:?}", got.field(field)));
        }
    }
    let ids: Vec<String> = snap.comments.iter().map(|c| c.id.clone()).collect();
    if ids != want.comment_ids {
        return Err(format!("comments {ids:?} != {:?}", want.comment_ids));
    }
    if snap.history.len() != want.history_len {
        return Err(format!("history {} != {}", snap.history.len(), want.history_len));
    }
    Ok(())
}

#[test]
fn thousand_random_changelogs_match_forward_replay() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut trusted_cases = 0;
    for case in 0..1000 {
        let issue = random_issue(&mut rng);
        if issue.changelog.iter().any(|c| c.author_roles.iter().any(|r| r.is_trusted())) {
            trusted_cases += 1;
        }
        if let Err(e) = agrees(&issue) {
            panic!("case {case}: {e}\n{issue:#?}");
        }
    }
    assert!(trusted_cases > 300, "generator should mostly produce trusted edits, got {trusted_cases}");
}

/// A helper confirms the report and rewrites the description; afterwards
/// the reporter comments with extra steps. Only the reporter's original text
/// and the comments up to the confirmation survive.
pub fn trusted_edit_then_comment() -> serde_json::Value {
    json!({
        "key": "MC-276621",
        "fields": {
            "summary": "Game crashes when summoning the ender dragon in a superflat world",
            "description": "Steps: create superflat world without structures, summon ender dragon.",
            "created": "2024-07-02T10:00:00.000+0000",
            "customfield_10500": {"value": "Confirmed"},
            "versions": [{"name": "1.21"}],
            "reporter": {"accountId": "r1", "displayName": "Reporter"},
            "comment": {"comments": [
                {"id": "1", "author": {"accountId": "u2", "displayName": "Someone"}, "created": "2024-07-02T11:00:00.000+0000", "body": "Same here."},
                {"id": "2", "author": {"accountId": "r1", "displayName": "Reporter"}, "created": "2024-07-03T09:00:00.000+0000", "body": "It also needs Generate Structures off."}
            ]}
        },
        "changelog": {"histories": [
            {"created": "2024-07-02T10:30:00.000+0000", "author": {"accountId": "r1", "displayName": "Reporter"},
             "items": [{"field": "description", "fromString": "Crash with the dragon.", "toString": "Crash with the dragon in superflat."}]},
            {"created": "2024-07-02T12:00:00.000+0000", "author": {"accountId": "h1", "displayName": "Helper Person [Helper]"},
             "items": [
                {"field": "Confirmation Status", "fromString": "Unconfirmed", "toString": "Confirmed"},
                {"field": "description", "fromString": "Crash with the dragon in superflat.", "toString": "Steps: create superflat world without structures, summon ender dragon."}
             ]}
        ]}
    })
}

#[test]
fn trusted_edit_followed_by_reporter_comment() {
    let config = TrackerConfig::default();
    let issue = parse_issue(&trusted_edit_then_comment(), &config).unwrap();
    let snap = backtrack(&issue).unwrap();
    assert_eq!(snap.cutoff, Utc.with_ymd_and_hms(2024, 7, 2, 12, 0, 0).unwrap());
    assert_eq!(snap.description, "Crash with the dragon in superflat.");
    assert_eq!(snap.confirmation_status.as_str(), "Unconfirmed");
    let kept: BTreeSet<&str> = snap.comments.iter().map(|c| c.id.as_str()).collect();
    assert_eq!(kept, BTreeSet::from(["1"]));
    assert!(snap.reconstruction_note.contains("Dropped 1 comment"));
    agrees(&issue).unwrap();
}
