//! Replies for the synthesis and retrieval stages.

use std::sync::OnceLock;

use crashrepro::sandbox_sim::ScenarioSpec;
use crashrepro::util::sha256_hex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde_json::{json, Value};

use crate::steps::{is_command_step, is_wait_step, step_text};

const KEYWORDS: &[&str] = &[
    "Superflat",
    "Amplified",
    "Large Biomes",
    "Hardcore",
    "Creative",
    "Thunder",
    "Weather",
    "Seed",
    "Data Pack",
    "Commands",
    "Daylight",
];

pub const SETUP_TITLE: &str = "Setup Minecraft Environment";
pub const PREPARE_TITLE: &str = "Prepare the Scene";
pub const TRIGGER_TITLE: &str = "Trigger the Crash";

pub fn report_text(spec: &ScenarioSpec) -> String {
    let r = &spec.report;
    let mut out = format!("{}\n{}", r.title, r.description);
    for c in &r.comments {
        out.push('\n');
        out.push_str(&c.body);
    }
    out
}

fn title_case(id: &str) -> String {
    id.split('_')
        .map(|w| {
            let mut c = w.chars();
            c.next().map(|f| f.to_uppercase().collect::<String>() + c.as_str()).unwrap_or_default()
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn mentions(haystack_lower: &str, name: &str) -> bool {
    haystack_lower.contains(&name.to_lowercase())
}

/// Vocabulary ids and setting keywords the report mentions.
pub fn entities(spec: Option<&ScenarioSpec>, user: &str) -> Value {
    let text = spec.map(report_text).unwrap_or_else(|| user.to_string()).to_lowercase();
    let mut out: Vec<String> = Vec::new();
    if let Some(s) = spec {
        let v = &s.vocabulary;
        for id in v.entities.iter().chain(&v.blocks).chain(&v.items) {
            let name = id.trim_start_matches("minecraft:");
            if mentions(&text, &name.replace('_', " ")) {
                let t = title_case(name);
                if !out.contains(&t) {
                    out.push(t);
                }
            }
        }
    }
    for k in KEYWORDS {
        if mentions(&text, k) && !out.iter().any(|o| o == k) {
            out.push(k.to_string());
        }
    }
    json!({ "entities": out })
}

fn list_after<'a>(user: &'a str, header: &str) -> Vec<&'a str> {
    let Some(start) = user.find(header) else { return Vec::new() };
    user[start + header.len()..]
        .lines()
        .skip_while(|l| l.trim().is_empty())
        .take_while(|l| l.starts_with("- "))
        .map(|l| l[2..].trim())
        .collect()
}

pub fn select_titles(spec: Option<&ScenarioSpec>, user: &str, system: &str) -> Value {
    let max = max_from_system(system).unwrap_or(usize::MAX);
    let text = spec.map(report_text).unwrap_or_else(|| user.to_string()).to_lowercase();
    let titles: Vec<&str> = list_after(user, "Candidate wiki titles:").into_iter().filter(|t| mentions(&text, t)).take(max).collect();
    json!({ "titles": titles })
}

fn max_from_system(system: &str) -> Option<usize> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"at most (\d+) titles").unwrap());
    re.captures(system).and_then(|c| c[1].parse().ok())
}

fn first_sentences(text: &str, n: usize) -> String {
    let flat = text.split_whitespace().collect::<Vec<_>>().join(" ");
    let mut out = String::new();
    let mut count = 0;
    for part in flat.split_inclusive(". ") {
        out.push_str(part);
        count += 1;
        if count == n {
            break;
        }
    }
    out.trim().to_string()
}

pub fn page_trajectory(spec: Option<&ScenarioSpec>, user: &str) -> Value {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r#"(?s)\nWiki page "([^"\n]*)":\n\n(.*)$"#).unwrap());
    let Some(c) = re.captures(user) else {
        return json!({"analysis": "The page could not be read.", "relevant": false});
    };
    let (title, page) = (&c[1], &c[2]);
    let text = spec.map(report_text).unwrap_or_else(|| user[..c.get(0).unwrap().start()].to_string()).to_lowercase();
    let general = title == "Commands" || title == "Mob" || title.starts_with("Java Edition");
    let relevant = general || mentions(&text, title);
    let analysis = if relevant {
        first_sentences(page, 2)
    } else {
        format!("The page on {title} does not bear on this report.")
    };
    json!({"analysis": analysis, "relevant": relevant})
}

fn is_time_step(text: &str) -> bool {
    text.starts_with("Run the command `/time set")
}

fn is_allow_commands_step(text: &str) -> bool {
    text.starts_with("Click \"Allow Commands")
}

pub fn solution_texts(spec: &ScenarioSpec) -> Vec<String> {
    spec.solution.iter().map(step_text).collect()
}

/// The full solution minus the steps the critiques are meant to restore.
pub fn initial_steps(spec: Option<&ScenarioSpec>, user: &str) -> Value {
    let steps: Vec<String> = match spec {
        Some(s) => solution_texts(s).into_iter().filter(|t| !is_time_step(t) && !is_allow_commands_step(t)).collect(),
        None => {
            let desc = section(user, "Description:\n").unwrap_or(user);
            desc.split(". ").map(|s| s.trim().trim_end_matches('.').to_string()).filter(|s| !s.is_empty()).map(|s| s + ".").collect()
        }
    };
    json!({ "steps": steps })
}

fn section<'a>(text: &'a str, header: &str) -> Option<&'a str> {
    let start = text.find(header)? + header.len();
    let rest = &text[start..];
    Some(rest.split("\n\n").next().unwrap_or(rest))
}

pub fn numbered_steps(user: &str, header: &str) -> Vec<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"^\d+\. (.*)$").unwrap());
    let Some(start) = user.find(header) else { return Vec::new() };
    user[start + header.len()..]
        .lines()
        .skip_while(|l| l.trim().is_empty())
        .map_while(|l| re.captures(l).map(|c| c[1].to_string()))
        .collect()
}

/// Suggests the first missing solution step that `wanted` selects. Draft
/// steps are matched to solution steps in order, so repeated texts keep
/// their positions.
fn missing_step(spec: &ScenarioSpec, draft: &[String], wanted: impl Fn(&str) -> bool, reason: &str) -> Vec<String> {
    let solution = solution_texts(spec);
    let mut at_draft: Vec<Option<usize>> = vec![None; solution.len()];
    let mut p = 0;
    for (j, s) in solution.iter().enumerate() {
        if p < draft.len() && &draft[p] == s {
            at_draft[j] = Some(p);
            p += 1;
        }
    }
    for (i, s) in solution.iter().enumerate() {
        if !wanted(s) || at_draft[i].is_some() {
            continue;
        }
        let at = at_draft[i + 1..].iter().flatten().next().map(|p| p + 1).unwrap_or(draft.len() + 1);
        return vec![format!("Add the step \"{s}\" before step {at}. {reason}")];
    }
    Vec::new()
}

pub fn critique_plan_consistency(spec: Option<&ScenarioSpec>, user: &str) -> Value {
    let draft = numbered_steps(user, "Steps to review:");
    let suggestions = match spec {
        Some(s) => missing_step(s, &draft, is_allow_commands_step, "The commands later on need cheats, which are off for this world."),
        None => Vec::new(),
    };
    json!({ "suggestions": suggestions })
}

pub fn critique_mob_behavior(spec: Option<&ScenarioSpec>, user: &str) -> Value {
    let draft = numbered_steps(user, "Steps to review:");
    let knows_daylight = user.to_lowercase().contains("daylight");
    let suggestions = match spec {
        Some(s) if knows_daylight => {
            missing_step(s, &draft, is_time_step, "The mob burns in daylight and will die before it reaches the block.")
        }
        _ => Vec::new(),
    };
    json!({ "suggestions": suggestions })
}

/// Applies every "Add the step ... before step N" suggestion to the current steps.
pub fn rewrite(user: &str) -> Value {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r#"Add the step "(.*)" before step (\d+)"#).unwrap());
    let mut steps = numbered_steps(user, "Current steps:");
    let mut inserts: Vec<(usize, String)> = list_after(user, "suggestions:")
        .into_iter()
        .filter_map(|s| re.captures(s).and_then(|c| Some((c[2].parse::<usize>().ok()?, c[1].to_string()))))
        .collect();
    inserts.sort_by(|a, b| b.0.cmp(&a.0));
    for (at, step) in inserts {
        let at = at.saturating_sub(1).min(steps.len());
        steps.insert(at, step);
    }
    json!({ "steps": steps })
}

/// Menu work, then scene preparation, then the last command onwards.
pub fn cluster_steps(steps: &[String]) -> Vec<(String, Vec<String>)> {
    let split = steps.iter().position(|s| is_command_step(s) || is_wait_step(s)).unwrap_or(steps.len());
    let (a, b) = steps.split_at(split);
    let mut out: Vec<(String, Vec<String>)> = Vec::new();
    if b.is_empty() {
        if let Some((last, head)) = a.split_last() {
            out.push((SETUP_TITLE.into(), head.to_vec()));
            out.push((TRIGGER_TITLE.into(), vec![last.clone()]));
        }
    } else {
        let last_cmd = b.iter().rposition(|s| is_command_step(s)).unwrap_or(0);
        out.push((SETUP_TITLE.into(), a.to_vec()));
        out.push((PREPARE_TITLE.into(), b[..last_cmd].to_vec()));
        out.push((TRIGGER_TITLE.into(), b[last_cmd..].to_vec()));
    }
    out.retain(|(_, s)| !s.is_empty());
    out
}

pub fn clusters_json(clusters: &[(String, Vec<String>)]) -> Value {
    json!({ "clusters": clusters.iter().map(|(t, s)| json!({"title": t, "steps": s})).collect::<Vec<_>>() })
}

pub fn parse_clusters(user: &str) -> Vec<(String, Vec<String>)> {
    let mut out: Vec<(String, Vec<String>)> = Vec::new();
    for line in user.lines() {
        if let Some(rest) = line.strip_prefix("Cluster ") {
            if let Some((_, title)) = rest.split_once(": ") {
                out.push((title.to_string(), Vec::new()));
                continue;
            }
        }
        if let (Some(s), Some(last)) = (line.strip_prefix("- "), out.last_mut()) {
            last.1.push(s.to_string());
        }
    }
    out
}

/// Drops, duplicates or moves one step, the kind of slip a real model makes.
pub fn perturb(clusters: &mut Vec<(String, Vec<String>)>, noise_seed: u64, salt: &str) {
    let digest = sha256_hex(salt.as_bytes());
    let salt_bits = u64::from_str_radix(&digest[..16], 16).unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed ^ salt_bits);
    let total: usize = clusters.iter().map(|c| c.1.len()).sum();
    if total == 0 {
        return;
    }
    let pick = |rng: &mut ChaCha8Rng, clusters: &Vec<(String, Vec<String>)>| -> (usize, usize) {
        let mut n = rng.random_range(0..total);
        for (ci, c) in clusters.iter().enumerate() {
            if n < c.1.len() {
                return (ci, n);
            }
            n -= c.1.len();
        }
        unreachable!("index within total")
    };
    let (ci, si) = pick(&mut rng, clusters);
    match rng.random_range(0..3) {
        0 => {
            clusters[ci].1.remove(si);
        }
        1 => {
            let s = clusters[ci].1[si].clone();
            let target = rng.random_range(0..clusters.len());
            clusters[target].1.push(s);
        }
        _ => {
            let s = clusters[ci].1.remove(si);
            let target = rng.random_range(0..clusters.len());
            clusters[target].1.insert(0, s);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn clusters_split_menu_scene_and_trigger() {
        let steps = s(&[
            "Click \"Singleplayer\".",
            "Click \"Create New World\".",
            "Run the command `/time set night`.",
            "Run the command `/setblock ~ ~ ~8 minecraft:lava`.",
            "Run the command `/summon minecraft:zombie ~ ~ ~1`.",
            "Wait 5 seconds.",
        ]);
        let c = cluster_steps(&steps);
        assert_eq!(c.len(), 3);
        assert_eq!(c[0].1.len(), 2);
        assert_eq!(c[1].1.len(), 2);
        assert_eq!(c[2].1, s(&["Run the command `/summon minecraft:zombie ~ ~ ~1`.", "Wait 5 seconds."]));

        let menu_only = s(&["Click \"Singleplayer\".", "Click \"More\".", "Click \"Data Packs\"."]);
        let c = cluster_steps(&menu_only);
        assert_eq!(c.iter().map(|x| x.0.as_str()).collect::<Vec<_>>(), [SETUP_TITLE, TRIGGER_TITLE]);
        assert!(cluster_steps(&s(&["Click \"X\"."])).iter().all(|x| !x.1.is_empty()));
    }

    #[test]
    fn rewrite_inserts_before_the_named_step() {
        let user = "Current steps:\n1. A.\n2. C.\n\nReview (mob behavior) suggestions:\n- Add the step \"B.\" before step 2. Because.\n- Add the step \"D.\" before step 3. End.";
        assert_eq!(rewrite(user)["steps"], json!(["A.", "B.", "C.", "D."]));
    }

    #[test]
    fn cluster_listing_parses_back() {
        let c = vec![("One".to_string(), s(&["a", "b"])), ("Two".to_string(), s(&["c"]))];
        let text = crashrepro::step_synthesizer::render_clusters(
            &c.iter().map(|(t, st)| crashrepro::step_synthesizer::StepCluster { title: t.clone(), steps: st.clone() }).collect::<Vec<_>>(),
        );
        assert_eq!(parse_clusters(&format!("Clusters:\n{text}")), c);
    }
}
