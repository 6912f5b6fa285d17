use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{general_pages, match_titles, truncate_head, Corpus, KbConfig, TitleMatch};
use crate::llm_gateway::GatewayError;
use crate::prompts::Llm;
use crate::report_ingest::ReportSnapshot;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EntityList {
    pub entities: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryNote {
    pub title: String,
    pub analysis: String,
    pub relevant: bool,
}

fn report_is_empty(s: &ReportSnapshot) -> bool {
    s.title.trim().is_empty() && s.description.trim().is_empty() && s.comments.iter().all(|c| c.body.trim().is_empty())
}

#[derive(Deserialize)]
struct EntitiesReply {
    entities: Vec<String>,
}

/// Game nouns named in the report, trimmed and deduplicated case-insensitively.
pub fn extract_entities(snapshot: &ReportSnapshot, llm: &Llm) -> Result<EntityList, GatewayError> {
    if report_is_empty(snapshot) {
        return Ok(EntityList::default());
    }
    let schema = json!({
        "type": "object",
        "properties": {"entities": {"type": "array", "items": {"type": "string"}}},
        "required": ["entities"]
    });
    let report = snapshot.render();
    let reply = llm.call::<EntitiesReply>("kb/entities", "extract_entities", &[("report", &report)], schema, vec![], None)?;
    let mut seen = BTreeSet::new();
    let entities: Vec<String> = reply
        .value
        .entities
        .into_iter()
        .map(|e| e.trim().to_string())
        .filter(|e| !e.is_empty() && seen.insert(e.to_lowercase()))
        .collect();
    let warning = entities.is_empty().then(|| {
        tracing::warn!("model found no entities in {}", snapshot.source_key);
        "the model returned no entities".to_string()
    });
    Ok(EntityList { entities, warning })
}

#[derive(Deserialize)]
struct TitlesReply {
    titles: Vec<String>,
}

/// Model-chosen candidate titles (at most `max`), followed by `general`.
/// Titles outside the candidate set are dropped.
pub fn select_titles(
    candidates: &[TitleMatch],
    general: &[String],
    snapshot: &ReportSnapshot,
    llm: &Llm,
    max: usize,
) -> Result<Vec<String>, GatewayError> {
    let mut universe: Vec<&str> = Vec::new();
    for m in candidates {
        if !universe.contains(&m.title.as_str()) {
            universe.push(&m.title);
        }
    }
    let mut out: Vec<String> = Vec::new();
    if !universe.is_empty() {
        let schema = json!({
            "type": "object",
            "properties": {"titles": {"type": "array", "items": {"type": "string"}}},
            "required": ["titles"]
        });
        let listing: String = universe.iter().map(|t| format!("- {t}\n")).collect();
        let report = snapshot.render();
        let max_s = max.to_string();
        let reply = llm.call::<TitlesReply>(
            "kb/select",
            "select_titles",
            &[("report", &report), ("candidates", listing.trim_end()), ("max", &max_s)],
            schema,
            vec![],
            None,
        )?;
        for t in reply.value.titles {
            let t = t.trim();
            if !universe.contains(&t) {
                tracing::warn!("model selected {t:?}, which was not a candidate; dropped");
            } else if out.len() < max && !out.iter().any(|o| o == t) {
                out.push(t.to_string());
            }
        }
    }
    for g in general {
        if !out.contains(g) {
            out.push(g.clone());
        }
    }
    Ok(out)
}

#[derive(Deserialize)]
struct NoteReply {
    analysis: String,
    relevant: bool,
}

/// One note per resolvable title, in title order. Missing pages are skipped.
pub fn build_trajectories(
    titles: &[String],
    corpus: &Corpus,
    snapshot: &ReportSnapshot,
    llm: &Llm,
    page_char_budget: usize,
) -> Result<Vec<TrajectoryNote>, GatewayError> {
    let ordered: BTreeSet<&String> = titles.iter().collect();
    let schema = json!({
        "type": "object",
        "properties": {"analysis": {"type": "string"}, "relevant": {"type": "boolean"}},
        "required": ["analysis", "relevant"]
    });
    let report = snapshot.render();
    let mut notes = Vec::new();
    for title in ordered {
        let Some(page) = corpus.get(title) else {
            tracing::warn!("wiki page {title:?} is missing; skipped");
            continue;
        };
        let body = truncate_head(&page.body, page_char_budget);
        let reply = llm.call::<NoteReply>(
            "kb/trajectory",
            "page_trajectory",
            &[("report", &report), ("title", title), ("page", body)],
            schema.clone(),
            vec![],
            None,
        )?;
        notes.push(TrajectoryNote { title: title.clone(), analysis: reply.value.analysis.trim().to_string(), relevant: reply.value.relevant });
    }
    Ok(notes)
}

/// Relevant notes only, in title order.
pub fn render_block(notes: &[TrajectoryNote]) -> String {
    let mut relevant: Vec<&TrajectoryNote> = notes.iter().filter(|n| n.relevant).collect();
    relevant.sort_by(|a, b| a.title.cmp(&b.title));
    relevant.iter().map(|n| format!("### {}\n{}\n", n.title, n.analysis)).collect::<Vec<_>>().join("\n")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retrieval {
    pub entities: EntityList,
    pub matches: Vec<TitleMatch>,
    pub selected: Vec<String>,
    pub notes: Vec<TrajectoryNote>,
    pub block: String,
}

/// Entities, fuzzy matches, title selection plus general pages, then notes.
pub fn retrieve(snapshot: &ReportSnapshot, corpus: &Corpus, llm: &Llm, config: &KbConfig) -> Result<Retrieval, GatewayError> {
    let entities = extract_entities(snapshot, llm)?;
    let matches = match_titles(&entities.entities, corpus, config.threshold, config.top_k);
    let general = general_pages(&snapshot.affected_version, corpus, config);
    let selected = select_titles(&matches, &general, snapshot, llm, config.max_selected)?;
    let notes = build_trajectories(&selected, corpus, snapshot, llm, config.page_char_budget)?;
    let block = render_block(&notes);
    Ok(Retrieval { entities, matches, selected, notes, block })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_keeps_relevant_notes_in_title_order() {
        let notes = vec![
            TrajectoryNote { title: "Water".into(), analysis: "flows".into(), relevant: true },
            TrajectoryNote { title: "Cake".into(), analysis: "tasty".into(), relevant: false },
            TrajectoryNote { title: "Strider".into(), analysis: "hates water".into(), relevant: true },
        ];
        assert_eq!(render_block(&notes), "### Strider\nhates water\n\n### Water\nflows\n");
        assert_eq!(render_block(&[]), "");
    }
}
