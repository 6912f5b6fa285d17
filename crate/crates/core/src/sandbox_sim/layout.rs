//! Per-screen widget layouts. Content strings may contain `{name}`
//! placeholders that are filled from the live state when a frame is observed.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::annotation::{BBox, ElementKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "do", rename_all = "snake_case")]
pub enum WidgetAction {
    /// Clickable but does nothing in the simulator.
    None,
    Goto { screen: String },
    Tab { tab: String },
    /// Advances a setting to the next value in `values`, wrapping around.
    Cycle { setting: String, values: Vec<String> },
    /// Focuses a text field and selects its contents.
    TextInput { field: String },
    CreateWorld,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Widget {
    pub id: String,
    pub kind: ElementKind,
    pub content: String,
    pub bbox: BBox,
    #[serde(default)]
    pub interactable: bool,
    #[serde(default = "no_action")]
    pub action: WidgetAction,
    /// Shown instead of `content` when it renders empty.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub empty_text: Option<String>,
}

fn no_action() -> WidgetAction {
    WidgetAction::None
}

/// Substitutes `{name}` placeholders; unknown names render empty.
pub fn fill(template: &str, values: &BTreeMap<String, String>) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        match rest[open..].find('}') {
            Some(close) => {
                let name = &rest[open + 1..open + close];
                out.push_str(values.get(name).map(String::as_str).unwrap_or(""));
                rest = &rest[open + close + 1..];
            }
            None => {
                out.push_str(&rest[open..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

struct B(Vec<Widget>);

impl B {
    fn label(mut self, id: &str, kind: ElementKind, content: &str, bbox: [f64; 4]) -> Self {
        self.0.push(Widget {
            id: id.into(),
            kind,
            content: content.into(),
            bbox: bbox.into(),
            interactable: false,
            action: WidgetAction::None,
            empty_text: None,
        });
        self
    }

    fn button(mut self, id: &str, content: &str, bbox: [f64; 4], action: WidgetAction) -> Self {
        self.0.push(Widget {
            id: id.into(),
            kind: ElementKind::Text,
            content: content.into(),
            bbox: bbox.into(),
            interactable: true,
            action,
            empty_text: None,
        });
        self
    }

    fn text_box(mut self, id: &str, field: &str, bbox: [f64; 4], empty_text: &str) -> Self {
        self.0.push(Widget {
            id: id.into(),
            kind: ElementKind::Text,
            content: format!("{{{field}}}"),
            bbox: bbox.into(),
            interactable: true,
            action: WidgetAction::TextInput { field: field.into() },
            empty_text: Some(empty_text.into()),
        });
        self
    }
}

fn goto(screen: &str) -> WidgetAction {
    WidgetAction::Goto { screen: screen.into() }
}

fn cycle(setting: &str, values: &[&str]) -> WidgetAction {
    WidgetAction::Cycle { setting: setting.into(), values: values.iter().map(|v| v.to_string()).collect() }
}

fn tab(t: &str) -> WidgetAction {
    WidgetAction::Tab { tab: t.into() }
}

pub const WORLD_TYPES: &[&str] = &["Default", "Superflat", "Large Biomes", "Amplified", "Single Biome"];
pub const GAME_MODES: &[&str] = &["Survival", "Hardcore", "Creative"];
pub const DIFFICULTIES: &[&str] = &["Normal", "Hard", "Peaceful", "Easy"];
pub const ON_OFF: &[&str] = &["ON", "OFF"];

/// Settings of the create-world screens before any change.
pub fn default_settings() -> BTreeMap<String, String> {
    [
        ("world_name", "New World"),
        ("game_mode", "Survival"),
        ("difficulty", "Normal"),
        ("allow_commands", "ON"),
        ("world_type", "Default"),
        ("seed", ""),
        ("generate_structures", "ON"),
        ("bonus_chest", "OFF"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

fn tabs(b: B, order: &[&str]) -> B {
    let boxes = [("game", "Game", [0.21, 0.06, 0.40, 0.12]), ("world", "World", [0.41, 0.06, 0.60, 0.12]), ("more", "More", [0.61, 0.06, 0.80, 0.12])];
    order.iter().fold(b, |b, name| {
        let (id, label, bbox) = boxes.iter().find(|(id, _, _)| id == name).expect("known tab");
        b.button(&format!("tab_{id}"), label, *bbox, tab(id))
    })
}

fn create_buttons(b: B) -> B {
    b.button("create", "Create New World", [0.25, 0.88, 0.49, 0.94], WidgetAction::CreateWorld)
        .button("cancel", "Cancel", [0.51, 0.88, 0.75, 0.94], goto("world_list"))
}

/// The built-in layout of every screen, keyed by layout name.
pub fn standard_layout() -> BTreeMap<String, Vec<Widget>> {
    use ElementKind::{Icon, Text};
    let mut m = BTreeMap::new();
    m.insert(
        "title".to_string(),
        B(vec![])
            .label("logo", Icon, "Minecraft logo", [0.25, 0.05, 0.75, 0.25])
            .button("singleplayer", "Singleplayer", [0.35, 0.35, 0.65, 0.41], goto("world_list"))
            .button("multiplayer", "Multiplayer", [0.35, 0.43, 0.65, 0.49], WidgetAction::None)
            .button("realms", "Minecraft Realms", [0.35, 0.51, 0.65, 0.57], WidgetAction::None)
            .button("options", "Options...", [0.35, 0.62, 0.49, 0.68], WidgetAction::None)
            .button("quit", "Quit Game", [0.51, 0.62, 0.65, 0.68], WidgetAction::None)
            .label("version", Text, "Minecraft {version}", [0.01, 0.95, 0.20, 0.99])
            .0,
    );
    m.insert(
        "world_list".to_string(),
        B(vec![])
            .label("heading", Text, "Select World", [0.40, 0.02, 0.60, 0.07])
            .button("play_selected", "Play Selected World", [0.25, 0.82, 0.49, 0.87], WidgetAction::None)
            .button("create_new", "Create New World", [0.51, 0.82, 0.75, 0.87], goto("create_world/game"))
            .button("back", "Cancel", [0.51, 0.89, 0.75, 0.94], goto("title"))
            .0,
    );
    let heading = |b: B| b.label("heading", Text, "Create New World", [0.35, 0.01, 0.65, 0.05]);
    m.insert(
        "create_world/game".to_string(),
        create_buttons(
            tabs(heading(B(vec![])), &["game", "world", "more"])
                .label("name_label", Text, "World Name", [0.30, 0.18, 0.70, 0.22])
                .text_box("world_name_box", "world_name", [0.30, 0.23, 0.70, 0.29], "")
                .button("game_mode", "Game Mode: {game_mode}", [0.30, 0.33, 0.70, 0.39], cycle("game_mode", GAME_MODES))
                .button("difficulty", "Difficulty: {difficulty}", [0.30, 0.42, 0.70, 0.48], cycle("difficulty", DIFFICULTIES))
                .button("allow_commands", "Allow Commands: {allow_commands}", [0.30, 0.51, 0.70, 0.57], cycle("allow_commands", ON_OFF)),
        )
        .0,
    );
    m.insert(
        "create_world/world".to_string(),
        create_buttons(
            tabs(heading(B(vec![])), &["game", "world", "more"])
                .button("world_type", "World Type: {world_type}", [0.30, 0.18, 0.58, 0.24], cycle("world_type", WORLD_TYPES))
                .button("customize", "Customize", [0.60, 0.18, 0.70, 0.24], WidgetAction::None)
                .label("seed_label", Text, "Seed for the World Generator", [0.30, 0.28, 0.70, 0.32])
                .text_box("seed_box", "seed", [0.30, 0.33, 0.70, 0.39], "Leave blank for a random seed")
                .button(
                    "generate_structures",
                    "Generate Structures: {generate_structures}",
                    [0.30, 0.45, 0.70, 0.51],
                    cycle("generate_structures", ON_OFF),
                )
                .button("bonus_chest", "Bonus Chest: {bonus_chest}", [0.30, 0.54, 0.70, 0.60], cycle("bonus_chest", &["OFF", "ON"])),
        )
        .0,
    );
    // The annotator lists the tabs after the page content here, which puts
    // the World tab at index 12.
    m.insert(
        "create_world/more".to_string(),
        tabs(
            create_buttons(
                heading(B(vec![]))
                    .label("rules_icon", Icon, "Game Rules icon", [0.30, 0.20, 0.34, 0.26])
                    .button("game_rules", "Game Rules", [0.35, 0.20, 0.65, 0.26], WidgetAction::None)
                    .label("experiments_icon", Icon, "Experiments icon", [0.30, 0.30, 0.34, 0.36])
                    .button("experiments", "Experiments", [0.35, 0.30, 0.65, 0.36], WidgetAction::None)
                    .label("packs_icon", Icon, "Data Packs icon", [0.30, 0.40, 0.34, 0.46])
                    .button("data_packs", "Data Packs", [0.35, 0.40, 0.65, 0.46], WidgetAction::None)
                    .label("import_icon", Icon, "Import Settings icon", [0.30, 0.50, 0.34, 0.56])
                    .button("import_settings", "Import Settings", [0.35, 0.50, 0.65, 0.56], WidgetAction::None),
            ),
            &["game", "world", "more"],
        )
        .0,
    );
    m.insert(
        "in_game".to_string(),
        B(vec![])
            .label("crosshair", Icon, "Crosshair", [0.49, 0.49, 0.51, 0.51])
            .label("health", Text, "Health: {health}", [0.30, 0.85, 0.45, 0.89])
            .label("hotbar", Icon, "Hotbar", [0.30, 0.90, 0.70, 0.98])
            .label("chat_line", Text, "{last_message}", [0.01, 0.70, 0.60, 0.74])
            .0,
    );
    m.insert(
        "chat".to_string(),
        B(vec![])
            .label("chat_line", Text, "{last_message}", [0.01, 0.70, 0.60, 0.74])
            .text_box("chat_box", "chat", [0.01, 0.93, 0.99, 0.98], "")
            .0,
    );
    m.insert(
        "pause".to_string(),
        B(vec![])
            .label("heading", Text, "Game Menu", [0.40, 0.10, 0.60, 0.15])
            .button("back_to_game", "Back to Game", [0.30, 0.25, 0.70, 0.31], goto("in_game"))
            .button("options", "Options...", [0.30, 0.40, 0.49, 0.46], WidgetAction::None)
            .button("save_quit", "Save and Quit to Title", [0.30, 0.55, 0.70, 0.61], goto("title"))
            .0,
    );
    m.insert(
        "crash".to_string(),
        B(vec![])
            .label("heading", Text, "Minecraft has crashed!", [0.30, 0.10, 0.70, 0.16])
            .label("crash_id", Text, "{crash_id}", [0.20, 0.30, 0.80, 0.36])
            .label("saved", Text, "The crash report has been saved.", [0.25, 0.50, 0.75, 0.55])
            .0,
    );
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn placeholders() {
        let mut v = BTreeMap::new();
        v.insert("a".to_string(), "1".to_string());
        assert_eq!(fill("x {a} {b} {", &v), "x 1  {");
    }

    #[test]
    fn world_tab_is_element_twelve_on_more() {
        let layout = standard_layout();
        let more = &layout["create_world/more"];
        assert_eq!(more[12].content, "World");
        assert_eq!(<[f64; 4]>::from(more[12].bbox), [0.41, 0.06, 0.60, 0.12]);
        for widgets in layout.values() {
            assert!(widgets.iter().all(|w| w.bbox.is_valid()));
        }
    }
}
