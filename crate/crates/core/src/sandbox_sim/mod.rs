//! A deterministic stand-in for the game: menu state machine, a sparse block
//! world with a few moving entities, a chat-command subset and
//! scenario-defined crash rules.
//!
//! Time is logical. One tick is 50 ms and `sim_time(tick)` maps ticks onto a
//! fixed epoch, so logs of identical runs are byte-identical. The world only
//! ticks while a world is open and not paused.

pub mod command;
pub mod layout;
pub mod scenario;

use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::{DateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::annotation::{Frame, FrameSource, Point, UiElement};
use crate::macro_api::{
    execute_batch, Action, ActionBatch, Backend, BackendEvent, CrashReport, InputContext, Key, LogRecord, MacroError,
    Primitive, DEFAULT_CHAT_KEY,
};
use crate::util::{canonical_json, sha256_hex};

pub use command::{parse_command, Command, Coord, GameMode, ParseError, Pos3, Selector, Vocabulary, Weather, TIME_ALIASES};
pub use layout::{default_settings, standard_layout, Widget, WidgetAction};
pub use scenario::{
    find_scenario, load_scenario, load_scenarios, BlockSpec, CrashRule, EntitySpec, InitialState, Motion, ScenarioComment,
    ScenarioError, ScenarioReport, ScenarioSpec, SolutionStep, Trigger,
};

pub const TICKS_PER_SECOND: u64 = 20;
pub const TICK_MS: i64 = 50;
/// Touch distance between an entity position and a block centre.
pub const TOUCH_DISTANCE: f64 = 1.0;
/// Daylight ticks after which a burning mob dies.
pub const BURN_TICKS: u32 = 40;
const PLAYER_STEP: f64 = 0.2;
const MAX_FIELD_LEN: usize = 32;
const MAX_CHAT_LEN: usize = 256;

/// Wall-clock time of logical tick `tick`: 2024-01-01T00:00:00Z + 50 ms per tick.
pub fn sim_time(tick: u64) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap() + chrono::Duration::milliseconds(tick as i64 * TICK_MS)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "screen", rename_all = "snake_case")]
pub enum Screen {
    TitleScreen,
    WorldList,
    CreateWorld { tab: CreateTab },
    InGame,
    ChatOpen,
    PauseMenu,
    CrashScreen { crash_id: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CreateTab {
    Game,
    World,
    More,
}

impl Screen {
    pub fn layout_key(&self) -> String {
        match self {
            Screen::TitleScreen => "title".into(),
            Screen::WorldList => "world_list".into(),
            Screen::CreateWorld { tab: CreateTab::Game } => "create_world/game".into(),
            Screen::CreateWorld { tab: CreateTab::World } => "create_world/world".into(),
            Screen::CreateWorld { tab: CreateTab::More } => "create_world/more".into(),
            Screen::InGame => "in_game".into(),
            Screen::ChatOpen => "chat".into(),
            Screen::PauseMenu => "pause".into(),
            Screen::CrashScreen { .. } => "crash".into(),
        }
    }

    pub fn from_layout_key(key: &str) -> Option<Screen> {
        Some(match key {
            "title" => Screen::TitleScreen,
            "world_list" => Screen::WorldList,
            "create_world/game" | "create_world" => Screen::CreateWorld { tab: CreateTab::Game },
            "create_world/world" => Screen::CreateWorld { tab: CreateTab::World },
            "create_world/more" => Screen::CreateWorld { tab: CreateTab::More },
            "in_game" => Screen::InGame,
            "chat" => Screen::ChatOpen,
            "pause" => Screen::PauseMenu,
            _ => return None,
        })
    }

    fn world_running(&self) -> bool {
        matches!(self, Screen::InGame | Screen::ChatOpen)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: u32,
    #[serde(rename = "type")]
    pub entity_type: String,
    pub position: [f64; 3],
    pub alive: bool,
    #[serde(default)]
    pub burn_ticks: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Player {
    pub position: [f64; 3],
    pub health: u32,
    pub gamemode: GameMode,
    #[serde(default)]
    pub inventory: BTreeMap<String, u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub screen: Screen,
    pub settings: BTreeMap<String, String>,
    #[serde(with = "block_map")]
    pub world: BTreeMap<[i64; 3], String>,
    pub entities: Vec<Entity>,
    pub player: Player,
    pub time_of_day: u32,
    pub weather: Weather,
    pub rng_seed: u64,
    /// Ticks the open world has run.
    pub world_tick: u64,
    /// Logical ticks since start, in menus too.
    pub clock: u64,
    pub focus: Option<String>,
    pub selected: bool,
    pub chat: String,
    pub last_message: String,
    pub trail: Vec<String>,
    pub executed_commands: Vec<String>,
    pub next_entity_id: u32,
    pub ui_epoch: u64,
    pub crash: Option<CrashReport>,
}

mod block_map {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    #[derive(Serialize, Deserialize)]
    struct Entry {
        pos: [i64; 3],
        block: String,
    }

    pub fn serialize<S: Serializer>(m: &BTreeMap<[i64; 3], String>, s: S) -> Result<S::Ok, S::Error> {
        let v: Vec<Entry> = m.iter().map(|(pos, block)| Entry { pos: *pos, block: block.clone() }).collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<[i64; 3], String>, D::Error> {
        Ok(Vec::<Entry>::deserialize(d)?.into_iter().map(|e| (e.pos, e.block)).collect())
    }
}

impl SimState {
    pub fn new(scenario: &ScenarioSpec) -> Self {
        let mut settings = default_settings();
        settings.extend(scenario.initial.settings.clone());
        SimState {
            screen: Screen::TitleScreen,
            settings,
            world: BTreeMap::new(),
            entities: Vec::new(),
            player: Player {
                position: scenario.initial.player_pos,
                health: 20,
                gamemode: GameMode::Survival,
                inventory: BTreeMap::new(),
            },
            time_of_day: scenario.initial.time_of_day,
            weather: Weather::Clear,
            rng_seed: scenario.initial.rng_seed,
            world_tick: 0,
            clock: 0,
            focus: None,
            selected: false,
            chat: String::new(),
            last_message: String::new(),
            trail: Vec::new(),
            executed_commands: Vec::new(),
            next_entity_id: 0,
            ui_epoch: 0,
            crash: None,
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        sha256_hex(canonical_json(self).expect("state serializes").as_bytes())
    }

    pub fn is_day(&self) -> bool {
        self.time_of_day < 12000
    }
}

enum CompiledTrigger {
    Touch { entity_type: String, block: String },
    Command(regex::Regex),
    Sequence(Vec<regex::Regex>),
    Tick(u64),
    All(Vec<CompiledTrigger>),
}

fn compile_trigger(t: &Trigger) -> CompiledTrigger {
    let re = |p: &str| scenario::compile(p).expect("patterns are checked when the scenario loads");
    match t {
        Trigger::EntityTouchesBlock { entity_type, block } => {
            CompiledTrigger::Touch { entity_type: entity_type.clone(), block: block.clone() }
        }
        Trigger::CommandExecuted { pattern } => CompiledTrigger::Command(re(pattern)),
        Trigger::UiSequence { events } => CompiledTrigger::Sequence(events.iter().map(|p| re(p)).collect()),
        Trigger::TickReached { n } => CompiledTrigger::Tick(*n),
        Trigger::AllOf { triggers } => CompiledTrigger::All(triggers.iter().map(compile_trigger).collect()),
    }
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn block_centre(pos: [i64; 3]) -> [f64; 3] {
    [pos[0] as f64 + 0.5, pos[1] as f64 + 0.5, pos[2] as f64 + 0.5]
}

impl CompiledTrigger {
    fn matches(&self, s: &SimState) -> bool {
        match self {
            CompiledTrigger::Touch { entity_type, block } => s.entities.iter().filter(|e| e.alive && &e.entity_type == entity_type).any(|e| {
                s.world.iter().any(|(pos, b)| b == block && distance(e.position, block_centre(*pos)) < TOUCH_DISTANCE)
            }),
            CompiledTrigger::Command(re) => s.executed_commands.iter().any(|c| re.is_match(c)),
            CompiledTrigger::Sequence(patterns) => {
                let mut it = s.trail.iter();
                patterns.iter().all(|p| it.any(|ev| p.is_match(ev)))
            }
            CompiledTrigger::Tick(n) => s.world_tick >= *n,
            CompiledTrigger::All(ts) => ts.iter().all(|t| t.matches(s)),
        }
    }
}

/// The simulator behind the [`Backend`] interface.
pub struct SimBackend {
    scenario: Arc<ScenarioSpec>,
    layout: BTreeMap<String, Vec<Widget>>,
    rules: Vec<(String, CompiledTrigger)>,
    state: SimState,
    frame_seq: u64,
}

impl SimBackend {
    pub fn new(scenario: Arc<ScenarioSpec>) -> Self {
        let mut layout = standard_layout();
        layout.extend(scenario.ui_layout.clone());
        let rules = scenario.rules.iter().map(|r| (r.crash_id.clone(), compile_trigger(&r.trigger))).collect();
        let state = SimState::new(&scenario);
        Self { scenario, layout, rules, state, frame_seq: 0 }
    }

    pub fn scenario(&self) -> &ScenarioSpec {
        &self.scenario
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    /// Current screen's elements with placeholders filled in.
    pub fn elements(&self) -> Vec<UiElement> {
        let mut values = self.state.settings.clone();
        values.insert("version".into(), self.scenario.report.version.clone());
        values.insert("health".into(), self.state.player.health.to_string());
        values.insert("chat".into(), self.state.chat.clone());
        values.insert("last_message".into(), self.state.last_message.clone());
        if let Screen::CrashScreen { crash_id } = &self.state.screen {
            values.insert("crash_id".into(), crash_id.clone());
        }
        self.layout
            .get(&self.state.screen.layout_key())
            .map(|widgets| {
                widgets
                    .iter()
                    .enumerate()
                    .map(|(i, w)| {
                        let mut content = layout::fill(&w.content, &values);
                        if content.trim().is_empty() {
                            content = w.empty_text.clone().unwrap_or_default();
                        }
                        UiElement { index: i as u32, kind: w.kind, content, bbox: w.bbox, interactable: w.interactable }
                    })
                    .collect()
            })
            .unwrap_or_default()
    }

    fn set_screen(&mut self, screen: Screen, events: &mut Vec<BackendEvent>) {
        if self.state.screen == screen {
            return;
        }
        let key = screen.layout_key();
        self.state.screen = screen;
        self.state.focus = None;
        self.state.selected = false;
        self.state.ui_epoch += 1;
        self.state.trail.push(format!("screen:{key}"));
        events.push(BackendEvent::Screen { to: key });
    }

    fn check_rules(&mut self, events: &mut Vec<BackendEvent>) {
        if self.state.crash.is_some() {
            return;
        }
        let hit = self.rules.iter().find(|(_, t)| t.matches(&self.state)).map(|(id, _)| id.clone());
        if let Some(crash_id) = hit {
            let report = CrashReport { crash_id: crash_id.clone(), tick: self.state.clock };
            self.set_screen(Screen::CrashScreen { crash_id: crash_id.clone() }, events);
            events.push(BackendEvent::Crash { crash_id, tick: report.tick });
            self.state.crash = Some(report);
        }
    }

    /// Advances logical time by one tick; the world moves only while it runs.
    pub fn step(&mut self) -> Vec<BackendEvent> {
        let mut events = Vec::new();
        if self.state.crash.is_some() {
            return events;
        }
        self.state.clock += 1;
        if !self.state.screen.world_running() {
            return events;
        }
        self.state.world_tick += 1;
        self.state.time_of_day = (self.state.time_of_day + 1) % 24000;
        let scenario = self.scenario.clone();
        for i in 0..self.state.entities.len() {
            if !self.state.entities[i].alive {
                continue;
            }
            let etype = self.state.entities[i].entity_type.clone();
            if let Some(m) = scenario.motion.iter().find(|m| m.entity_type == etype) {
                let pos = self.state.entities[i].position;
                let target = self
                    .state
                    .world
                    .iter()
                    .filter(|(_, b)| **b == m.toward_block)
                    .map(|(p, _)| block_centre(*p))
                    .min_by(|a, b| distance(pos, *a).total_cmp(&distance(pos, *b)));
                if let Some(t) = target {
                    let d = distance(pos, t);
                    if d > 0.0 {
                        let f = m.speed.min(d) / d;
                        self.state.entities[i].position = [pos[0] + (t[0] - pos[0]) * f, pos[1] + (t[1] - pos[1]) * f, pos[2] + (t[2] - pos[2]) * f];
                    }
                }
            }
            if scenario.daylight_burning.contains(&etype) && self.state.is_day() && self.state.weather == Weather::Clear {
                let e = &mut self.state.entities[i];
                e.burn_ticks += 1;
                if e.burn_ticks >= BURN_TICKS {
                    e.alive = false;
                    events.push(BackendEvent::Death { entity: etype.clone(), cause: "burned in daylight".into() });
                }
            } else {
                self.state.entities[i].burn_ticks = 0;
            }
        }
        self.check_rules(&mut events);
        events
    }

    fn create_world(&mut self, events: &mut Vec<BackendEvent>) {
        let scenario = std::sync::Arc::clone(&self.scenario);
        let init = &scenario.initial;
        self.state.world = init.blocks.iter().map(|b| (b.pos, b.block.clone())).collect();
        self.state.entities.clear();
        self.state.next_entity_id = 0;
        for e in &init.entities {
            self.spawn(&e.entity_type, e.pos);
        }
        self.state.player.position = init.player_pos;
        self.state.player.health = 20;
        self.state.player.gamemode = match self.state.settings.get("game_mode").map(String::as_str) {
            Some("Creative") => GameMode::Creative,
            _ => GameMode::Survival,
        };
        self.state.time_of_day = init.time_of_day;
        self.state.world_tick = 0;
        self.state.last_message.clear();
        for (k, v) in self.state.settings.clone() {
            self.state.trail.push(format!("world:{k}={v}"));
        }
        let name = self.state.settings.get("world_name").cloned().unwrap_or_default();
        events.push(BackendEvent::World { detail: format!("created world {name:?}") });
        self.set_screen(Screen::InGame, events);
    }

    fn spawn(&mut self, entity_type: &str, position: [f64; 3]) {
        self.state.entities.push(Entity {
            id: self.state.next_entity_id,
            entity_type: entity_type.to_string(),
            position,
            alive: true,
            burn_ticks: 0,
        });
        self.state.next_entity_id += 1;
    }

    fn click(&mut self, point: Point) -> Vec<BackendEvent> {
        let mut events = Vec::new();
        let key = self.state.screen.layout_key();
        let hit = self
            .layout
            .get(&key)
            .and_then(|ws| ws.iter().find(|w| w.interactable && w.bbox.contains(point)))
            .cloned();
        let Some(w) = hit else {
            events.push(BackendEvent::NoEffect { reason: format!("nothing to click at ({:.3}, {:.3})", point.x, point.y) });
            return events;
        };
        self.state.trail.push(format!("widget:{}", w.id));
        match &w.action {
            WidgetAction::None => events.push(BackendEvent::NoEffect { reason: format!("{} does nothing here", w.id) }),
            WidgetAction::Goto { screen } => {
                events.push(BackendEvent::Widget { id: w.id.clone() });
                match Screen::from_layout_key(screen) {
                    Some(s) => self.set_screen(s, &mut events),
                    None => events.push(BackendEvent::NoEffect { reason: format!("unknown screen {screen}") }),
                }
            }
            WidgetAction::Tab { tab } => {
                events.push(BackendEvent::Widget { id: w.id.clone() });
                if let Some(s) = Screen::from_layout_key(&format!("create_world/{tab}")) {
                    self.set_screen(s, &mut events);
                }
            }
            WidgetAction::Cycle { setting, values } => {
                events.push(BackendEvent::Widget { id: w.id.clone() });
                let current = self.state.settings.get(setting).cloned().unwrap_or_default();
                let next = match values.iter().position(|v| *v == current) {
                    Some(i) => values[(i + 1) % values.len()].clone(),
                    None => values.first().cloned().unwrap_or_default(),
                };
                self.state.settings.insert(setting.clone(), next.clone());
                self.state.trail.push(format!("setting:{setting}={next}"));
                events.push(BackendEvent::Setting { id: setting.clone(), value: next });
            }
            WidgetAction::TextInput { field } => {
                events.push(BackendEvent::Widget { id: w.id.clone() });
                if field != "chat" {
                    self.state.focus = Some(field.clone());
                    self.state.selected = true;
                }
            }
            WidgetAction::CreateWorld => {
                events.push(BackendEvent::Widget { id: w.id.clone() });
                self.create_world(&mut events);
            }
        }
        events
    }

    fn write(&mut self, text: &str) -> Vec<BackendEvent> {
        let mut events = Vec::new();
        match (&self.state.screen, self.state.focus.clone()) {
            (Screen::ChatOpen, _) => {
                let room = MAX_CHAT_LEN.saturating_sub(self.state.chat.chars().count());
                self.state.chat.extend(text.chars().take(room));
                events.push(BackendEvent::Text { target: "chat".into(), value: self.state.chat.clone() });
            }
            (Screen::CreateWorld { .. }, Some(field)) => {
                let mut value = if self.state.selected { String::new() } else { self.state.settings.get(&field).cloned().unwrap_or_default() };
                self.state.selected = false;
                let room = MAX_FIELD_LEN.saturating_sub(value.chars().count());
                value.extend(text.chars().take(room));
                self.state.settings.insert(field.clone(), value.clone());
                self.state.trail.push(format!("setting:{field}={value}"));
                events.push(BackendEvent::Text { target: field, value });
            }
            _ => events.push(BackendEvent::NoEffect { reason: "no text field has focus".into() }),
        }
        events
    }

    fn chat_key(&self) -> Key {
        self.scenario.chat_key.unwrap_or(DEFAULT_CHAT_KEY)
    }

    fn press(&mut self, keys: &[Key], hold_seconds: Option<f64>) -> Vec<BackendEvent> {
        let mut events = Vec::new();
        let Some(key) = keys.iter().rev().find(|k| !k.is_modifier()).copied() else {
            events.push(BackendEvent::NoEffect { reason: "only modifiers pressed".into() });
            return events;
        };
        let hold_ticks = hold_seconds.map(|t| (t * TICKS_PER_SECOND as f64).round() as u64).unwrap_or(0);
        match (&self.state.screen, key) {
            (Screen::WorldList, Key::Escape) => self.set_screen(Screen::TitleScreen, &mut events),
            (Screen::CreateWorld { .. }, Key::Escape) => self.set_screen(Screen::WorldList, &mut events),
            (Screen::CreateWorld { .. }, Key::Backspace) => {
                if let Some(field) = self.state.focus.clone() {
                    let mut value = if self.state.selected { String::new() } else { self.state.settings.get(&field).cloned().unwrap_or_default() };
                    self.state.selected = false;
                    value.pop();
                    self.state.settings.insert(field.clone(), value.clone());
                    events.push(BackendEvent::Text { target: field, value });
                } else {
                    events.push(BackendEvent::NoEffect { reason: "no text field has focus".into() });
                }
            }
            (Screen::InGame, Key::Escape) => self.set_screen(Screen::PauseMenu, &mut events),
            (Screen::PauseMenu, Key::Escape) => self.set_screen(Screen::InGame, &mut events),
            (Screen::InGame, k) if k == self.chat_key() || k == Key::Slash => {
                self.state.chat = if k == Key::Slash { "/".into() } else { String::new() };
                self.set_screen(Screen::ChatOpen, &mut events);
            }
            (Screen::InGame, Key::W | Key::A | Key::S | Key::D) if hold_ticks > 0 => {
                let dir = match key {
                    Key::W => [0.0, 0.0, PLAYER_STEP],
                    Key::S => [0.0, 0.0, -PLAYER_STEP],
                    Key::A => [PLAYER_STEP, 0.0, 0.0],
                    _ => [-PLAYER_STEP, 0.0, 0.0],
                };
                events.push(BackendEvent::Input { detail: format!("held {key} for {hold_ticks} ticks") });
                for _ in 0..hold_ticks {
                    let p = &mut self.state.player.position;
                    *p = [p[0] + dir[0], p[1] + dir[1], p[2] + dir[2]];
                    events.extend(self.step());
                    if self.state.crash.is_some() {
                        break;
                    }
                }
                return events;
            }
            (Screen::ChatOpen, Key::Escape) => {
                self.state.chat.clear();
                self.set_screen(Screen::InGame, &mut events);
            }
            (Screen::ChatOpen, Key::Backspace) => {
                self.state.chat.pop();
                events.push(BackendEvent::Text { target: "chat".into(), value: self.state.chat.clone() });
            }
            (Screen::ChatOpen, Key::Enter) => self.submit_chat(&mut events),
            (_, k) => events.push(BackendEvent::NoEffect { reason: format!("{k} does nothing here") }),
        }
        for _ in 0..hold_ticks {
            events.extend(self.step());
        }
        events
    }

    fn submit_chat(&mut self, events: &mut Vec<BackendEvent>) {
        let text = std::mem::take(&mut self.state.chat).split_whitespace().collect::<Vec<_>>().join(" ");
        if text.starts_with('/') {
            match self.run_command(&text) {
                Ok(feedback) => {
                    self.state.executed_commands.push(text.clone());
                    self.state.trail.push(format!("command:{text}"));
                    self.state.last_message = feedback;
                    events.push(BackendEvent::CommandAccepted { text });
                }
                Err(message) => {
                    self.state.last_message = message.clone();
                    events.push(BackendEvent::CommandRejected { text, message });
                }
            }
        } else if !text.is_empty() {
            self.state.last_message = format!("<Player> {text}");
            events.push(BackendEvent::Text { target: "chat_log".into(), value: self.state.last_message.clone() });
        }
        self.set_screen(Screen::InGame, events);
        self.run_death_checks(events);
    }

    fn run_death_checks(&mut self, events: &mut Vec<BackendEvent>) {
        if self.state.player.health == 0 {
            events.push(BackendEvent::Death { entity: "player".into(), cause: "killed".into() });
            self.state.player.health = 20;
            self.state.player.position = self.scenario.initial.player_pos;
        }
    }

    fn run_command(&mut self, text: &str) -> Result<String, String> {
        let cmd = parse_command(text, &self.scenario.vocabulary)
            .map_err(|e| format!("Unknown or incomplete command, see below for error {e}"))?;
        if self.state.settings.get("allow_commands").map(String::as_str) != Some("ON") {
            return Err("You do not have permission to use this command".into());
        }
        let origin = self.state.player.position;
        let only_players = |sel: &Selector| -> Result<(), String> {
            match sel {
                Selector::Entities { .. } => Err("Only players may be affected by this command".into()),
                _ => Ok(()),
            }
        };
        Ok(match cmd {
            Command::SetBlock { pos, block } => {
                let p = pos.resolve(origin);
                self.state.world.insert(p, block);
                format!("Changed the block at {}, {}, {}", p[0], p[1], p[2])
            }
            Command::Summon { entity, pos } => {
                let at = match pos {
                    Some(p) => block_centre(p.resolve(origin)),
                    None => origin,
                };
                self.spawn(&entity, at);
                format!("Summoned new {entity}")
            }
            Command::Give { target, item, count } => {
                only_players(&target)?;
                *self.state.player.inventory.entry(item.clone()).or_default() += count;
                format!("Gave {count} [{item}] to {}", command::PLAYER_NAME)
            }
            Command::TimeSet { ticks } => {
                self.state.time_of_day = ticks;
                format!("Set the time to {ticks}")
            }
            Command::GameMode { mode, target } => {
                if let Some(t) = &target {
                    only_players(t)?;
                }
                self.state.player.gamemode = mode;
                format!("Set own game mode to {mode:?} Mode")
            }
            Command::Kill { selector } => match selector {
                Selector::Player | Selector::AllPlayers => {
                    self.state.player.health = 0;
                    format!("Killed {}", command::PLAYER_NAME)
                }
                Selector::Entities { entity_type } => {
                    let mut n = 0;
                    for e in self.state.entities.iter_mut().filter(|e| e.alive) {
                        if entity_type.as_ref().is_none_or(|t| *t == e.entity_type) {
                            e.alive = false;
                            n += 1;
                        }
                    }
                    if entity_type.is_none() {
                        self.state.player.health = 0;
                        n += 1;
                    }
                    if n == 0 {
                        return Err("No entity was found".into());
                    }
                    format!("Killed {n} entities")
                }
            },
            Command::Teleport { target, pos } => {
                if let Some(t) = &target {
                    only_players(t)?;
                }
                let p = pos.resolve(origin);
                self.state.player.position = [p[0] as f64 + 0.5, p[1] as f64, p[2] as f64 + 0.5];
                format!("Teleported {} to {}, {}, {}", command::PLAYER_NAME, p[0], p[1], p[2])
            }
            Command::Weather { kind, .. } => {
                self.state.weather = kind;
                match kind {
                    Weather::Clear => "Set the weather to clear".into(),
                    Weather::Rain => "Set the weather to rain".into(),
                    Weather::Thunder => "Set the weather to rain & thunder".into(),
                }
            }
        })
    }
}

impl Backend for SimBackend {
    fn context(&self) -> InputContext {
        match self.state.screen {
            Screen::InGame => InputContext::InGame,
            Screen::ChatOpen => InputContext::Chat,
            Screen::CrashScreen { .. } => InputContext::Crashed,
            _ => InputContext::Menu,
        }
    }

    fn ui_epoch(&self) -> u64 {
        self.state.ui_epoch
    }

    fn apply(&mut self, input: &Primitive) -> Result<Vec<BackendEvent>, MacroError> {
        if self.state.crash.is_some() {
            return Ok(vec![BackendEvent::NoEffect { reason: "the game has crashed".into() }]);
        }
        let mut events = match input {
            Primitive::Press { keys, hold_seconds } => self.press(keys, *hold_seconds),
            Primitive::Write { text } => self.write(text),
            Primitive::Click { point } => self.click(*point),
        };
        self.check_rules(&mut events);
        Ok(events)
    }

    fn idle(&mut self, ticks: u64) -> Vec<BackendEvent> {
        let mut events = Vec::new();
        for _ in 0..ticks {
            events.extend(self.step());
        }
        events
    }

    fn now(&self) -> DateTime<Utc> {
        sim_time(self.state.clock)
    }

    fn observe(&mut self) -> Frame {
        self.frame_seq += 1;
        Frame {
            source: FrameSource::Sim,
            image: None,
            sim_elements: Some(self.elements()),
            captured_at: self.now(),
            sequence: self.frame_seq,
        }
    }

    fn crash(&self) -> Option<CrashReport> {
        self.state.crash.clone()
    }

    fn chat_key(&self) -> Key {
        SimBackend::chat_key(self)
    }
}

/// Runs a scenario's reference solution, producing its action log.
pub fn run_solution(scenario: Arc<ScenarioSpec>) -> Result<(Vec<LogRecord>, Option<CrashReport>), String> {
    let mut backend = SimBackend::new(scenario.clone());
    let mut records = Vec::new();
    for (i, step) in scenario.solution.iter().enumerate() {
        let frame = backend.observe();
        let elements = frame.sim_elements.clone().unwrap_or_default();
        let action = match step {
            SolutionStep::Idle(ticks) => {
                let at = backend.now();
                let backend_events = backend.idle(*ticks);
                records.push(LogRecord::Idle { at, ticks: *ticks, backend_events });
                continue;
            }
            SolutionStep::ClickText(text) => {
                let el = elements
                    .iter()
                    .find(|e| e.interactable && e.content == *text)
                    .ok_or_else(|| format!("solution step {i}: no element {text:?} on screen {}", backend.state.screen.layout_key()))?;
                Action::ClickPlace { element_index: el.index }
            }
            SolutionStep::Action(a) => a.clone(),
        };
        let batch = ActionBatch { actions: vec![action], issued_against_frame: frame.sequence };
        let out = execute_batch(&batch, &mut backend, &elements, frame.sequence);
        records.extend(out.entries.into_iter().map(LogRecord::Action));
        if let Some(e) = out.error {
            return Err(format!("solution step {i}: {e}"));
        }
    }
    let crash = backend.crash();
    records.push(LogRecord::Outcome { at: backend.now(), crash: crash.clone() });
    Ok((records, crash))
}
