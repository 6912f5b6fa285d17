//! The chat-command subset the simulator understands.
//!
//! ```text
//! /setblock <x> <y> <z> <block> [replace|destroy|keep]
//! /summon <entity> [<x> <y> <z>]
//! /give <target> <item> [<count>]
//! /time set <ticks|day|noon|night|midnight>
//! /gamemode <survival|creative|adventure|spectator> [<target>]
//! /kill [<selector>]
//! /tp [<target>] <x> <y> <z>
//! /weather <clear|rain|thunder> [<duration>]
//! ```
//!
//! Coordinates are integers, `~` or `~<int>` (relative to the player).
//! Identifiers may carry a `minecraft:` prefix. Errors report the index of
//! the offending whitespace-separated token, the command name being token 0.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Values accepted by `/time set`.
pub const TIME_ALIASES: &[(&str, u32)] = &[("day", 1000), ("noon", 6000), ("night", 13000), ("midnight", 18000)];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("at token {position}: {message}")]
pub struct ParseError {
    pub position: usize,
    pub message: String,
}

fn err<T>(position: usize, message: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError { position, message: message.into() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Coord {
    Abs(i64),
    Rel(i64),
}

impl Coord {
    pub fn resolve(&self, origin: f64) -> i64 {
        match self {
            Coord::Abs(v) => *v,
            Coord::Rel(d) => origin.floor() as i64 + d,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pos3 {
    pub x: Coord,
    pub y: Coord,
    pub z: Coord,
}

impl Pos3 {
    pub fn abs(x: i64, y: i64, z: i64) -> Self {
        Pos3 { x: Coord::Abs(x), y: Coord::Abs(y), z: Coord::Abs(z) }
    }

    pub fn resolve(&self, origin: [f64; 3]) -> [i64; 3] {
        [self.x.resolve(origin[0]), self.y.resolve(origin[1]), self.z.resolve(origin[2])]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Selector {
    /// `@p`, `@s` or the player's name.
    Player,
    /// `@a`.
    AllPlayers,
    /// `@e` or `@e[type=<id>]`.
    Entities { entity_type: Option<String> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GameMode {
    Survival,
    Creative,
    Adventure,
    Spectator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weather {
    Clear,
    Rain,
    Thunder,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Command {
    SetBlock { pos: Pos3, block: String },
    Summon { entity: String, pos: Option<Pos3> },
    Give { target: Selector, item: String, count: u32 },
    TimeSet { ticks: u32 },
    GameMode { mode: GameMode, target: Option<Selector> },
    Kill { selector: Selector },
    Teleport { target: Option<Selector>, pos: Pos3 },
    Weather { kind: Weather, duration: Option<u32> },
}

/// Closed id sets; an empty set accepts any identifier.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    #[serde(default)]
    pub blocks: Vec<String>,
    #[serde(default)]
    pub entities: Vec<String>,
    #[serde(default)]
    pub items: Vec<String>,
}

pub const PLAYER_NAME: &str = "Player";

struct Tokens<'a> {
    toks: Vec<&'a str>,
}

impl<'a> Tokens<'a> {
    fn get(&self, i: usize, what: &str) -> Result<&'a str, ParseError> {
        self.toks.get(i).copied().ok_or_else(|| ParseError { position: i, message: format!("expected {what}") })
    }

    fn end(&self, i: usize) -> Result<(), ParseError> {
        if self.toks.len() > i {
            return err(i, format!("unexpected trailing argument {:?}", self.toks[i]));
        }
        Ok(())
    }
}

fn strip_ns(id: &str) -> &str {
    id.strip_prefix("minecraft:").unwrap_or(id)
}

fn is_ident(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

fn ident(tok: &str, pos: usize, kind: &str, known: &[String]) -> Result<String, ParseError> {
    let id = strip_ns(tok);
    if !is_ident(id) {
        return err(pos, format!("invalid {kind} id {tok:?}"));
    }
    if !known.is_empty() && !known.iter().any(|k| k == id) {
        return err(pos, format!("unknown {kind} {id:?}"));
    }
    Ok(id.to_string())
}

fn int(tok: &str, pos: usize) -> Result<i64, ParseError> {
    tok.parse::<i64>().or_else(|_| err(pos, format!("expected an integer, found {tok:?}")))
}

fn coord(tok: &str, pos: usize) -> Result<Coord, ParseError> {
    match tok.strip_prefix('~') {
        Some("") => Ok(Coord::Rel(0)),
        Some(rest) => Ok(Coord::Rel(int(rest, pos)?)),
        None => Ok(Coord::Abs(int(tok, pos)?)),
    }
}

fn pos3(t: &Tokens, at: usize) -> Result<Pos3, ParseError> {
    Ok(Pos3 {
        x: coord(t.get(at, "x coordinate")?, at)?,
        y: coord(t.get(at + 1, "y coordinate")?, at + 1)?,
        z: coord(t.get(at + 2, "z coordinate")?, at + 2)?,
    })
}

fn looks_like_coord(tok: &str) -> bool {
    tok.starts_with('~') || tok.starts_with('-') || tok.chars().next().is_some_and(|c| c.is_ascii_digit())
}

fn selector(tok: &str, pos: usize, vocab: &Vocabulary) -> Result<Selector, ParseError> {
    match tok {
        "@p" | "@s" | PLAYER_NAME => Ok(Selector::Player),
        "@a" => Ok(Selector::AllPlayers),
        "@e" => Ok(Selector::Entities { entity_type: None }),
        _ => {
            if let Some(inner) = tok.strip_prefix("@e[type=").and_then(|r| r.strip_suffix(']')) {
                return Ok(Selector::Entities { entity_type: Some(ident(inner, pos, "entity", &vocab.entities)?) });
            }
            err(pos, format!("invalid target {tok:?}"))
        }
    }
}

/// Parses a chat command against a scenario vocabulary.
pub fn parse_command(text: &str, vocab: &Vocabulary) -> Result<Command, ParseError> {
    let t = Tokens { toks: text.split_whitespace().collect() };
    let head = t.get(0, "a command")?;
    let name = head.strip_prefix('/').ok_or_else(|| ParseError { position: 0, message: "commands start with '/'".into() })?;
    match name {
        "setblock" => {
            let pos = pos3(&t, 1)?;
            let block = ident(t.get(4, "a block id")?, 4, "block", &vocab.blocks)?;
            if let Some(mode) = t.toks.get(5) {
                if !matches!(*mode, "replace" | "destroy" | "keep") {
                    return err(5, format!("invalid setblock mode {mode:?}"));
                }
                t.end(6)?;
            }
            Ok(Command::SetBlock { pos, block })
        }
        "summon" => {
            let entity = ident(t.get(1, "an entity id")?, 1, "entity", &vocab.entities)?;
            if t.toks.len() == 2 {
                return Ok(Command::Summon { entity, pos: None });
            }
            let pos = pos3(&t, 2)?;
            t.end(5)?;
            Ok(Command::Summon { entity, pos: Some(pos) })
        }
        "give" => {
            let target = selector(t.get(1, "a target")?, 1, vocab)?;
            let item = ident(t.get(2, "an item id")?, 2, "item", &vocab.items)?;
            let count = match t.toks.get(3) {
                Some(c) => {
                    let n = int(c, 3)?;
                    if !(1..=6400).contains(&n) {
                        return err(3, format!("count must be between 1 and 6400, found {n}"));
                    }
                    t.end(4)?;
                    n as u32
                }
                None => 1,
            };
            Ok(Command::Give { target, item, count })
        }
        "time" => {
            let sub = t.get(1, "'set'")?;
            if sub != "set" {
                return err(1, format!("unsupported time subcommand {sub:?}"));
            }
            let v = t.get(2, "a time value")?;
            let ticks = match TIME_ALIASES.iter().find(|(a, _)| *a == v) {
                Some((_, ticks)) => *ticks,
                None => {
                    let n = int(v, 2)?;
                    if n < 0 {
                        return err(2, "time must not be negative");
                    }
                    (n % 24000) as u32
                }
            };
            t.end(3)?;
            Ok(Command::TimeSet { ticks })
        }
        "gamemode" => {
            let mode = match t.get(1, "a game mode")? {
                "survival" => GameMode::Survival,
                "creative" => GameMode::Creative,
                "adventure" => GameMode::Adventure,
                "spectator" => GameMode::Spectator,
                other => return err(1, format!("unknown game mode {other:?}")),
            };
            let target = t.toks.get(2).map(|s| selector(s, 2, vocab)).transpose()?;
            t.end(3)?;
            Ok(Command::GameMode { mode, target })
        }
        "kill" => {
            let selector = match t.toks.get(1) {
                Some(s) => selector(s, 1, vocab)?,
                None => Selector::Player,
            };
            t.end(2)?;
            Ok(Command::Kill { selector })
        }
        "tp" | "teleport" => {
            let first = t.get(1, "a target or coordinates")?;
            if looks_like_coord(first) {
                let pos = pos3(&t, 1)?;
                t.end(4)?;
                Ok(Command::Teleport { target: None, pos })
            } else {
                let target = selector(first, 1, vocab)?;
                let pos = pos3(&t, 2)?;
                t.end(5)?;
                Ok(Command::Teleport { target: Some(target), pos })
            }
        }
        "weather" => {
            let kind = match t.get(1, "a weather type")? {
                "clear" => Weather::Clear,
                "rain" => Weather::Rain,
                "thunder" => Weather::Thunder,
                other => return err(1, format!("unknown weather {other:?}")),
            };
            let duration = match t.toks.get(2) {
                Some(d) => {
                    let n = int(d, 2)?;
                    if n < 0 {
                        return err(2, "duration must not be negative");
                    }
                    t.end(3)?;
                    Some(n as u32)
                }
                None => None,
            };
            Ok(Command::Weather { kind, duration })
        }
        _ => err(0, format!("unknown command {head:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn any() -> Vocabulary {
        Vocabulary::default()
    }

    #[test]
    fn setblock_by_hand() {
        assert_eq!(
            parse_command("/setblock 0 64 0 water", &any()).unwrap(),
            Command::SetBlock { pos: Pos3::abs(0, 64, 0), block: "water".into() }
        );
        assert_eq!(
            parse_command("/setblock ~ ~-1 ~3 minecraft:lava keep", &any()).unwrap(),
            Command::SetBlock { pos: Pos3 { x: Coord::Rel(0), y: Coord::Rel(-1), z: Coord::Rel(3) }, block: "lava".into() }
        );
    }

    #[test]
    fn unknown_command_fails_at_token_zero() {
        assert_eq!(parse_command("/nonexistent x", &any()).unwrap_err().position, 0);
        assert_eq!(parse_command("setblock 0 0 0 stone", &any()).unwrap_err().position, 0);
        assert_eq!(parse_command("", &any()).unwrap_err().position, 0);
    }

    #[test]
    fn time_aliases() {
        for (alias, ticks) in [("day", 1000), ("noon", 6000), ("night", 13000), ("midnight", 18000)] {
            assert_eq!(parse_command(&format!("/time set {alias}"), &any()).unwrap(), Command::TimeSet { ticks });
        }
        assert_eq!(parse_command("/time set 30000", &any()).unwrap(), Command::TimeSet { ticks: 6000 });
        assert_eq!(parse_command("/time add 10", &any()).unwrap_err().position, 1);
    }

    #[test]
    fn positions_point_at_the_bad_token() {
        assert_eq!(parse_command("/setblock 0 x 0 water", &any()).unwrap_err().position, 2);
        assert_eq!(parse_command("/setblock 0 64 0", &any()).unwrap_err().position, 4);
        assert_eq!(parse_command("/give @p diamond 0", &any()).unwrap_err().position, 3);
        assert_eq!(parse_command("/kill @e extra", &any()).unwrap_err().position, 2);
        let vocab = Vocabulary { blocks: vec!["water".into()], entities: vec!["strider".into()], items: vec![] };
        assert_eq!(parse_command("/setblock 0 64 0 lava", &vocab).unwrap_err().position, 4);
        assert_eq!(parse_command("/kill @e[type=zombie]", &vocab).unwrap_err().position, 1);
        assert!(parse_command("/summon strider 1 64 1", &vocab).is_ok());
    }

    #[test]
    fn other_forms() {
        assert_eq!(parse_command("/summon strider", &any()).unwrap(), Command::Summon { entity: "strider".into(), pos: None });
        assert_eq!(
            parse_command("/give Player bundle", &any()).unwrap(),
            Command::Give { target: Selector::Player, item: "bundle".into(), count: 1 }
        );
        assert_eq!(
            parse_command("/kill @e[type=zombie]", &any()).unwrap(),
            Command::Kill { selector: Selector::Entities { entity_type: Some("zombie".into()) } }
        );
        assert_eq!(parse_command("/kill", &any()).unwrap(), Command::Kill { selector: Selector::Player });
        assert_eq!(
            parse_command("/tp @s 10 70 -5", &any()).unwrap(),
            Command::Teleport { target: Some(Selector::Player), pos: Pos3::abs(10, 70, -5) }
        );
        assert_eq!(parse_command("/tp -3 70 ~", &any()).unwrap(), Command::Teleport {
            target: None,
            pos: Pos3 { x: Coord::Abs(-3), y: Coord::Abs(70), z: Coord::Rel(0) }
        });
        assert_eq!(parse_command("/weather thunder 600", &any()).unwrap(), Command::Weather { kind: Weather::Thunder, duration: Some(600) });
        assert_eq!(parse_command("/gamemode creative", &any()).unwrap(), Command::GameMode { mode: GameMode::Creative, target: None });
    }
}
