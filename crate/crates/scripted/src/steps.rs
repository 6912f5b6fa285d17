//! Plain-language step texts for solution steps, and the reverse parse the
//! scripted agent uses to act on plan steps.

use std::sync::OnceLock;

use crashrepro::macro_api::{Action, Key};
use crashrepro::sandbox_sim::{SolutionStep, TICKS_PER_SECOND};
use regex::Regex;

fn seconds(ticks: u64) -> String {
    let s = ticks as f64 / TICKS_PER_SECOND as f64;
    if s.fract() == 0.0 {
        format!("{}", s as u64)
    } else {
        format!("{s}")
    }
}

fn key_label(k: Key) -> String {
    let name = k.name();
    if name.len() == 1 {
        return name.to_uppercase();
    }
    let mut c = name.chars();
    c.next().map(|f| f.to_uppercase().collect::<String>() + c.as_str()).unwrap_or_default()
}

/// The step as a plan would phrase it.
pub fn step_text(step: &SolutionStep) -> String {
    match step {
        SolutionStep::ClickText(t) => format!("Click \"{t}\"."),
        SolutionStep::Idle(ticks) => format!("Wait {} seconds.", seconds(*ticks)),
        SolutionStep::Action(a) => match a {
            Action::Command { instruction } => format!("Run the command `{}`.", instruction.trim()),
            Action::Write { text } => format!("Type \"{text}\"."),
            Action::Press { keys, hold_seconds: Some(t) } => {
                format!("Hold {} for {t} seconds.", keys.iter().map(|k| key_label(*k)).collect::<Vec<_>>().join(" + "))
            }
            Action::Press { keys, hold_seconds: None } => {
                format!("Press {}.", keys.iter().map(|k| key_label(*k)).collect::<Vec<_>>().join(" + "))
            }
            Action::Click { coordinates } => format!("Click at ({}, {}).", coordinates.x, coordinates.y),
            Action::ClickPlace { element_index } => format!("Click element {element_index}."),
        },
    }
}

pub fn is_command_step(text: &str) -> bool {
    text.starts_with("Run the command `")
}

pub fn is_wait_step(text: &str) -> bool {
    text.starts_with("Wait ")
}

/// What a plan step asks for.
#[derive(Debug, Clone, PartialEq)]
pub enum Intent {
    Click(String),
    Command(String),
    Type(String),
    Hold(Vec<Key>, f64),
    Press(Vec<Key>),
    Wait,
    /// Not understood; treated like a wait.
    Other,
}

fn keys(list: &str) -> Option<Vec<Key>> {
    list.split(" + ").map(|k| Key::from_name(&k.trim().to_lowercase())).collect()
}

pub fn parse_step(text: &str) -> Intent {
    static RE: OnceLock<[Regex; 5]> = OnceLock::new();
    let [click, command, typed, hold, press] = RE.get_or_init(|| {
        [
            Regex::new(r#"^Click "(.*)"\.$"#).unwrap(),
            Regex::new(r"^Run the command `(.*)`\.$").unwrap(),
            Regex::new(r#"^Type "(.*)"\.$"#).unwrap(),
            Regex::new(r"^Hold (.+) for ([0-9.]+) seconds\.$").unwrap(),
            Regex::new(r"^Press (.+)\.$").unwrap(),
        ]
    });
    let text = text.trim();
    if let Some(c) = click.captures(text) {
        return Intent::Click(c[1].to_string());
    }
    if let Some(c) = command.captures(text) {
        return Intent::Command(c[1].to_string());
    }
    if let Some(c) = typed.captures(text) {
        return Intent::Type(c[1].to_string());
    }
    if let Some(c) = hold.captures(text) {
        if let (Some(k), Ok(t)) = (keys(&c[1]), c[2].parse::<f64>()) {
            return Intent::Hold(k, t);
        }
    }
    if let Some(c) = press.captures(text) {
        if let Some(k) = keys(&c[1]) {
            return Intent::Press(k);
        }
    }
    if is_wait_step(text) {
        return Intent::Wait;
    }
    Intent::Other
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn texts_round_trip() {
        let cases = [
            (SolutionStep::ClickText("World Type: Default".into()), Intent::Click("World Type: Default".into())),
            (SolutionStep::Action(Action::command("/summon minecraft:strider ~ ~ ~1")), Intent::Command("/summon minecraft:strider ~ ~ ~1".into())),
            (SolutionStep::Action(Action::write("100%")), Intent::Type("100%".into())),
            (SolutionStep::Action(Action::Press { keys: vec![Key::W], hold_seconds: Some(1.5) }), Intent::Hold(vec![Key::W], 1.5)),
            (SolutionStep::Action(Action::press(Key::Escape)), Intent::Press(vec![Key::Escape])),
            (SolutionStep::Idle(40), Intent::Wait),
        ];
        for (step, intent) in cases {
            let text = step_text(&step);
            assert_eq!(parse_step(&text), intent, "{text}");
        }
        assert_eq!(step_text(&SolutionStep::Idle(30)), "Wait 1.5 seconds.");
        assert_eq!(parse_step("Dance."), Intent::Other);
    }
}
