//! Screen annotation contract: indexed UI elements with interactability, the
//! markdown table the agent reads, and element-centre resolution.
//!
//! Coordinates are screen fractions in `[0, 1]` everywhere; pixels only exist
//! inside a live backend.

mod client;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use client::{
    annotate, validate_reply, Annotator, AnnotateReply, HttpAnnotator, MockAnnotator, SimOnlyAnnotator,
    ANNOTATE_CONTRACT_SCHEMA, CONTRACT_VERSION,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnnotationError {
    #[error("annotator unavailable: {0}")]
    AnnotatorUnavailable(String),
    #[error("malformed annotation: {0}")]
    MalformedAnnotation(String),
    #[error("frame invalid for its source: {0}")]
    InvalidFrame(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameSource {
    Live,
    Sim,
}

/// A captured screen. Live frames carry an encoded bitmap; simulated frames
/// carry their element list directly and bypass the annotator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub source: FrameSource,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "b64_opt")]
    pub image: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim_elements: Option<Vec<UiElement>>,
    pub captured_at: DateTime<Utc>,
    pub sequence: u64,
}

impl Frame {
    pub fn validate(&self) -> Result<(), AnnotationError> {
        match self.source {
            FrameSource::Live if self.image.is_none() => {
                Err(AnnotationError::InvalidFrame("live frame without image".into()))
            }
            FrameSource::Sim if self.sim_elements.is_none() => {
                Err(AnnotationError::InvalidFrame("simulated frame without elements".into()))
            }
            _ => Ok(()),
        }
    }
}

mod b64_opt {
    use base64::Engine as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec<u8>>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(bytes) => s.serialize_str(&base64::engine::general_purpose::STANDARD.encode(bytes)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<u8>>, D::Error> {
        let s: Option<String> = Option::deserialize(d)?;
        s.map(|s| base64::engine::general_purpose::STANDARD.decode(s).map_err(serde::de::Error::custom))
            .transpose()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementKind {
    Icon,
    Text,
}

impl ElementKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ElementKind::Icon => "icon",
            ElementKind::Text => "text",
        }
    }
}

/// Normalized rectangle, serialized as `[x1, y1, x2, y2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        BBox { x1: v[0], y1: v[1], x2: v[2], y2: v[3] }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn is_valid(&self) -> bool {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        unit(self.x1) && unit(self.x2) && unit(self.y1) && unit(self.y2) && self.x1 < self.x2 && self.y1 < self.y2
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x1 && p.x <= self.x2 && p.y >= self.y1 && p.y <= self.y2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Midpoint of a rectangle.
pub fn center(bbox: &BBox) -> Point {
    Point { x: (bbox.x1 + bbox.x2) / 2.0, y: (bbox.y1 + bbox.y2) / 2.0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UiElement {
    pub index: u32,
    pub kind: ElementKind,
    pub content: String,
    pub bbox: BBox,
    pub interactable: bool,
}

/// Checks bbox ranges and that indices run 0, 1, 2, ... in order.
pub fn validate_elements(elements: &[UiElement]) -> Result<(), AnnotationError> {
    for (pos, el) in elements.iter().enumerate() {
        if el.index as usize != pos {
            return Err(AnnotationError::MalformedAnnotation(format!(
                "element at position {pos} has index {}; indices must be contiguous from 0",
                el.index
            )));
        }
        if !el.bbox.is_valid() {
            return Err(AnnotationError::MalformedAnnotation(format!(
                "element {} has invalid bbox {:?}",
                el.index,
                <[f64; 4]>::from(el.bbox)
            )));
        }
    }
    Ok(())
}

pub const TABLE_HEADER: &str = "| index | kind | content | bbox | interactable |\n|---|---|---|---|---|\n";

/// Deterministic markdown rendering, one row per element in index order.
pub fn render_table(elements: &[UiElement]) -> String {
    let mut out = String::from(TABLE_HEADER);
    for el in elements {
        let content = el.content.replace('\\', "\\\\").replace('|', "\\|").replace('\n', " ");
        out.push_str(&format!(
            "| {} | {} | {} | [{}, {}, {}, {}] | {} |\n",
            el.index,
            el.kind.as_str(),
            content,
            fmt_coord(el.bbox.x1),
            fmt_coord(el.bbox.y1),
            fmt_coord(el.bbox.x2),
            fmt_coord(el.bbox.y2),
            el.interactable
        ));
    }
    out
}

fn fmt_coord(v: f64) -> String {
    format!("{v:.2}")
}

/// Table rows as the agent sees them, parsed back from markdown.
pub fn parse_table(markdown: &str) -> Vec<(u32, String, String, bool)> {
    markdown
        .lines()
        .skip_while(|l| !l.starts_with("| index"))
        .skip(2)
        .take_while(|l| l.starts_with('|'))
        .filter_map(|line| {
            let inner = line.trim().trim_start_matches('|').trim_end_matches('|');
            let mut cells = Vec::new();
            let mut cur = String::new();
            let mut chars = inner.chars();
            while let Some(c) = chars.next() {
                match c {
                    '\\' => {
                        if let Some(n) = chars.next() {
                            cur.push(n);
                        }
                    }
                    '|' => cells.push(std::mem::take(&mut cur)),
                    c => cur.push(c),
                }
            }
            cells.push(cur);
            if cells.len() != 5 {
                return None;
            }
            let index = cells[0].trim().parse().ok()?;
            Some((index, cells[1].trim().to_string(), cells[2].trim().to_string(), cells[4].trim() == "true"))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn el(index: u32, content: &str, bbox: [f64; 4]) -> UiElement {
        UiElement { index, kind: ElementKind::Text, content: content.into(), bbox: bbox.into(), interactable: true }
    }

    #[test]
    fn center_of_quoted_bbox() {
        let p = center(&BBox::new(0.41, 0.06, 0.60, 0.12));
        assert!((p.x - 0.505).abs() < 1e-12);
        assert!((p.y - 0.09).abs() < 1e-12);
        assert_eq!(center(&BBox::new(0.0, 0.0, 1.0, 1.0)), Point::new(0.5, 0.5));
        let tiny = center(&BBox::new(0.2, 0.2, 0.2001, 0.2001));
        assert!((tiny.x - 0.20005).abs() < 1e-12 && (tiny.y - 0.20005).abs() < 1e-12);
    }

    #[test]
    fn empty_table_is_header_only() {
        assert_eq!(render_table(&[]), TABLE_HEADER);
    }

    #[test]
    fn one_element_one_row() {
        let t = render_table(&[el(0, "World", [0.41, 0.06, 0.60, 0.12])]);
        assert_eq!(t.lines().count(), 3);
        assert!(t.ends_with("| 0 | text | World | [0.41, 0.06, 0.60, 0.12] | true |\n"));
    }

    #[test]
    fn pipes_in_content_are_escaped_and_parse_back() {
        let t = render_table(&[el(0, "a|b", [0.0, 0.0, 0.5, 0.5]), el(1, "Health: 20", [0.1, 0.1, 0.2, 0.2])]);
        let rows = parse_table(&t);
        assert_eq!(rows[0], (0, "text".into(), "a|b".into(), true));
        assert_eq!(rows[1].2, "Health: 20");
    }

    #[test]
    fn validation_rejects_bad_boxes_and_gaps() {
        assert!(validate_elements(&[el(0, "a", [0.5, 0.1, 0.4, 0.2])]).is_err());
        assert!(validate_elements(&[el(0, "a", [0.1, 0.1, 1.2, 0.2])]).is_err());
        assert!(validate_elements(&[el(1, "a", [0.1, 0.1, 0.2, 0.2])]).is_err());
        assert!(validate_elements(&[el(0, "a", [0.1, 0.1, 0.2, 0.2])]).is_ok());
    }

    #[test]
    fn frame_source_rules() {
        let f = Frame { source: FrameSource::Live, image: None, sim_elements: None, captured_at: Utc::now(), sequence: 0 };
        assert!(f.validate().is_err());
        let s = Frame { source: FrameSource::Sim, sim_elements: Some(vec![]), ..f };
        assert!(s.validate().is_ok());
    }
}
