use std::collections::HashMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{validate_elements, AnnotationError, Frame, FrameSource, UiElement};
use crate::util::sha256_hex;

pub const CONTRACT_VERSION: &str = "1";

/// JSON Schema of the `/annotate` reply, shared with the sidecar service.
pub const ANNOTATE_CONTRACT_SCHEMA: &str = include_str!("../../contracts/annotate.schema.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotateReply {
    pub contract_version: String,
    pub elements: Vec<UiElement>,
}

/// Parses a raw reply body, checking it against the contract schema and the
/// element invariants.
pub fn validate_reply(body: &str) -> Result<Vec<UiElement>, AnnotationError> {
    let value: Value = serde_json::from_str(body)
        .map_err(|e| AnnotationError::MalformedAnnotation(format!("reply is not JSON: {e}")))?;
    let schema: Value = serde_json::from_str(ANNOTATE_CONTRACT_SCHEMA).expect("contract schema is valid JSON");
    let validator = jsonschema::validator_for(&schema).expect("contract schema compiles");
    if let Some(err) = validator.iter_errors(&value).next() {
        return Err(AnnotationError::MalformedAnnotation(format!("{err} at {}", err.instance_path)));
    }
    let reply: AnnotateReply =
        serde_json::from_value(value).map_err(|e| AnnotationError::MalformedAnnotation(e.to_string()))?;
    validate_elements(&reply.elements)?;
    Ok(reply.elements)
}

pub trait Annotator: Send + Sync {
    /// Parses the image of a live frame.
    fn parse(&self, frame: &Frame) -> Result<Vec<UiElement>, AnnotationError>;
}

/// Sim frames return their own elements untouched and never reach the
/// annotator; live frames go to `annotator`.
pub fn annotate(frame: &Frame, annotator: &dyn Annotator) -> Result<Vec<UiElement>, AnnotationError> {
    frame.validate()?;
    match frame.source {
        FrameSource::Sim => Ok(frame.sim_elements.clone().unwrap_or_default()),
        FrameSource::Live => {
            let elements = annotator.parse(frame)?;
            validate_elements(&elements)?;
            Ok(elements)
        }
    }
}

/// For sim-only deployments: any live frame is an error.
#[derive(Debug, Default, Clone, Copy)]
pub struct SimOnlyAnnotator;

impl Annotator for SimOnlyAnnotator {
    fn parse(&self, _frame: &Frame) -> Result<Vec<UiElement>, AnnotationError> {
        Err(AnnotationError::AnnotatorUnavailable("no annotator configured for live frames".into()))
    }
}

/// Canned element lists keyed by image digest.
#[derive(Debug, Default, Clone)]
pub struct MockAnnotator {
    pub by_digest: HashMap<String, Vec<UiElement>>,
    pub default: Vec<UiElement>,
}

impl Annotator for MockAnnotator {
    fn parse(&self, frame: &Frame) -> Result<Vec<UiElement>, AnnotationError> {
        let image = frame.image.as_deref().unwrap_or_default();
        Ok(self.by_digest.get(&sha256_hex(image)).cloned().unwrap_or_else(|| self.default.clone()))
    }
}

/// Client for the annotator sidecar (`POST /annotate`, `GET /health`).
pub struct HttpAnnotator {
    base_url: String,
    agent: ureq::Agent,
}

impl HttpAnnotator {
    pub fn new(base_url: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(60)))
            .build()
            .into();
        Self { base_url: base_url.into().trim_end_matches('/').to_string(), agent }
    }

    pub fn health(&self) -> Result<(), AnnotationError> {
        let resp = self
            .agent
            .get(&format!("{}/health", self.base_url))
            .call()
            .map_err(|e| AnnotationError::AnnotatorUnavailable(e.to_string()))?;
        if resp.status().as_u16() == 200 {
            Ok(())
        } else {
            Err(AnnotationError::AnnotatorUnavailable(format!("health returned {}", resp.status())))
        }
    }
}

impl Annotator for HttpAnnotator {
    fn parse(&self, frame: &Frame) -> Result<Vec<UiElement>, AnnotationError> {
        let image = frame
            .image
            .as_deref()
            .ok_or_else(|| AnnotationError::InvalidFrame("live frame without image".into()))?;
        let mut resp = self
            .agent
            .post(&format!("{}/annotate", self.base_url))
            .header("Content-Type", "application/octet-stream")
            .send(image)
            .map_err(|e| AnnotationError::AnnotatorUnavailable(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| AnnotationError::AnnotatorUnavailable(e.to_string()))?;
        if status != 200 {
            return Err(AnnotationError::AnnotatorUnavailable(format!("annotate returned {status}: {body}")));
        }
        validate_reply(&body)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::{BBox, ElementKind};
    use chrono::Utc;

    struct Panicking;
    impl Annotator for Panicking {
        fn parse(&self, _frame: &Frame) -> Result<Vec<UiElement>, AnnotationError> {
            panic!("sim frames must not reach the annotator")
        }
    }

    fn elements(n: u32) -> Vec<UiElement> {
        (0..n)
            .map(|i| UiElement {
                index: i,
                kind: ElementKind::Text,
                content: format!("e{i}"),
                bbox: BBox::new(0.1, 0.1 * f64::from(i) / 10.0, 0.2, 0.9),
                interactable: i % 2 == 0,
            })
            .collect()
    }

    #[test]
    fn sim_frame_is_identity_path() {
        let f = Frame {
            source: FrameSource::Sim,
            image: None,
            sim_elements: Some(elements(3)),
            captured_at: Utc::now(),
            sequence: 4,
        };
        assert_eq!(annotate(&f, &Panicking).unwrap(), elements(3));
    }

    #[test]
    fn reply_validation() {
        let ok = r#"{"contract_version":"1","elements":[{"index":0,"kind":"text","content":"world","bbox":[0.41,0.06,0.6,0.12],"interactable":true}]}"#;
        assert_eq!(validate_reply(ok).unwrap()[0].content, "world");
        let out_of_range = r#"{"contract_version":"1","elements":[{"index":0,"kind":"icon","content":"x","bbox":[0.5,0.5,1.4,0.2],"interactable":true}]}"#;
        assert!(matches!(validate_reply(out_of_range), Err(AnnotationError::MalformedAnnotation(_))));
        let inverted = r#"{"contract_version":"1","elements":[{"index":0,"kind":"icon","content":"x","bbox":[0.5,0.5,0.4,0.2],"interactable":true}]}"#;
        assert!(validate_reply(inverted).is_err());
        assert!(validate_reply(r#"{"elements":[]}"#).is_err());
    }

    #[test]
    fn mock_annotator_keys_by_image_digest() {
        let image = vec![1u8, 2, 3];
        let mut mock = MockAnnotator::default();
        mock.by_digest.insert(sha256_hex(&image), elements(2));
        let f = Frame { source: FrameSource::Live, image: Some(image), sim_elements: None, captured_at: Utc::now(), sequence: 0 };
        assert_eq!(annotate(&f, &mock).unwrap().len(), 2);
        let other = Frame { image: Some(vec![0]), ..f };
        assert!(annotate(&other, &mock).unwrap().is_empty());
    }
}
