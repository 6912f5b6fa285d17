//! The HTTP annotator client against an in-process stub of the sidecar.

use std::net::SocketAddr;

use axum::body::Bytes;
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::Router;
use chrono::Utc;
use crashrepro::annotation::{
    annotate, validate_reply, AnnotationError, Annotator, BBox, ElementKind, Frame, FrameSource, HttpAnnotator, MockAnnotator, UiElement,
    CONTRACT_VERSION,
};
use crashrepro::util::sha256_hex;
use serde_json::json;

fn canned() -> Vec<UiElement> {
    vec![
        UiElement { index: 0, kind: ElementKind::Text, content: "Singleplayer".into(), bbox: BBox::new(0.35, 0.35, 0.65, 0.41), interactable: true },
        UiElement { index: 1, kind: ElementKind::Icon, content: "gear | settings".into(), bbox: BBox::new(0.9, 0.02, 0.97, 0.08), interactable: true },
        UiElement { index: 2, kind: ElementKind::Text, content: "Minecraft 1.21".into(), bbox: BBox::new(0.01, 0.95, 0.2, 0.99), interactable: false },
    ]
}

fn reply_body() -> String {
    json!({"contract_version": CONTRACT_VERSION, "elements": canned()}).to_string()
}

/// Serves the stub on an ephemeral port from a background runtime.
fn serve(app: Router) -> SocketAddr {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    rx.recv().unwrap()
}

fn stub(reply: fn() -> (StatusCode, String)) -> HttpAnnotator {
    let app = Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/annotate", post(move |body: Bytes| async move {
            assert!(!body.is_empty());
            reply()
        }));
    HttpAnnotator::new(format!("http://{}", serve(app)))
}

fn live_frame() -> Frame {
    Frame { source: FrameSource::Live, image: Some(b"\x89PNG fake frame".to_vec()), sim_elements: None, captured_at: Utc::now(), sequence: 3 }
}

#[test]
fn stub_reply_validates_against_the_contract() {
    assert_eq!(validate_reply(&reply_body()).unwrap(), canned());
}

#[test]
fn live_path_matches_the_mock_on_the_same_frame() {
    let http = stub(|| (StatusCode::OK, reply_body()));
    http.health().unwrap();
    let frame = live_frame();
    let mut mock = MockAnnotator::default();
    mock.by_digest.insert(sha256_hex(frame.image.as_deref().unwrap()), canned());
    assert_eq!(annotate(&frame, &http).unwrap(), annotate(&frame, &mock).unwrap());
}

#[test]
fn off_contract_reply_is_malformed() {
    let http = stub(|| (StatusCode::OK, json!({"contract_version": "1", "elements": [{"index": 0}]}).to_string()));
    assert!(matches!(http.parse(&live_frame()), Err(AnnotationError::MalformedAnnotation(_))));
}

#[test]
fn server_error_means_unavailable() {
    let http = stub(|| (StatusCode::INTERNAL_SERVER_ERROR, "model not loaded".into()));
    match http.parse(&live_frame()) {
        Err(AnnotationError::AnnotatorUnavailable(msg)) => assert!(msg.contains("500")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn nothing_listening_means_unavailable() {
    let http = HttpAnnotator::new("http://127.0.0.1:9");
    assert!(matches!(http.health(), Err(AnnotationError::AnnotatorUnavailable(_))));
}
