use std::sync::Arc;

use crashrepro::llm_gateway::{
    ChatMessage, ChatRequest, CountingProvider, FixtureStore, Gateway, GatewayError, Provider, ProviderReply, Usage,
};

struct Echo;

impl Provider for Echo {
    fn send(&self, request: &ChatRequest) -> Result<ProviderReply, GatewayError> {
        let text = request.messages.last().map(|m| m.text.to_uppercase()).unwrap_or_default();
        Ok(ProviderReply { usage: Usage { prompt_tokens: 7, completion_tokens: text.len() as u64 }, text })
    }
}

fn request(text: &str) -> ChatRequest {
    ChatRequest::new("m", vec![ChatMessage::system("TASK: echo"), ChatMessage::user(text)])
}

#[test]
fn recorded_replies_replay_without_the_provider() {
    let dir = tempfile::tempdir().unwrap();
    let counting = Arc::new(CountingProvider::new(Echo));
    let recorder = Gateway::record(Arc::new(FixtureStore::open(dir.path()).unwrap()), counting.clone());
    let live = recorder.complete(&request("hello")).unwrap();
    assert_eq!(counting.calls(), 1);

    let replay = Gateway::replay(Arc::new(FixtureStore::open(dir.path()).unwrap()));
    let again = replay.complete(&request("hello")).unwrap();
    assert_eq!(again.text, live.text);
    assert_eq!(again.usage, live.usage);
    assert_eq!(counting.calls(), 1);
}

#[test]
fn replay_miss_names_the_digest() {
    let dir = tempfile::tempdir().unwrap();
    let replay = Gateway::replay(Arc::new(FixtureStore::open(dir.path()).unwrap()));
    let req = request("never recorded");
    match replay.complete(&req) {
        Err(GatewayError::FixtureMiss { digest }) => assert_eq!(digest, req.digest()),
        other => panic!("{other:?}"),
    }
}

#[test]
fn live_mode_always_asks_the_provider() {
    let counting = Arc::new(CountingProvider::new(Echo));
    let live = Gateway::live(counting.clone());
    for _ in 0..3 {
        assert_eq!(live.complete(&request("x")).unwrap().text, "X");
    }
    assert_eq!(counting.calls(), 3);
}
