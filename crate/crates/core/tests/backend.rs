use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use cxr_agent::agent::{Agent, AgentConfig, AgentError, AgentTask, EventBody, MemoryBuffer};
use cxr_agent::backend::{
    render_tool_specs, BackendContext, BackendError, ChatCompletionBackend, ChatCompletionConfig,
    Decision, ReasoningBackend, ScriptedBackend, ScriptedPolicy, SYSTEM_PROMPT_V1,
};
use cxr_agent::media::{ImageRef, MediaKind};
use cxr_agent::toolkit::catalog::{standard_specs, TOOL_NAMES};
use cxr_agent::toolkit::{Registry, ToolCache, ToolCall, ToolResult, Toolkit};
use proptest::prelude::*;
use serde_json::{json, Value};

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

/// Compare against a committed golden file; `CXR_BLESS=1` rewrites it.
fn golden(name: &str, actual: &str) -> String {
    if std::env::var("CXR_BLESS").as_deref() == Ok("1") {
        std::fs::write(data(name), actual).unwrap();
    }
    std::fs::read_to_string(data(name)).unwrap()
}

fn specs() -> Vec<cxr_agent::toolkit::ToolSpec> {
    standard_specs(|name| format!("http://127.0.0.1:1/{name}"))
}

#[test]
fn seven_tool_rendering_matches_golden() {
    let a = render_tool_specs(&specs());
    let b = render_tool_specs(&specs());
    assert_eq!(a, b);
    assert_eq!(a, golden("tool_specs.golden.txt", &a));
    for name in TOOL_NAMES {
        assert!(a.contains(&format!("### {name} (")));
    }
    assert!(!a.contains("127.0.0.1"));
}

fn golden_context() -> BackendContext {
    BackendContext {
        system: SYSTEM_PROMPT_V1.to_string(),
        state_digest: "Query: Summarize the findings on this film.\nImages:\n  {{image:0}} = \
                       2c1f0f1d9c1b4e4f8f5b6a7d0e3c2b1a9f8e7d6c5b4a39281706f5e4d3c2b1a0 (png)\n"
            .into(),
        tools: specs(),
        memory_window: vec!["user: Summarize the findings on this film.".into()],
        images: vec![ImageRef {
            id: "2c1f0f1d9c1b4e4f8f5b6a7d0e3c2b1a9f8e7d6c5b4a39281706f5e4d3c2b1a0".into(),
            kind: MediaKind::Png,
            byte_len: 1234,
        }],
        repair_feedback: None,
    }
}

fn config(base_url: String) -> ChatCompletionConfig {
    ChatCompletionConfig {
        base_url,
        api_key: Some("sk-test-secret".into()),
        model: "gpt-4o".into(),
        multimodal: false,
        debug: false,
        request_timeout: Duration::from_secs(5),
    }
}

#[test]
fn request_body_matches_golden() {
    let backend = ChatCompletionBackend::new(config("http://unused".into()));
    let body = backend.build_request(&golden_context());
    let pretty = serde_json::to_string_pretty(&body).unwrap() + "\n";
    let golden: Value = serde_json::from_str(&golden("chat_request.golden.json", &pretty)).unwrap();
    assert_eq!(body, golden);
    // chat-completion wire shape
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][1]["role"], "user");
    for t in body["tools"].as_array().unwrap() {
        assert_eq!(t["type"], "function");
        assert_eq!(t["function"]["parameters"]["type"], "object");
    }
    assert!(!body.to_string().contains("sk-test-secret"));
}

#[derive(Clone)]
struct Stub {
    status: StatusCode,
    reply: Value,
    seen: Arc<Mutex<Vec<(Option<String>, Value)>>>,
}

async fn completions(State(s): State<Stub>, headers: HeaderMap, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    let auth = headers
        .get("authorization")
        .and_then(|v| v.to_str().ok())
        .map(str::to_string);
    s.seen.lock().unwrap().push((auth, body));
    (s.status, Json(s.reply.clone()))
}

async fn stub(status: StatusCode, reply: Value) -> (String, Stub) {
    let s = Stub {
        status,
        reply,
        seen: Arc::default(),
    };
    let app = Router::new()
        .route("/v1/chat/completions", post(completions))
        .with_state(s.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (format!("http://{addr}/v1"), s)
}

#[tokio::test]
async fn replayed_exchange_yields_report_generation_call() {
    let reply: Value = serde_json::from_str(&std::fs::read_to_string(data("chat_response.recorded.json")).unwrap()).unwrap();
    let (url, s) = stub(StatusCode::OK, reply).await;
    let backend = ChatCompletionBackend::new(config(url));
    let ctx = golden_context();
    let d = backend.decide(&ctx).await.unwrap();
    assert_eq!(d.tool_calls.len(), 1);
    assert_eq!(d.tool_calls[0].tool, "report_generation");
    assert_eq!(d.tool_calls[0].arguments["image"], ctx.images[0].id.as_str());
    let seen = s.seen.lock().unwrap();
    assert_eq!(seen[0].0.as_deref(), Some("Bearer sk-test-secret"));
    assert_eq!(seen[0].1, backend.build_request(&ctx));
}

#[tokio::test]
async fn status_codes_map_to_error_classes() {
    let (url, _) = stub(StatusCode::SERVICE_UNAVAILABLE, json!({"error": "busy"})).await;
    let e = ChatCompletionBackend::new(config(url)).decide(&golden_context()).await.unwrap_err();
    assert!(matches!(e, BackendError::Retryable(_)));
    let (url, _) = stub(StatusCode::TOO_MANY_REQUESTS, json!({})).await;
    let e = ChatCompletionBackend::new(config(url)).decide(&golden_context()).await.unwrap_err();
    assert!(matches!(e, BackendError::Retryable(_)));
    let (url, _) = stub(StatusCode::UNAUTHORIZED, json!({"error": "bad key"})).await;
    let e = ChatCompletionBackend::new(config(url)).decide(&golden_context()).await.unwrap_err();
    assert!(matches!(e, BackendError::Fatal(_)));
    let e = ChatCompletionBackend::new(config("http://127.0.0.1:9/v1".into()))
        .decide(&golden_context())
        .await
        .unwrap_err();
    assert!(matches!(e, BackendError::Retryable(_)));
}

#[test]
fn multimodal_attaches_png_as_data_url() {
    let store = Arc::new(cxr_agent::media::ArtifactStore::new());
    let r = store.store(b"\x89PNG fake", MediaKind::Png);
    let mut ctx = golden_context();
    ctx.images = vec![r];
    let mut cfg = config("http://unused".into());
    cfg.multimodal = true;
    let body = ChatCompletionBackend::new(cfg).with_store(store).build_request(&ctx);
    let parts = body["messages"][1]["content"].as_array().unwrap();
    assert_eq!(parts[0]["type"], "text");
    assert!(parts[1]["image_url"]["url"].as_str().unwrap().starts_with("data:image/png;base64,"));
}

/// Answers every call instantly with an empty payload.
struct NullToolkit(Registry);

#[async_trait]
impl Toolkit for NullToolkit {
    fn registry(&self) -> &Registry {
        &self.0
    }

    async fn invoke_batch(&self, calls: &[ToolCall], _: Duration, _: &ToolCache) -> Vec<ToolResult> {
        calls.iter().map(|c| ToolResult::ok(c, json!({}), vec![], 0)).collect()
    }
}

struct Adversary(Vec<Decision>, Mutex<usize>);

#[async_trait]
impl ReasoningBackend for Adversary {
    async fn decide(&self, _: &BackendContext) -> Result<Decision, BackendError> {
        let mut i = self.1.lock().unwrap();
        let d = self.0.get(*i).cloned().unwrap_or_else(|| Decision::respond("", "end"));
        *i += 1;
        Ok(d)
    }
}

fn arb_decision() -> impl Strategy<Value = Decision> {
    let name = prop_oneof![
        proptest::sample::select(TOOL_NAMES.to_vec()).prop_map(str::to_string),
        "[a-z_]{1,12}",
    ];
    let call = name.prop_map(|n| ToolCall::new("x", n, json!({"prompt": "p"})));
    prop_oneof![
        proptest::collection::vec(call, 1..3).prop_map(|c| Decision::call_tools("t", c)),
        Just(Decision::respond("", "ok")),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn agent_never_executes_unregistered_tools(decisions in proptest::collection::vec(arb_decision(), 1..6)) {
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
        let tk = NullToolkit(Registry::from_specs(specs()).unwrap());
        let backend = Adversary(decisions, Mutex::new(0));
        let agent = Agent::new(AgentConfig { max_cycles: 8, ..AgentConfig::default() });
        let mut mem = MemoryBuffer::new("p");
        let out = rt.block_on(agent.run(AgentTask::new("p", "q", 5_000), &backend, &tk, &mut mem));
        match out {
            Ok(r) => {
                for e in &r.transcript {
                    if let EventBody::Action { calls } = &e.body {
                        for c in calls {
                            prop_assert!(tk.0.lookup(&c.tool).is_some(), "executed {}", c.tool);
                        }
                    }
                }
            }
            Err(e) => prop_assert!(matches!(e, AgentError::MalformedDecision(_))),
        }
    }
}

#[tokio::test]
async fn scripted_backend_is_pure() {
    let b = ScriptedBackend::new(ScriptedPolicy::new(Decision::respond("", "ok"))).unwrap();
    let ctx = golden_context();
    assert_eq!(b.decide(&ctx).await.unwrap(), b.decide(&ctx).await.unwrap());
}
