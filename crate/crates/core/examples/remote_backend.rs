//! The chat-completions backend. With CXR_LLM_BASE_URL set it talks to that
//! endpoint; otherwise a local stub replays a recorded response.
//!
//!     cargo run --example remote_backend

use std::net::SocketAddr;

use anyhow::Result;
use axum::routing::post;
use axum::{Json, Router};
use cxr_agent::backend::{BackendContext, ChatCompletionBackend, ChatCompletionConfig, ReasoningBackend, SYSTEM_PROMPT_V1};
use cxr_agent::fleet::{FleetConfig, LocalFleet};
use cxr_agent::toolkit::Toolkit;
use serde_json::Value;

const RECORDED: &str = include_str!("../tests/data/chat_response.recorded.json");

#[tokio::main]
async fn main() -> Result<()> {
    let mut config = ChatCompletionConfig::from_env();
    if std::env::var("CXR_LLM_BASE_URL").is_err() {
        let app = Router::new().route(
            "/chat/completions",
            post(|| async { Json(serde_json::from_str::<Value>(RECORDED).expect("recorded json")) }),
        );
        let listener = tokio::net::TcpListener::bind(SocketAddr::from(([127, 0, 0, 1], 0))).await?;
        config.base_url = format!("http://{}", listener.local_addr()?);
        tokio::spawn(async move { axum::serve(listener, app).await });
        println!("no CXR_LLM_BASE_URL; replaying a recorded exchange from {}", config.base_url);
    }

    let fleet = LocalFleet::start(FleetConfig::standard(0, 0)).await?;
    let backend = ChatCompletionBackend::new(config).with_store(fleet.bus.store().clone());
    let ctx = BackendContext {
        system: SYSTEM_PROMPT_V1.to_string(),
        state_digest: format!("Query: Summarize this film.\nImages:\n  {{{{image:0}}}} = {} (png)\n", fleet.images[0].id),
        tools: fleet.bus.registry().specs().to_vec(),
        memory_window: Vec::new(),
        images: vec![fleet.images[0].clone()],
        repair_feedback: None,
    };
    let request = backend.build_request(&ctx);
    println!(
        "request: model {}, {} messages, {} functions",
        request["model"],
        request["messages"].as_array().map_or(0, Vec::len),
        request["tools"].as_array().map_or(0, Vec::len)
    );

    let decision = backend.decide(&ctx).await?;
    println!("thought: {}", decision.thought);
    for c in &decision.tool_calls {
        println!("call: {} {}", c.tool, Value::Object(c.arguments.clone()));
    }
    if let Some(r) = decision.respond {
        println!("respond: {r}");
    }
    Ok(())
}
