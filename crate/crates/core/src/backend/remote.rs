//! Chat-completion client using the native function-calling message format.
//!
//! Configuration comes from the environment:
//!
//! | variable | default |
//! |---|---|
//! | `CXR_LLM_BASE_URL` | `https://api.openai.com/v1` |
//! | `CXR_LLM_API_KEY` | none |
//! | `CXR_LLM_MODEL` | `gpt-4o` |
//! | `CXR_LLM_MULTIMODAL` | `0` (set `1` to attach images) |
//! | `CXR_LLM_DEBUG` | `0` (set `1` to log request/response bodies) |

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use base64::Engine;
use serde_json::{json, Map, Value};
use tracing::debug;

use super::{BackendContext, BackendError, Decision, ReasoningBackend};
use crate::media::{ArtifactStore, MediaKind};
use crate::toolkit::{ParamSpec, ParamType, ToolCall, ToolSpec};

/// Name of the pseudo-tool the model calls to ask the user a question.
pub const ASK_USER_TOOL: &str = "ask_user";

#[derive(Debug, Clone)]
pub struct ChatCompletionConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub multimodal: bool,
    pub debug: bool,
    pub request_timeout: Duration,
}

impl Default for ChatCompletionConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            api_key: None,
            model: "gpt-4o".into(),
            multimodal: false,
            debug: false,
            request_timeout: Duration::from_secs(120),
        }
    }
}

fn env_flag(name: &str) -> bool {
    matches!(
        std::env::var(name).as_deref(),
        Ok("1") | Ok("true") | Ok("yes")
    )
}

impl ChatCompletionConfig {
    pub fn from_env() -> Self {
        let d = Self::default();
        Self {
            base_url: std::env::var("CXR_LLM_BASE_URL").unwrap_or(d.base_url),
            api_key: std::env::var("CXR_LLM_API_KEY").ok().filter(|k| !k.is_empty()),
            model: std::env::var("CXR_LLM_MODEL").unwrap_or(d.model),
            multimodal: env_flag("CXR_LLM_MULTIMODAL"),
            debug: env_flag("CXR_LLM_DEBUG"),
            request_timeout: d.request_timeout,
        }
    }
}

fn param_schema(p: &ParamSpec) -> Value {
    let mut s = match &p.ty {
        ParamType::Text => json!({"type": "string"}),
        ParamType::ImageRef => json!({"type": "string", "format": "image-ref"}),
        ParamType::Number => json!({"type": "number"}),
        ParamType::Boolean => json!({"type": "boolean"}),
        ParamType::Enum(values) => json!({"type": "string", "enum": values}),
    };
    if let Some([lo, hi]) = p.range {
        s["minimum"] = json!(lo);
        s["maximum"] = json!(hi);
    }
    if !p.description.is_empty() {
        s["description"] = json!(p.description);
    }
    s
}

/// JSON Schema function declaration for one tool.
pub fn function_declaration(spec: &ToolSpec) -> Value {
    let mut properties = Map::new();
    for p in &spec.inputs {
        properties.insert(p.name.clone(), param_schema(p));
    }
    let required: Vec<&str> = spec
        .inputs
        .iter()
        .filter(|p| p.required)
        .map(|p| p.name.as_str())
        .collect();
    json!({
        "type": "function",
        "function": {
            "name": spec.name,
            "description": spec.description,
            "parameters": {
                "type": "object",
                "properties": properties,
                "required": required,
                "additionalProperties": false,
            }
        }
    })
}

fn ask_user_declaration() -> Value {
    json!({
        "type": "function",
        "function": {
            "name": ASK_USER_TOOL,
            "description": "Ask the user for information needed to continue.",
            "parameters": {
                "type": "object",
                "properties": {"question": {"type": "string"}},
                "required": ["question"],
                "additionalProperties": false,
            }
        }
    })
}

fn user_text(ctx: &BackendContext) -> String {
    let mut text = format!("Observed state:\n{}\n", ctx.state_digest);
    if !ctx.memory_window.is_empty() {
        text.push_str("\nRecent memory:\n");
        for m in &ctx.memory_window {
            text.push_str("- ");
            text.push_str(m);
            text.push('\n');
        }
    }
    if let Some(fb) = &ctx.repair_feedback {
        text.push_str("\nYour previous reply was rejected: ");
        text.push_str(fb);
        text.push_str("\nReply again with valid tool arguments.\n");
    }
    text
}

pub struct ChatCompletionBackend {
    config: ChatCompletionConfig,
    http: reqwest::Client,
    store: Option<Arc<ArtifactStore>>,
}

impl ChatCompletionBackend {
    pub fn new(config: ChatCompletionConfig) -> Self {
        Self {
            http: reqwest::Client::builder()
                .timeout(config.request_timeout)
                .build()
                .expect("http client"),
            config,
            store: None,
        }
    }

    /// Give the client access to image bytes for multimodal requests.
    pub fn with_store(mut self, store: Arc<ArtifactStore>) -> Self {
        self.store = Some(store);
        self
    }

    pub fn config(&self) -> &ChatCompletionConfig {
        &self.config
    }

    /// The request body for `ctx`.
    pub fn build_request(&self, ctx: &BackendContext) -> Value {
        let text = user_text(ctx);
        let user_content = match (&self.store, self.config.multimodal) {
            (Some(store), true) if !ctx.images.is_empty() => {
                let mut parts = vec![json!({"type": "text", "text": text})];
                for img in &ctx.images {
                    // raw DICOM is not something a chat endpoint can display
                    if img.kind == MediaKind::Dicom {
                        continue;
                    }
                    if let Ok(bytes) = store.load(&img.id) {
                        let b64 = base64::engine::general_purpose::STANDARD.encode(bytes.as_slice());
                        let mime = img.kind.content_type();
                        parts.push(json!({
                            "type": "image_url",
                            "image_url": {"url": format!("data:{mime};base64,{b64}")}
                        }));
                    }
                }
                Value::Array(parts)
            }
            _ => Value::String(text),
        };
        let mut tools: Vec<Value> = ctx.tools.iter().map(function_declaration).collect();
        tools.push(ask_user_declaration());
        json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": ctx.system},
                {"role": "user", "content": user_content},
            ],
            "tools": tools,
            "tool_choice": "auto",
            "temperature": 0,
        })
    }

    async fn send(&self, body: &Value) -> Result<Value, BackendError> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        if self.config.debug {
            // credentials travel in a header and are never part of the logged body
            debug!(%url, body = %body, "chat completion request");
        }
        let mut req = self.http.post(&url).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .await
            .map_err(|e| BackendError::Retryable(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .text()
            .await
            .map_err(|e| BackendError::Retryable(e.to_string()))?;
        if self.config.debug {
            debug!(status = status.as_u16(), body = %text, "chat completion response");
        }
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(BackendError::Retryable(format!("HTTP {}", status.as_u16())));
        }
        if !status.is_success() {
            return Err(BackendError::Fatal(format!(
                "HTTP {}: {}",
                status.as_u16(),
                text.chars().take(300).collect::<String>()
            )));
        }
        serde_json::from_str(&text).map_err(|e| BackendError::Malformed(format!("response body: {e}")))
    }
}

/// Turn a chat-completion response body into a decision.
pub fn parse_response(body: &Value) -> Result<Decision, BackendError> {
    let message = body
        .pointer("/choices/0/message")
        .ok_or_else(|| BackendError::Malformed("no choices[0].message".into()))?;
    let content = message
        .get("content")
        .and_then(Value::as_str)
        .unwrap_or("")
        .to_string();
    let raw_calls = message
        .get("tool_calls")
        .and_then(Value::as_array)
        .cloned()
        .unwrap_or_default();

    let mut calls = Vec::new();
    for (i, c) in raw_calls.iter().enumerate() {
        let name = c
            .pointer("/function/name")
            .and_then(Value::as_str)
            .ok_or_else(|| BackendError::Malformed(format!("tool call {i} has no name")))?;
        let args_text = c
            .pointer("/function/arguments")
            .and_then(Value::as_str)
            .unwrap_or("{}");
        let args: Value = serde_json::from_str(if args_text.trim().is_empty() { "{}" } else { args_text })
            .map_err(|e| BackendError::Malformed(format!("arguments of {name} are not JSON: {e}")))?;
        if !args.is_object() {
            return Err(BackendError::Malformed(format!("arguments of {name} are not an object")));
        }
        let id = c
            .get("id")
            .and_then(Value::as_str)
            .map(str::to_string)
            .unwrap_or_else(|| format!("call_{i}"));
        if name == ASK_USER_TOOL {
            let question = args
                .get("question")
                .and_then(Value::as_str)
                .unwrap_or("Could you provide more detail?");
            return Ok(Decision::ask_user(content, question));
        }
        calls.push(ToolCall::new(id, name, args));
    }
    if !calls.is_empty() {
        return Ok(Decision::call_tools(content, calls));
    }
    if content.trim().is_empty() {
        return Err(BackendError::Malformed("empty message without tool calls".into()));
    }
    Ok(Decision::respond(content.clone(), content))
}

#[async_trait]
impl ReasoningBackend for ChatCompletionBackend {
    async fn decide(&self, ctx: &BackendContext) -> Result<Decision, BackendError> {
        let body = self.build_request(ctx);
        let reply = self.send(&body).await?;
        parse_response(&reply)
    }
}
