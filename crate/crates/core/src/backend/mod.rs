//! Reasoning backends: the component that turns an observed state into a
//! [`Decision`]. A chat-completion client drives real models; the scripted
//! policy is a deterministic stand-in for tests and offline runs.

pub mod remote;
pub mod scripted;

use std::fmt::Write as _;
use std::sync::Mutex;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::media::ImageRef;
use crate::toolkit::{ParamSpec, ToolCall, ToolSpec};

pub use remote::{ChatCompletionBackend, ChatCompletionConfig};
pub use scripted::{Rule, ScriptedBackend, ScriptedPolicy, Trigger};

/// Versioned system prompt shipped with the crate.
pub const SYSTEM_PROMPT_V1: &str = include_str!("../../assets/system_prompt_v1.txt");

/// What the backend wants to do next. Exactly one branch is taken by the
/// agent: `ask_user` first, then `respond`, then `tool_calls`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    #[serde(default)]
    pub thought: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub respond: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ask_user: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ToolCall>,
}

impl Decision {
    pub fn respond(thought: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            thought: thought.into(),
            respond: Some(text.into()),
            ..Self::default()
        }
    }

    pub fn ask_user(thought: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            thought: thought.into(),
            ask_user: Some(text.into()),
            ..Self::default()
        }
    }

    pub fn call_tools(thought: impl Into<String>, calls: Vec<ToolCall>) -> Self {
        Self {
            thought: thought.into(),
            tool_calls: calls,
            ..Self::default()
        }
    }
}

/// Everything a backend sees for one decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendContext {
    pub system: String,
    pub state_digest: String,
    /// In registry order.
    pub tools: Vec<ToolSpec>,
    /// Digests of the most recent memory entries, oldest first.
    pub memory_window: Vec<String>,
    pub images: Vec<ImageRef>,
    /// Validation errors from the previous attempt, when re-prompting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repair_feedback: Option<String>,
}

impl BackendContext {
    /// Whether `needle` occurs anywhere the backend can read.
    pub fn mentions(&self, needle: &str) -> bool {
        self.state_digest.contains(needle) || self.memory_window.iter().any(|m| m.contains(needle))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    /// Endpoint unreachable, 5xx, or rate limited. The agent retries these.
    #[error("backend temporarily unavailable: {0}")]
    Retryable(String),
    /// The model output could not be turned into a decision.
    #[error("malformed model output: {0}")]
    Malformed(String),
    #[error("backend request rejected: {0}")]
    Fatal(String),
}

#[async_trait]
pub trait ReasoningBackend: Send + Sync {
    async fn decide(&self, ctx: &BackendContext) -> Result<Decision, BackendError>;
}

fn render_param(out: &mut String, p: &ParamSpec) {
    let _ = write!(out, "  - {}: {}", p.name, p.ty);
    if let Some([lo, hi]) = p.range {
        let _ = write!(out, " in [{lo}, {hi}]");
    }
    out.push_str(if p.required { " (required)" } else { " (optional)" });
    if !p.description.is_empty() {
        let _ = write!(out, " - {}", p.description);
    }
    out.push('\n');
}

/// Deterministic text rendering of tool declarations, in the given order.
/// An empty list renders as an empty string.
pub fn render_tool_specs(specs: &[ToolSpec]) -> String {
    let mut out = String::new();
    for s in specs {
        let _ = writeln!(out, "### {} ({})", s.name, s.category.as_str());
        let _ = writeln!(out, "{}", s.description);
        out.push_str("Parameters:\n");
        for p in &s.inputs {
            render_param(&mut out, p);
        }
        out.push_str("Returns:\n");
        for p in &s.outputs {
            render_param(&mut out, p);
        }
        out.push('\n');
    }
    out
}

/// Wraps a backend and keeps every context it was asked about.
pub struct RecordingBackend<B> {
    inner: B,
    contexts: Mutex<Vec<BackendContext>>,
}

impl<B> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            contexts: Mutex::new(Vec::new()),
        }
    }

    pub fn contexts(&self) -> Vec<BackendContext> {
        self.contexts.lock().expect("recorder poisoned").clone()
    }

    pub fn clear(&self) {
        self.contexts.lock().expect("recorder poisoned").clear();
    }
}

#[async_trait]
impl<B: ReasoningBackend> ReasoningBackend for RecordingBackend<B> {
    async fn decide(&self, ctx: &BackendContext) -> Result<Decision, BackendError> {
        self.contexts
            .lock()
            .expect("recorder poisoned")
            .push(ctx.clone());
        self.inner.decide(ctx).await
    }
}
