//! HTTP gateway: chat sessions, image upload, and a resumable server-sent
//! event stream of agent frames. `client` holds a typed client for it.

pub mod client;
pub mod server;
mod session;

use serde::{Deserialize, Serialize};

use crate::agent::{result_digest, AgentEvent, EventBody};
use crate::media::ImageRef;
use crate::toolkit::canonical_json;

pub use client::{ClientError, GatewayClient, GatewayTarget};
pub use server::{router, Gateway, GatewayConfig, TOKEN_ENV};

/// Error body for every non-2xx response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub kind: String,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Idle,
    Running,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatRole {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub text: String,
    pub task_id: String,
}

/// `GET /v1/sessions/{id}` body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    /// Unix milliseconds.
    pub created_at: u64,
    pub status: SessionStatus,
    pub images: Vec<ImageRef>,
    pub messages: Vec<ChatMessage>,
    /// Number of frames buffered so far; the next frame gets this sequence.
    pub next_sequence: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreatedSession {
    pub id: String,
}

/// `POST /v1/sessions/{id}/images` body. For DICOM, `image` is the derived
/// display PNG (what tools see) and `original` the uploaded file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UploadedImage {
    pub image: ImageRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original: Option<ImageRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostMessage {
    pub text: String,
    /// Subset of session images to attach; all of them when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ids: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskAccepted {
    pub task_id: String,
    /// Sequence number the task's first frame will carry.
    pub first_sequence: u64,
}

/// One entry of the per-session event log as sent on the stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamFrame {
    pub sequence: u64,
    pub task_id: String,
    pub kind: String,
    pub cycle: u32,
    /// Short human-readable rendering of the event.
    pub digest: String,
    pub artifact_ids: Vec<String>,
    pub event: AgentEvent,
    /// Set on a terminal frame the gateway synthesized because the agent
    /// failed with an error instead of producing a response.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

impl StreamFrame {
    pub fn new(sequence: u64, task_id: &str, event: AgentEvent) -> Self {
        let (digest, artifact_ids) = render(&event.body);
        Self {
            sequence,
            task_id: task_id.to_string(),
            kind: event.body.kind().to_string(),
            cycle: event.cycle_index,
            digest,
            artifact_ids,
            event,
            error: None,
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.event.body.is_terminal()
    }
}

fn render(body: &EventBody) -> (String, Vec<String>) {
    match body {
        EventBody::Thought { text }
        | EventBody::UserPrompt { text }
        | EventBody::FinalResponse { text }
        | EventBody::TimeoutResponse { text, .. } => (text.clone(), Vec::new()),
        EventBody::Action { calls } => (
            calls
                .iter()
                .map(|c| format!("{}({})", c.tool, canonical_json(&serde_json::Value::Object(c.arguments.clone()))))
                .collect::<Vec<_>>()
                .join("; "),
            Vec::new(),
        ),
        EventBody::Observation { results } => (
            results
                .iter()
                .map(|r| result_digest(r, 512))
                .collect::<Vec<_>>()
                .join("\n"),
            results
                .iter()
                .flat_map(|r| r.artifacts.iter().map(|a| a.id.clone()))
                .collect(),
        ),
    }
}
