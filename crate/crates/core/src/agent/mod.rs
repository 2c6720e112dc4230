//! The observe / reason / act loop.
//!
//! A task runs strictly sequentially: each cycle asks the backend for a
//! [`Decision`](crate::backend::Decision), executes any tool batch through a
//! [`Toolkit`](crate::toolkit::Toolkit), and folds the results back into the
//! state digest. The loop stops on a response, a question for the user, an
//! exhausted wall-clock budget, or the cycle guard.

mod digest;
mod memory;
mod run;
mod transcript;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::media::ImageRef;
use crate::toolkit::{ToolCall, ToolResult};

pub use digest::{initial_digest, result_digest, DEFAULT_MAX_RESULT_BYTES, TRUNCATION_MARKER};
pub use memory::{MemoryBuffer, MemoryEntry};
pub use run::{classify_decision, observe, Agent, AgentConfig, Branch};
pub use transcript::{
    canonical_transcript, check_observations_reached, validate_transcript, TranscriptError,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTask {
    pub query: String,
    #[serde(default)]
    pub images: Vec<ImageRef>,
    pub budget_ms: u64,
    pub session_id: String,
}

impl AgentTask {
    pub fn new(session_id: impl Into<String>, query: impl Into<String>, budget_ms: u64) -> Self {
        Self {
            query: query.into(),
            images: Vec::new(),
            budget_ms,
            session_id: session_id.into(),
        }
    }

    pub fn with_images(mut self, images: Vec<ImageRef>) -> Self {
        self.images = images;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Running,
    Responded,
    AwaitingUser,
    TimedOut,
}

#[derive(Debug, Clone)]
pub struct AgentState {
    pub task: AgentTask,
    pub cycle_index: u32,
    pub started_at: std::time::Instant,
    /// Digest of the query, images and the latest tool results.
    pub latest_observation: String,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventBody {
    Thought { text: String },
    Action { calls: Vec<ToolCall> },
    Observation { results: Vec<ToolResult> },
    UserPrompt { text: String },
    FinalResponse { text: String },
    TimeoutResponse { text: String, reason: TimeoutReason },
}

impl EventBody {
    pub fn kind(&self) -> &'static str {
        match self {
            EventBody::Thought { .. } => "thought",
            EventBody::Action { .. } => "action",
            EventBody::Observation { .. } => "observation",
            EventBody::UserPrompt { .. } => "user_prompt",
            EventBody::FinalResponse { .. } => "final_response",
            EventBody::TimeoutResponse { .. } => "timeout_response",
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(
            self,
            EventBody::UserPrompt { .. }
                | EventBody::FinalResponse { .. }
                | EventBody::TimeoutResponse { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentEvent {
    pub cycle_index: u32,
    /// Milliseconds since the task started.
    pub timestamp_ms: u64,
    #[serde(flatten)]
    pub body: EventBody,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseKind {
    Answer,
    UserPrompt,
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeoutReason {
    Budget,
    MaxCycles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentResponse {
    pub kind: ResponseKind,
    pub text: String,
    pub transcript: Vec<AgentEvent>,
    pub elapsed_ms: u64,
    pub cycles: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_reason: Option<TimeoutReason>,
}

impl AgentResponse {
    /// Number of tool calls issued over the task.
    pub fn tool_calls(&self) -> usize {
        self.transcript
            .iter()
            .map(|e| match &e.body {
                EventBody::Action { calls } => calls.len(),
                _ => 0,
            })
            .sum()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("reasoning backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("malformed decision: {0}")]
    MalformedDecision(String),
    /// Results did not line up with the calls they answer. Always a bug.
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
}

impl AgentError {
    pub fn kind(&self) -> &'static str {
        match self {
            AgentError::InvalidTask(_) => "invalid_task",
            AgentError::BackendUnavailable(_) => "backend_unavailable",
            AgentError::MalformedDecision(_) => "malformed_decision",
            AgentError::ProtocolViolation(_) => "protocol_violation",
        }
    }
}

/// Receives events as they are appended to a task transcript.
pub trait EventSink: Send + Sync {
    fn emit(&self, event: &AgentEvent);
}

impl<F: Fn(&AgentEvent) + Send + Sync> EventSink for F {
    fn emit(&self, event: &AgentEvent) {
        self(event)
    }
}
