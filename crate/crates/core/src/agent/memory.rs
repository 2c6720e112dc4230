use serde::{Deserialize, Serialize};

use super::digest::{result_digest, truncate};
use crate::toolkit::{ToolCache, ToolCall, ToolResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum MemoryEntry {
    User { text: String },
    Assistant { text: String },
    ToolExchange { thought: String, call: ToolCall, result: ToolResult },
}

impl MemoryEntry {
    pub fn digest(&self, max_bytes: usize) -> String {
        match self {
            MemoryEntry::User { text } => format!("user: {}", truncate(text, max_bytes)),
            MemoryEntry::Assistant { text } => format!("assistant: {}", truncate(text, max_bytes)),
            MemoryEntry::ToolExchange { result, .. } => result_digest(result, max_bytes),
        }
    }
}

/// Short-term memory of one session: an append-only transcript plus the
/// session's tool-output cache.
#[derive(Debug, Default)]
pub struct MemoryBuffer {
    session_id: String,
    entries: Vec<MemoryEntry>,
    cache: ToolCache,
    tasks: u64,
}

impl MemoryBuffer {
    pub fn new(session_id: impl Into<String>) -> Self {
        Self {
            session_id: session_id.into(),
            ..Self::default()
        }
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, entry: MemoryEntry) {
        self.entries.push(entry);
    }

    pub fn cache(&self) -> &ToolCache {
        &self.cache
    }

    /// Tool exchanges recorded so far, oldest first.
    pub fn exchanges(&self) -> impl Iterator<Item = (&str, &ToolCall, &ToolResult)> {
        self.entries.iter().filter_map(|e| match e {
            MemoryEntry::ToolExchange {
                thought,
                call,
                result,
            } => Some((thought.as_str(), call, result)),
            _ => None,
        })
    }

    /// Digests of the last `n` entries, oldest first.
    pub fn window(&self, n: usize, max_bytes: usize) -> Vec<String> {
        let start = self.entries.len().saturating_sub(n);
        self.entries[start..]
            .iter()
            .map(|e| e.digest(max_bytes))
            .collect()
    }

    pub(crate) fn next_task(&mut self) -> u64 {
        self.tasks += 1;
        self.tasks
    }
}
