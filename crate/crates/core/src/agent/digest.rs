//! Text digests the backend reasons over.

use std::fmt::Write as _;

use super::AgentTask;
use crate::toolkit::{canonical_json, ToolResult, ToolStatus};

/// Per-result cap before truncation.
pub const DEFAULT_MAX_RESULT_BYTES: usize = 8 * 1024;

/// Prefix of the marker appended to a truncated result.
pub const TRUNCATION_MARKER: &str = "...[truncated";

pub(crate) fn truncate(text: &str, max: usize) -> String {
    if text.len() <= max {
        return text.to_string();
    }
    let mut cut = max;
    while !text.is_char_boundary(cut) {
        cut -= 1;
    }
    format!("{}{TRUNCATION_MARKER} {} bytes]", &text[..cut], text.len() - cut)
}

/// Query and image list; the state before any tool ran.
pub fn initial_digest(task: &AgentTask) -> String {
    let mut out = format!("Query: {}\n", task.query);
    if task.images.is_empty() {
        out.push_str("Images: none\n");
    } else {
        out.push_str("Images:\n");
        for (i, img) in task.images.iter().enumerate() {
            let _ = writeln!(out, "  {{{{image:{i}}}}} = {} ({})", img.id, img.kind.as_str());
        }
    }
    out
}

/// One line describing a result. Error text is kept verbatim.
pub fn result_digest(r: &ToolResult, max_bytes: usize) -> String {
    let body = match r.status {
        ToolStatus::Ok => {
            let mut text = r.payload.as_ref().map(canonical_json).unwrap_or_default();
            if !r.artifacts.is_empty() {
                let ids: Vec<&str> = r.artifacts.iter().map(|a| a.id.as_str()).collect();
                let _ = write!(text, " artifacts=[{}]", ids.join(","));
            }
            text
        }
        _ => r.error_text.clone().unwrap_or_default(),
    };
    let status = match (r.status, r.error_kind) {
        (ToolStatus::Ok, _) => "ok".to_string(),
        (s, Some(k)) => format!(
            "FAILED {}/{}",
            serde_json::to_value(s).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default(),
            serde_json::to_value(k).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
        ),
        (_, None) => "FAILED".to_string(),
    };
    let cached = if r.from_cache { " (cached)" } else { "" };
    format!(
        "{} [{}] {status}{cached}: {}",
        r.tool,
        r.call_id,
        truncate(&body, max_bytes)
    )
}

pub(crate) fn observation_digest(
    task: &AgentTask,
    cycle: u32,
    results: &[ToolResult],
    max_bytes: usize,
) -> String {
    let mut out = initial_digest(task);
    if results.is_empty() {
        return out;
    }
    let _ = writeln!(out, "Observations from cycle {cycle}:");
    for r in results {
        let _ = writeln!(out, "- {}", result_digest(r, max_bytes));
    }
    out
}
