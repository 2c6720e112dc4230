use std::collections::BTreeSet;

use serde_json::Value;
use thiserror::Error;

use super::digest::result_digest;
use super::{AgentEvent, EventBody};
use crate::backend::BackendContext;
use crate::toolkit::canonical_json;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TranscriptError {
    #[error("event {index}: {reason}")]
    Malformed { index: usize, reason: String },
    #[error("result {call_id} never reached the backend")]
    ObservationDropped { call_id: String },
}

fn bad(index: usize, reason: impl Into<String>) -> TranscriptError {
    TranscriptError::Malformed {
        index,
        reason: reason.into(),
    }
}

/// One canonical JSON line per event. Timestamps and latencies are dropped,
/// so two runs of the same deterministic task compare byte for byte.
pub fn canonical_transcript(events: &[AgentEvent]) -> String {
    let mut out = String::new();
    for e in events {
        let mut v = serde_json::to_value(e).expect("events serialize");
        if let Value::Object(m) = &mut v {
            m.remove("timestamp_ms");
            if let Some(Value::Array(results)) = m.get_mut("results") {
                for r in results {
                    if let Value::Object(rm) = r {
                        rm.remove("latency_ms");
                    }
                }
            }
        }
        out.push_str(&canonical_json(&v));
        out.push('\n');
    }
    out
}

/// Structural checks over a single task's transcript:
/// a thought opens every cycle, each action is answered by exactly one
/// observation with matching call ids before the next thought, and the
/// task ends with exactly one terminal event.
pub fn validate_transcript(events: &[AgentEvent]) -> Result<(), TranscriptError> {
    let Some(last) = events.last() else {
        return Err(bad(0, "empty transcript"));
    };
    if !last.body.is_terminal() {
        return Err(bad(events.len() - 1, "last event is not terminal"));
    }
    let mut pending: Option<Vec<String>> = None;
    let mut thought_in_cycle: Option<u32> = None;
    let mut prev_cycle = 0;
    let mut prev_ts = 0;
    for (i, e) in events.iter().enumerate() {
        if e.cycle_index < prev_cycle {
            return Err(bad(i, "cycle index went backwards"));
        }
        if e.timestamp_ms < prev_ts {
            return Err(bad(i, "timestamp went backwards"));
        }
        prev_cycle = e.cycle_index;
        prev_ts = e.timestamp_ms;
        if e.body.is_terminal() && i != events.len() - 1 {
            return Err(bad(i, "terminal event before the end"));
        }
        match &e.body {
            EventBody::Thought { .. } => {
                if pending.is_some() {
                    return Err(bad(i, "thought while an action awaits its observation"));
                }
                if thought_in_cycle == Some(e.cycle_index) {
                    return Err(bad(i, "second thought in one cycle"));
                }
                thought_in_cycle = Some(e.cycle_index);
            }
            EventBody::Action { calls } => {
                if thought_in_cycle != Some(e.cycle_index) {
                    return Err(bad(i, "action without a thought in its cycle"));
                }
                if pending.is_some() {
                    return Err(bad(i, "two actions without an observation"));
                }
                if calls.is_empty() {
                    return Err(bad(i, "empty action"));
                }
                let ids: Vec<String> = calls.iter().map(|c| c.call_id.clone()).collect();
                if ids.iter().collect::<BTreeSet<_>>().len() != ids.len() {
                    return Err(bad(i, "duplicate call ids"));
                }
                pending = Some(ids);
            }
            EventBody::Observation { results } => {
                let Some(ids) = pending.take() else {
                    return Err(bad(i, "observation without an action"));
                };
                let got: Vec<&str> = results.iter().map(|r| r.call_id.as_str()).collect();
                if got != ids.iter().map(String::as_str).collect::<Vec<_>>() {
                    return Err(bad(i, format!("result ids {got:?} do not match calls {ids:?}")));
                }
            }
            EventBody::UserPrompt { .. } | EventBody::FinalResponse { .. } => {
                if pending.is_some() {
                    return Err(bad(i, "response while an action awaits its observation"));
                }
                if thought_in_cycle != Some(e.cycle_index) {
                    return Err(bad(i, "response without a thought in its cycle"));
                }
            }
            EventBody::TimeoutResponse { .. } => {
                if pending.is_some() {
                    return Err(bad(i, "timeout while an action awaits its observation"));
                }
            }
        }
    }
    Ok(())
}

/// Every observed result must appear, as rendered, in at least one context
/// the backend was given. Pass the contexts recorded during the task.
pub fn check_observations_reached(
    events: &[AgentEvent],
    contexts: &[BackendContext],
    max_result_bytes: usize,
) -> Result<(), TranscriptError> {
    for e in events {
        let EventBody::Observation { results } = &e.body else {
            continue;
        };
        for r in results {
            let line = result_digest(r, max_result_bytes);
            if !contexts.iter().any(|c| c.mentions(&line)) {
                return Err(TranscriptError::ObservationDropped {
                    call_id: r.call_id.clone(),
                });
            }
        }
    }
    Ok(())
}
