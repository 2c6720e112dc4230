//! Tool server wire protocol.
//!
//! `POST {endpoint}/invoke` takes a multipart body: a part named `call`
//! holding a JSON [`WireCall`], plus one binary part per image argument,
//! named after the parameter. In the `call` part, image arguments carry the
//! SHA-256 of the bytes sent in their binary part.
//!
//! The reply is a JSON [`WireResponse`] with HTTP 200 for both ok and error
//! outcomes; non-200 statuses are reserved for transport-level faults.
//! Image outputs are referenced by artifact id and fetched with
//! `GET {endpoint}/artifacts/{id}`. `GET {endpoint}/healthz` answers 200.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub const CALL_PART: &str = "call";
pub const INVOKE_PATH: &str = "/invoke";
pub const HEALTH_PATH: &str = "/healthz";
pub const STATS_PATH: &str = "/stats";
pub const ARTIFACTS_PATH: &str = "/artifacts";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireCall {
    pub call_id: String,
    pub tool: String,
    #[serde(default)]
    pub arguments: Map<String, Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WireStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub call_id: String,
    pub status: WireStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_text: Option<String>,
    #[serde(default)]
    pub artifacts: Vec<String>,
}

impl WireResponse {
    pub fn ok(call_id: &str, payload: Value, artifacts: Vec<String>) -> Self {
        Self {
            call_id: call_id.to_string(),
            status: WireStatus::Ok,
            payload: Some(payload),
            error_text: None,
            artifacts,
        }
    }

    pub fn error(call_id: &str, text: impl Into<String>) -> Self {
        Self {
            call_id: call_id.to_string(),
            status: WireStatus::Error,
            payload: None,
            error_text: Some(text.into()),
            artifacts: Vec::new(),
        }
    }
}

/// `GET /stats` body.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireStats {
    pub tool: String,
    pub invocations: u64,
}

pub fn url(endpoint: &str, path: &str) -> String {
    format!("{}{}", endpoint.trim_end_matches('/'), path)
}
