use std::fmt;

use reqwest::Url;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::media::ImageRef;

pub const DEFAULT_TOOL_TIMEOUT_MS: u64 = 30_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Vqa,
    Segmentation,
    Grounding,
    ReportGeneration,
    Classification,
    Generation,
    Utility,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Vqa => "vqa",
            Category::Segmentation => "segmentation",
            Category::Grounding => "grounding",
            Category::ReportGeneration => "report_generation",
            Category::Classification => "classification",
            Category::Generation => "generation",
            Category::Utility => "utility",
        }
    }
}

/// Semantic type of a tool parameter or output field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "values", rename_all = "snake_case")]
pub enum ParamType {
    Text,
    /// An image argument. At the agent layer the value is an artifact id or a
    /// file path; the bus resolves it to bytes.
    ImageRef,
    Number,
    Boolean,
    Enum(Vec<String>),
}

impl fmt::Display for ParamType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamType::Text => f.write_str("text"),
            ParamType::ImageRef => f.write_str("image_ref"),
            ParamType::Number => f.write_str("number"),
            ParamType::Boolean => f.write_str("boolean"),
            ParamType::Enum(values) => write!(f, "enum[{}]", values.join("|")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(flatten)]
    pub ty: ParamType,
    pub required: bool,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    /// Inclusive bounds, numbers only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<[f64; 2]>,
}

impl ParamSpec {
    pub fn new(name: &str, ty: ParamType, required: bool) -> Self {
        Self {
            name: name.to_string(),
            ty,
            required,
            description: String::new(),
            range: None,
        }
    }

    pub fn describe(mut self, text: &str) -> Self {
        self.description = text.to_string();
        self
    }

    pub fn within(mut self, lo: f64, hi: f64) -> Self {
        self.range = Some([lo, hi]);
        self
    }
}

/// Declarative tool contract: everything the agent and the reasoning backend
/// know about a tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub category: Category,
    pub inputs: Vec<ParamSpec>,
    pub outputs: Vec<ParamSpec>,
    pub endpoint: String,
    pub timeout_ms: u64,
    pub cacheable: bool,
}

#[derive(Debug, Error, PartialEq)]
pub enum SpecError {
    #[error("tool name {0:?} is not a valid identifier")]
    BadName(String),
    #[error("tool {tool}: duplicate parameter {param}")]
    DuplicateParam { tool: String, param: String },
    #[error("tool {tool}: endpoint {endpoint:?} is not an absolute URL")]
    RelativeEndpoint { tool: String, endpoint: String },
    #[error("tool {0}: timeout must be positive")]
    ZeroTimeout(String),
    #[error("tool {tool}: enum parameter {param} has no values")]
    EmptyEnum { tool: String, param: String },
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase())
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

impl ToolSpec {
    pub fn validate(&self) -> Result<(), SpecError> {
        if !is_identifier(&self.name) {
            return Err(SpecError::BadName(self.name.clone()));
        }
        for params in [&self.inputs, &self.outputs] {
            let mut seen = std::collections::HashSet::new();
            for p in params {
                if !seen.insert(p.name.as_str()) {
                    return Err(SpecError::DuplicateParam {
                        tool: self.name.clone(),
                        param: p.name.clone(),
                    });
                }
                if matches!(&p.ty, ParamType::Enum(v) if v.is_empty()) {
                    return Err(SpecError::EmptyEnum {
                        tool: self.name.clone(),
                        param: p.name.clone(),
                    });
                }
            }
        }
        let absolute = Url::parse(&self.endpoint)
            .map(|u| u.has_host())
            .unwrap_or(false);
        if !absolute {
            return Err(SpecError::RelativeEndpoint {
                tool: self.name.clone(),
                endpoint: self.endpoint.clone(),
            });
        }
        if self.timeout_ms == 0 {
            return Err(SpecError::ZeroTimeout(self.name.clone()));
        }
        Ok(())
    }

    pub fn input(&self, name: &str) -> Option<&ParamSpec> {
        self.inputs.iter().find(|p| p.name == name)
    }

    pub fn image_inputs(&self) -> impl Iterator<Item = &ParamSpec> {
        self.inputs.iter().filter(|p| p.ty == ParamType::ImageRef)
    }

    pub fn image_outputs(&self) -> impl Iterator<Item = &ParamSpec> {
        self.outputs.iter().filter(|p| p.ty == ParamType::ImageRef)
    }

    /// The spec as published to clients: no endpoint, no timeout.
    pub fn public_view(&self) -> PublicToolSpec {
        PublicToolSpec {
            name: self.name.clone(),
            description: self.description.clone(),
            category: self.category,
            inputs: self.inputs.clone(),
            outputs: self.outputs.clone(),
            cacheable: self.cacheable,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublicToolSpec {
    pub name: String,
    pub description: String,
    pub category: Category,
    pub inputs: Vec<ParamSpec>,
    pub outputs: Vec<ParamSpec>,
    pub cacheable: bool,
}

/// A structured invocation of one tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub call_id: String,
    pub tool: String,
    #[serde(default)]
    pub arguments: Map<String, Value>,
}

impl ToolCall {
    pub fn new(call_id: impl Into<String>, tool: impl Into<String>, arguments: Value) -> Self {
        let arguments = match arguments {
            Value::Object(m) => m,
            Value::Null => Map::new(),
            other => {
                let mut m = Map::new();
                m.insert("value".into(), other);
                m
            }
        };
        Self {
            call_id: call_id.into(),
            tool: tool.into(),
            arguments,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolStatus {
    Ok,
    Error,
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolErrorKind {
    /// Connection refused, reset, or similar.
    Transport,
    /// Tool server answered with a non-200 status.
    HttpStatus,
    /// Response did not conform to the wire protocol or output schema.
    BadPayload,
    /// The tool itself reported a failure (HTTP 200, status=error).
    Tool,
    UnknownTool,
    InvalidCall,
    ImageUnavailable,
}

/// Outcome of one tool call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub call_id: String,
    pub tool: String,
    pub status: ToolStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_kind: Option<ToolErrorKind>,
    #[serde(default)]
    pub artifacts: Vec<ImageRef>,
    pub latency_ms: u64,
    pub from_cache: bool,
}

impl ToolResult {
    pub fn ok(call: &ToolCall, payload: Value, artifacts: Vec<ImageRef>, latency_ms: u64) -> Self {
        Self {
            call_id: call.call_id.clone(),
            tool: call.tool.clone(),
            status: ToolStatus::Ok,
            payload: Some(payload),
            error_text: None,
            error_kind: None,
            artifacts,
            latency_ms,
            from_cache: false,
        }
    }

    pub fn failed(
        call: &ToolCall,
        status: ToolStatus,
        kind: ToolErrorKind,
        text: impl Into<String>,
        latency_ms: u64,
    ) -> Self {
        debug_assert!(status != ToolStatus::Ok);
        Self {
            call_id: call.call_id.clone(),
            tool: call.tool.clone(),
            status,
            payload: None,
            error_text: Some(text.into()),
            error_kind: Some(kind),
            artifacts: Vec::new(),
            latency_ms,
            from_cache: false,
        }
    }

    pub fn timed_out(call: &ToolCall, after_ms: u64) -> Self {
        Self::failed(
            call,
            ToolStatus::Timeout,
            ToolErrorKind::Transport,
            format!("deadline of {after_ms} ms exceeded"),
            after_ms,
        )
    }

    pub fn is_ok(&self) -> bool {
        self.status == ToolStatus::Ok
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> ToolSpec {
        ToolSpec {
            name: "classifier".into(),
            description: "d".into(),
            category: Category::Classification,
            inputs: vec![ParamSpec::new("image", ParamType::ImageRef, true)],
            outputs: vec![],
            endpoint: "http://127.0.0.1:9000".into(),
            timeout_ms: 10,
            cacheable: true,
        }
    }

    #[test]
    fn valid_spec_passes() {
        spec().validate().unwrap();
    }

    #[test]
    fn relative_endpoint_rejected() {
        let mut s = spec();
        s.endpoint = "/invoke".into();
        assert!(matches!(s.validate(), Err(SpecError::RelativeEndpoint { .. })));
    }

    #[test]
    fn duplicate_param_rejected() {
        let mut s = spec();
        s.inputs.push(ParamSpec::new("image", ParamType::Text, false));
        assert!(matches!(s.validate(), Err(SpecError::DuplicateParam { .. })));
    }

    #[test]
    fn param_type_serde_shape() {
        let p = ParamSpec::new("region", ParamType::Enum(vec!["a".into(), "b".into()]), true);
        let v = serde_json::to_value(&p).unwrap();
        assert_eq!(v["type"], "enum");
        assert_eq!(v["values"], serde_json::json!(["a", "b"]));
        let back: ParamSpec = serde_json::from_value(v).unwrap();
        assert_eq!(back, p);
    }
}
