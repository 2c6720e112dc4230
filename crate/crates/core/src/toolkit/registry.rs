use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use super::spec::{ParamSpec, ParamType, PublicToolSpec, SpecError, ToolCall, ToolSpec};

#[derive(Debug, Error, PartialEq)]
pub enum RegistryError {
    #[error("tool {} is already registered (endpoint {})", .existing.name, .existing.endpoint)]
    Duplicate { existing: Box<ToolSpec> },
    #[error(transparent)]
    InvalidSpec(#[from] SpecError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    UnknownTool,
    Missing,
    Undeclared,
    TypeMismatch,
    OutOfRange,
    NotAnObject,
}

impl ViolationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationKind::UnknownTool => "unknown_tool",
            ViolationKind::Missing => "missing",
            ViolationKind::Undeclared => "undeclared",
            ViolationKind::TypeMismatch => "type_mismatch",
            ViolationKind::OutOfRange => "out_of_range",
            ViolationKind::NotAnObject => "not_an_object",
        }
    }
}

/// One schema violation, rendered as `kind:param` (e.g. `missing:image`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub field: String,
}

impl Violation {
    fn new(kind: ViolationKind, field: &str) -> Self {
        Self {
            kind,
            field: field.to_string(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind.as_str(), self.field)
    }
}

pub fn render_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

fn conforms(p: &ParamSpec, value: &Value) -> Result<(), ViolationKind> {
    let ok = match (&p.ty, value) {
        (ParamType::Text, Value::String(_)) => true,
        (ParamType::ImageRef, Value::String(s)) => !s.is_empty(),
        (ParamType::Number, Value::Number(n)) => {
            if let (Some([lo, hi]), Some(x)) = (p.range, n.as_f64()) {
                if !(lo..=hi).contains(&x) {
                    return Err(ViolationKind::OutOfRange);
                }
            }
            true
        }
        (ParamType::Boolean, Value::Bool(_)) => true,
        (ParamType::Enum(values), Value::String(s)) => values.iter().any(|v| v == s),
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(ViolationKind::TypeMismatch)
    }
}

/// Check a field map against a parameter list: every required field present,
/// nothing undeclared, every value of the declared type. Violations are
/// reported in schema order, then undeclared fields in key order.
pub fn check_fields(params: &[ParamSpec], fields: &Map<String, Value>) -> Vec<Violation> {
    let mut out = Vec::new();
    for p in params {
        match fields.get(&p.name) {
            None | Some(Value::Null) if p.required => {
                out.push(Violation::new(ViolationKind::Missing, &p.name))
            }
            None | Some(Value::Null) => {}
            Some(v) => {
                if let Err(kind) = conforms(p, v) {
                    out.push(Violation::new(kind, &p.name));
                }
            }
        }
    }
    let mut extra: Vec<&String> = fields
        .keys()
        .filter(|k| !params.iter().any(|p| &p.name == *k))
        .collect();
    extra.sort();
    out.extend(
        extra
            .into_iter()
            .map(|k| Violation::new(ViolationKind::Undeclared, k)),
    );
    out
}

/// Validate a tool server payload against the tool's output schema.
pub fn check_payload(spec: &ToolSpec, payload: &Value) -> Vec<Violation> {
    match payload {
        Value::Object(m) => check_fields(&spec.outputs, m),
        _ => vec![Violation::new(ViolationKind::NotAnObject, "payload")],
    }
}

/// Ordered, name-unique set of tool specs. Built once at startup and shared
/// read-only afterwards.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    specs: Vec<ToolSpec>,
    index: HashMap<String, usize>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_specs(specs: impl IntoIterator<Item = ToolSpec>) -> Result<Self, RegistryError> {
        let mut r = Self::new();
        for s in specs {
            r.register(s)?;
        }
        Ok(r)
    }

    pub fn register(&mut self, spec: ToolSpec) -> Result<(), RegistryError> {
        spec.validate()?;
        if let Some(&i) = self.index.get(&spec.name) {
            return Err(RegistryError::Duplicate {
                existing: Box::new(self.specs[i].clone()),
            });
        }
        self.index.insert(spec.name.clone(), self.specs.len());
        self.specs.push(spec);
        Ok(())
    }

    pub fn lookup(&self, name: &str) -> Option<&ToolSpec> {
        self.index.get(name).map(|&i| &self.specs[i])
    }

    /// Specs in registration order.
    pub fn specs(&self) -> &[ToolSpec] {
        &self.specs
    }

    pub fn public_specs(&self) -> Vec<PublicToolSpec> {
        self.specs.iter().map(ToolSpec::public_view).collect()
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn validate_call(&self, call: &ToolCall) -> Result<(), Vec<Violation>> {
        let Some(spec) = self.lookup(&call.tool) else {
            return Err(vec![Violation::new(ViolationKind::UnknownTool, &call.tool)]);
        };
        let v = check_fields(&spec.inputs, &call.arguments);
        if v.is_empty() {
            Ok(())
        } else {
            Err(v)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toolkit::spec::Category;
    use serde_json::json;

    fn spec(name: &str, inputs: Vec<ParamSpec>) -> ToolSpec {
        ToolSpec {
            name: name.into(),
            description: format!("{name} tool"),
            category: Category::Vqa,
            inputs,
            outputs: vec![ParamSpec::new("answer", ParamType::Text, true)],
            endpoint: "http://localhost:1".into(),
            timeout_ms: 1000,
            cacheable: true,
        }
    }

    fn registry() -> Registry {
        Registry::from_specs([
            spec("classifier", vec![ParamSpec::new("image", ParamType::ImageRef, true)]),
            spec(
                "vqa",
                vec![
                    ParamSpec::new("image", ParamType::ImageRef, true),
                    ParamSpec::new("question", ParamType::Text, true),
                ],
            ),
        ])
        .unwrap()
    }

    #[test]
    fn lookup_after_register() {
        let r = registry();
        assert_eq!(r.lookup("classifier").unwrap().name, "classifier");
        assert!(r.lookup("nope").is_none());
    }

    #[test]
    fn duplicate_identifies_existing() {
        let mut r = registry();
        let err = r.register(spec("vqa", vec![])).unwrap_err();
        match err {
            RegistryError::Duplicate { existing } => {
                assert_eq!(existing.name, "vqa");
                assert_eq!(existing.inputs.len(), 2);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn call_validation_examples() {
        let r = registry();
        let ok = ToolCall::new("1", "classifier", json!({"image": "img1"}));
        assert!(r.validate_call(&ok).is_ok());

        let missing = ToolCall::new("2", "classifier", json!({}));
        assert_eq!(
            render_violations(&r.validate_call(&missing).unwrap_err()),
            "missing:image"
        );

        let mistyped = ToolCall::new("3", "vqa", json!({"image": "img1", "question": 5}));
        assert_eq!(
            render_violations(&r.validate_call(&mistyped).unwrap_err()),
            "type_mismatch:question"
        );

        let unknown = ToolCall::new("4", "segmenter", json!({}));
        let v = r.validate_call(&unknown).unwrap_err();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::UnknownTool);
    }

    #[test]
    fn undeclared_and_multiple_violations() {
        let r = registry();
        let call = ToolCall::new("5", "vqa", json!({"question": true, "zoom": 2, "alpha": 1}));
        assert_eq!(
            render_violations(&r.validate_call(&call).unwrap_err()),
            "missing:image, type_mismatch:question, undeclared:alpha, undeclared:zoom"
        );
    }

    #[test]
    fn number_range_enforced() {
        let p = vec![ParamSpec::new("p", ParamType::Number, true).within(0.0, 1.0)];
        let m = |v: Value| v.as_object().unwrap().clone();
        assert!(check_fields(&p, &m(json!({"p": 0.5}))).is_empty());
        assert_eq!(
            check_fields(&p, &m(json!({"p": 1.5})))[0].kind,
            ViolationKind::OutOfRange
        );
    }
}
