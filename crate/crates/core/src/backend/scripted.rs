//! Rule-table backend. The first rule whose trigger matches the state
//! digest fires; the default decision makes the table total.
//!
//! String argument values may contain `{{image:N}}`, replaced with the id of
//! the N-th task image.

use async_trait::async_trait;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::{BackendContext, BackendError, Decision, ReasoningBackend};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    Always,
    Contains(String),
    Regex(String),
    All(Vec<Trigger>),
    Any(Vec<Trigger>),
    Not(Box<Trigger>),
}

impl Trigger {
    pub fn contains(s: impl Into<String>) -> Self {
        Trigger::Contains(s.into())
    }

    pub fn all(t: impl IntoIterator<Item = Trigger>) -> Self {
        Trigger::All(t.into_iter().collect())
    }

    pub fn not(t: Trigger) -> Self {
        Trigger::Not(Box::new(t))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub when: Trigger,
    pub then: Decision,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptedPolicy {
    #[serde(default)]
    pub rules: Vec<Rule>,
    pub default: Decision,
}

impl ScriptedPolicy {
    pub fn new(default: Decision) -> Self {
        Self {
            rules: Vec::new(),
            default,
        }
    }

    pub fn rule(mut self, when: Trigger, then: Decision) -> Self {
        self.rules.push(Rule { when, then });
        self
    }
}

#[derive(Debug, Error)]
#[error("invalid trigger regex {pattern:?}: {source}")]
pub struct PolicyError {
    pattern: String,
    #[source]
    source: regex::Error,
}

enum Compiled {
    Always,
    Contains(String),
    Regex(Regex),
    All(Vec<Compiled>),
    Any(Vec<Compiled>),
    Not(Box<Compiled>),
}

impl Compiled {
    fn build(t: &Trigger) -> Result<Self, PolicyError> {
        Ok(match t {
            Trigger::Always => Compiled::Always,
            Trigger::Contains(s) => Compiled::Contains(s.clone()),
            Trigger::Regex(p) => Compiled::Regex(Regex::new(p).map_err(|source| PolicyError {
                pattern: p.clone(),
                source,
            })?),
            Trigger::All(ts) => Compiled::All(ts.iter().map(Self::build).collect::<Result<_, _>>()?),
            Trigger::Any(ts) => Compiled::Any(ts.iter().map(Self::build).collect::<Result<_, _>>()?),
            Trigger::Not(t) => Compiled::Not(Box::new(Self::build(t)?)),
        })
    }

    fn matches(&self, text: &str) -> bool {
        match self {
            Compiled::Always => true,
            Compiled::Contains(s) => text.contains(s.as_str()),
            Compiled::Regex(r) => r.is_match(text),
            Compiled::All(ts) => ts.iter().all(|t| t.matches(text)),
            Compiled::Any(ts) => ts.iter().any(|t| t.matches(text)),
            Compiled::Not(t) => !t.matches(text),
        }
    }
}

/// Immutable compiled policy; a pure function of (policy, context).
pub struct ScriptedBackend {
    policy: ScriptedPolicy,
    triggers: Vec<Compiled>,
}

impl ScriptedBackend {
    pub fn new(policy: ScriptedPolicy) -> Result<Self, PolicyError> {
        let triggers = policy
            .rules
            .iter()
            .map(|r| Compiled::build(&r.when))
            .collect::<Result<_, _>>()?;
        Ok(Self { policy, triggers })
    }

    pub fn policy(&self) -> &ScriptedPolicy {
        &self.policy
    }

    /// The decision for `ctx`, before placeholder substitution.
    pub fn select(&self, ctx: &BackendContext) -> &Decision {
        self.triggers
            .iter()
            .zip(&self.policy.rules)
            .find(|(t, _)| t.matches(&ctx.state_digest))
            .map(|(_, r)| &r.then)
            .unwrap_or(&self.policy.default)
    }
}

fn substitute(value: &mut Value, ctx: &BackendContext) {
    match value {
        Value::String(s) if s.contains("{{image:") => {
            for (i, img) in ctx.images.iter().enumerate() {
                *s = s.replace(&format!("{{{{image:{i}}}}}"), &img.id);
            }
        }
        Value::Array(items) => items.iter_mut().for_each(|v| substitute(v, ctx)),
        Value::Object(m) => m.values_mut().for_each(|v| substitute(v, ctx)),
        _ => {}
    }
}

#[async_trait]
impl ReasoningBackend for ScriptedBackend {
    async fn decide(&self, ctx: &BackendContext) -> Result<Decision, BackendError> {
        let mut d = self.select(ctx).clone();
        for call in &mut d.tool_calls {
            for v in call.arguments.values_mut() {
                substitute(v, ctx);
            }
        }
        Ok(d)
    }
}
