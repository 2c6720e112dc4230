use std::time::{Duration, Instant};

use super::digest::{initial_digest, observation_digest, DEFAULT_MAX_RESULT_BYTES};
use super::memory::{MemoryBuffer, MemoryEntry};
use super::{
    AgentError, AgentEvent, AgentResponse, AgentState, AgentTask, EventBody, EventSink,
    ResponseKind, Status, TimeoutReason,
};
use crate::backend::{BackendContext, BackendError, Decision, ReasoningBackend, SYSTEM_PROMPT_V1};
use crate::toolkit::registry::render_violations;
use crate::toolkit::{Registry, ToolCall, ToolResult, Toolkit};

#[derive(Debug, Clone)]
pub struct AgentConfig {
    /// Secondary guard on loop iterations; hitting it yields a timeout response.
    pub max_cycles: u32,
    pub max_result_bytes: usize,
    /// Memory entries shown to the backend each cycle.
    pub memory_window: usize,
    /// Extra attempts after a retryable backend error.
    pub backend_retries: u32,
    pub backend_backoff: Duration,
    pub system_prompt: String,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            max_cycles: 20,
            max_result_bytes: DEFAULT_MAX_RESULT_BYTES,
            memory_window: 8,
            backend_retries: 2,
            backend_backoff: Duration::from_millis(100),
            system_prompt: SYSTEM_PROMPT_V1.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Branch {
    Respond(String),
    AskUser(String),
    CallTools(Vec<ToolCall>),
}

/// Pick the branch a decision takes. A question for the user outranks a
/// response, which outranks tool calls.
pub fn classify_decision(d: &Decision) -> Result<Branch, AgentError> {
    if let Some(q) = &d.ask_user {
        return Ok(Branch::AskUser(q.clone()));
    }
    if let Some(r) = &d.respond {
        return Ok(Branch::Respond(r.clone()));
    }
    if !d.tool_calls.is_empty() {
        return Ok(Branch::CallTools(d.tool_calls.clone()));
    }
    Err(AgentError::MalformedDecision(
        "decision has no response, no question and no tool calls".into(),
    ))
}

/// Fold a batch of results into the state. Results are reordered to match
/// `calls`, so completion order never leaks into the digest.
pub fn observe(
    state: &AgentState,
    calls: &[ToolCall],
    mut results: Vec<ToolResult>,
    max_result_bytes: usize,
) -> Result<(AgentState, Vec<ToolResult>), AgentError> {
    if results.len() != calls.len() {
        return Err(AgentError::ProtocolViolation(format!(
            "{} calls but {} results",
            calls.len(),
            results.len()
        )));
    }
    let mut ordered = Vec::with_capacity(calls.len());
    for call in calls {
        let pos = results
            .iter()
            .position(|r| r.call_id == call.call_id)
            .ok_or_else(|| {
                AgentError::ProtocolViolation(format!("no result for call {}", call.call_id))
            })?;
        ordered.push(results.swap_remove(pos));
    }
    let mut next = state.clone();
    next.cycle_index += 1;
    next.latest_observation =
        observation_digest(&state.task, state.cycle_index, &ordered, max_result_bytes);
    Ok((next, ordered))
}

fn check_decision(d: &Decision, registry: &Registry) -> Result<Branch, String> {
    let branch = classify_decision(d).map_err(|e| e.to_string())?;
    if let Branch::CallTools(calls) = &branch {
        let problems: Vec<String> = calls
            .iter()
            .enumerate()
            .filter_map(|(i, c)| {
                registry
                    .validate_call(c)
                    .err()
                    .map(|v| format!("call {i} ({}): {}", c.tool, render_violations(&v)))
            })
            .collect();
        if !problems.is_empty() {
            return Err(problems.join("; "));
        }
    }
    Ok(branch)
}

struct Transcript<'a> {
    events: Vec<AgentEvent>,
    started: Instant,
    sink: Option<&'a dyn EventSink>,
}

impl Transcript<'_> {
    fn push(&mut self, cycle_index: u32, body: EventBody) {
        let event = AgentEvent {
            cycle_index,
            timestamp_ms: self.started.elapsed().as_millis() as u64,
            body,
        };
        if let Some(sink) = self.sink {
            sink.emit(&event);
        }
        self.events.push(event);
    }
}

pub struct Agent {
    config: AgentConfig,
}

impl Default for Agent {
    fn default() -> Self {
        Self::new(AgentConfig::default())
    }
}

impl Agent {
    pub fn new(config: AgentConfig) -> Self {
        Self { config }
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub async fn run(
        &self,
        task: AgentTask,
        backend: &dyn ReasoningBackend,
        toolkit: &dyn Toolkit,
        memory: &mut MemoryBuffer,
    ) -> Result<AgentResponse, AgentError> {
        self.run_with_sink(task, backend, toolkit, memory, None).await
    }

    pub async fn run_with_sink(
        &self,
        task: AgentTask,
        backend: &dyn ReasoningBackend,
        toolkit: &dyn Toolkit,
        memory: &mut MemoryBuffer,
        sink: Option<&dyn EventSink>,
    ) -> Result<AgentResponse, AgentError> {
        if task.session_id != memory.session_id() {
            return Err(AgentError::InvalidTask(format!(
                "memory belongs to session {}, task to {}",
                memory.session_id(),
                task.session_id
            )));
        }
        if let Some(missing) = task.images.iter().find(|i| !toolkit.artifact_exists(&i.id)) {
            return Err(AgentError::InvalidTask(format!(
                "image {} is not a stored artifact",
                missing.id
            )));
        }

        let started = Instant::now();
        let budget = Duration::from_millis(task.budget_ms);
        let deadline = started + budget;
        let task_no = memory.next_task();
        memory.push(MemoryEntry::User {
            text: task.query.clone(),
        });

        let mut state = AgentState {
            latest_observation: initial_digest(&task),
            task,
            cycle_index: 0,
            started_at: started,
            status: Status::Running,
        };
        let mut log = Transcript {
            events: Vec::new(),
            started,
            sink,
        };
        let mut cycles = 0u32;
        let mut last_thought: Option<String> = None;

        let timeout_reason = loop {
            if started.elapsed() >= budget {
                break TimeoutReason::Budget;
            }
            if state.cycle_index >= self.config.max_cycles {
                break TimeoutReason::MaxCycles;
            }
            let ctx = BackendContext {
                system: self.config.system_prompt.clone(),
                state_digest: state.latest_observation.clone(),
                tools: toolkit.registry().specs().to_vec(),
                memory_window: memory.window(self.config.memory_window, self.config.max_result_bytes),
                images: state.task.images.clone(),
                repair_feedback: None,
            };
            let Some((decision, branch)) = self.decide(backend, ctx, toolkit.registry(), deadline).await?
            else {
                // budget ran out while reasoning; the loop top emits the timeout
                continue;
            };
            cycles += 1;
            let cycle = state.cycle_index;
            log.push(
                cycle,
                EventBody::Thought {
                    text: decision.thought.clone(),
                },
            );
            last_thought = Some(decision.thought.clone());

            let (kind, status, text) = match branch {
                Branch::AskUser(text) => (ResponseKind::UserPrompt, Status::AwaitingUser, text),
                Branch::Respond(text) => (ResponseKind::Answer, Status::Responded, text),
                Branch::CallTools(calls) => {
                    let calls: Vec<ToolCall> = calls
                        .into_iter()
                        .enumerate()
                        .map(|(i, mut c)| {
                            c.call_id =
                                format!("{}-t{task_no}-c{cycle}-{i}", state.task.session_id);
                            c
                        })
                        .collect();
                    log.push(cycle, EventBody::Action { calls: calls.clone() });
                    let remaining = deadline.saturating_duration_since(Instant::now());
                    let results = toolkit.invoke_batch(&calls, remaining, memory.cache()).await;
                    let (next, ordered) =
                        observe(&state, &calls, results, self.config.max_result_bytes)?;
                    state = next;
                    for (call, result) in calls.into_iter().zip(ordered.iter().cloned()) {
                        memory.push(MemoryEntry::ToolExchange {
                            thought: decision.thought.clone(),
                            call,
                            result,
                        });
                    }
                    log.push(cycle, EventBody::Observation { results: ordered });
                    continue;
                }
            };
            state.status = status;
            let body = if kind == ResponseKind::UserPrompt {
                EventBody::UserPrompt { text: text.clone() }
            } else {
                EventBody::FinalResponse { text: text.clone() }
            };
            log.push(cycle, body);
            memory.push(MemoryEntry::Assistant { text: text.clone() });
            return Ok(AgentResponse {
                kind,
                text,
                elapsed_ms: started.elapsed().as_millis() as u64,
                transcript: log.events,
                cycles,
                timeout_reason: None,
            });
        };

        state.status = Status::TimedOut;
        let text = self.timeout_text(&state.task, timeout_reason, cycles, &log.events, last_thought);
        log.push(
            state.cycle_index,
            EventBody::TimeoutResponse {
                text: text.clone(),
                reason: timeout_reason,
            },
        );
        memory.push(MemoryEntry::Assistant { text: text.clone() });
        Ok(AgentResponse {
            kind: ResponseKind::Timeout,
            text,
            elapsed_ms: started.elapsed().as_millis() as u64,
            transcript: log.events,
            cycles,
            timeout_reason: Some(timeout_reason),
        })
    }

    /// One validated decision, or `None` if the deadline passed first.
    async fn decide(
        &self,
        backend: &dyn ReasoningBackend,
        mut ctx: BackendContext,
        registry: &Registry,
        deadline: Instant,
    ) -> Result<Option<(Decision, Branch)>, AgentError> {
        let mut retries = 0;
        let mut repaired = false;
        loop {
            let remaining = deadline.saturating_duration_since(Instant::now());
            if remaining.is_zero() {
                return Ok(None);
            }
            let problem = match tokio::time::timeout(remaining, backend.decide(&ctx)).await {
                Err(_) => return Ok(None),
                Ok(Ok(d)) => match check_decision(&d, registry) {
                    Ok(branch) => return Ok(Some((d, branch))),
                    Err(p) => p,
                },
                Ok(Err(BackendError::Retryable(e))) => {
                    if retries >= self.config.backend_retries {
                        return Err(AgentError::BackendUnavailable(e));
                    }
                    retries += 1;
                    let pause = self.config.backend_backoff * retries;
                    tokio::time::sleep(pause.min(deadline.saturating_duration_since(Instant::now())))
                        .await;
                    continue;
                }
                Ok(Err(BackendError::Fatal(e))) => return Err(AgentError::BackendUnavailable(e)),
                Ok(Err(BackendError::Malformed(e))) => e,
            };
            if repaired {
                return Err(AgentError::MalformedDecision(problem));
            }
            repaired = true;
            ctx.repair_feedback = Some(problem);
        }
    }

    fn timeout_text(
        &self,
        task: &AgentTask,
        reason: TimeoutReason,
        cycles: u32,
        events: &[AgentEvent],
        last_thought: Option<String>,
    ) -> String {
        let mut text = match reason {
            TimeoutReason::Budget => format!(
                "Time budget of {} ms exhausted after {cycles} cycle(s) without a final answer.",
                task.budget_ms
            ),
            TimeoutReason::MaxCycles => format!(
                "Cycle limit of {} reached without a final answer.",
                self.config.max_cycles
            ),
        };
        let done: Vec<String> = events
            .iter()
            .filter_map(|e| match &e.body {
                EventBody::Observation { results } => Some(results),
                _ => None,
            })
            .flatten()
            .map(|r| format!("{} ({})", r.tool, if r.is_ok() { "ok" } else { "failed" }))
            .collect();
        if done.is_empty() {
            text.push_str(" No tool calls completed.");
        } else {
            text.push_str(&format!(" Completed tool calls: {}.", done.join(", ")));
        }
        if let Some(t) = last_thought.filter(|t| !t.is_empty()) {
            text.push_str(&format!(" Last thought: {t}"));
        }
        text
    }
}
