//! One agent task against the in-process mock fleet, printing each event
//! as the loop emits it.
//!
//!     cargo run --example react_loop

use anyhow::Result;
use cxr_agent::agent::{canonical_transcript, Agent, AgentEvent, AgentTask, EventBody, MemoryBuffer};
use cxr_agent::backend::{Decision, ScriptedBackend, ScriptedPolicy, Trigger};
use cxr_agent::fleet::fixtures::CXR_1;
use cxr_agent::fleet::{FleetConfig, LocalFleet};
use cxr_agent::toolkit::ToolCall;
use serde_json::json;

#[tokio::main]
async fn main() -> Result<()> {
    let fleet = LocalFleet::start(FleetConfig::standard(0, 0)).await?;

    // cycle 0: classify and ask for a report in one batch; cycle 1: answer
    let policy = ScriptedPolicy::new(Decision::call_tools(
        "Screen for pathologies and get a draft report.",
        vec![
            ToolCall::new("", "classifier", json!({"image": "{{image:0}}"})),
            ToolCall::new("", "report_generation", json!({"image": "{{image:0}}"})),
        ],
    ))
    .rule(
        Trigger::contains("Observations from cycle 0"),
        Decision::respond(
            "Classifier and report agree on a right effusion.",
            "Moderate right pleural effusion with basilar atelectasis.",
        ),
    );
    let backend = ScriptedBackend::new(policy)?;

    let print = |e: &AgentEvent| {
        let line = match &e.body {
            EventBody::Thought { text } => format!("thought      {text}"),
            EventBody::Action { calls } => format!(
                "action       {}",
                calls.iter().map(|c| c.tool.as_str()).collect::<Vec<_>>().join(", ")
            ),
            EventBody::Observation { results } => format!(
                "observation  {}",
                results
                    .iter()
                    .map(|r| format!("{}={:?}", r.tool, r.status))
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
            other => format!("{:<12} {:?}", other.kind(), other),
        };
        println!("[cycle {} +{}ms] {line}", e.cycle_index, e.timestamp_ms);
    };

    let mut memory = MemoryBuffer::new("demo");
    let task = AgentTask::new("demo", "What does this chest film show?", 10_000)
        .with_images(vec![fleet.image(CXR_1).expect("fixture")]);
    let resp = Agent::default()
        .run_with_sink(task, &backend, &*fleet.bus, &mut memory, Some(&print))
        .await?;

    println!("\n{:?}: {}", resp.kind, resp.text);
    println!("{} cycle(s), {} tool call(s), {} ms", resp.cycles, resp.tool_calls(), resp.elapsed_ms);
    println!("memory holds {} entries", memory.len());
    println!("\ncanonical transcript:\n{}", canonical_transcript(&resp.transcript));
    Ok(())
}
