//! Two tools disagree about a pneumothorax. Both outputs reach the backend
//! before it answers, which the transcript check confirms.
//!
//!     cargo run --example conflicting_tools

use anyhow::Result;
use cxr_agent::agent::{check_observations_reached, result_digest, Agent, AgentTask, EventBody, MemoryBuffer};
use cxr_agent::backend::{Decision, RecordingBackend, ScriptedBackend, ScriptedPolicy, Trigger};
use cxr_agent::fleet::fixtures::{CONFLICT_QUESTION, CXR_2};
use cxr_agent::fleet::{FleetConfig, LocalFleet};
use cxr_agent::toolkit::ToolCall;
use serde_json::json;

#[tokio::main]
async fn main() -> Result<()> {
    let fleet = LocalFleet::start(FleetConfig::standard(0, 0)).await?;
    let policy = ScriptedPolicy::new(Decision::call_tools(
        "Ask the classifier and the VQA model independently.",
        vec![
            ToolCall::new("", "classifier", json!({"image": "{{image:0}}"})),
            ToolCall::new("", "vqa", json!({"image": "{{image:0}}", "question": CONFLICT_QUESTION})),
        ],
    ))
    .rule(
        Trigger::contains("Observations from cycle 0"),
        Decision::respond(
            "Classifier says 0.91 pneumothorax, VQA says no. Neither settles it.",
            "Indeterminate for pneumothorax: the tools conflict. Recommend a dedicated review or expiratory film.",
        ),
    );
    let backend = RecordingBackend::new(ScriptedBackend::new(policy)?);
    let mut memory = MemoryBuffer::new("conflict");
    let task = AgentTask::new("conflict", CONFLICT_QUESTION, 10_000).with_images(vec![fleet.image(CXR_2).expect("fixture")]);
    let resp = Agent::default().run(task, &backend, &*fleet.bus, &mut memory).await?;

    for e in &resp.transcript {
        if let EventBody::Observation { results } = &e.body {
            for r in results {
                let d = result_digest(r, 200);
                println!("observed: {d}");
            }
        }
    }
    let contexts = backend.contexts();
    check_observations_reached(&resp.transcript, &contexts, 8192)?;
    println!("both observations were in the backend context before it answered");
    println!("answer: {}", resp.text);
    Ok(())
}
