//! Evaluate the scripted agent on the committed 50-question fixture, or on
//! any question file with a matching scripted policy.
//!
//!     cargo run --example bench_eval -- [questions.jsonl policy.json]

use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Result;
use cxr_agent::agent::Agent;
use cxr_agent::backend::{ScriptedBackend, ScriptedPolicy};
use cxr_agent::bench::{evaluate, load_benchmark, AgentTarget, EvalConfig, ImageResolver};
use cxr_agent::fleet::{FleetConfig, LocalFleet};

#[tokio::main]
async fn main() -> Result<()> {
    let fixture = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/bench");
    let mut args = std::env::args().skip(1);
    let questions_path = args.next().map(PathBuf::from).unwrap_or_else(|| fixture.join("fixture_50.jsonl"));
    let policy_path = args.next().map(PathBuf::from).unwrap_or_else(|| fixture.join("fixture_policy.json"));

    let questions = load_benchmark(&questions_path)?;
    let policy: ScriptedPolicy = serde_json::from_str(&std::fs::read_to_string(&policy_path)?)?;
    let fleet = LocalFleet::start(FleetConfig::standard(0, 0)).await?;
    let root = questions_path.parent().map(PathBuf::from).unwrap_or_default();
    let target = AgentTarget::new(
        Agent::default(),
        Arc::new(ScriptedBackend::new(policy)?),
        fleet.bus.clone(),
        ImageResolver::new(fleet.bus.store().clone(), root),
        10_000,
    );

    let report = evaluate(&questions, &target, &EvalConfig::default()).await;
    println!(
        "{} questions: {:.1}% correct ({}), {} invalid after retries",
        report.total, report.accuracy, report.correct, report.invalid
    );
    for (c, b) in &report.by_competency {
        println!("  {:<16} {:5.1}%  {}/{}", c.as_str(), b.accuracy, b.correct, b.total);
    }
    for (t, b) in &report.by_question_type {
        println!("  {:<32} {:5.1}%  {}/{}", t.display_name(), b.accuracy, b.correct, b.total);
    }
    let first_invalid = report.records.iter().find(|r| r.final_letter.is_none());
    if let Some(r) = first_invalid {
        println!("\n{} was invalid; attempts:", r.question_id);
        for a in &r.attempts {
            println!("  {:?}", a.response);
        }
    }
    Ok(())
}
