//! Run the mock fleet with injected failures and inspect it over its wire
//! endpoints, the way an external client would.
//!
//!     cargo run --example mock_fleet

use std::time::Duration;

use anyhow::Result;
use cxr_agent::fleet::fixtures::{CONFLICT_QUESTION, CXR_2};
use cxr_agent::fleet::{FailureMode, FleetConfig, LocalFleet};
use cxr_agent::toolkit::wire::WireStats;
use cxr_agent::toolkit::ToolCall;
use serde_json::json;

#[tokio::main]
async fn main() -> Result<()> {
    let config = FleetConfig::standard(0, 0)
        .with_failure("vqa", FailureMode::Http500)
        .with_failure("grounding", FailureMode::BadPayload)
        .with_delay("segmentation", 400);
    let fleet = LocalFleet::start(config).await?;
    for (tool, url) in fleet.handle.endpoints() {
        println!("{tool:<18} {url}");
    }
    for (tool, ok) in fleet.bus.health(Duration::from_secs(1)).await {
        println!("healthz {tool}: {}", if ok { "ok" } else { "down" });
    }

    let img = fleet.image(CXR_2).expect("fixture").id;
    let calls = [
        ToolCall::new("1", "classifier", json!({"image": img})),
        ToolCall::new("2", "vqa", json!({"image": img, "question": CONFLICT_QUESTION})),
        ToolCall::new("3", "grounding", json!({"image": img, "phrase": "pneumothorax"})),
        ToolCall::new("4", "segmentation", json!({"image": img, "region": "left_lung"})),
    ];
    // the 200 ms budget cuts the slow segmentation call
    let results = fleet.bus.invoke_batch(&calls, Duration::from_millis(200), None).await;
    for r in results {
        match r.payload {
            Some(p) => println!("{:<13} ok      {}", r.tool, p),
            None => println!(
                "{:<13} {:?} {:?}: {}",
                r.tool,
                r.status,
                r.error_kind,
                r.error_text.unwrap_or_default()
            ),
        }
    }

    let url = fleet.handle.endpoint("classifier").expect("running");
    let stats: WireStats = reqwest::get(format!("{url}/stats")).await?.json().await?;
    println!("GET {url}/stats -> {stats:?}");
    reqwest::Client::new().delete(format!("{url}/stats")).send().await?;
    println!("after DELETE /stats: {} hit(s)", fleet.handle.hits("classifier"));
    Ok(())
}
