//! The tool bus on its own: registry, single calls, a parallel batch and
//! the per-session cache.
//!
//!     cargo run --example tool_bus

use std::time::{Duration, Instant};

use anyhow::Result;
use cxr_agent::backend::render_tool_specs;
use cxr_agent::fleet::fixtures::CXR_1;
use cxr_agent::fleet::{FleetConfig, LocalFleet};
use cxr_agent::toolkit::{ToolCache, ToolCall, Toolkit};
use serde_json::json;

#[tokio::main]
async fn main() -> Result<()> {
    let fleet = LocalFleet::start(
        FleetConfig::standard(0, 0)
            .with_delay("classifier", 100)
            .with_delay("report_generation", 100),
    )
    .await?;
    let bus = &fleet.bus;
    let img = fleet.image(CXR_1).expect("fixture").id;
    let budget = Duration::from_secs(5);

    println!("{}", render_tool_specs(bus.registry().specs()));

    let cache = ToolCache::new();
    let calls = vec![
        ToolCall::new("c1", "classifier", json!({"image": img})),
        ToolCall::new("c2", "report_generation", json!({"image": img})),
        ToolCall::new("c3", "grounding", json!({"image": img, "phrase": "pleural effusion"})),
    ];
    let t = Instant::now();
    let results = bus.invoke_batch(&calls, budget, Some(&cache)).await;
    println!("batch of {} took {:?} (two 100 ms tools ran side by side)", calls.len(), t.elapsed());
    for r in &results {
        println!("  {} {} {:?} cached={}", r.call_id, r.tool, r.status, r.from_cache);
    }

    // same arguments in another order: served from the cache
    let again = ToolCall::new("c4", "grounding", json!({"phrase": "pleural effusion", "image": img}));
    let r = bus.invoke(&again, budget, Some(&cache)).await;
    println!("repeat grounding: cached={} payload={}", r.from_cache, r.payload.unwrap_or_default());
    println!(
        "cache: {} entries, {} hits, {} misses; grounding server hit {} time(s)",
        cache.len(),
        cache.hits(),
        cache.misses(),
        fleet.handle.hits("grounding")
    );

    // a call that fails validation never reaches a server
    let bad = ToolCall::new("c5", "segmentation", json!({"image": img, "region": "spleen"}));
    let r = bus.invoke(&bad, budget, Some(&cache)).await;
    println!("invalid region: {:?} {:?}: {}", r.status, r.error_kind, r.error_text.unwrap_or_default());
    Ok(())
}
