//! Start a mock fleet and the gateway in-process, then drive a chat session
//! over HTTP: upload, ask, watch the event stream, resume it.
//!
//!     cargo run --example gateway_session

use std::net::SocketAddr;
use std::sync::Arc;

use anyhow::Result;
use cxr_agent::agent::Agent;
use cxr_agent::backend::{Decision, ScriptedBackend, ScriptedPolicy, Trigger};
use cxr_agent::fleet::fixtures::{fixture_image, CXR_1};
use cxr_agent::fleet::{FleetConfig, LocalFleet};
use cxr_agent::gateway::{Gateway, GatewayClient, GatewayConfig};
use cxr_agent::toolkit::ToolCall;
use futures::StreamExt;
use serde_json::json;

#[tokio::main]
async fn main() -> Result<()> {
    let fleet = LocalFleet::start(FleetConfig::standard(0, 50)).await?;
    let policy = ScriptedPolicy::new(Decision::ask_user("No image attached yet.", "Please upload the film first."))
        .rule(
            Trigger::contains("Observations from cycle 0"),
            Decision::respond("Effusion leads the classifier output.", "Right pleural effusion."),
        )
        .rule(
            Trigger::contains("{{image:0}}"),
            Decision::call_tools(
                "Classify the film.",
                vec![ToolCall::new("", "classifier", json!({"image": "{{image:0}}"}))],
            ),
        );
    let config = GatewayConfig {
        token: Some("demo-token".into()),
        ..GatewayConfig::default()
    };
    let gw = Gateway::with_bus(config, Agent::default(), Arc::new(ScriptedBackend::new(policy)?), fleet.bus.clone());
    let server = gw.bind(SocketAddr::from(([127, 0, 0, 1], 0))).await?;
    println!("gateway at {}", server.url());

    let client = GatewayClient::new(server.url()).with_token(Some("demo-token".into()));
    println!("{} tools listed", client.tools().await?.len());
    let session = client.create_session().await?;

    // no image yet: the agent asks for one
    for f in client.ask(&session, "What does the film show?").await? {
        println!("#{} {:<16} {}", f.sequence, f.kind, f.digest);
    }

    let png = fixture_image(CXR_1).expect("fixture").png.clone();
    let up = client.upload_image(&session, png, "film.png").await?;
    println!("uploaded {} ({:?})", up.image.id, up.image.kind);

    // the image placeholder now resolves in the digest the backend sees
    let accepted = client.post_message(&session, "Here it is: {{image:0}}. What does it show?").await?;
    let mut stream = Box::pin(client.events(&session, accepted.first_sequence).await?);
    let first = stream.next().await.expect("frame")?;
    println!("#{} {:<16} {}", first.sequence, first.kind, first.digest);
    drop(stream);
    println!("-- consumer dropped, resuming from {}", first.sequence + 1);
    for f in client.collect_task(&session, &accepted.task_id, first.sequence + 1).await? {
        println!("#{} {:<16} {}", f.sequence, f.kind, f.digest);
    }

    let view = client.session(&session).await?;
    println!("session {:?}, {} messages, {} frames", view.status, view.messages.len(), view.next_sequence);
    Ok(())
}
