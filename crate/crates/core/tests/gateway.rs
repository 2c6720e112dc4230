use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use cxr_agent::agent::Agent;
use cxr_agent::backend::{Decision, ScriptedBackend, ScriptedPolicy, Trigger};
use cxr_agent::fleet::fixtures::{fixture_image, CXR_1};
use cxr_agent::fleet::{FleetConfig, LocalFleet};
use cxr_agent::gateway::server::GatewayHandle;
use cxr_agent::gateway::{Gateway, GatewayClient, GatewayConfig, SessionStatus, StreamFrame};
use cxr_agent::media::{write_dicom, DicomImage, MediaKind, Photometric};
use cxr_agent::toolkit::ToolCall;
use futures::StreamExt;
use serde_json::json;

fn classify_then_answer() -> ScriptedPolicy {
    ScriptedPolicy::new(Decision::call_tools(
        "check the classifier",
        vec![ToolCall::new("x", "classifier", json!({"image": "{{image:0}}"}))],
    ))
    .rule(
        Trigger::contains("Observations from cycle 0"),
        Decision::respond("effusion is the top finding", "Right pleural effusion."),
    )
}

struct Rig {
    _fleet: LocalFleet,
    server: GatewayHandle,
    client: GatewayClient,
}

async fn rig_with(policy: ScriptedPolicy, fleet: FleetConfig, config: GatewayConfig) -> Rig {
    let fleet = LocalFleet::start(fleet).await.unwrap();
    let backend = Arc::new(ScriptedBackend::new(policy).unwrap());
    let token = config.token.clone();
    let gw = Gateway::with_bus(config, Agent::default(), backend, fleet.bus.clone());
    let server = gw.bind(SocketAddr::from(([127, 0, 0, 1], 0))).await.unwrap();
    let client = GatewayClient::new(server.url()).with_token(token);
    Rig {
        _fleet: fleet,
        server,
        client,
    }
}

async fn rig() -> Rig {
    rig_with(classify_then_answer(), FleetConfig::standard(0, 0), GatewayConfig::default()).await
}

fn png() -> Vec<u8> {
    fixture_image(CXR_1).unwrap().png.clone()
}

fn kinds(frames: &[StreamFrame]) -> Vec<&str> {
    frames.iter().map(|f| f.kind.as_str()).collect()
}

fn dicom() -> DicomImage {
    DicomImage {
        rows: 4,
        columns: 3,
        bits_allocated: 16,
        photometric: Photometric::Monochrome2,
        pixels: (0..12).map(|i| i * 300).collect(),
        transfer_syntax: cxr_agent::media::dicom::EXPLICIT_VR_LITTLE_ENDIAN.into(),
    }
}

#[tokio::test]
async fn sessions_are_distinct_and_gettable() {
    let r = rig().await;
    let a = r.client.create_session().await.unwrap();
    let b = r.client.create_session().await.unwrap();
    assert_ne!(a, b);
    assert_eq!(a.len(), 32);
    let v = r.client.session(&a).await.unwrap();
    assert_eq!(v.status, SessionStatus::Idle);
    assert_eq!(v.next_sequence, 0);
    let e = r.client.session("nope").await.unwrap_err();
    assert_eq!(e.status().map(|s| s.as_u16()), Some(404));
    assert_eq!(e.api_kind(), Some("session_not_found"));
    let e = r.client.events("nope", 0).await.err().unwrap();
    assert_eq!(e.status().map(|s| s.as_u16()), Some(404));
}

#[tokio::test]
async fn bearer_token_is_enforced() {
    let config = GatewayConfig {
        token: Some("s3cret".into()),
        ..GatewayConfig::default()
    };
    let r = rig_with(classify_then_answer(), FleetConfig::standard(0, 0), config).await;
    r.client.create_session().await.unwrap();
    let anon = GatewayClient::new(r.server.url());
    let e = anon.create_session().await.unwrap_err();
    assert_eq!(e.status().map(|s| s.as_u16()), Some(401));
    let wrong = GatewayClient::new(r.server.url()).with_token(Some("nope".into()));
    assert_eq!(wrong.tools().await.unwrap_err().api_kind(), Some("unauthorized"));
}

#[tokio::test]
async fn uploads_png_dicom_and_rejects_bad_input() {
    let r = rig().await;
    let s = r.client.create_session().await.unwrap();

    let up = r.client.upload_image(&s, png(), "a.png").await.unwrap();
    assert_eq!(up.image.kind, MediaKind::Png);
    assert!(up.original.is_none());
    assert_eq!(r.client.artifact(&up.image.id).await.unwrap(), png());

    let bytes = write_dicom(&dicom());
    let up = r.client.upload_image(&s, bytes.clone(), "a.dcm").await.unwrap();
    let original = up.original.unwrap();
    assert_eq!(original.kind, MediaKind::Dicom);
    assert_eq!(up.image.kind, MediaKind::Png);
    assert_eq!(r.client.artifact(&original.id).await.unwrap(), bytes);
    let display = r.client.artifact(&up.image.id).await.unwrap();
    assert!(display.starts_with(b"\x89PNG"));

    let truncated = bytes[..bytes.len() - 5].to_vec();
    let e = r.client.upload_image(&s, truncated, "t.dcm").await.unwrap_err();
    assert_eq!(e.status().map(|s| s.as_u16()), Some(422));
    assert_eq!(e.api_kind(), Some("corrupt_pixel_data"));

    let e = r.client.upload_image(&s, b"hello".to_vec(), "x.txt").await.unwrap_err();
    assert_eq!(e.api_kind(), Some("unsupported_media"));

    let v = r.client.session(&s).await.unwrap();
    assert_eq!(v.images.len(), 2);

    let e = r.client.artifact("deadbeef").await.unwrap_err();
    assert_eq!(e.status().map(|s| s.as_u16()), Some(404));
}

#[tokio::test]
async fn scripted_task_streams_five_frames_and_resumes() {
    let r = rig().await;
    let s = r.client.create_session().await.unwrap();
    r.client.upload_image(&s, png(), "a.png").await.unwrap();
    let frames = r.client.ask(&s, "What does this film show?").await.unwrap();
    assert_eq!(kinds(&frames), ["thought", "action", "observation", "thought", "final_response"]);
    assert_eq!(frames.iter().map(|f| f.sequence).collect::<Vec<_>>(), [0, 1, 2, 3, 4]);
    assert_eq!(frames[4].digest, "Right pleural effusion.");
    assert!(frames[2].digest.starts_with("classifier ["));

    let mut resumed = Box::pin(r.client.events(&s, 3).await.unwrap());
    let a = resumed.next().await.unwrap().unwrap();
    let b = resumed.next().await.unwrap().unwrap();
    assert_eq!((a.sequence, b.sequence), (3, 4));
    assert_eq!(b, frames[4]);
    // nothing more until the next task
    assert!(tokio::time::timeout(Duration::from_millis(150), resumed.next()).await.is_err());

    let v = r.client.session(&s).await.unwrap();
    assert_eq!(v.status, SessionStatus::Idle);
    assert_eq!(v.messages.len(), 2);

    // second turn continues the sequence and reuses session memory
    let again = r.client.ask(&s, "And now?").await.unwrap();
    assert_eq!(again.first().unwrap().sequence, 5);
    assert_eq!(again.last().unwrap().sequence, 9);
    let obs = &again[2];
    assert!(obs.digest.contains("ok (cached)"), "{}", obs.digest);
}

#[tokio::test]
async fn busy_session_rejects_second_post() {
    let r = rig_with(
        classify_then_answer(),
        FleetConfig::standard(0, 0).with_delay("classifier", 300),
        GatewayConfig::default(),
    )
    .await;
    let s = r.client.create_session().await.unwrap();
    r.client.upload_image(&s, png(), "a.png").await.unwrap();
    let accepted = r.client.post_message(&s, "first").await.unwrap();
    let e = r.client.post_message(&s, "second").await.unwrap_err();
    assert_eq!(e.status().map(|s| s.as_u16()), Some(409));
    assert_eq!(e.api_kind(), Some("session_busy"));
    let frames = r.client.collect_task(&s, &accepted.task_id, 0).await.unwrap();
    assert_eq!(frames.len(), 5);
    // idle again the moment the terminal frame is visible
    r.client.post_message(&s, "third").await.unwrap();

    let e = r.client.post_message(&r.client.create_session().await.unwrap(), "  ").await.unwrap_err();
    assert_eq!(e.status().map(|s| s.as_u16()), Some(400));
}

#[tokio::test]
async fn consumer_killed_mid_task_resumes_gaplessly() {
    let r = rig_with(
        classify_then_answer(),
        FleetConfig::standard(0, 0).with_delay("classifier", 200),
        GatewayConfig::default(),
    )
    .await;
    let s = r.client.create_session().await.unwrap();
    r.client.upload_image(&s, png(), "a.png").await.unwrap();
    let accepted = r.client.post_message(&s, "What does this film show?").await.unwrap();
    let mut first = Box::pin(r.client.events(&s, 0).await.unwrap());
    let f0 = first.next().await.unwrap().unwrap();
    drop(first);
    let rest = r.client.collect_task(&s, &accepted.task_id, f0.sequence + 1).await.unwrap();
    let mut all = vec![f0];
    all.extend(rest);
    assert_eq!(all.iter().map(|f| f.sequence).collect::<Vec<_>>(), [0, 1, 2, 3, 4]);
    assert_eq!(all.iter().filter(|f| f.is_terminal()).count(), 1);
}

#[tokio::test]
async fn tools_are_listed_without_endpoints() {
    let r = rig().await;
    let tools = r.client.tools().await.unwrap();
    assert_eq!(tools.len(), 7);
    assert_eq!(tools[0].name, "classifier");
    let raw = reqwest::get(format!("{}/v1/tools", r.server.url())).await.unwrap().text().await.unwrap();
    assert!(!raw.contains("endpoint") && !raw.contains("127.0.0.1"), "{raw}");
}

#[tokio::test]
async fn agent_error_yields_one_terminal_frame_with_error() {
    // a call to an unregistered tool is malformed twice over
    let policy = ScriptedPolicy::new(Decision::call_tools(
        "try a tool that does not exist",
        vec![ToolCall::new("x", "teleporter", json!({}))],
    ));
    let r = rig_with(policy, FleetConfig::standard(0, 0), GatewayConfig::default()).await;
    let s = r.client.create_session().await.unwrap();
    let frames = r.client.ask(&s, "go").await.unwrap();
    let last = frames.last().unwrap();
    assert_eq!(last.kind, "final_response");
    assert_eq!(last.error.as_ref().unwrap().kind, "malformed_decision");
    assert_eq!(frames.iter().filter(|f| f.is_terminal()).count(), 1);
    assert_eq!(r.client.session(&s).await.unwrap().status, SessionStatus::Idle);
}
