use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Multipart, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::watch;
use tokio::task::JoinHandle;

use super::fixtures::{generated_image_png, FixtureTable};
use crate::media::{content_hash, parse_dicom, to_display_image};
use crate::toolkit::catalog::{self, standard_specs};
use crate::toolkit::wire::{self, WireCall, WireResponse, WireStats};
use crate::toolkit::{CacheKey, Registry, ToolSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FailureMode {
    #[default]
    None,
    /// Answer every invoke with HTTP 500.
    Http500,
    /// Never answer.
    Hang,
    /// Answer ok with a payload that violates the output schema.
    BadPayload,
}

impl FromStr for FailureMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(FailureMode::None),
            "http_500" => Ok(FailureMode::Http500),
            "hang" => Ok(FailureMode::Hang),
            "bad_payload" => Ok(FailureMode::BadPayload),
            other => Err(format!("unknown failure mode {other:?}")),
        }
    }
}

impl fmt::Display for FailureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailureMode::None => "none",
            FailureMode::Http500 => "http_500",
            FailureMode::Hang => "hang",
            FailureMode::BadPayload => "bad_payload",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolServerConfig {
    pub tool: String,
    /// 0 binds an ephemeral port.
    pub port: u16,
    pub delay_ms: u64,
    /// When set, each request waits a pseudo-random 0..=delay_ms derived
    /// from its call id instead of exactly delay_ms.
    pub jitter: bool,
    pub failure: FailureMode,
}

#[derive(Debug, Clone)]
pub struct FleetConfig {
    pub host: IpAddr,
    pub tools: Vec<ToolServerConfig>,
}

impl FleetConfig {
    /// All seven tools. `port_base` 0 means ephemeral ports; otherwise tool
    /// `i` listens on `port_base + i`.
    pub fn standard(port_base: u16, delay_ms: u64) -> Self {
        let tools = catalog::TOOL_NAMES
            .iter()
            .enumerate()
            .map(|(i, name)| ToolServerConfig {
                tool: name.to_string(),
                port: if port_base == 0 { 0 } else { port_base + i as u16 },
                delay_ms,
                jitter: false,
                failure: FailureMode::None,
            })
            .collect();
        Self {
            host: IpAddr::V4(Ipv4Addr::LOCALHOST),
            tools,
        }
    }

    pub fn tool_mut(&mut self, name: &str) -> Option<&mut ToolServerConfig> {
        self.tools.iter_mut().find(|t| t.tool == name)
    }

    pub fn with_delay(mut self, tool: &str, delay_ms: u64) -> Self {
        if let Some(t) = self.tool_mut(tool) {
            t.delay_ms = delay_ms;
        }
        self
    }

    pub fn with_failure(mut self, tool: &str, failure: FailureMode) -> Self {
        if let Some(t) = self.tool_mut(tool) {
            t.failure = failure;
        }
        self
    }

    pub fn with_jitter(mut self) -> Self {
        for t in &mut self.tools {
            t.jitter = true;
        }
        self
    }

    fn validate(&self) -> Result<(), FleetError> {
        let mut seen = std::collections::HashSet::new();
        for t in &self.tools {
            if !catalog::TOOL_NAMES.contains(&t.tool.as_str()) {
                return Err(FleetError::UnknownTool(t.tool.clone()));
            }
            if t.port != 0 && !seen.insert(t.port) {
                return Err(FleetError::DuplicatePort(t.port));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum FleetError {
    #[error("failed to bind port {port}: {source}")]
    Bind {
        port: u16,
        #[source]
        source: std::io::Error,
    },
    #[error("port {0} assigned to more than one tool")]
    DuplicatePort(u16),
    #[error("no mock server for tool {0}")]
    UnknownTool(String),
}

struct ToolServer {
    spec: ToolSpec,
    config: ToolServerConfig,
    fixtures: Arc<FixtureTable>,
    hits: Arc<AtomicU64>,
    artifacts: RwLock<HashMap<String, Vec<u8>>>,
}

fn jitter_delay(call_id: &str, max_ms: u64) -> u64 {
    let d = Sha256::digest(call_id.as_bytes());
    let n = u64::from_le_bytes(d[..8].try_into().expect("8 bytes"));
    n % (max_ms + 1)
}

fn protocol_error(text: impl Into<String>) -> Response {
    (StatusCode::BAD_REQUEST, text.into()).into_response()
}

impl ToolServer {
    fn keep_artifact(&self, bytes: &[u8]) -> String {
        let id = content_hash(bytes);
        self.artifacts
            .write()
            .expect("artifact map poisoned")
            .entry(id.clone())
            .or_insert_with(|| bytes.to_vec());
        id
    }

    fn respond(&self, call: &WireCall, images: &BTreeMap<String, Bytes>) -> WireResponse {
        let hashes: BTreeMap<String, String> = images
            .iter()
            .map(|(k, v)| (k.clone(), content_hash(v)))
            .collect();
        match self.spec.name.as_str() {
            catalog::GENERATION => {
                let id = self.keep_artifact(generated_image_png());
                let prompt = call.arguments.get("prompt").cloned().unwrap_or(json!(""));
                WireResponse::ok(&call.call_id, json!({"image": id, "prompt": prompt}), vec![id])
            }
            catalog::DICOM_PROCESSOR => {
                let Some(file) = images.get("file") else {
                    return WireResponse::error(&call.call_id, "missing file part");
                };
                match parse_dicom(file) {
                    Ok(d) => {
                        let id = self.keep_artifact(&to_display_image(&d));
                        WireResponse::ok(
                            &call.call_id,
                            json!({
                                "image": id,
                                "rows": d.rows,
                                "columns": d.columns,
                                "photometric": d.photometric.as_str(),
                            }),
                            vec![id],
                        )
                    }
                    Err(e) => WireResponse::error(&call.call_id, format!("{}: {e}", e.kind())),
                }
            }
            _ => {
                let key = CacheKey::new(&self.spec, &call.arguments, &hashes);
                match self.fixtures.lookup(&key) {
                    Some(payload) => WireResponse::ok(&call.call_id, payload.clone(), vec![]),
                    None => WireResponse::error(&call.call_id, "no fixture for this request"),
                }
            }
        }
    }
}

async fn invoke(State(server): State<Arc<ToolServer>>, mut multipart: Multipart) -> Response {
    server.hits.fetch_add(1, Ordering::SeqCst);

    let mut call: Option<WireCall> = None;
    let mut images = BTreeMap::new();
    loop {
        match multipart.next_field().await {
            Ok(Some(field)) => {
                let name = field.name().unwrap_or_default().to_string();
                let data = match field.bytes().await {
                    Ok(d) => d,
                    Err(e) => return protocol_error(format!("unreadable part {name}: {e}")),
                };
                if name == wire::CALL_PART {
                    match serde_json::from_slice(&data) {
                        Ok(c) => call = Some(c),
                        Err(e) => return protocol_error(format!("bad call part: {e}")),
                    }
                } else {
                    images.insert(name, data);
                }
            }
            Ok(None) => break,
            Err(e) => return protocol_error(format!("bad multipart body: {e}")),
        }
    }
    let Some(call) = call else {
        return protocol_error("missing call part");
    };
    if call.tool != server.spec.name {
        return protocol_error(format!("this server hosts {}, not {}", server.spec.name, call.tool));
    }
    for p in server.spec.image_inputs() {
        let declared = call.arguments.get(&p.name).and_then(Value::as_str);
        match (declared, images.get(&p.name)) {
            (Some(hash), Some(bytes)) if content_hash(bytes) == hash => {}
            (None, None) => {}
            _ => return protocol_error(format!("image part {} missing or hash mismatch", p.name)),
        }
    }

    let cfg = &server.config;
    let delay = if cfg.jitter {
        jitter_delay(&call.call_id, cfg.delay_ms)
    } else {
        cfg.delay_ms
    };
    if delay > 0 {
        tokio::time::sleep(Duration::from_millis(delay)).await;
    }

    match cfg.failure {
        FailureMode::Http500 => {
            return (StatusCode::INTERNAL_SERVER_ERROR, "injected failure").into_response()
        }
        FailureMode::Hang => {
            std::future::pending::<()>().await;
            unreachable!()
        }
        FailureMode::BadPayload => {
            return Json(WireResponse::ok(&call.call_id, json!({"unexpected": true}), vec![]))
                .into_response()
        }
        FailureMode::None => {}
    }
    Json(server.respond(&call, &images)).into_response()
}

async fn healthz() -> &'static str {
    "ok"
}

async fn stats(State(server): State<Arc<ToolServer>>) -> Json<WireStats> {
    Json(WireStats {
        tool: server.spec.name.clone(),
        invocations: server.hits.load(Ordering::SeqCst),
    })
}

async fn reset_stats(State(server): State<Arc<ToolServer>>) -> StatusCode {
    server.hits.store(0, Ordering::SeqCst);
    StatusCode::NO_CONTENT
}

async fn artifact(State(server): State<Arc<ToolServer>>, Path(id): Path<String>) -> Response {
    let bytes = server
        .artifacts
        .read()
        .expect("artifact map poisoned")
        .get(&id)
        .cloned();
    match bytes {
        Some(b) => ([(header::CONTENT_TYPE, "image/png")], b).into_response(),
        None => StatusCode::NOT_FOUND.into_response(),
    }
}

fn router(server: Arc<ToolServer>) -> Router {
    Router::new()
        .route(wire::INVOKE_PATH, post(invoke))
        .route(wire::HEALTH_PATH, get(healthz))
        .route(wire::STATS_PATH, get(stats).delete(reset_stats))
        .route(&format!("{}/{{id}}", wire::ARTIFACTS_PATH), get(artifact))
        .with_state(server)
}

struct RunningTool {
    tool: String,
    addr: SocketAddr,
    hits: Arc<AtomicU64>,
}

/// A running fleet. Dropping the handle stops the servers.
pub struct FleetHandle {
    tools: Vec<RunningTool>,
    shutdown: watch::Sender<bool>,
    tasks: Vec<JoinHandle<()>>,
}

impl FleetHandle {
    pub fn endpoint(&self, tool: &str) -> Option<String> {
        self.tools
            .iter()
            .find(|t| t.tool == tool)
            .map(|t| format!("http://{}", t.addr))
    }

    /// (tool, base URL) in start order.
    pub fn endpoints(&self) -> Vec<(String, String)> {
        self.tools
            .iter()
            .map(|t| (t.tool.clone(), format!("http://{}", t.addr)))
            .collect()
    }

    /// Standard specs for the running tools, pointing at this fleet.
    pub fn specs(&self) -> Vec<ToolSpec> {
        standard_specs(|name| {
            self.endpoint(name)
                .unwrap_or_else(|| "http://127.0.0.1:9".to_string())
        })
        .into_iter()
        .filter(|s| self.endpoint(&s.name).is_some())
        .collect()
    }

    pub fn registry(&self) -> Registry {
        Registry::from_specs(self.specs()).expect("catalog specs are valid and unique")
    }

    /// In-process view of a tool's hit counter (same value `/stats` reports).
    pub fn hits(&self, tool: &str) -> u64 {
        self.tools
            .iter()
            .find(|t| t.tool == tool)
            .map(|t| t.hits.load(Ordering::SeqCst))
            .unwrap_or(0)
    }

    pub fn total_hits(&self) -> u64 {
        self.tools.iter().map(|t| t.hits.load(Ordering::SeqCst)).sum()
    }

    pub fn reset_hits(&self) {
        for t in &self.tools {
            t.hits.store(0, Ordering::SeqCst);
        }
    }

    pub async fn shutdown(mut self) {
        let _ = self.shutdown.send(true);
        for t in self.tasks.drain(..) {
            let _ = t.await;
        }
    }
}

impl Drop for FleetHandle {
    fn drop(&mut self) {
        let _ = self.shutdown.send(true);
        for t in &self.tasks {
            t.abort();
        }
    }
}

/// Bind every configured tool server, then start serving. Binding happens
/// before any server starts, so a port conflict leaves nothing running.
pub async fn serve(config: FleetConfig, fixtures: FixtureTable) -> Result<FleetHandle, FleetError> {
    config.validate()?;
    let fixtures = Arc::new(fixtures);
    let specs = standard_specs(|_| "http://unused.invalid".to_string());

    let mut listeners = Vec::new();
    for t in &config.tools {
        let listener = TcpListener::bind(SocketAddr::new(config.host, t.port))
            .await
            .map_err(|source| FleetError::Bind {
                port: t.port,
                source,
            })?;
        listeners.push((t.clone(), listener));
    }

    let (shutdown, _) = watch::channel(false);
    let mut tools = Vec::new();
    let mut tasks = Vec::new();
    for (cfg, listener) in listeners {
        let addr = listener.local_addr().map_err(|source| FleetError::Bind {
            port: cfg.port,
            source,
        })?;
        let spec = specs
            .iter()
            .find(|s| s.name == cfg.tool)
            .cloned()
            .expect("validated tool name");
        let hits = Arc::new(AtomicU64::new(0));
        let server = Arc::new(ToolServer {
            spec,
            config: cfg.clone(),
            fixtures: fixtures.clone(),
            hits: hits.clone(),
            artifacts: RwLock::new(HashMap::new()),
        });
        let mut stop = shutdown.subscribe();
        let app = router(server);
        tasks.push(tokio::spawn(async move {
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async move {
                    let _ = stop.wait_for(|v| *v).await;
                })
                .await;
        }));
        tools.push(RunningTool {
            tool: cfg.tool,
            addr,
            hits,
        });
    }
    Ok(FleetHandle {
        tools,
        shutdown,
        tasks,
    })
}

/// Parse a `--fail tool:mode` flag value.
pub fn parse_fail_flag(s: &str) -> Result<(String, FailureMode), String> {
    let (tool, mode) = s
        .split_once(':')
        .ok_or_else(|| format!("expected <tool>:<mode>, got {s:?}"))?;
    Ok((tool.to_string(), mode.parse()?))
}
