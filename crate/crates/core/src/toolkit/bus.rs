use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use futures::future::{BoxFuture, FutureExt};
use futures::stream::{self, StreamExt};
use reqwest::multipart::{Form, Part};
use serde_json::Value;
use tracing::debug;

use super::cache::{CacheKey, ToolCache};
use super::registry::{check_payload, render_violations, Registry};
use super::spec::{Category, ToolCall, ToolErrorKind, ToolResult, ToolSpec, ToolStatus};
use super::wire::{self, WireCall, WireResponse, WireStatus};
use super::Toolkit;
use crate::media::display::is_png;
use crate::media::{content_hash, dicom, ArtifactStore, ImageRef, MediaKind};

pub const DEFAULT_CONCURRENCY: usize = 4;

/// Validates, caches and dispatches tool calls to HTTP tool servers.
pub struct ToolBus {
    registry: Arc<Registry>,
    store: Arc<ArtifactStore>,
    http: reqwest::Client,
    concurrency: usize,
}

struct ResolvedImage {
    param: String,
    hash: String,
    bytes: Arc<Vec<u8>>,
}

fn elapsed_ms(since: Instant) -> u64 {
    since.elapsed().as_millis() as u64
}

fn sniff_kind(bytes: &[u8]) -> MediaKind {
    if dicom::is_dicom(bytes) {
        MediaKind::Dicom
    } else {
        MediaKind::Png
    }
}

fn describe_reqwest(err: &reqwest::Error) -> String {
    let mut text = err.to_string();
    let mut source = std::error::Error::source(err);
    while let Some(s) = source {
        text.push_str(": ");
        text.push_str(&s.to_string());
        source = s.source();
    }
    text
}

impl ToolBus {
    pub fn new(registry: Arc<Registry>, store: Arc<ArtifactStore>) -> Self {
        Self {
            registry,
            store,
            http: reqwest::Client::new(),
            concurrency: DEFAULT_CONCURRENCY,
        }
    }

    pub fn with_concurrency(mut self, limit: usize) -> Self {
        self.concurrency = limit.max(1);
        self
    }

    pub fn concurrency(&self) -> usize {
        self.concurrency
    }

    pub fn store(&self) -> &Arc<ArtifactStore> {
        &self.store
    }

    pub fn registry_arc(&self) -> &Arc<Registry> {
        &self.registry
    }

    /// Resolve an image argument: an artifact id in the store, else a file
    /// path (which is then stored so later references hit the store).
    async fn resolve_image(&self, value: &str) -> Result<(String, Arc<Vec<u8>>), String> {
        if let Ok(bytes) = self.store.load(value) {
            return Ok((value.to_string(), bytes));
        }
        let path = Path::new(value);
        match tokio::fs::read(path).await {
            Ok(bytes) => {
                let r = self.store.store(&bytes, sniff_kind(&bytes));
                Ok((r.id, Arc::new(bytes)))
            }
            Err(e) => Err(format!("image {value:?} is neither a stored artifact nor a readable file: {e}")),
        }
    }

    /// Invoke one call. Never fails: every fault becomes a non-ok result.
    pub async fn invoke(
        &self,
        call: &ToolCall,
        budget: Duration,
        cache: Option<&ToolCache>,
    ) -> ToolResult {
        let started = Instant::now();
        let Some(spec) = self.registry.lookup(&call.tool) else {
            return ToolResult::failed(
                call,
                ToolStatus::Error,
                ToolErrorKind::UnknownTool,
                format!("unknown tool {}", call.tool),
                0,
            );
        };
        if let Err(v) = self.registry.validate_call(call) {
            return ToolResult::failed(
                call,
                ToolStatus::Error,
                ToolErrorKind::InvalidCall,
                format!("invalid arguments: {}", render_violations(&v)),
                0,
            );
        }

        let mut images = Vec::new();
        for p in spec.image_inputs() {
            let Some(Value::String(reference)) = call.arguments.get(&p.name) else {
                continue;
            };
            match self.resolve_image(reference).await {
                Ok((hash, bytes)) => images.push(ResolvedImage {
                    param: p.name.clone(),
                    hash,
                    bytes,
                }),
                Err(e) => {
                    return ToolResult::failed(
                        call,
                        ToolStatus::Error,
                        ToolErrorKind::ImageUnavailable,
                        e,
                        elapsed_ms(started),
                    )
                }
            }
        }
        let hashes: BTreeMap<String, String> = images
            .iter()
            .map(|i| (i.param.clone(), i.hash.clone()))
            .collect();
        let key = CacheKey::new(spec, &call.arguments, &hashes);

        if spec.cacheable {
            if let Some(hit) = cache.and_then(|c| c.get(&key)) {
                return ToolResult {
                    call_id: call.call_id.clone(),
                    from_cache: true,
                    latency_ms: elapsed_ms(started),
                    ..hit
                };
            }
        }

        let timeout = Duration::from_millis(spec.timeout_ms).min(budget);
        if timeout.is_zero() {
            return ToolResult::timed_out(call, 0);
        }
        let result = match tokio::time::timeout(timeout, self.exchange(spec, call, &images)).await {
            Ok(Ok((payload, artifacts))) => {
                ToolResult::ok(call, payload, artifacts, elapsed_ms(started))
            }
            Ok(Err((kind, text))) => {
                ToolResult::failed(call, ToolStatus::Error, kind, text, elapsed_ms(started))
            }
            Err(_) => ToolResult::timed_out(call, timeout.as_millis() as u64),
        };
        debug!(tool = %call.tool, call_id = %call.call_id, status = ?result.status, "tool call finished");

        if result.is_ok() && spec.cacheable {
            if let Some(c) = cache {
                c.insert(key, result.clone());
            }
        }
        result
    }

    async fn exchange(
        &self,
        spec: &ToolSpec,
        call: &ToolCall,
        images: &[ResolvedImage],
    ) -> Result<(Value, Vec<ImageRef>), (ToolErrorKind, String)> {
        let mut wire_call = WireCall {
            call_id: call.call_id.clone(),
            tool: call.tool.clone(),
            arguments: call.arguments.clone(),
        };
        for img in images {
            wire_call
                .arguments
                .insert(img.param.clone(), Value::String(img.hash.clone()));
        }
        let call_json = serde_json::to_string(&wire_call).expect("wire call serializes");
        let mut form = Form::new().part(
            wire::CALL_PART,
            Part::text(call_json)
                .mime_str("application/json")
                .expect("static mime"),
        );
        for img in images {
            form = form.part(
                img.param.clone(),
                Part::bytes(img.bytes.as_ref().clone())
                    .file_name(img.hash.clone())
                    .mime_str("application/octet-stream")
                    .expect("static mime"),
            );
        }

        let transport = |e: reqwest::Error| (ToolErrorKind::Transport, describe_reqwest(&e));
        let resp = self
            .http
            .post(wire::url(&spec.endpoint, wire::INVOKE_PATH))
            .multipart(form)
            .send()
            .await
            .map_err(transport)?;
        let status = resp.status();
        let body = resp.bytes().await.map_err(transport)?;
        if status != reqwest::StatusCode::OK {
            return Err((
                ToolErrorKind::HttpStatus,
                format!(
                    "tool server returned HTTP {}: {}",
                    status.as_u16(),
                    String::from_utf8_lossy(&body).chars().take(200).collect::<String>()
                ),
            ));
        }
        let bad = |msg: String| (ToolErrorKind::BadPayload, msg);
        let reply: WireResponse = serde_json::from_slice(&body)
            .map_err(|e| bad(format!("unparseable tool response: {e}")))?;
        if reply.call_id != call.call_id {
            return Err(bad(format!(
                "response call_id {} does not match {}",
                reply.call_id, call.call_id
            )));
        }
        match reply.status {
            WireStatus::Error => Err((
                ToolErrorKind::Tool,
                reply
                    .error_text
                    .unwrap_or_else(|| "tool reported an error without detail".into()),
            )),
            WireStatus::Ok => {
                let payload = reply
                    .payload
                    .ok_or_else(|| bad("status ok without payload".into()))?;
                let violations = check_payload(spec, &payload);
                if !violations.is_empty() {
                    return Err(bad(format!(
                        "payload violates output schema: {}",
                        render_violations(&violations)
                    )));
                }
                let artifacts = self
                    .fetch_artifacts(spec, &payload, &reply.artifacts)
                    .await?;
                Ok((payload, artifacts))
            }
        }
    }

    async fn fetch_artifacts(
        &self,
        spec: &ToolSpec,
        payload: &Value,
        listed: &[String],
    ) -> Result<Vec<ImageRef>, (ToolErrorKind, String)> {
        let mut out = Vec::new();
        for p in spec.image_outputs() {
            let Some(Value::String(id)) = payload.get(&p.name) else {
                continue;
            };
            if !listed.contains(id) {
                return Err((
                    ToolErrorKind::BadPayload,
                    format!("output {} references unlisted artifact {id}", p.name),
                ));
            }
            let url = wire::url(&spec.endpoint, &format!("{}/{id}", wire::ARTIFACTS_PATH));
            let resp = self
                .http
                .get(url)
                .send()
                .await
                .map_err(|e| (ToolErrorKind::Transport, describe_reqwest(&e)))?;
            if !resp.status().is_success() {
                return Err((
                    ToolErrorKind::HttpStatus,
                    format!("artifact {id} fetch returned HTTP {}", resp.status().as_u16()),
                ));
            }
            let bytes = resp
                .bytes()
                .await
                .map_err(|e| (ToolErrorKind::Transport, describe_reqwest(&e)))?;
            if content_hash(&bytes) != *id {
                return Err((
                    ToolErrorKind::BadPayload,
                    format!("artifact {id} bytes do not match their id"),
                ));
            }
            let kind = if spec.category == Category::Generation {
                MediaKind::Synthetic
            } else if is_png(&bytes) {
                MediaKind::Png
            } else {
                sniff_kind(&bytes)
            };
            out.push(self.store.store(&bytes, kind));
        }
        Ok(out)
    }

    /// Run calls concurrently (up to the configured limit) under one shared
    /// deadline. Results come back in call order; a failing call never
    /// cancels its siblings.
    pub async fn invoke_batch(
        &self,
        calls: &[ToolCall],
        budget: Duration,
        cache: Option<&ToolCache>,
    ) -> Vec<ToolResult> {
        let deadline = Instant::now() + budget;
        let pending: Vec<BoxFuture<'_, ToolResult>> = calls
            .iter()
            .map(|call| {
                async move {
                    let remaining = deadline.saturating_duration_since(Instant::now());
                    self.invoke(call, remaining, cache).await
                }
                .boxed()
            })
            .collect();
        stream::iter(pending)
            .buffered(self.concurrency)
            .collect()
            .await
    }

    /// `GET /healthz` on every registered tool, in registry order.
    pub async fn health(&self, timeout: Duration) -> Vec<(String, bool)> {
        let checks = self.registry.specs().iter().map(|spec| async move {
            let ok = self
                .http
                .get(wire::url(&spec.endpoint, wire::HEALTH_PATH))
                .timeout(timeout)
                .send()
                .await
                .map(|r| r.status() == reqwest::StatusCode::OK)
                .unwrap_or(false);
            (spec.name.clone(), ok)
        });
        futures::future::join_all(checks).await
    }
}

#[async_trait]
impl Toolkit for ToolBus {
    fn registry(&self) -> &Registry {
        &self.registry
    }

    fn artifact_exists(&self, id: &str) -> bool {
        self.store.contains(id)
    }

    async fn invoke_batch(
        &self,
        calls: &[ToolCall],
        budget: Duration,
        cache: &ToolCache,
    ) -> Vec<ToolResult> {
        ToolBus::invoke_batch(self, calls, budget, Some(cache)).await
    }
}
