use std::path::PathBuf;

use async_trait::async_trait;
use eventsource_stream::Eventsource;
use futures::{Stream, StreamExt, TryStreamExt};
use reqwest::multipart::{Form, Part};
use reqwest::{RequestBuilder, StatusCode};
use serde::de::DeserializeOwned;
use thiserror::Error;

use super::{CreatedSession, ErrorBody, PostMessage, SessionView, StreamFrame, TaskAccepted, UploadedImage};
use crate::agent::EventBody;
use crate::bench::{BenchmarkQuestion, SutError, SystemUnderTest};
use crate::toolkit::PublicToolSpec;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("transport: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("{status}: {} ({})", .body.kind, .body.detail)]
    Api { status: StatusCode, body: ErrorBody },
    #[error("event stream: {0}")]
    Stream(String),
}

impl ClientError {
    /// The `kind` of an API error body, if this is one.
    pub fn api_kind(&self) -> Option<&str> {
        match self {
            ClientError::Api { body, .. } => Some(&body.kind),
            _ => None,
        }
    }

    pub fn status(&self) -> Option<StatusCode> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            _ => None,
        }
    }
}

/// Typed client for the gateway endpoints.
#[derive(Clone)]
pub struct GatewayClient {
    base: String,
    token: Option<String>,
    http: reqwest::Client,
}

impl GatewayClient {
    pub fn new(base: impl Into<String>) -> Self {
        Self {
            base: base.into().trim_end_matches('/').to_string(),
            token: None,
            http: reqwest::Client::new(),
        }
    }

    pub fn with_token(mut self, token: Option<String>) -> Self {
        self.token = token;
        self
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    fn req(&self, method: reqwest::Method, path: &str) -> RequestBuilder {
        let r = self.http.request(method, format!("{}{path}", self.base));
        match &self.token {
            Some(t) => r.bearer_auth(t),
            None => r,
        }
    }

    async fn send(&self, r: RequestBuilder) -> Result<reqwest::Response, ClientError> {
        let resp = r.send().await?;
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let text = resp.text().await.unwrap_or_default();
        let body = serde_json::from_str(&text).unwrap_or(ErrorBody {
            kind: "http".into(),
            detail: text,
        });
        Err(ClientError::Api { status, body })
    }

    async fn json<T: DeserializeOwned>(&self, r: RequestBuilder) -> Result<T, ClientError> {
        Ok(self.send(r).await?.json().await?)
    }

    pub async fn create_session(&self) -> Result<String, ClientError> {
        let c: CreatedSession = self.json(self.req(reqwest::Method::POST, "/v1/sessions")).await?;
        Ok(c.id)
    }

    pub async fn session(&self, id: &str) -> Result<SessionView, ClientError> {
        self.json(self.req(reqwest::Method::GET, &format!("/v1/sessions/{id}"))).await
    }

    pub async fn upload_image(&self, id: &str, bytes: Vec<u8>, filename: &str) -> Result<UploadedImage, ClientError> {
        let form = Form::new().part("file", Part::bytes(bytes).file_name(filename.to_string()));
        self.json(self.req(reqwest::Method::POST, &format!("/v1/sessions/{id}/images")).multipart(form))
            .await
    }

    pub async fn post_message(&self, id: &str, text: &str) -> Result<TaskAccepted, ClientError> {
        let body = PostMessage {
            text: text.to_string(),
            image_ids: None,
        };
        self.json(self.req(reqwest::Method::POST, &format!("/v1/sessions/{id}/messages")).json(&body))
            .await
    }

    pub async fn tools(&self) -> Result<Vec<PublicToolSpec>, ClientError> {
        self.json(self.req(reqwest::Method::GET, "/v1/tools")).await
    }

    pub async fn artifact(&self, id: &str) -> Result<Vec<u8>, ClientError> {
        let resp = self.send(self.req(reqwest::Method::GET, &format!("/v1/artifacts/{id}"))).await?;
        Ok(resp.bytes().await?.to_vec())
    }

    /// Frames from sequence `from` on. The stream stays open between tasks;
    /// drop it to disconnect.
    pub async fn events(
        &self,
        id: &str,
        from: u64,
    ) -> Result<impl Stream<Item = Result<StreamFrame, ClientError>> + Send + 'static, ClientError> {
        let resp = self
            .send(self.req(reqwest::Method::GET, &format!("/v1/sessions/{id}/events?from={from}")))
            .await?;
        Ok(resp
            .bytes_stream()
            .eventsource()
            .map_err(|e| ClientError::Stream(e.to_string()))
            .and_then(|ev| async move {
                serde_json::from_str::<StreamFrame>(&ev.data).map_err(|e| ClientError::Stream(e.to_string()))
            }))
    }

    /// Read frames from `from` until the terminal frame of `task_id`.
    pub async fn collect_task(&self, id: &str, task_id: &str, from: u64) -> Result<Vec<StreamFrame>, ClientError> {
        let mut stream = Box::pin(self.events(id, from).await?);
        let mut frames = Vec::new();
        while let Some(f) = stream.next().await {
            let f = f?;
            let done = f.task_id == task_id && f.is_terminal();
            frames.push(f);
            if done {
                return Ok(frames);
            }
        }
        Err(ClientError::Stream("stream closed before the terminal frame".into()))
    }

    /// Post a message and wait for its frames.
    pub async fn ask(&self, id: &str, text: &str) -> Result<Vec<StreamFrame>, ClientError> {
        let accepted = self.post_message(id, text).await?;
        self.collect_task(id, &accepted.task_id, accepted.first_sequence).await
    }
}

/// Benchmark target that drives a running gateway: one session per
/// attempt, question images uploaded from files under `root`.
pub struct GatewayTarget {
    client: GatewayClient,
    root: PathBuf,
}

impl GatewayTarget {
    pub fn new(client: GatewayClient, root: impl Into<PathBuf>) -> Self {
        Self {
            client,
            root: root.into(),
        }
    }
}

fn sut_error(e: ClientError) -> SutError {
    match e.status() {
        Some(s) if s.is_server_error() || s == StatusCode::CONFLICT => SutError::Transient(e.to_string()),
        _ => SutError::Fatal(e.to_string()),
    }
}

#[async_trait]
impl SystemUnderTest for GatewayTarget {
    async fn answer(&self, q: &BenchmarkQuestion, prompt: &str, _attempt: u32) -> Result<String, SutError> {
        let session = self.client.create_session().await.map_err(sut_error)?;
        for img in &q.images {
            let path = self.root.join(img);
            let bytes = std::fs::read(&path).map_err(|e| SutError::Fatal(format!("{}: {e}", path.display())))?;
            self.client.upload_image(&session, bytes, img).await.map_err(sut_error)?;
        }
        let frames = self.client.ask(&session, prompt).await.map_err(sut_error)?;
        let last = frames.last().expect("collect_task returns the terminal frame");
        if let Some(err) = &last.error {
            return Err(if err.kind == "malformed_decision" {
                SutError::Transient(err.detail.clone())
            } else {
                SutError::Fatal(err.detail.clone())
            });
        }
        match &last.event.body {
            EventBody::TimeoutResponse { text, .. } => Err(SutError::Transient(text.clone())),
            EventBody::FinalResponse { text } | EventBody::UserPrompt { text } => Ok(text.clone()),
            _ => unreachable!("terminal frame"),
        }
    }
}
