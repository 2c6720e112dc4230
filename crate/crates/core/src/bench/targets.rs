use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use async_trait::async_trait;

use super::eval::{SutError, SystemUnderTest};
use super::question::BenchmarkQuestion;
use crate::agent::{canonical_transcript, Agent, AgentError, AgentTask, MemoryBuffer, ResponseKind};
use crate::backend::{BackendContext, BackendError, ReasoningBackend};
use crate::media::{dicom, display, ArtifactStore, ImageRef, MediaKind};
use crate::toolkit::Toolkit;

/// System prompt for answering without tools.
pub const BARE_SYSTEM_PROMPT: &str =
    "You are a radiology assistant answering a multiple-choice question about chest X-rays. \
     Think briefly, then state the single letter of the best option.";

/// Turns question image references into stored artifacts. A reference is
/// either an artifact id already in the store or a path under `root`.
#[derive(Clone)]
pub struct ImageResolver {
    pub store: Arc<ArtifactStore>,
    pub root: PathBuf,
}

impl ImageResolver {
    pub fn new(store: Arc<ArtifactStore>, root: impl Into<PathBuf>) -> Self {
        Self {
            store,
            root: root.into(),
        }
    }

    pub fn resolve(&self, refs: &[String]) -> Result<Vec<ImageRef>, String> {
        refs.iter()
            .map(|r| {
                if let Some(found) = self.store.get_ref(r) {
                    return Ok(found);
                }
                let path = self.root.join(r);
                let bytes = std::fs::read(&path)
                    .map_err(|e| format!("image {} unreadable: {e}", path.display()))?;
                let kind = if dicom::is_dicom(&bytes) {
                    MediaKind::Dicom
                } else if display::is_jpeg(&bytes) {
                    MediaKind::Jpeg
                } else {
                    MediaKind::Png
                };
                Ok(self.store.store(&bytes, kind))
            })
            .collect()
    }
}

/// The full agent, run in-process. Each attempt gets a fresh session whose
/// id is derived from the question id, so runs are reproducible.
pub struct AgentTarget {
    agent: Agent,
    backend: Arc<dyn ReasoningBackend>,
    toolkit: Arc<dyn Toolkit>,
    images: ImageResolver,
    budget_ms: u64,
    transcripts: Mutex<BTreeMap<String, String>>,
}

impl AgentTarget {
    pub fn new(
        agent: Agent,
        backend: Arc<dyn ReasoningBackend>,
        toolkit: Arc<dyn Toolkit>,
        images: ImageResolver,
        budget_ms: u64,
    ) -> Self {
        Self {
            agent,
            backend,
            toolkit,
            images,
            budget_ms,
            transcripts: Mutex::default(),
        }
    }

    /// Canonical transcripts keyed by `{question id}#{attempt}`.
    pub fn transcripts(&self) -> BTreeMap<String, String> {
        self.transcripts.lock().expect("transcripts poisoned").clone()
    }

    /// All transcripts concatenated in key order.
    pub fn transcript_dump(&self) -> String {
        self.transcripts()
            .into_iter()
            .map(|(k, t)| format!("## {k}\n{t}"))
            .collect()
    }
}

#[async_trait]
impl SystemUnderTest for AgentTarget {
    async fn answer(
        &self,
        q: &BenchmarkQuestion,
        prompt: &str,
        attempt: u32,
    ) -> Result<String, SutError> {
        let images = self.images.resolve(&q.images).map_err(SutError::Fatal)?;
        let session = format!("bench-{}-a{attempt}", q.id);
        let mut memory = MemoryBuffer::new(session.clone());
        let task = AgentTask::new(session, prompt, self.budget_ms).with_images(images);
        let out = self
            .agent
            .run(task, &*self.backend, &*self.toolkit, &mut memory)
            .await;
        let r = match out {
            Ok(r) => r,
            Err(e @ AgentError::MalformedDecision(_)) => return Err(SutError::Transient(e.to_string())),
            Err(e) => return Err(SutError::Fatal(e.to_string())),
        };
        self.transcripts
            .lock()
            .expect("transcripts poisoned")
            .insert(format!("{}#{attempt}", q.id), canonical_transcript(&r.transcript));
        match r.kind {
            ResponseKind::Timeout => Err(SutError::Transient(r.text)),
            ResponseKind::Answer | ResponseKind::UserPrompt => Ok(r.text),
        }
    }
}

/// A reasoning backend queried directly with no tools.
pub struct BackendTarget {
    backend: Arc<dyn ReasoningBackend>,
    images: Option<ImageResolver>,
    retries: u32,
}

impl BackendTarget {
    pub fn new(backend: Arc<dyn ReasoningBackend>) -> Self {
        Self {
            backend,
            images: None,
            retries: 2,
        }
    }

    pub fn with_images(mut self, images: ImageResolver) -> Self {
        self.images = Some(images);
        self
    }
}

#[async_trait]
impl SystemUnderTest for BackendTarget {
    async fn answer(&self, q: &BenchmarkQuestion, prompt: &str, _attempt: u32) -> Result<String, SutError> {
        let images = match &self.images {
            Some(r) => r.resolve(&q.images).map_err(SutError::Fatal)?,
            None => Vec::new(),
        };
        let ctx = BackendContext {
            system: BARE_SYSTEM_PROMPT.to_string(),
            state_digest: prompt.to_string(),
            tools: Vec::new(),
            memory_window: Vec::new(),
            images,
            repair_feedback: None,
        };
        let mut tries = 0;
        loop {
            match self.backend.decide(&ctx).await {
                Ok(d) => return Ok(d.ask_user.or(d.respond).unwrap_or(d.thought)),
                Err(BackendError::Retryable(e)) if tries >= self.retries => return Err(SutError::Fatal(e)),
                Err(BackendError::Retryable(_)) => tries += 1,
                Err(BackendError::Malformed(e)) => return Err(SutError::Transient(e)),
                Err(BackendError::Fatal(e)) => return Err(SutError::Fatal(e)),
            }
        }
    }
}
