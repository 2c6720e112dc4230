use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use tokio::sync::watch;

use super::{ChatMessage, SessionStatus, SessionView, StreamFrame};
use crate::agent::MemoryBuffer;
use crate::media::ImageRef;

pub(crate) struct SessionState {
    pub id: String,
    pub created_at: u64,
    pub last_active: Instant,
    pub status: SessionStatus,
    pub images: Vec<ImageRef>,
    pub messages: Vec<ChatMessage>,
    /// Taken by the running task, returned when it finishes.
    pub memory: Option<MemoryBuffer>,
    pub frames: Vec<StreamFrame>,
}

/// One chat session. The frame log is append-only; `len_tx` publishes its
/// length so stream consumers can wait for new frames.
pub(crate) struct Session {
    state: Mutex<SessionState>,
    len_tx: watch::Sender<u64>,
}

impl Session {
    pub fn new(id: String) -> Arc<Self> {
        let created_at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        Arc::new(Self {
            state: Mutex::new(SessionState {
                memory: Some(MemoryBuffer::new(id.clone())),
                id,
                created_at,
                last_active: Instant::now(),
                status: SessionStatus::Idle,
                images: Vec::new(),
                messages: Vec::new(),
                frames: Vec::new(),
            }),
            len_tx: watch::channel(0).0,
        })
    }

    pub fn lock(&self) -> MutexGuard<'_, SessionState> {
        self.state.lock().expect("session lock poisoned")
    }

    pub fn subscribe(&self) -> watch::Receiver<u64> {
        self.len_tx.subscribe()
    }

    /// Append under an already-held lock and wake consumers.
    pub fn append(&self, st: &mut SessionState, frame_of: impl FnOnce(u64) -> StreamFrame) {
        let seq = st.frames.len() as u64;
        st.frames.push(frame_of(seq));
        self.len_tx.send_replace(seq + 1);
    }

    pub fn view(&self) -> SessionView {
        let st = self.lock();
        SessionView {
            id: st.id.clone(),
            created_at: st.created_at,
            status: st.status,
            images: st.images.clone(),
            messages: st.messages.clone(),
            next_sequence: st.frames.len() as u64,
        }
    }

    pub fn frames_from(&self, from: u64) -> Vec<StreamFrame> {
        let st = self.lock();
        st.frames.iter().skip(from as usize).cloned().collect()
    }
}
