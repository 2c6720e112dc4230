use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Lowercase hex SHA-256 of `bytes`. Artifact ids and cache keys use this.
pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MediaKind {
    Png,
    Jpeg,
    Dicom,
    Synthetic,
}

impl MediaKind {
    pub fn content_type(self) -> &'static str {
        match self {
            MediaKind::Png | MediaKind::Synthetic => "image/png",
            MediaKind::Jpeg => "image/jpeg",
            MediaKind::Dicom => "application/dicom",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MediaKind::Png => "png",
            MediaKind::Jpeg => "jpeg",
            MediaKind::Dicom => "dicom",
            MediaKind::Synthetic => "synthetic",
        }
    }
}

/// Reference to an immutable stored artifact. `id` is the content hash of the bytes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageRef {
    pub id: String,
    pub kind: MediaKind,
    pub byte_len: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StoreError {
    #[error("artifact not found: {0}")]
    NotFound(String),
    #[error("artifact {0} failed hash verification")]
    HashMismatch(String),
}

impl StoreError {
    pub fn kind(&self) -> &'static str {
        match self {
            StoreError::NotFound(_) => "not_found",
            StoreError::HashMismatch(_) => "hash_mismatch",
        }
    }
}

#[derive(Debug)]
struct Stored {
    kind: MediaKind,
    bytes: Arc<Vec<u8>>,
}

/// In-memory content-addressed store. Writes are idempotent; reads re-verify
/// the hash so a corrupted entry is never served.
#[derive(Debug, Default)]
pub struct ArtifactStore {
    items: RwLock<HashMap<String, Stored>>,
}

impl ArtifactStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn store(&self, bytes: &[u8], kind: MediaKind) -> ImageRef {
        let id = content_hash(bytes);
        let mut items = self.items.write().expect("artifact store poisoned");
        // first writer wins; identical bytes give the identical id anyway
        let entry = items.entry(id.clone()).or_insert_with(|| Stored {
            kind,
            bytes: Arc::new(bytes.to_vec()),
        });
        ImageRef {
            id,
            kind: entry.kind,
            byte_len: entry.bytes.len() as u64,
        }
    }

    pub fn load(&self, id: &str) -> Result<Arc<Vec<u8>>, StoreError> {
        let items = self.items.read().expect("artifact store poisoned");
        let stored = items
            .get(id)
            .ok_or_else(|| StoreError::NotFound(id.to_string()))?;
        if content_hash(&stored.bytes) != id {
            return Err(StoreError::HashMismatch(id.to_string()));
        }
        Ok(stored.bytes.clone())
    }

    pub fn get_ref(&self, id: &str) -> Option<ImageRef> {
        let items = self.items.read().expect("artifact store poisoned");
        items.get(id).map(|s| ImageRef {
            id: id.to_string(),
            kind: s.kind,
            byte_len: s.bytes.len() as u64,
        })
    }

    pub fn contains(&self, id: &str) -> bool {
        self.items
            .read()
            .expect("artifact store poisoned")
            .contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.items.read().expect("artifact store poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[cfg(test)]
    fn corrupt(&self, id: &str) {
        let mut items = self.items.write().unwrap();
        if let Some(s) = items.get_mut(id) {
            let mut b = (*s.bytes).clone();
            b.push(0);
            s.bytes = Arc::new(b);
        }
    }
}
