//! Content-addressed tool output cache.
//!
//! A key is the tool name, the canonical serialization of its non-image
//! arguments, and the content hash of every image argument. Argument order
//! and image file names therefore never affect the key.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde_json::{Map, Number, Value};
use sha2::{Digest, Sha256};

use super::spec::{ToolResult, ToolSpec};

/// Serialize a JSON value with sorted object keys and normalized numbers
/// (integral floats print as integers, `-0` as `0`).
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_canonical(value, &mut out);
    out
}

fn normalize_number(n: &Number) -> String {
    if n.is_i64() || n.is_u64() {
        return n.to_string();
    }
    match n.as_f64() {
        Some(f) if f == 0.0 => "0".into(),
        Some(f) if f.fract() == 0.0 && f.abs() < 9.007_199_254_740_992e15 => {
            format!("{}", f as i64)
        }
        Some(f) => Number::from_f64(f)
            .map(|n| n.to_string())
            .unwrap_or_else(|| n.to_string()),
        None => n.to_string(),
    }
}

fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Null | Value::Bool(_) | Value::String(_) => {
            out.push_str(&serde_json::to_string(value).expect("scalar serializes"))
        }
        Value::Number(n) => out.push_str(&normalize_number(n)),
        Value::Array(items) => {
            out.push('[');
            for (i, v) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(v, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let sorted: BTreeMap<&String, &Value> = map.iter().collect();
            out.push('{');
            for (i, (k, v)) in sorted.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(k).expect("key serializes"));
                out.push(':');
                write_canonical(v, out);
            }
            out.push('}');
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CacheKey {
    pub tool: String,
    pub canonical_args: String,
    /// (param name, content hash), sorted by param name.
    pub image_hashes: Vec<(String, String)>,
}

impl CacheKey {
    /// Build a key. `image_hashes` maps each image parameter to the content
    /// hash of the bytes it resolved to.
    pub fn new(
        spec: &ToolSpec,
        arguments: &Map<String, Value>,
        image_hashes: &BTreeMap<String, String>,
    ) -> Self {
        let plain: Map<String, Value> = arguments
            .iter()
            .filter(|(k, _)| !spec.image_inputs().any(|p| &p.name == *k))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        Self {
            tool: spec.name.clone(),
            canonical_args: canonical_json(&Value::Object(plain)),
            image_hashes: image_hashes
                .iter()
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Hex digest over the whole key; stable across processes.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.tool.as_bytes());
        h.update([0]);
        h.update(self.canonical_args.as_bytes());
        for (k, v) in &self.image_hashes {
            h.update([0]);
            h.update(k.as_bytes());
            h.update([b'=']);
            h.update(v.as_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Per-session store of ok results for cacheable tools. No eviction; the
/// cache is dropped together with its session.
#[derive(Debug, Default)]
pub struct ToolCache {
    entries: Mutex<HashMap<CacheKey, ToolResult>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl ToolCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &CacheKey) -> Option<ToolResult> {
        let found = self
            .entries
            .lock()
            .expect("tool cache poisoned")
            .get(key)
            .cloned();
        match found {
            Some(_) => self.hits.fetch_add(1, Ordering::Relaxed),
            None => self.misses.fetch_add(1, Ordering::Relaxed),
        };
        found
    }

    /// Insert unless an entry exists; the first writer wins. Returns whether
    /// this call inserted.
    pub fn insert(&self, key: CacheKey, result: ToolResult) -> bool {
        let mut entries = self.entries.lock().expect("tool cache poisoned");
        if entries.contains_key(&key) {
            return false;
        }
        entries.insert(key, result);
        true
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("tool cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }
}
