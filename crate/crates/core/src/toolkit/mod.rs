//! Tool registry, call validation, the content-addressed output cache and
//! the HTTP tool bus.

pub mod bus;
pub mod cache;
pub mod catalog;
pub mod registry;
pub mod spec;
pub mod wire;

use std::time::Duration;

use async_trait::async_trait;

pub use bus::ToolBus;
pub use cache::{canonical_json, CacheKey, ToolCache};
pub use registry::{Registry, RegistryError, Violation, ViolationKind};
pub use spec::{
    Category, ParamSpec, ParamType, PublicToolSpec, ToolCall, ToolErrorKind, ToolResult, ToolSpec,
    ToolStatus,
};

/// What the agent loop needs from a tool layer.
#[async_trait]
pub trait Toolkit: Send + Sync {
    fn registry(&self) -> &Registry;

    /// Whether an image id can be passed to tools.
    fn artifact_exists(&self, _id: &str) -> bool {
        true
    }

    /// Execute a batch of validated calls under `budget`; results are in call order.
    async fn invoke_batch(
        &self,
        calls: &[ToolCall],
        budget: Duration,
        cache: &ToolCache,
    ) -> Vec<ToolResult>;
}
