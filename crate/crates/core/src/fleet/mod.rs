//! Deterministic mock tool servers for the seven tool categories, serving
//! fixture-backed responses over the tool wire protocol.

pub mod fixtures;
pub mod server;

pub use fixtures::{fixture_image, fixture_images, make_fixture_suite, FixtureImage, FixtureTable};
pub use server::{serve, FailureMode, FleetConfig, FleetError, FleetHandle, ToolServerConfig};

use std::sync::Arc;

use crate::media::{ArtifactStore, ImageRef, MediaKind};
use crate::toolkit::ToolBus;

/// A running fleet plus a tool bus wired to it, with the fixture images
/// already in the bus's artifact store.
pub struct LocalFleet {
    pub handle: FleetHandle,
    pub bus: Arc<ToolBus>,
    pub images: Vec<ImageRef>,
}

impl LocalFleet {
    pub async fn start(config: FleetConfig) -> Result<Self, FleetError> {
        Self::start_with_store(config, Arc::new(ArtifactStore::new())).await
    }

    pub async fn start_with_store(
        config: FleetConfig,
        store: Arc<ArtifactStore>,
    ) -> Result<Self, FleetError> {
        let handle = serve(config, make_fixture_suite()).await?;
        let images = fixture_images()
            .iter()
            .map(|img| store.store(&img.png, MediaKind::Png))
            .collect();
        let bus = Arc::new(ToolBus::new(Arc::new(handle.registry()), store));
        Ok(Self { handle, bus, images })
    }

    /// Stored reference of a fixture image by name.
    pub fn image(&self, name: &str) -> Option<ImageRef> {
        let hash = &fixture_image(name)?.hash;
        self.images.iter().find(|i| &i.id == hash).cloned()
    }
}
