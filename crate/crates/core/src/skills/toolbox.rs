use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use crate::image::{ImageStore, StoreError};
use crate::tools::{Binding, ExecContext, Registry, SyntheticBackend};
use crate::world::{NoiseConfig, SceneStore, SceneView};

/// A configured sandbox: registry, scenes and per-episode settings.
#[derive(Debug, Clone)]
pub struct Toolbox {
    pub registry: Registry,
    pub scenes: SceneStore,
    /// Failure injection applied to every skill execution.
    pub failures: NoiseConfig,
    /// Wall-clock budget per atomic call.
    pub budget: Option<Duration>,
    /// When set, rasters are written to `<root>/<episode-id>/image-<k>.png`.
    pub image_root: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum EpisodeSetupError {
    #[error("scene `{0}` is not in the scene store")]
    UnknownScene(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl Toolbox {
    /// Noise-free in-process sandbox over `scenes`.
    pub fn in_process(scenes: SceneStore) -> Self {
        let backend: Binding = Arc::new(SyntheticBackend::new(scenes.clone()));
        Self::with_backend(scenes, backend)
    }

    /// Sandbox whose perception atomics are served by `perception`.
    pub fn with_backend(scenes: SceneStore, perception: Binding) -> Self {
        Self {
            registry: Registry::with_defaults(perception),
            scenes,
            failures: NoiseConfig::off(),
            budget: None,
            image_root: None,
        }
    }

    pub fn with_failures(mut self, failures: NoiseConfig) -> Self {
        self.failures = failures;
        self
    }

    pub fn with_image_root(mut self, root: impl Into<PathBuf>) -> Self {
        self.image_root = Some(root.into());
        self
    }

    /// Fresh episode state with the scene's rendering registered as `image-0`.
    pub fn start_episode(&self, episode_id: &str, scene_id: &str, seed: u64) -> Result<ExecContext, EpisodeSetupError> {
        let scene = self.scenes.get(scene_id).ok_or_else(|| EpisodeSetupError::UnknownScene(scene_id.to_string()))?;
        let mut store = match &self.image_root {
            Some(root) => ImageStore::on_disk(root, episode_id)?,
            None => ImageStore::in_memory(episode_id),
        };
        store.register(scene.render(), Some(SceneView::of(scene_id)))?;
        let mut ctx = ExecContext::new(store, seed).with_failures(self.failures.clone());
        ctx.budget = self.budget;
        Ok(ctx)
    }
}
