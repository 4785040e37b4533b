use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use super::{ImageRef, Raster};
use crate::world::SceneView;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{0} is not registered in this episode")]
    Unresolved(ImageRef),
    #[error("failed to write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("failed to create {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// A registered raster and, when it depicts a synthetic scene, where from.
#[derive(Debug, Clone)]
pub struct StoredImage {
    pub raster: Arc<Raster>,
    pub source: Option<SceneView>,
    pub path: Option<PathBuf>,
}

/// Episode-confined mapping `image-k -> raster`.
///
/// Identifiers are handed out consecutively from `image-0`. With a root
/// directory every raster is also written to `<root>/<episode-id>/image-<k>.png`.
#[derive(Debug)]
pub struct ImageStore {
    episode_id: String,
    dir: Option<PathBuf>,
    images: Vec<StoredImage>,
}

impl ImageStore {
    pub fn in_memory(episode_id: impl Into<String>) -> Self {
        Self { episode_id: episode_id.into(), dir: None, images: Vec::new() }
    }

    pub fn on_disk(root: impl AsRef<Path>, episode_id: impl Into<String>) -> Result<Self, StoreError> {
        let episode_id = episode_id.into();
        let dir = root.as_ref().join(&episode_id);
        std::fs::create_dir_all(&dir).map_err(|source| StoreError::Io { path: dir.clone(), source })?;
        Ok(Self { episode_id, dir: Some(dir), images: Vec::new() })
    }

    pub fn episode_id(&self) -> &str {
        &self.episode_id
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn next_ref(&self) -> ImageRef {
        ImageRef(self.images.len() as u32)
    }

    pub fn register(&mut self, raster: Raster, source: Option<SceneView>) -> Result<ImageRef, StoreError> {
        let id = self.next_ref();
        let path = match &self.dir {
            Some(dir) => {
                let path = dir.join(format!("{id}.png"));
                raster.save(&path).map_err(|source| StoreError::Write { path: path.clone(), source })?;
                Some(path)
            }
            None => None,
        };
        self.images.push(StoredImage { raster: Arc::new(raster), source, path });
        Ok(id)
    }

    pub fn get(&self, id: ImageRef) -> Option<&StoredImage> {
        self.images.get(id.0 as usize)
    }

    pub fn resolve(&self, id: ImageRef) -> Result<&StoredImage, StoreError> {
        self.get(id).ok_or(StoreError::Unresolved(id))
    }

    pub fn refs(&self) -> impl Iterator<Item = ImageRef> {
        (0..self.images.len() as u32).map(ImageRef)
    }
}
