//! Deterministic synthetic scenes: the mock backend for every perception
//! atomic and the ground truth for tests and question generation.

mod oracle;
mod qa;
mod scene;

use std::collections::HashMap;
use std::sync::Arc;

pub use oracle::{match_detection, oracle_3d, oracle_depth, oracle_detect, oracle_segment, InjectedFailure, NoiseConfig};
pub use qa::{
    count_distractors, direction_from_centers, euclidean, format_distance_option, generate_qa, option_letter,
    relative_direction, Dimension, QAItem, QaError, TaskType, DIRECTIONS, DISTRACTOR_FACTORS,
};
pub use scene::{
    generate_scene, normalize_label, Camera, SceneError, SceneObject, SceneParams, SceneSpec, SceneView,
    ViewTransform, DEFAULT_VOCAB, SCENE_SCHEMA,
};

/// Read-only scene lookup by id, shared across episodes.
#[derive(Debug, Clone, Default)]
pub struct SceneStore {
    scenes: Arc<HashMap<String, Arc<SceneSpec>>>,
}

impl SceneStore {
    pub fn new(scenes: impl IntoIterator<Item = SceneSpec>) -> Self {
        let map = scenes.into_iter().map(|s| (s.id.clone(), Arc::new(s))).collect();
        Self { scenes: Arc::new(map) }
    }

    pub fn get(&self, id: &str) -> Option<&Arc<SceneSpec>> {
        self.scenes.get(id)
    }

    /// The scene as depicted by `source`, with any view applied.
    pub fn resolve(&self, source: &SceneView) -> Option<SceneSpec> {
        let scene = self.get(&source.scene_id)?;
        Some(match &source.view {
            Some(view) => scene.apply_view(view),
            None => SceneSpec::clone(scene),
        })
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.scenes.keys().map(String::as_str)
    }
}

/// Generates `n` scenes with seeds `seed, seed + 1, ...`, each with between
/// `min_objects` and `max_objects` objects (cycled by index).
pub fn generate_scenes(
    n: usize,
    seed: u64,
    object_range: (usize, usize),
    width: u32,
    height: u32,
) -> Result<Vec<SceneSpec>, SceneError> {
    let (lo, hi) = object_range;
    if lo > hi {
        return Err(SceneError::InvalidParams(format!("object range {lo}..={hi} is empty")));
    }
    (0..n)
        .map(|i| {
            let k = lo + i % (hi - lo + 1);
            generate_scene(seed.wrapping_add(i as u64), &SceneParams::new(k, width, height))
        })
        .collect()
}

/// Builds up to `n` questions, cycling through the task types and the scenes.
/// Combinations a scene cannot support are skipped; generation stops early
/// only if a full pass over every scene and task yields nothing.
pub fn generate_qa_set(scenes: &[SceneSpec], n: usize, tasks: &[TaskType], seed: u64) -> Vec<QAItem> {
    let mut items = Vec::with_capacity(n);
    if scenes.is_empty() || tasks.is_empty() {
        return items;
    }
    let mut attempt: u64 = 0;
    let mut misses = 0usize;
    while items.len() < n && misses < scenes.len() * tasks.len() {
        let task = tasks[items.len() % tasks.len()];
        let scene = &scenes[(attempt as usize) % scenes.len()];
        attempt += 1;
        match generate_qa(scene, task, seed.wrapping_add(attempt)) {
            Ok(qa) => {
                items.push(qa);
                misses = 0;
            }
            Err(_) => misses += 1,
        }
    }
    items
}
