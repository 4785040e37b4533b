use super::registry::{AtomicRequest, Backend, LocalUtilities};
use super::output::{AtomicOutput, Detection};
use super::{ToolError, ToolErrorKind, DEFAULT_THRESHOLD};
use crate::world::{oracle_3d, oracle_depth, oracle_detect, oracle_segment, NoiseConfig, SceneSpec, SceneStore};

/// In-process backend answering every atomic from stored scenes.
///
/// Images must carry a scene provenance; the backend resolves it (applying
/// any crop view) and runs the matching oracle. Failure injection is driven
/// by the caller through [`AtomicRequest::inject`], so the failure fields of
/// the perception noise are ignored here.
#[derive(Debug, Clone)]
pub struct SyntheticBackend {
    scenes: SceneStore,
    noise: NoiseConfig,
}

impl SyntheticBackend {
    pub fn new(scenes: SceneStore) -> Self {
        Self { scenes, noise: NoiseConfig::off() }
    }

    pub fn with_noise(mut self, noise: NoiseConfig) -> Self {
        self.noise = NoiseConfig { failure_prob: 0.0, ..noise };
        self
    }

    pub fn scenes(&self) -> &SceneStore {
        &self.scenes
    }

    fn scene_for(&self, request: &AtomicRequest<'_>) -> Result<SceneSpec, ToolError> {
        let source = request.image.source.as_ref().ok_or_else(|| {
            ToolError::new(ToolErrorKind::ExecutionError, format!("{} has no scene provenance", request.input.image))
        })?;
        self.scenes
            .resolve(source)
            .ok_or_else(|| ToolError::new(ToolErrorKind::ExecutionError, format!("unknown scene `{}`", source.scene_id)))
    }
}

fn upstream_detections<'a>(request: &'a AtomicRequest<'_>) -> Result<&'a [Detection], ToolError> {
    request
        .input
        .inputs
        .iter()
        .find_map(|o| match o {
            AtomicOutput::Detections { detections } => Some(detections.as_slice()),
            _ => None,
        })
        .ok_or_else(|| ToolError::new(ToolErrorKind::ExecutionError, format!("`{}` needs upstream detections", request.name)))
}

impl Backend for SyntheticBackend {
    fn invoke(&self, request: &AtomicRequest<'_>) -> Result<AtomicOutput, ToolError> {
        if let Some(kind) = request.inject {
            return Err(ToolError::injected(kind));
        }
        match request.name {
            "detect_objects" => {
                let scene = self.scene_for(request)?;
                let labels = request.input.text_list("text_labels").unwrap_or_default();
                let threshold = request.input.number("threshold").unwrap_or(DEFAULT_THRESHOLD);
                let mut detections = oracle_detect(&scene, labels, &self.noise, request.seed)
                    .map_err(|f| ToolError::injected(f.0))?;
                detections.retain(|d| d.score >= threshold);
                Ok(AtomicOutput::Detections { detections })
            }
            "segment" => {
                let scene = self.scene_for(request)?;
                Ok(AtomicOutput::Mask { masks: oracle_segment(&scene, upstream_detections(request)?) })
            }
            "depth_estimate" => Ok(AtomicOutput::DepthField { depth: oracle_depth(&self.scene_for(request)?) }),
            "reconstruct_3d" => {
                let scene = self.scene_for(request)?;
                let points = oracle_3d(&scene, upstream_detections(request)?);
                Ok(AtomicOutput::PointCloud3D { points, focal_px: Some(scene.camera.focal_px) })
            }
            "compute" | "render" => LocalUtilities.invoke(request),
            other => Err(ToolError::new(ToolErrorKind::ExecutionError, format!("unknown operation `{other}`"))),
        }
    }
}
