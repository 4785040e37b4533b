//! Ground-truth implementations of the perception atomics over a [`SceneSpec`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::scene::{normalize_label, SceneObject, SceneSpec};
use crate::tools::{BBox, Bitmask, DepthField, Detection, ObjectMask, Point3D, ToolErrorKind};

/// Perception noise and failure simulation. All probabilities lie in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Standard deviation of per-coordinate box jitter, in pixels.
    #[serde(default)]
    pub box_jitter_px: f64,
    #[serde(default)]
    pub miss_prob: f64,
    #[serde(default)]
    pub false_positive_prob: f64,
    #[serde(default)]
    pub failure_prob: f64,
    /// Relative weights of the failure kinds drawn when a failure fires.
    #[serde(default = "default_failure_kinds")]
    pub failure_kinds: Vec<(ToolErrorKind, f64)>,
}

fn default_failure_kinds() -> Vec<(ToolErrorKind, f64)> {
    vec![(ToolErrorKind::EmptyReturn, 1.0), (ToolErrorKind::ExecutionError, 1.0)]
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self::off()
    }
}

impl NoiseConfig {
    pub fn off() -> Self {
        Self {
            box_jitter_px: 0.0,
            miss_prob: 0.0,
            false_positive_prob: 0.0,
            failure_prob: 0.0,
            failure_kinds: default_failure_kinds(),
        }
    }

    pub fn with_failures(failure_prob: f64) -> Self {
        Self { failure_prob, ..Self::off() }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, p) in [
            ("miss_prob", self.miss_prob),
            ("false_positive_prob", self.false_positive_prob),
            ("failure_prob", self.failure_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} = {p} is outside [0, 1]"));
            }
        }
        if !(self.box_jitter_px >= 0.0 && self.box_jitter_px.is_finite()) {
            return Err("box_jitter_px must be finite and non-negative".into());
        }
        if self.failure_prob > 0.0 && !self.failure_kinds.iter().any(|(_, w)| *w > 0.0) {
            return Err("failure_kinds needs a positive weight".into());
        }
        if self.failure_kinds.iter().any(|(_, w)| !(*w >= 0.0)) {
            return Err("failure kind weights must be non-negative".into());
        }
        Ok(())
    }

    pub fn is_noiseless(&self) -> bool {
        self.box_jitter_px == 0.0 && self.miss_prob == 0.0 && self.false_positive_prob == 0.0
    }

    /// Draws whether a call fails and, if so, with which kind.
    pub fn draw_failure(&self, rng: &mut impl Rng) -> Option<ToolErrorKind> {
        if self.failure_prob <= 0.0 || rng.random::<f64>() >= self.failure_prob {
            return None;
        }
        let total: f64 = self.failure_kinds.iter().map(|(_, w)| w).sum();
        let mut pick = rng.random::<f64>() * total;
        for (kind, w) in &self.failure_kinds {
            if pick < *w {
                return Some(*kind);
            }
            pick -= w;
        }
        self.failure_kinds.iter().rev().find(|(_, w)| *w > 0.0).map(|(k, _)| *k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("injected failure: {0:?}")]
pub struct InjectedFailure(pub ToolErrorKind);

const JITTER_SCORE_PER_PX: f64 = 0.02;
const MIN_SCORE: f64 = 0.05;

/// Detections of the queried labels.
///
/// Noise off: exactly the stored instances with a matching normalized label,
/// labelled with the query text, score 1. Noise on: instances may be dropped,
/// jittered (score penalised by the mean offset) and spurious boxes added.
pub fn oracle_detect<S: AsRef<str>>(
    scene: &SceneSpec,
    labels: &[S],
    noise: &NoiseConfig,
    seed: u64,
) -> Result<Vec<Detection>, InjectedFailure> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if let Some(kind) = noise.draw_failure(&mut rng) {
        return Err(InjectedFailure(kind));
    }
    let (w, h) = (f64::from(scene.width()), f64::from(scene.height()));
    let jitter = (noise.box_jitter_px > 0.0).then(|| Normal::new(0.0, noise.box_jitter_px).expect("valid sigma"));
    let mut out = Vec::new();
    for query in labels {
        let query = query.as_ref();
        for obj in scene.matching(query) {
            if noise.miss_prob > 0.0 && rng.random::<f64>() < noise.miss_prob {
                continue;
            }
            let (bbox, score) = match &jitter {
                None => (obj.bbox, 1.0),
                Some(dist) => {
                    let offsets: [f64; 4] = std::array::from_fn(|_| dist.sample(&mut rng));
                    let b = obj.bbox;
                    let x1 = (b.x1 + offsets[0]).clamp(0.0, w - 1.0);
                    let y1 = (b.y1 + offsets[1]).clamp(0.0, h - 1.0);
                    let x2 = (b.x2 + offsets[2]).clamp(x1 + 1.0, w);
                    let y2 = (b.y2 + offsets[3]).clamp(y1 + 1.0, h);
                    let mean_offset = offsets.iter().map(|o| o.abs()).sum::<f64>() / 4.0;
                    let score = (1.0 - JITTER_SCORE_PER_PX * mean_offset).clamp(MIN_SCORE, 1.0);
                    (BBox::new(x1, y1, x2, y2), score)
                }
            };
            out.push(Detection { label: query.to_string(), bbox, score });
        }
        if noise.false_positive_prob > 0.0 && rng.random::<f64>() < noise.false_positive_prob {
            let bw = rng.random_range(4.0..=(w / 4.0).max(5.0)).min(w);
            let bh = rng.random_range(4.0..=(h / 4.0).max(5.0)).min(h);
            let x1 = rng.random_range(0.0..=(w - bw));
            let y1 = rng.random_range(0.0..=(h - bh));
            let score = rng.random_range(MIN_SCORE..0.5);
            out.push(Detection { label: query.to_string(), bbox: BBox::new(x1, y1, x1 + bw, y1 + bh), score });
        }
    }
    Ok(out)
}

pub fn oracle_depth(scene: &SceneSpec) -> DepthField {
    scene.depth_field()
}

/// The scene object a detection refers to: same label, best overlap.
pub fn match_detection<'a>(scene: &'a SceneSpec, det: &Detection) -> Option<&'a SceneObject> {
    let label = normalize_label(&det.label);
    scene
        .objects
        .iter()
        .filter(|o| normalize_label(&o.label) == label)
        .map(|o| (o, o.bbox.iou(&det.bbox)))
        .filter(|(_, iou)| *iou > 0.0)
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(o, _)| o)
}

/// Box-rectangle masks: the matched object's stored box, or the detection box
/// for detections that match nothing.
pub fn oracle_segment(scene: &SceneSpec, detections: &[Detection]) -> Vec<ObjectMask> {
    let (w, h) = (scene.width(), scene.height());
    detections
        .iter()
        .map(|det| {
            let bbox = match_detection(scene, det).map_or(det.bbox, |o| o.bbox);
            let xs = crate::image::pixel_span(bbox.x1, bbox.x2, w);
            let ys = crate::image::pixel_span(bbox.y1, bbox.y2, h);
            let mask = Bitmask::from_fn(w, h, |x, y| xs.contains(&x) && ys.contains(&y));
            ObjectMask { label: det.label.clone(), bbox, mask }
        })
        .collect()
}

/// Stored 3D points of matched detections; unmatched detections yield no point.
pub fn oracle_3d(scene: &SceneSpec, detections: &[Detection]) -> Vec<Point3D> {
    detections
        .iter()
        .filter_map(|det| {
            match_detection(scene, det).map(|o| Point3D { label: det.label.clone(), xyz: o.point3d })
        })
        .collect()
}
