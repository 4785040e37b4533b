use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{label_color, pixel_span, Raster, Rgb};
use crate::tools::{BBox, DepthField};

pub const SCENE_SCHEMA: &str = "scene.v1";

pub const DEFAULT_VOCAB: [&str; 12] = [
    "chair", "table", "sofa", "lamp", "cup", "person", "refrigerator", "bed", "plant", "book", "laptop", "bottle",
];

/// Case-folds, trims and strips a leading article ("a", "an", "the").
pub fn normalize_label(label: &str) -> String {
    let lower = label.trim().to_lowercase();
    for article in ["a ", "an ", "the "] {
        if let Some(rest) = lower.strip_prefix(article) {
            return rest.trim().to_string();
        }
    }
    lower
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub focal_px: f64,
    pub cx: f64,
    pub cy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub label: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub mean_depth: f64,
    /// Physical width and height in meters.
    pub size_m: [f64; 2],
    /// `[X, Y, Z]` in meters, camera frame.
    pub point3d: [f64; 3],
    pub instance_id: u32,
}

/// Ground-truth synthetic scene.
///
/// The induced depth field is `background_depth` everywhere and each object's
/// `mean_depth` inside its box; later objects overwrite earlier ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub schema: String,
    pub id: String,
    pub image_size: [u32; 2],
    pub camera: Camera,
    pub background_depth: f64,
    pub seed: u64,
    pub objects: Vec<SceneObject>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SceneError {
    #[error("cannot place {requested} non-overlapping objects in a {width}x{height} image")]
    Infeasible { requested: usize, width: u32, height: u32 },
    #[error("invalid scene parameters: {0}")]
    InvalidParams(String),
    #[error("invalid scene: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub n_objects: usize,
    pub label_vocab: Vec<String>,
    pub width: u32,
    pub height: u32,
    /// Labels that must appear at least the given number of times.
    #[serde(default)]
    pub repeats: Vec<(String, usize)>,
}

impl SceneParams {
    pub fn new(n_objects: usize, width: u32, height: u32) -> Self {
        Self {
            n_objects,
            label_vocab: DEFAULT_VOCAB.iter().map(|s| s.to_string()).collect(),
            width,
            height,
            repeats: Vec::new(),
        }
    }
}

const PLACEMENT_ATTEMPTS: usize = 400;

fn quantize(v: f64, step: f64) -> f64 {
    (v / step).round() * step
}

fn mm(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

/// Generates a deterministic scene of non-overlapping objects.
///
/// Boxes have integer coordinates; each object's metric size and 3D point
/// are consistent with a pinhole camera of focal length `0.8 * W`.
pub fn generate_scene(seed: u64, params: &SceneParams) -> Result<SceneSpec, SceneError> {
    let (w, h) = (params.width, params.height);
    if w == 0 || h == 0 {
        return Err(SceneError::InvalidParams("image size must be positive".into()));
    }
    if params.label_vocab.is_empty() && params.n_objects > 0 {
        return Err(SceneError::InvalidParams("label vocabulary is empty".into()));
    }
    let forced: usize = params.repeats.iter().map(|(_, n)| n).sum();
    if forced > params.n_objects {
        return Err(SceneError::InvalidParams("repeats exceed n_objects".into()));
    }
    let min_side = (w.min(h) / 16).max(4);
    let max_side = (w.min(h) / 3).max(min_side + 1);
    let infeasible = SceneError::Infeasible { requested: params.n_objects, width: w, height: h };
    if min_side > w.min(h) || (params.n_objects as u64) * u64::from(min_side * min_side) > u64::from(w) * u64::from(h) {
        return Err(infeasible);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let focal_px = (f64::from(w) * 0.8).round();
    let camera = Camera { focal_px, cx: f64::from(w) / 2.0, cy: f64::from(h) / 2.0 };
    let background_depth = quantize(rng.random_range(0.9..=1.0), 0.01);

    let mut labels: Vec<String> = params
        .repeats
        .iter()
        .flat_map(|(label, n)| std::iter::repeat_n(label.clone(), *n))
        .collect();
    while labels.len() < params.n_objects {
        labels.push(params.label_vocab[rng.random_range(0..params.label_vocab.len())].clone());
    }

    let mut objects: Vec<SceneObject> = Vec::with_capacity(params.n_objects);
    for (i, label) in labels.into_iter().enumerate() {
        let bbox = (0..PLACEMENT_ATTEMPTS)
            .map(|_| {
                let bw = rng.random_range(min_side..=max_side.min(w));
                let bh = rng.random_range(min_side..=max_side.min(h));
                let x1 = rng.random_range(0..=w - bw);
                let y1 = rng.random_range(0..=h - bh);
                BBox::new(f64::from(x1), f64::from(y1), f64::from(x1 + bw), f64::from(y1 + bh))
            })
            .find(|b| objects.iter().all(|o| o.bbox.intersection(b) == 0.0))
            .ok_or_else(|| infeasible.clone())?;

        let mean_depth = quantize(rng.random_range(0.05..=0.85), 0.01);
        let z = mm(rng.random_range(1.0..=8.0));
        let [cx, cy] = bbox.center();
        let point3d = [mm((cx - camera.cx) * z / focal_px), mm((cy - camera.cy) * z / focal_px), z];
        let size_m = [bbox.width() * z / focal_px, bbox.height() * z / focal_px];
        objects.push(SceneObject { label, bbox, mean_depth, size_m, point3d, instance_id: i as u32 });
    }

    Ok(SceneSpec {
        schema: SCENE_SCHEMA.into(),
        id: format!("scene-{seed}"),
        image_size: [w, h],
        camera,
        background_depth,
        seed,
        objects,
    })
}

impl SceneSpec {
    pub fn width(&self) -> u32 {
        self.image_size[0]
    }

    pub fn height(&self) -> u32 {
        self.image_size[1]
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: String| Err(SceneError::Invalid(m));
        if self.schema != SCENE_SCHEMA {
            return bad(format!("unsupported schema `{}`", self.schema));
        }
        if self.width() == 0 || self.height() == 0 {
            return bad("image size must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.background_depth) {
            return bad("background depth outside [0, 1]".into());
        }
        let mut ids = std::collections::HashSet::new();
        for o in &self.objects {
            if !o.bbox.is_valid_in(self.width(), self.height()) {
                return bad(format!("box {} of `{}` is outside the image", o.bbox, o.label));
            }
            if !(0.0..=1.0).contains(&o.mean_depth) {
                return bad(format!("depth of `{}` outside [0, 1]", o.label));
            }
            if o.size_m.iter().any(|s| !(*s > 0.0)) {
                return bad(format!("size of `{}` must be positive", o.label));
            }
            if !ids.insert(o.instance_id) {
                return bad(format!("duplicate instance id {}", o.instance_id));
            }
        }
        Ok(())
    }

    /// Objects whose normalized label equals the normalized query.
    pub fn matching<'a>(&'a self, query: &str) -> impl Iterator<Item = &'a SceneObject> + 'a {
        let q = normalize_label(query);
        self.objects.iter().filter(move |o| normalize_label(&o.label) == q)
    }

    pub fn multiplicity(&self, query: &str) -> usize {
        self.matching(query).count()
    }

    /// The unique object with this label, if exactly one exists.
    pub fn unique(&self, query: &str) -> Option<&SceneObject> {
        let mut it = self.matching(query);
        let first = it.next()?;
        it.next().is_none().then_some(first)
    }

    pub fn depth_field(&self) -> DepthField {
        let (w, h) = (self.width(), self.height());
        let mut values = vec![self.background_depth as f32; (w * h) as usize];
        for o in &self.objects {
            let xs = pixel_span(o.bbox.x1, o.bbox.x2, w);
            for y in pixel_span(o.bbox.y1, o.bbox.y2, h) {
                for x in xs.clone() {
                    values[(y * w + x) as usize] = o.mean_depth as f32;
                }
            }
        }
        DepthField { width: w, height: h, values }
    }

    /// The scene as seen through `view`: boxes mapped and clipped, camera adjusted.
    pub fn apply_view(&self, view: &ViewTransform) -> SceneSpec {
        let [w, h] = view.size;
        let map = |b: &BBox| {
            let [ox, oy] = view.origin;
            BBox::new(
                ((b.x1 - ox) * view.scale).clamp(0.0, f64::from(w)),
                ((b.y1 - oy) * view.scale).clamp(0.0, f64::from(h)),
                ((b.x2 - ox) * view.scale).clamp(0.0, f64::from(w)),
                ((b.y2 - oy) * view.scale).clamp(0.0, f64::from(h)),
            )
        };
        let objects = self
            .objects
            .iter()
            .filter_map(|o| {
                let bbox = map(&o.bbox);
                (bbox.x2 > bbox.x1 && bbox.y2 > bbox.y1).then(|| SceneObject { bbox, ..o.clone() })
            })
            .collect();
        SceneSpec {
            image_size: view.size,
            camera: Camera {
                focal_px: self.camera.focal_px * view.scale,
                cx: (self.camera.cx - view.origin[0]) * view.scale,
                cy: (self.camera.cy - view.origin[1]) * view.scale,
            },
            objects,
            ..self.clone()
        }
    }

    /// Flat-shaded raster: objects in label colours, darker when nearer.
    pub fn render(&self) -> Raster {
        let (w, h) = (self.width(), self.height());
        let bg = (70.0 + 120.0 * self.background_depth).round() as u8;
        let mut img = Raster::from_pixel(w, h, Rgb::from([bg, bg, bg.saturating_add(10)]));
        for o in &self.objects {
            let base = label_color(&normalize_label(&o.label));
            let shade = 0.55 + 0.45 * o.mean_depth;
            let color = Rgb::from(base.0.map(|c| (f64::from(c) * shade).round() as u8));
            let xs = pixel_span(o.bbox.x1, o.bbox.x2, w);
            for y in pixel_span(o.bbox.y1, o.bbox.y2, h) {
                for x in xs.clone() {
                    img.put_pixel(x, y, color);
                }
            }
        }
        img
    }
}

/// Maps source-image pixels to a derived view: `v = (p - origin) * scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewTransform {
    pub origin: [f64; 2],
    pub scale: f64,
    pub size: [u32; 2],
}

impl ViewTransform {
    pub fn identity(width: u32, height: u32) -> Self {
        Self { origin: [0.0, 0.0], scale: 1.0, size: [width, height] }
    }

    /// `self` followed by `next`, where `next` is expressed in this view's pixels.
    pub fn then(&self, next: &ViewTransform) -> ViewTransform {
        ViewTransform {
            origin: [
                self.origin[0] + next.origin[0] / self.scale,
                self.origin[1] + next.origin[1] / self.scale,
            ],
            scale: self.scale * next.scale,
            size: next.size,
        }
    }
}

/// Where a raster comes from: a stored scene, optionally through a view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneView {
    pub scene_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view: Option<ViewTransform>,
}

impl SceneView {
    pub fn of(scene_id: impl Into<String>) -> Self {
        Self { scene_id: scene_id.into(), view: None }
    }

    pub fn through(&self, next: &ViewTransform) -> SceneView {
        let view = match &self.view {
            Some(v) => v.then(next),
            None => *next,
        };
        SceneView { scene_id: self.scene_id.clone(), view: Some(view) }
    }
}
