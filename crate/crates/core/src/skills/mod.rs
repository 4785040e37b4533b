//! The six spatial skills: fixed compositions of atomics that return paired
//! visual and textual hints.

mod text;
mod toolbox;

use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::{ActionCall, ArgValue};
use crate::image::{ImageRef, ImageStore, Raster, StoreError};
use crate::tools::{
    bind_args, invoke_atomic, render_raster, AtomicOutput, BindError, ComputeResult, Detection, ExecContext,
    ObjectStat, ParamSpec, Registry, RenderError, RenderStyle, SemanticType, ToolError, ToolErrorKind, ToolInput,
    DEFAULT_THRESHOLD,
};
use crate::world::{SceneView, ViewTransform};

pub use text::{fmt_depth, fmt_meters, fmt_px, instance_names};
pub use toolbox::{EpisodeSetupError, Toolbox};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SkillName {
    SegmentObjects,
    EstimateDepth,
    EstimateSize,
    CountObjects,
    ZoomCrop,
    Get3DPoint,
}

impl SkillName {
    pub const ALL: [SkillName; 6] = [
        SkillName::SegmentObjects,
        SkillName::EstimateDepth,
        SkillName::EstimateSize,
        SkillName::CountObjects,
        SkillName::ZoomCrop,
        SkillName::Get3DPoint,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SkillName::SegmentObjects => "SegmentObjects",
            SkillName::EstimateDepth => "EstimateDepth",
            SkillName::EstimateSize => "EstimateSize",
            SkillName::CountObjects => "CountObjects",
            SkillName::ZoomCrop => "ZoomCrop",
            SkillName::Get3DPoint => "Get3DPoint",
        }
    }

    pub fn descriptor(self) -> SkillDescriptor {
        let (seq, orchestration): (&[&str], &str) = match self {
            SkillName::SegmentObjects => (&["detect_objects", "segment", "compute", "render"], "detect-then-segment"),
            SkillName::EstimateDepth => {
                (&["depth_estimate", "detect_objects", "compute", "render"], "depth-with-optional-boxes")
            }
            SkillName::EstimateSize => (&["detect_objects", "segment", "compute", "render"], "coarse-to-fine"),
            SkillName::CountObjects => (&["detect_objects", "compute", "render"], "detect-and-group"),
            SkillName::ZoomCrop => (&["compute", "render"], "crop-geometry"),
            SkillName::Get3DPoint => (&["detect_objects", "reconstruct_3d", "compute", "render"], "lift-to-3d"),
        };
        SkillDescriptor {
            name: self,
            atomic_sequence: seq.iter().map(|s| s.to_string()).collect(),
            orchestration: orchestration.to_string(),
        }
    }

    /// Argument schema as exposed to the agent.
    pub fn schema(self) -> Vec<ParamSpec> {
        use SemanticType::*;
        let img = ParamSpec::required("img_path", ImageRef);
        let labels = ParamSpec::required("text_labels", TextList);
        let threshold = ParamSpec::optional("threshold", Number, ArgValue::Number(DEFAULT_THRESHOLD));
        match self {
            SkillName::SegmentObjects | SkillName::EstimateSize | SkillName::CountObjects => vec![img, labels, threshold],
            SkillName::EstimateDepth => {
                vec![img, ParamSpec::optional("text_labels", TextList, ArgValue::TextList(vec![]))]
            }
            SkillName::Get3DPoint => vec![img, labels],
            SkillName::ZoomCrop => vec![
                img,
                ParamSpec::optional("box", NumberList, ArgValue::NumberList(vec![])),
                ParamSpec::optional("center", NumberList, ArgValue::NumberList(vec![])),
                ParamSpec::optional("zoom_factor", Number, ArgValue::Number(1.0)),
            ],
        }
    }
}

impl fmt::Display for SkillName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SkillName {
    type Err = SkillError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SkillName::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| SkillError::UnknownSkill(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillDescriptor {
    pub name: SkillName,
    pub atomic_sequence: Vec<String>,
    pub orchestration: String,
}

impl SkillDescriptor {
    /// Every referenced atomic must be registered and the sequence non-empty.
    pub fn check(&self, registry: &Registry) -> Result<(), String> {
        if self.atomic_sequence.is_empty() {
            return Err(format!("{} has an empty atomic sequence", self.name));
        }
        match self.atomic_sequence.iter().find(|a| registry.descriptor(a).is_none()) {
            Some(missing) => Err(format!("{} uses unregistered atomic `{missing}`", self.name)),
            None => Ok(()),
        }
    }
}

/// One visual and textual hint pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hint {
    /// Rendered raster; absent only on failure hints.
    pub visual: Option<ImageRef>,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SkillStatus {
    Complete,
    Partial,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillResult {
    pub skill: SkillName,
    pub hints: Vec<Hint>,
    pub status: SkillStatus,
    /// Whether each queried label was found, in query order.
    pub per_query: IndexMap<String, bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ToolError>,
}

impl SkillResult {
    pub fn text(&self) -> String {
        self.hints.iter().map(|h| h.text.as_str()).collect::<Vec<_>>().join("\n")
    }

    pub fn visuals(&self) -> Vec<ImageRef> {
        self.hints.iter().filter_map(|h| h.visual).collect()
    }

    fn failed(skill: SkillName, error: ToolError, per_query: IndexMap<String, bool>) -> Self {
        Self {
            skill,
            hints: vec![Hint { visual: None, text: failure_text(skill.as_str(), error.kind) }],
            status: SkillStatus::Failed,
            per_query,
            error: Some(error),
        }
    }
}

/// Fixed wording of the hint returned when a tool fails.
pub fn failure_text(name: &str, kind: ToolErrorKind) -> String {
    format!("Tool {name} failed: {kind}.")
}

/// Status implied by the per-query flags: all found, some found, or none.
pub fn status_from_flags(per_query: &IndexMap<String, bool>) -> SkillStatus {
    let found = per_query.values().filter(|f| **f).count();
    if found == per_query.len() {
        SkillStatus::Complete
    } else if found > 0 {
        SkillStatus::Partial
    } else {
        SkillStatus::Failed
    }
}

#[derive(Debug, Error)]
pub enum SkillError {
    #[error("unknown skill `{0}`")]
    UnknownSkill(String),
    #[error("invalid arguments: {0}")]
    ArgValidation(#[from] BindError),
    #[error("ZoomCrop needs exactly one of `box` or `center`")]
    OverconstrainedRoi,
}

/// Executes one skill call, registering any rendered raster as the next `image-k`.
///
/// A tool fault anywhere in the atomic sequence yields a `Failed` result with
/// a text-only hint; only argument and skill-name problems are errors.
pub fn execute_skill(registry: &Registry, call: &ActionCall, ctx: &mut ExecContext) -> Result<SkillResult, SkillError> {
    let skill: SkillName = call.skill_name.parse()?;
    let input = bind_args(&skill.schema(), &call.args)?;
    if skill == SkillName::ZoomCrop {
        let given = |k: &str| input.number_list(k).is_some_and(|l| !l.is_empty());
        if given("box") == given("center") {
            return Err(SkillError::OverconstrainedRoi);
        }
    }
    let labels: Vec<String> = input.text_list("text_labels").map(<[String]>::to_vec).unwrap_or_default();
    let mut per_query: IndexMap<String, bool> = labels.iter().map(|l| (l.clone(), false)).collect();

    ctx.draw_failure();
    let mut run = Pipeline { registry, ctx, image: input.image };
    let outcome = match skill {
        SkillName::SegmentObjects => run.segment_objects(&input, &mut per_query),
        SkillName::EstimateDepth => run.estimate_depth(&labels, &mut per_query),
        SkillName::EstimateSize => run.estimate_size(&input, &mut per_query),
        SkillName::CountObjects => run.count_objects(&input, &mut per_query),
        SkillName::ZoomCrop => run.zoom_crop(&input),
        SkillName::Get3DPoint => run.get_3d_point(&labels, &mut per_query),
    };
    ctx.disarm();
    Ok(match outcome {
        Ok(Some(hint)) => SkillResult { skill, hints: vec![hint], status: status_from_flags(&per_query), per_query, error: None },
        Ok(None) => {
            let text = format!("No objects matching {} were found in {}.", labels.join(", "), input.image);
            SkillResult { skill, hints: vec![Hint { visual: None, text }], status: SkillStatus::Failed, per_query, error: None }
        }
        Err(e) => SkillResult::failed(skill, e, per_query),
    })
}

struct Pipeline<'a> {
    registry: &'a Registry,
    ctx: &'a mut ExecContext,
    image: ImageRef,
}

/// Visual placement of a rendered hint relative to its input image.
enum Provenance {
    Same,
    View(ViewTransform),
    Detached,
}

impl Pipeline<'_> {
    fn atomic(&mut self, name: &str, args: Vec<(&str, ArgValue)>, inputs: Vec<AtomicOutput>) -> Result<AtomicOutput, ToolError> {
        let mut map = IndexMap::new();
        map.insert("image".to_string(), ArgValue::Text(self.image.to_string()));
        map.extend(args.into_iter().map(|(k, v)| (k.to_string(), v)));
        let input = ToolInput { image: self.image, args: map, inputs };
        invoke_atomic(self.registry, name, &input, self.ctx)
    }

    fn detect(&mut self, labels: &[String], threshold: f64) -> Result<Vec<Detection>, ToolError> {
        let args = vec![("text_labels", ArgValue::TextList(labels.to_vec())), ("threshold", ArgValue::Number(threshold))];
        match self.atomic("detect_objects", args, vec![])? {
            AtomicOutput::Detections { detections } => Ok(detections),
            _ => unreachable!("invoke_atomic checks the output kind"),
        }
    }

    fn stats(&mut self, op: &str, inputs: Vec<AtomicOutput>) -> Result<Vec<ObjectStat>, ToolError> {
        match self.atomic("compute", vec![("op", ArgValue::Text(op.into()))], inputs)? {
            AtomicOutput::ComputeResult { result: ComputeResult::Objects(stats) } => Ok(stats),
            other => Err(unexpected("compute", &other)),
        }
    }

    fn render(&mut self, style: RenderStyle, inputs: Vec<AtomicOutput>, provenance: Provenance) -> Result<ImageRef, ToolError> {
        let raster = match self.atomic("render", vec![("style", ArgValue::Text(style.name().into()))], inputs)? {
            AtomicOutput::ComputeResult { result: ComputeResult::Raster(r) } => r.0,
            other => return Err(unexpected("render", &other)),
        };
        let parent = self.ctx.store.resolve(self.image).map_err(store_err)?.source.clone();
        let source = match provenance {
            Provenance::Same => parent,
            Provenance::View(view) => parent.map(|p| p.through(&view)),
            Provenance::Detached => None,
        };
        let raster = std::sync::Arc::try_unwrap(raster).unwrap_or_else(|shared| (*shared).clone());
        self.ctx.store.register(raster, source).map_err(store_err)
    }

    fn segment_objects(&mut self, input: &ToolInput, per_query: &mut IndexMap<String, bool>) -> Result<Option<Hint>, ToolError> {
        let dets = self.detect(input.text_list("text_labels").unwrap_or_default(), threshold(input))?;
        if !mark_found(per_query, dets.iter().map(|d| d.label.as_str())) {
            return Ok(None);
        }
        let dets_out = AtomicOutput::Detections { detections: dets };
        let masks = self.atomic("segment", vec![], vec![dets_out.clone()])?;
        let stats = self.stats("centroids", vec![masks.clone()])?;
        let visual = self.render(RenderStyle::Overlay, vec![dets_out, masks], Provenance::Same)?;
        Ok(Some(Hint { visual: Some(visual), text: text::segment(&stats, per_query) }))
    }

    fn estimate_depth(&mut self, labels: &[String], per_query: &mut IndexMap<String, bool>) -> Result<Option<Hint>, ToolError> {
        let depth = self.atomic("depth_estimate", vec![], vec![])?;
        if labels.is_empty() {
            let visual = self.render(RenderStyle::Depth, vec![depth], Provenance::Same)?;
            return Ok(Some(Hint { visual: Some(visual), text: text::depth_caption(self.image) }));
        }
        let dets = self.detect(labels, DEFAULT_THRESHOLD)?;
        if !mark_found(per_query, dets.iter().map(|d| d.label.as_str())) {
            return Ok(None);
        }
        let dets_out = AtomicOutput::Detections { detections: dets };
        let stats = self.stats("box_mean_depth", vec![depth.clone(), dets_out.clone()])?;
        let visual = self.render(RenderStyle::Depth, vec![depth, dets_out], Provenance::Same)?;
        Ok(Some(Hint { visual: Some(visual), text: text::depth(&stats, per_query) }))
    }

    fn estimate_size(&mut self, input: &ToolInput, per_query: &mut IndexMap<String, bool>) -> Result<Option<Hint>, ToolError> {
        let dets = self.detect(input.text_list("text_labels").unwrap_or_default(), threshold(input))?;
        if !mark_found(per_query, dets.iter().map(|d| d.label.as_str())) {
            return Ok(None);
        }
        let masks = self.atomic("segment", vec![], vec![AtomicOutput::Detections { detections: dets }])?;
        let stats = self.stats("centroids", vec![masks.clone()])?;
        let visual = self.render(RenderStyle::Sheet, vec![masks], Provenance::Detached)?;
        Ok(Some(Hint { visual: Some(visual), text: text::size(&stats, per_query) }))
    }

    fn count_objects(&mut self, input: &ToolInput, per_query: &mut IndexMap<String, bool>) -> Result<Option<Hint>, ToolError> {
        let dets = self.detect(input.text_list("text_labels").unwrap_or_default(), threshold(input))?;
        if !mark_found(per_query, dets.iter().map(|d| d.label.as_str())) {
            return Ok(None);
        }
        let dets_out = AtomicOutput::Detections { detections: dets };
        let stats = self.stats("centroids", vec![dets_out.clone()])?;
        let visual = self.render(RenderStyle::Overlay, vec![dets_out], Provenance::Same)?;
        Ok(Some(Hint { visual: Some(visual), text: text::count(&stats, per_query) }))
    }

    fn zoom_crop(&mut self, input: &ToolInput) -> Result<Option<Hint>, ToolError> {
        let mut args = vec![("op", ArgValue::Text("crop_geometry".into()))];
        for key in ["box", "center", "zoom_factor"] {
            if let Some(v) = input.args.get(key) {
                args.push((key, v.clone()));
            }
        }
        let geometry = match self.atomic("compute", args, vec![])? {
            AtomicOutput::ComputeResult { result: ComputeResult::Crop(g) } => g,
            other => return Err(unexpected("compute", &other)),
        };
        let view = ViewTransform { origin: [geometry.region[0], geometry.region[1]], scale: geometry.zoom, size: geometry.out_size };
        let crop = AtomicOutput::ComputeResult { result: ComputeResult::Crop(geometry) };
        let visual = self.render(RenderStyle::Crop, vec![crop], Provenance::View(view))?;
        Ok(Some(Hint { visual: Some(visual), text: text::crop(self.image, &geometry) }))
    }

    fn get_3d_point(&mut self, labels: &[String], per_query: &mut IndexMap<String, bool>) -> Result<Option<Hint>, ToolError> {
        let dets = self.detect(labels, DEFAULT_THRESHOLD)?;
        let dets_out = AtomicOutput::Detections { detections: dets };
        let cloud = self.atomic("reconstruct_3d", vec![], vec![dets_out.clone()])?;
        let focal = match &cloud {
            AtomicOutput::PointCloud3D { focal_px, .. } => *focal_px,
            _ => None,
        };
        let stats = self.stats("points", vec![dets_out.clone(), cloud])?;
        if !mark_found(per_query, stats.iter().map(|s| s.label.as_str())) {
            return Ok(None);
        }
        let visual = self.render(RenderStyle::Overlay, vec![dets_out], Provenance::Same)?;
        Ok(Some(Hint { visual: Some(visual), text: text::points(&stats, focal, per_query) }))
    }
}

fn threshold(input: &ToolInput) -> f64 {
    input.number("threshold").unwrap_or(DEFAULT_THRESHOLD)
}

/// Marks queries with at least one result; true when anything was found.
fn mark_found<'a>(per_query: &mut IndexMap<String, bool>, labels: impl Iterator<Item = &'a str>) -> bool {
    let mut any = false;
    for label in labels {
        if let Some(flag) = per_query.get_mut(label) {
            *flag = true;
            any = true;
        }
    }
    any
}

fn unexpected(name: &str, output: &AtomicOutput) -> ToolError {
    ToolError::new(ToolErrorKind::ExecutionError, format!("`{name}` returned an unexpected {:?} payload", output.kind()))
}

fn store_err(e: StoreError) -> ToolError {
    ToolError::new(ToolErrorKind::ExecutionError, e.to_string())
}

#[derive(Debug, Error)]
pub enum HintError {
    #[error(transparent)]
    RenderBounds(#[from] RenderError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Renders `payload` over `base` and registers the result as the next image.
pub fn render_hint_visual(
    store: &mut ImageStore,
    style: RenderStyle,
    payload: &[AtomicOutput],
    base: ImageRef,
) -> Result<ImageRef, HintError> {
    let stored = store.resolve(base)?;
    let raster: Raster = render_raster(style, payload, &stored.raster)?;
    let source: Option<SceneView> = match style {
        RenderStyle::Sheet | RenderStyle::Crop => None,
        RenderStyle::Overlay | RenderStyle::Depth => stored.source.clone(),
    };
    Ok(store.register(raster, source)?)
}
