//! In-process utility atomics: `compute` (numeric post-processing) and
//! `render` (hint visualisation). They run locally whatever backend serves
//! the perception atomics.

use std::sync::Arc;

use thiserror::Error;

use super::output::{AtomicOutput, BBox, ComputeResult, CropGeometry, DepthField, Detection, ObjectMask, ObjectStat, Point3D, RasterPayload};
use super::{ToolError, ToolErrorKind, ToolInput};
use crate::image::{blend_fill, crop_resize, depth_to_gray, draw_text, label_color, outline_box, Raster, Rgb};

pub const COMPUTE_OPS: [&str; 4] = ["centroids", "box_mean_depth", "points", "crop_geometry"];

pub const OUTLINE_PX: u32 = 2;
pub const MASK_ALPHA: f64 = 0.4;
const MAX_OUTPUT_SIDE: f64 = 4096.0;
const SHEET_GAP: u32 = 2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RenderError {
    #[error("box {bbox} exceeds the {width}x{height} image")]
    Bounds { bbox: BBox, width: u32, height: u32 },
    #[error("render style `{0}` needs a {1} input")]
    MissingPayload(String, &'static str),
    #[error("unknown render style `{0}`")]
    UnknownStyle(String),
    #[error("invalid crop: {0}")]
    InvalidGeometry(String),
}

impl From<RenderError> for ToolError {
    fn from(e: RenderError) -> Self {
        ToolError::new(ToolErrorKind::ExecutionError, e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderStyle {
    /// Boxes as outlines with label text, masks as translucent fills.
    Overlay,
    /// Depth field as grayscale, near is black.
    Depth,
    /// The crop region resampled to the requested size.
    Crop,
    /// Per-object crops laid side by side.
    Sheet,
}

impl RenderStyle {
    pub fn name(self) -> &'static str {
        match self {
            RenderStyle::Overlay => "overlay",
            RenderStyle::Depth => "depth",
            RenderStyle::Crop => "crop",
            RenderStyle::Sheet => "sheet",
        }
    }

    pub fn parse(name: &str) -> Result<Self, RenderError> {
        match name {
            "overlay" => Ok(RenderStyle::Overlay),
            "depth" => Ok(RenderStyle::Depth),
            "crop" => Ok(RenderStyle::Crop),
            "sheet" => Ok(RenderStyle::Sheet),
            other => Err(RenderError::UnknownStyle(other.to_string())),
        }
    }
}

/// Region of interest for a crop: exactly one of `bbox` or `center`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropRequest {
    pub bbox: Option<[f64; 4]>,
    pub center: Option<[f64; 2]>,
    pub zoom: f64,
}

impl CropRequest {
    /// Source region and output size for an image of `width x height`.
    ///
    /// With a box, the box is cropped and scaled by `zoom`. With a centre, a
    /// window of the image size divided by `zoom` (clamped to the image) is
    /// placed around the centre, shifted inside the image, and scaled by `zoom`.
    pub fn geometry(&self, width: u32, height: u32) -> Result<CropGeometry, RenderError> {
        let (w, h) = (f64::from(width), f64::from(height));
        if !(self.zoom.is_finite() && self.zoom > 0.0) {
            return Err(RenderError::InvalidGeometry(format!("zoom factor {} must be positive", self.zoom)));
        }
        let region = match (self.bbox, self.center) {
            (Some(b), None) => {
                let bbox = BBox::from(b);
                if !bbox.is_valid_in(width, height) {
                    return Err(RenderError::Bounds { bbox, width, height });
                }
                [bbox.x1, bbox.y1, bbox.width(), bbox.height()]
            }
            (None, Some([cx, cy])) => {
                if !(0.0..=w).contains(&cx) || !(0.0..=h).contains(&cy) {
                    return Err(RenderError::InvalidGeometry(format!("centre ({cx}, {cy}) is outside the image")));
                }
                let rw = (w / self.zoom).min(w);
                let rh = (h / self.zoom).min(h);
                let x = (cx - rw / 2.0).clamp(0.0, w - rw);
                let y = (cy - rh / 2.0).clamp(0.0, h - rh);
                [x, y, rw, rh]
            }
            _ => return Err(RenderError::InvalidGeometry("give exactly one of box or center".into())),
        };
        let out_w = (region[2] * self.zoom).round();
        let out_h = (region[3] * self.zoom).round();
        if out_w < 1.0 || out_h < 1.0 || out_w > MAX_OUTPUT_SIDE || out_h > MAX_OUTPUT_SIDE {
            return Err(RenderError::InvalidGeometry(format!("output size {out_w}x{out_h} is out of range")));
        }
        Ok(CropGeometry { region, out_size: [out_w as u32, out_h as u32], zoom: self.zoom })
    }
}

fn exec_err(detail: impl Into<String>) -> ToolError {
    ToolError::new(ToolErrorKind::ExecutionError, detail)
}

fn find_detections(inputs: &[AtomicOutput]) -> Option<&[Detection]> {
    inputs.iter().find_map(|o| match o {
        AtomicOutput::Detections { detections } => Some(detections.as_slice()),
        _ => None,
    })
}

fn find_masks(inputs: &[AtomicOutput]) -> Option<&[ObjectMask]> {
    inputs.iter().find_map(|o| match o {
        AtomicOutput::Mask { masks } => Some(masks.as_slice()),
        _ => None,
    })
}

fn find_depth(inputs: &[AtomicOutput]) -> Option<&DepthField> {
    inputs.iter().find_map(|o| match o {
        AtomicOutput::DepthField { depth } => Some(depth),
        _ => None,
    })
}

fn find_points(inputs: &[AtomicOutput]) -> Option<&[Point3D]> {
    inputs.iter().find_map(|o| match o {
        AtomicOutput::PointCloud3D { points, .. } => Some(points.as_slice()),
        _ => None,
    })
}

fn find_crop(inputs: &[AtomicOutput]) -> Option<CropGeometry> {
    inputs.iter().find_map(|o| match o {
        AtomicOutput::ComputeResult { result: ComputeResult::Crop(g) } => Some(*g),
        _ => None,
    })
}

fn box_stat(label: &str, bbox: &BBox) -> ObjectStat {
    ObjectStat {
        label: label.to_string(),
        centroid: bbox.center(),
        extent: [bbox.width(), bbox.height()],
        mean_depth: None,
        point: None,
    }
}

/// The `compute` atomic.
pub fn compute(input: &ToolInput, width: u32, height: u32) -> Result<AtomicOutput, ToolError> {
    let op = input.text("op").ok_or_else(|| exec_err("compute needs an `op`"))?;
    let result = match op {
        "centroids" => {
            let stats = if let Some(masks) = find_masks(&input.inputs) {
                masks
                    .iter()
                    .map(|m| match (m.mask.centroid(), m.mask.extent()) {
                        (Some(c), Some(e)) => ObjectStat { centroid: c, extent: [e.width(), e.height()], ..box_stat(&m.label, &m.bbox) },
                        _ => box_stat(&m.label, &m.bbox),
                    })
                    .collect()
            } else if let Some(dets) = find_detections(&input.inputs) {
                dets.iter().map(|d| box_stat(&d.label, &d.bbox)).collect()
            } else {
                return Err(exec_err("centroids needs detections or masks"));
            };
            ComputeResult::Objects(stats)
        }
        "box_mean_depth" => {
            let depth = find_depth(&input.inputs).ok_or_else(|| exec_err("box_mean_depth needs a depth field"))?;
            let dets = find_detections(&input.inputs).ok_or_else(|| exec_err("box_mean_depth needs detections"))?;
            let stats = dets
                .iter()
                .map(|d| ObjectStat { mean_depth: depth.box_mean(&d.bbox), ..box_stat(&d.label, &d.bbox) })
                .collect();
            ComputeResult::Objects(stats)
        }
        "points" => {
            let points = find_points(&input.inputs).ok_or_else(|| exec_err("points needs a point cloud"))?;
            let dets = find_detections(&input.inputs).unwrap_or(&[]);
            // Pair the k-th point of a label with the k-th detection of that label.
            let mut used = vec![false; dets.len()];
            let stats = points
                .iter()
                .map(|p| {
                    let det = dets
                        .iter()
                        .enumerate()
                        .find(|(i, d)| !used[*i] && d.label == p.label)
                        .map(|(i, d)| {
                            used[i] = true;
                            d
                        });
                    let base = match det {
                        Some(d) => box_stat(&p.label, &d.bbox),
                        None => ObjectStat {
                            label: p.label.clone(),
                            centroid: [f64::NAN; 2],
                            extent: [0.0; 2],
                            mean_depth: None,
                            point: None,
                        },
                    };
                    ObjectStat { point: Some(p.xyz), ..base }
                })
                .collect();
            ComputeResult::Objects(stats)
        }
        "crop_geometry" => {
            let list = |name: &str| input.number_list(name).filter(|l| !l.is_empty());
            let bbox = match list("box") {
                Some([a, b, c, d]) => Some([*a, *b, *c, *d]),
                Some(_) => return Err(exec_err("box needs four numbers")),
                None => None,
            };
            let center = match list("center") {
                Some([a, b]) => Some([*a, *b]),
                Some(_) => return Err(exec_err("center needs two numbers")),
                None => None,
            };
            let zoom = input.number("zoom_factor").unwrap_or(1.0);
            ComputeResult::Crop(CropRequest { bbox, center, zoom }.geometry(width, height)?)
        }
        other => return Err(exec_err(format!("unknown compute op `{other}`"))),
    };
    Ok(AtomicOutput::ComputeResult { result })
}

/// The `render` atomic: draws the inputs over `base` in the requested style.
pub fn render(input: &ToolInput, base: &Raster) -> Result<AtomicOutput, ToolError> {
    let style = RenderStyle::parse(input.text("style").unwrap_or_default())?;
    let raster = render_raster(style, &input.inputs, base)?;
    Ok(AtomicOutput::ComputeResult { result: ComputeResult::Raster(RasterPayload(Arc::new(raster))) })
}

fn check_bounds(bbox: &BBox, img: &Raster) -> Result<(), RenderError> {
    let (width, height) = img.dimensions();
    if bbox.is_valid_in(width, height) {
        Ok(())
    } else {
        Err(RenderError::Bounds { bbox: *bbox, width, height })
    }
}

fn draw_boxes<'a>(img: &mut Raster, boxes: impl Iterator<Item = (&'a str, &'a BBox)>) -> Result<(), RenderError> {
    for (label, bbox) in boxes {
        check_bounds(bbox, img)?;
        let color = label_color(&crate::world::normalize_label(label));
        outline_box(img, bbox.to_array(), color, OUTLINE_PX);
        let ty = if bbox.y1 >= 7.0 { bbox.y1 as u32 - 7 } else { bbox.y1 as u32 + OUTLINE_PX + 1 };
        draw_text(img, bbox.x1 as u32 + OUTLINE_PX, ty, label, color);
    }
    Ok(())
}

pub fn render_raster(style: RenderStyle, inputs: &[AtomicOutput], base: &Raster) -> Result<Raster, RenderError> {
    let missing = |what| RenderError::MissingPayload(style.name().to_string(), what);
    match style {
        RenderStyle::Overlay => {
            let mut img = base.clone();
            let masks = find_masks(inputs);
            let dets = find_detections(inputs);
            if masks.is_none() && dets.is_none() {
                return Err(missing("detections or masks"));
            }
            for m in masks.unwrap_or_default() {
                check_bounds(&m.bbox, &img)?;
                let color = label_color(&crate::world::normalize_label(&m.label));
                let (mw, mh) = (m.mask.width(), m.mask.height());
                blend_fill(&mut img, color, MASK_ALPHA, |x, y| x < mw && y < mh && m.mask.get(x, y));
            }
            match dets {
                Some(dets) => draw_boxes(&mut img, dets.iter().map(|d| (d.label.as_str(), &d.bbox)))?,
                None => draw_boxes(&mut img, masks.unwrap_or_default().iter().map(|m| (m.label.as_str(), &m.bbox)))?,
            }
            Ok(img)
        }
        RenderStyle::Depth => {
            let depth = find_depth(inputs).ok_or_else(|| missing("depth field"))?;
            let mut img = depth_to_gray(depth.width, depth.height, &depth.values);
            if let Some(dets) = find_detections(inputs) {
                draw_boxes(&mut img, dets.iter().map(|d| (d.label.as_str(), &d.bbox)))?;
            }
            Ok(img)
        }
        RenderStyle::Crop => {
            let g = find_crop(inputs).ok_or_else(|| missing("crop geometry"))?;
            let [x, y, w, h] = g.region;
            let (iw, ih) = base.dimensions();
            let bbox = BBox::new(x, y, x + w, y + h);
            if !bbox.is_valid_in(iw, ih) {
                return Err(RenderError::Bounds { bbox, width: iw, height: ih });
            }
            Ok(crop_resize(base, g.region, g.out_size[0], g.out_size[1]))
        }
        RenderStyle::Sheet => {
            let masks = find_masks(inputs).filter(|m| !m.is_empty()).ok_or_else(|| missing("non-empty mask"))?;
            let mut tiles = Vec::with_capacity(masks.len());
            for m in masks {
                check_bounds(&m.bbox, base)?;
                let b = m.mask.extent().unwrap_or(m.bbox);
                let (tw, th) = (b.width().round().max(1.0) as u32, b.height().round().max(1.0) as u32);
                let mut tile = crop_resize(base, [b.x1, b.y1, b.width(), b.height()], tw, th);
                draw_text(&mut tile, 1, 1, &m.label, Rgb::from([255, 255, 255]));
                tiles.push(tile);
            }
            let width = tiles.iter().map(|t| t.width()).sum::<u32>() + SHEET_GAP * (tiles.len() as u32 - 1);
            let height = tiles.iter().map(|t| t.height()).max().unwrap_or(1);
            let mut sheet = Raster::from_pixel(width, height, Rgb::from([0, 0, 0]));
            let mut x0 = 0;
            for t in &tiles {
                image::imageops::replace(&mut sheet, t, i64::from(x0), 0);
                x0 += t.width() + SHEET_GAP;
            }
            Ok(sheet)
        }
    }
}
