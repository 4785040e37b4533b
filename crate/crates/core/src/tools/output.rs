//! Typed payloads produced by atomic operations.

use std::fmt;
use std::sync::Arc;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::image::Raster;

/// Axis-aligned box `[x1, y1, x2, y2]` in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl From<[f64; 4]> for BBox {
    fn from([x1, y1, x2, y2]: [f64; 4]) -> Self {
        Self { x1, y1, x2, y2 }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> [f64; 2] {
        [(self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0]
    }

    pub fn is_valid_in(&self, width: u32, height: u32) -> bool {
        self.x1 >= 0.0
            && self.y1 >= 0.0
            && self.x1 < self.x2
            && self.y1 < self.y2
            && self.x2 <= f64::from(width)
            && self.y2 <= f64::from(height)
    }

    pub fn intersection(&self, other: &BBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        w.max(0.0) * h.max(0.0)
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.x1, self.y1, self.x2, self.y2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub score: f64,
}

/// Full-image binary mask, row-major, packed LSB-first.
#[derive(Clone, PartialEq, Eq)]
pub struct Bitmask {
    width: u32,
    height: u32,
    bits: Vec<u8>,
}

impl fmt::Debug for Bitmask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Bitmask({}x{}, {} set)", self.width, self.height, self.count())
    }
}

impl Bitmask {
    pub fn new(width: u32, height: u32) -> Self {
        let n = (width as usize * height as usize).div_ceil(8);
        Self { width, height, bits: vec![0; n] }
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        if x >= self.width || y >= self.height {
            return false;
        }
        let i = self.index(x, y);
        self.bits[i / 8] >> (i % 8) & 1 == 1
    }

    pub fn set(&mut self, x: u32, y: u32, on: bool) {
        let i = self.index(x, y);
        if on {
            self.bits[i / 8] |= 1 << (i % 8);
        } else {
            self.bits[i / 8] &= !(1 << (i % 8));
        }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().map(|b| b.count_ones() as usize).sum()
    }

    /// Mean of set pixel centres, `None` for an empty mask.
    pub fn centroid(&self) -> Option<[f64; 2]> {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    sx += f64::from(x) + 0.5;
                    sy += f64::from(y) + 0.5;
                    n += 1;
                }
            }
        }
        (n > 0).then(|| [sx / n as f64, sy / n as f64])
    }

    /// Tight pixel bounding box of the set pixels.
    pub fn extent(&self) -> Option<BBox> {
        let (mut x1, mut y1, mut x2, mut y2) = (u32::MAX, u32::MAX, 0, 0);
        let mut any = false;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    any = true;
                    x1 = x1.min(x);
                    y1 = y1.min(y);
                    x2 = x2.max(x + 1);
                    y2 = y2.max(y + 1);
                }
            }
        }
        any.then(|| BBox::new(f64::from(x1), f64::from(y1), f64::from(x2), f64::from(y2)))
    }
}

#[derive(Serialize, Deserialize)]
struct BitmaskWire {
    width: u32,
    height: u32,
    data: String,
}

impl Serialize for Bitmask {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        BitmaskWire { width: self.width, height: self.height, data: B64.encode(&self.bits) }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Bitmask {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let wire = BitmaskWire::deserialize(d)?;
        let bits = B64.decode(wire.data).map_err(serde::de::Error::custom)?;
        let expected = (wire.width as usize * wire.height as usize).div_ceil(8);
        if bits.len() != expected {
            return Err(serde::de::Error::custom(format!(
                "mask data has {} bytes, expected {expected}",
                bits.len()
            )));
        }
        Ok(Bitmask { width: wire.width, height: wire.height, bits })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectMask {
    pub label: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub mask: Bitmask,
}

/// Dense relative depth in `[0, 1]`, larger is farther.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthField {
    pub width: u32,
    pub height: u32,
    pub values: Vec<f32>,
}

impl DepthField {
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.values[(y * self.width + x) as usize]
    }

    /// Mean over pixels whose centres lie inside `bbox`.
    pub fn box_mean(&self, bbox: &BBox) -> Option<f64> {
        let xs = crate::image::pixel_span(bbox.x1, bbox.x2, self.width);
        let ys = crate::image::pixel_span(bbox.y1, bbox.y2, self.height);
        let mut sum = 0.0f64;
        let mut n = 0usize;
        for y in ys {
            for x in xs.clone() {
                sum += f64::from(self.get(x, y));
                n += 1;
            }
        }
        (n > 0).then(|| sum / n as f64)
    }
}

#[derive(Serialize, Deserialize)]
struct DepthWire {
    width: u32,
    height: u32,
    data: String,
}

impl Serialize for DepthField {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let bytes: Vec<u8> = self.values.iter().flat_map(|v| v.to_le_bytes()).collect();
        DepthWire { width: self.width, height: self.height, data: B64.encode(bytes) }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for DepthField {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let wire = DepthWire::deserialize(d)?;
        let bytes = B64.decode(wire.data).map_err(serde::de::Error::custom)?;
        if bytes.len() != wire.width as usize * wire.height as usize * 4 {
            return Err(serde::de::Error::custom("depth data length does not match its dimensions"));
        }
        let values = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Ok(DepthField { width: wire.width, height: wire.height, values })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point3D {
    pub label: String,
    /// `[X, Y, Z]` in meters, camera frame.
    pub xyz: [f64; 3],
}

/// Per-object measurement produced by the compute utility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectStat {
    pub label: String,
    pub centroid: [f64; 2],
    /// Width and height of the object's pixel extent.
    pub extent: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_depth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<[f64; 3]>,
}

/// Crop placement: source region `[x, y, w, h]` and output size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropGeometry {
    pub region: [f64; 4],
    pub out_size: [u32; 2],
    pub zoom: f64,
}

/// An in-memory raster; serialized as base64 PNG.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterPayload(pub Arc<Raster>);

impl Serialize for RasterPayload {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut buf = std::io::Cursor::new(Vec::new());
        self.0
            .write_to(&mut buf, image::ImageFormat::Png)
            .map_err(serde::ser::Error::custom)?;
        s.serialize_str(&B64.encode(buf.into_inner()))
    }
}

impl<'de> Deserialize<'de> for RasterPayload {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        decode_png_b64(&text).map(RasterPayload).map_err(serde::de::Error::custom)
    }
}

pub fn decode_png_b64(text: &str) -> Result<Arc<Raster>, String> {
    let bytes = B64.decode(text).map_err(|e| e.to_string())?;
    let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png).map_err(|e| e.to_string())?;
    Ok(Arc::new(img.to_rgb8()))
}

pub fn encode_png_b64(raster: &Raster) -> String {
    let mut buf = std::io::Cursor::new(Vec::new());
    raster
        .write_to(&mut buf, image::ImageFormat::Png)
        .expect("PNG encoding into memory does not fail");
    B64.encode(buf.into_inner())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum ComputeResult {
    Number(f64),
    Text(String),
    Objects(Vec<ObjectStat>),
    Crop(CropGeometry),
    Raster(RasterPayload),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutputKind {
    Detections,
    Mask,
    DepthField,
    PointCloud3D,
    ComputeResult,
}

/// Kind-tagged result of one atomic operation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AtomicOutput {
    Detections { detections: Vec<Detection> },
    Mask { masks: Vec<ObjectMask> },
    DepthField { depth: DepthField },
    #[serde(rename = "point_cloud_3d")]
    PointCloud3D {
        points: Vec<Point3D>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        focal_px: Option<f64>,
    },
    ComputeResult { result: ComputeResult },
}

impl AtomicOutput {
    pub fn kind(&self) -> OutputKind {
        match self {
            AtomicOutput::Detections { .. } => OutputKind::Detections,
            AtomicOutput::Mask { .. } => OutputKind::Mask,
            AtomicOutput::DepthField { .. } => OutputKind::DepthField,
            AtomicOutput::PointCloud3D { .. } => OutputKind::PointCloud3D,
            AtomicOutput::ComputeResult { .. } => OutputKind::ComputeResult,
        }
    }

    /// Checks the payload invariants against the input image size.
    pub fn validate(&self, width: u32, height: u32) -> Result<(), String> {
        match self {
            AtomicOutput::Detections { detections } => {
                for d in detections {
                    if !d.bbox.is_valid_in(width, height) {
                        return Err(format!("detection box {} outside {width}x{height}", d.bbox));
                    }
                    if !(0.0..=1.0).contains(&d.score) {
                        return Err(format!("detection score {} outside [0, 1]", d.score));
                    }
                }
            }
            AtomicOutput::Mask { masks } => {
                for m in masks {
                    if m.mask.width() != width || m.mask.height() != height {
                        return Err("mask size differs from the image".into());
                    }
                }
            }
            AtomicOutput::DepthField { depth } => {
                if depth.width != width || depth.height != height {
                    return Err("depth field size differs from the image".into());
                }
                if depth.values.len() != (width * height) as usize {
                    return Err("depth field length mismatch".into());
                }
                if depth.values.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err("depth value outside [0, 1]".into());
                }
            }
            AtomicOutput::PointCloud3D { points, .. } => {
                if points.iter().any(|p| p.xyz.iter().any(|c| !c.is_finite())) {
                    return Err("non-finite 3D point".into());
                }
            }
            AtomicOutput::ComputeResult { .. } => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_and_geometry() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        let b = BBox::new(5.0, 0.0, 15.0, 10.0);
        assert_eq!(a.iou(&b), 50.0 / 150.0);
        assert_eq!(a.center(), [5.0, 5.0]);
        assert!(a.is_valid_in(10, 10));
        assert!(!BBox::new(0.0, 0.0, 9999.0, 9999.0).is_valid_in(640, 480));
    }

    #[test]
    fn mask_centroid_of_rectangle_is_box_center() {
        let m = Bitmask::from_fn(64, 48, |x, y| (10..50).contains(&x) && (20..30).contains(&y));
        assert_eq!(m.count(), 400);
        assert_eq!(m.centroid(), Some([30.0, 25.0]));
        assert_eq!(m.extent(), Some(BBox::new(10.0, 20.0, 50.0, 30.0)));
    }

    #[test]
    fn wire_encodings_are_exact() {
        let out = AtomicOutput::DepthField {
            depth: DepthField { width: 2, height: 1, values: vec![0.3, 0.70000005] },
        };
        let json = serde_json::to_string(&out).unwrap();
        assert_eq!(serde_json::from_str::<AtomicOutput>(&json).unwrap(), out);

        let mask = Bitmask::from_fn(5, 3, |x, y| x == y);
        let json = serde_json::to_string(&mask).unwrap();
        assert_eq!(serde_json::from_str::<Bitmask>(&json).unwrap(), mask);

        let det = AtomicOutput::Detections {
            detections: vec![Detection { label: "lamp".into(), bbox: BBox::new(10.0, 20.0, 50.0, 80.0), score: 1.0 }],
        };
        let json = serde_json::to_value(&det).unwrap();
        assert_eq!(json["kind"], "detections");
        assert_eq!(json["detections"][0]["box"], serde_json::json!([10.0, 20.0, 50.0, 80.0]));
    }

    #[test]
    fn validation_catches_bad_payloads() {
        let bad = AtomicOutput::Detections {
            detections: vec![Detection { label: "x".into(), bbox: BBox::new(0.0, 0.0, 700.0, 10.0), score: 0.5 }],
        };
        assert!(bad.validate(640, 480).is_err());
        let bad_depth = AtomicOutput::DepthField { depth: DepthField { width: 1, height: 1, values: vec![1.5] } };
        assert!(bad_depth.validate(1, 1).is_err());
    }
}
