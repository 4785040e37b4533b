//! Image references, the per-episode image store and raster drawing.

mod draw;
mod font;
mod store;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use draw::{
    blend_fill, crop_resize, depth_to_gray, draw_text, label_color, outline_box, pixel_span, Raster, Rgb,
};
pub use store::{ImageStore, StoreError, StoredImage};

/// Episode-local image identifier rendered as `image-k`; `image-0` is the input image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ImageRef(pub u32);

impl ImageRef {
    pub const INPUT: ImageRef = ImageRef(0);
}

impl fmt::Display for ImageRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "image-{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("`{0}` is not an image reference of the form image-<k>")]
pub struct BadImageRef(pub String);

impl FromStr for ImageRef {
    type Err = BadImageRef;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s.strip_prefix("image-").ok_or_else(|| BadImageRef(s.to_string()))?;
        let canonical = !digits.is_empty()
            && digits.bytes().all(|b| b.is_ascii_digit())
            && (digits == "0" || !digits.starts_with('0'));
        if !canonical {
            return Err(BadImageRef(s.to_string()));
        }
        digits.parse().map(ImageRef).map_err(|_| BadImageRef(s.to_string()))
    }
}

impl Serialize for ImageRef {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ImageRef {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display() {
        assert_eq!("image-0".parse::<ImageRef>(), Ok(ImageRef(0)));
        assert_eq!("image-12".parse::<ImageRef>(), Ok(ImageRef(12)));
        assert_eq!(ImageRef(3).to_string(), "image-3");
        for bad in ["image-", "image-01", "img-1", "image--1", "image-+1", "image-1a"] {
            assert!(bad.parse::<ImageRef>().is_err(), "{bad}");
        }
    }
}
