use std::ops::Range;

use image::{ImageBuffer, Rgb as PixelRgb, RgbImage};

use super::font::{glyph, lit, GLYPH_H, GLYPH_W};

pub type Raster = RgbImage;
pub type Rgb = PixelRgb<u8>;

const PALETTE: [[u8; 3]; 8] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
];

/// Stable per-label colour (FNV-1a over the label bytes).
pub fn label_color(label: &str) -> Rgb {
    let mut hash: u32 = 0x811c_9dc5;
    for b in label.bytes() {
        hash ^= u32::from(b);
        hash = hash.wrapping_mul(0x0100_0193);
    }
    PixelRgb(PALETTE[(hash % PALETTE.len() as u32) as usize])
}

/// Pixel indices whose centres `i + 0.5` fall in `[lo, hi)`, clipped to `0..limit`.
pub fn pixel_span(lo: f64, hi: f64, limit: u32) -> Range<u32> {
    let clamp = |v: f64| v.clamp(0.0, f64::from(limit)) as u32;
    let start = clamp((lo - 0.5).ceil());
    let end = clamp((hi - 0.5).ceil());
    start..end.max(start)
}

/// Draws a rectangle outline of `thickness` pixels inside the box.
pub fn outline_box(img: &mut Raster, bbox: [f64; 4], color: Rgb, thickness: u32) {
    let xs = pixel_span(bbox[0], bbox[2], img.width());
    let ys = pixel_span(bbox[1], bbox[3], img.height());
    if xs.is_empty() || ys.is_empty() {
        return;
    }
    for y in ys.clone() {
        for x in xs.clone() {
            let edge = x < xs.start + thickness
                || x + thickness >= xs.end
                || y < ys.start + thickness
                || y + thickness >= ys.end;
            if edge {
                img.put_pixel(x, y, color);
            }
        }
    }
}

/// Alpha-blends `color` over every pixel where `covered(x, y)` holds.
pub fn blend_fill(img: &mut Raster, color: Rgb, alpha: f64, covered: impl Fn(u32, u32) -> bool) {
    let (w, h) = img.dimensions();
    for y in 0..h {
        for x in 0..w {
            if covered(x, y) {
                let px = img.get_pixel_mut(x, y);
                for c in 0..3 {
                    let mixed = (1.0 - alpha) * f64::from(px.0[c]) + alpha * f64::from(color.0[c]);
                    px.0[c] = mixed.round().clamp(0.0, 255.0) as u8;
                }
            }
        }
    }
}

/// Grayscale depth image: 0 (near) is black, 1 (far) is white.
pub fn depth_to_gray(width: u32, height: u32, values: &[f32]) -> Raster {
    ImageBuffer::from_fn(width, height, |x, y| {
        let d = values[(y * width + x) as usize].clamp(0.0, 1.0);
        let g = (f64::from(d) * 255.0).round() as u8;
        PixelRgb([g, g, g])
    })
}

/// Nearest-neighbour resample of the region `[x, y, w, h]` into `out_w x out_h`.
pub fn crop_resize(img: &Raster, region: [f64; 4], out_w: u32, out_h: u32) -> Raster {
    let [rx, ry, rw, rh] = region;
    let (w, h) = img.dimensions();
    ImageBuffer::from_fn(out_w.max(1), out_h.max(1), |i, j| {
        let sx = (rx + (f64::from(i) + 0.5) * rw / f64::from(out_w.max(1))).floor();
        let sy = (ry + (f64::from(j) + 0.5) * rh / f64::from(out_h.max(1))).floor();
        let sx = sx.clamp(0.0, f64::from(w - 1)) as u32;
        let sy = sy.clamp(0.0, f64::from(h - 1)) as u32;
        *img.get_pixel(sx, sy)
    })
}

/// Draws `text` with the built-in 3x5 font; glyphs falling outside are clipped.
pub fn draw_text(img: &mut Raster, x: u32, y: u32, text: &str, color: Rgb) {
    let (w, h) = img.dimensions();
    for (i, ch) in text.chars().enumerate() {
        let bits = glyph(ch);
        let ox = x + i as u32 * (GLYPH_W + 1);
        for row in 0..GLYPH_H {
            for col in 0..GLYPH_W {
                let (px, py) = (ox + col, y + row);
                if px < w && py < h && lit(bits, col, row) {
                    img.put_pixel(px, py, color);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integer_spans_are_half_open() {
        assert_eq!(pixel_span(10.0, 50.0, 640), 10..50);
        assert_eq!(pixel_span(-5.0, 3.0, 640), 0..3);
        assert_eq!(pixel_span(630.0, 700.0, 640), 630..640);
        assert_eq!(pixel_span(10.2, 10.4, 640), 10..10);
    }

    #[test]
    fn outline_touches_only_the_border() {
        let mut img = RgbImage::new(20, 20);
        let red = PixelRgb([255, 0, 0]);
        outline_box(&mut img, [2.0, 2.0, 12.0, 12.0], red, 2);
        assert_eq!(*img.get_pixel(2, 2), red);
        assert_eq!(*img.get_pixel(3, 7), red);
        assert_eq!(*img.get_pixel(11, 11), red);
        assert_eq!(*img.get_pixel(7, 7), PixelRgb([0, 0, 0]));
        assert_eq!(*img.get_pixel(12, 12), PixelRgb([0, 0, 0]));
    }

    #[test]
    fn mid_depth_is_mid_gray() {
        let img = depth_to_gray(4, 2, &[0.5; 8]);
        assert!(img.pixels().all(|p| p.0 == [128, 128, 128]));
    }

    #[test]
    fn blend_is_forty_percent() {
        let mut img = RgbImage::from_pixel(2, 1, PixelRgb([100, 100, 100]));
        blend_fill(&mut img, PixelRgb([200, 0, 100]), 0.4, |x, _| x == 0);
        assert_eq!(img.get_pixel(0, 0).0, [140, 60, 100]);
        assert_eq!(img.get_pixel(1, 0).0, [100, 100, 100]);
    }

    #[test]
    fn crop_identity_when_sizes_match() {
        let img = ImageBuffer::from_fn(8, 8, |x, y| PixelRgb([x as u8, y as u8, 0]));
        let out = crop_resize(&img, [2.0, 3.0, 4.0, 4.0], 4, 4);
        assert_eq!(out.get_pixel(0, 0).0, [2, 3, 0]);
        assert_eq!(out.get_pixel(3, 3).0, [5, 6, 0]);
        let zoomed = crop_resize(&img, [2.0, 3.0, 4.0, 4.0], 8, 8);
        assert_eq!(zoomed.get_pixel(1, 1).0, [2, 3, 0]);
        assert_eq!(zoomed.get_pixel(2, 2).0, [3, 4, 0]);
    }

    #[test]
    fn text_draws_something() {
        let mut img = RgbImage::new(20, 8);
        draw_text(&mut img, 0, 0, "A1", PixelRgb([255, 255, 255]));
        assert!(img.pixels().any(|p| p.0 == [255, 255, 255]));
        assert_eq!(*img.get_pixel(0, 0), PixelRgb([0, 0, 0]));
        assert_eq!(*img.get_pixel(1, 0), PixelRgb([255, 255, 255]));
    }
}
