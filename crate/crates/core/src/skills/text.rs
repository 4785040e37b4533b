//! Hint text templates. The layout is fixed so scripted consumers can read it back.

use indexmap::IndexMap;

use crate::image::ImageRef;
use crate::tools::{CropGeometry, ObjectStat};

/// Pixel quantity rounded to two decimals, shortest form.
pub fn fmt_px(v: f64) -> String {
    clean((v * 100.0).round() / 100.0)
}

/// Metric quantity rounded to millimetres, shortest form.
pub fn fmt_meters(v: f64) -> String {
    clean((v * 1000.0).round() / 1000.0)
}

pub fn fmt_depth(v: f64) -> String {
    format!("{v:.4}")
}

fn clean(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else {
        format!("{v}")
    }
}

/// Display names for a list of per-instance stats: the bare label when it
/// occurs once, `label #k` (1-based) when it repeats.
pub fn instance_names(stats: &[ObjectStat]) -> Vec<String> {
    let mut seen: IndexMap<&str, usize> = IndexMap::new();
    stats
        .iter()
        .map(|s| {
            let total = stats.iter().filter(|o| o.label == s.label).count();
            let k = seen.entry(s.label.as_str()).or_insert(0);
            *k += 1;
            if total > 1 {
                format!("{} #{}", s.label, k)
            } else {
                s.label.clone()
            }
        })
        .collect()
}

fn missing_line(per_query: &IndexMap<String, bool>) -> Option<String> {
    let missing: Vec<&str> = per_query.iter().filter(|(_, f)| !**f).map(|(l, _)| l.as_str()).collect();
    (!missing.is_empty()).then(|| format!("Not found: {}", missing.join(", ")))
}

fn point(p: [f64; 2]) -> String {
    format!("({}, {})", fmt_px(p[0]), fmt_px(p[1]))
}

fn finish(mut lines: Vec<String>, per_query: &IndexMap<String, bool>) -> String {
    lines.extend(missing_line(per_query));
    lines.join("\n")
}

pub(super) fn segment(stats: &[ObjectStat], per_query: &IndexMap<String, bool>) -> String {
    let mut lines = vec!["Segmented objects (centroids in pixels):".to_string()];
    for (name, s) in instance_names(stats).iter().zip(stats) {
        lines.push(format!("{name}: centroid {}", point(s.centroid)));
    }
    finish(lines, per_query)
}

pub(super) fn depth(stats: &[ObjectStat], per_query: &IndexMap<String, bool>) -> String {
    let mut lines = vec!["Average depth per object (0 = near, 1 = far):".to_string()];
    for (name, s) in instance_names(stats).iter().zip(stats) {
        if let Some(d) = s.mean_depth {
            lines.push(format!("{name}: {}", fmt_depth(d)));
        }
    }
    finish(lines, per_query)
}

pub(super) fn depth_caption(image: ImageRef) -> String {
    format!("Depth map of {image}: brightness encodes relative distance, black is near and white is far.")
}

pub(super) fn size(stats: &[ObjectStat], per_query: &IndexMap<String, bool>) -> String {
    let mut lines = vec!["Object extents (pixels):".to_string()];
    for (name, s) in instance_names(stats).iter().zip(stats) {
        lines.push(format!(
            "{name}: centroid {}, pixel extent {} x {}",
            point(s.centroid),
            fmt_px(s.extent[0]),
            fmt_px(s.extent[1])
        ));
    }
    finish(lines, per_query)
}

pub(super) fn count(stats: &[ObjectStat], per_query: &IndexMap<String, bool>) -> String {
    let mut lines = vec!["Object counts:".to_string()];
    for label in per_query.keys() {
        let centroids: Vec<String> = stats.iter().filter(|s| &s.label == label).map(|s| point(s.centroid)).collect();
        if centroids.is_empty() {
            lines.push(format!("{label}: 0"));
        } else {
            lines.push(format!("{label}: {}, centroids {}", centroids.len(), centroids.join(", ")));
        }
    }
    lines.join("\n")
}

pub(super) fn crop(image: ImageRef, g: &CropGeometry) -> String {
    let [x, y, w, h] = g.region;
    format!(
        "Cropped region [{}, {}, {}, {}] of {image}, zoom {} to {} x {} pixels.",
        fmt_px(x),
        fmt_px(y),
        fmt_px(x + w),
        fmt_px(y + h),
        fmt_px(g.zoom),
        g.out_size[0],
        g.out_size[1]
    )
}

pub(super) fn points(stats: &[ObjectStat], focal_px: Option<f64>, per_query: &IndexMap<String, bool>) -> String {
    let header = match focal_px {
        Some(f) => format!("3D coordinates [X, Y, Z] in meters relative to the camera (focal length {} px):", fmt_px(f)),
        None => "3D coordinates [X, Y, Z] in meters relative to the camera:".to_string(),
    };
    let mut lines = vec![header];
    for (name, s) in instance_names(stats).iter().zip(stats) {
        if let Some([x, y, z]) = s.point {
            lines.push(format!("{name}: [{}, {}, {}]", fmt_meters(x), fmt_meters(y), fmt_meters(z)));
        }
    }
    finish(lines, per_query)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stat(label: &str, c: [f64; 2]) -> ObjectStat {
        ObjectStat { label: label.into(), centroid: c, extent: [4.0, 6.0], mean_depth: Some(0.3), point: Some([1.0, -0.25, 2.125]) }
    }

    #[test]
    fn repeated_labels_are_numbered() {
        let stats = [stat("table", [1.0, 2.0]), stat("cup", [0.0, 0.0]), stat("table", [3.5, 4.0])];
        assert_eq!(instance_names(&stats), ["table #1", "cup", "table #2"]);
    }

    #[test]
    fn number_formatting() {
        assert_eq!(fmt_px(120.5), "120.5");
        assert_eq!(fmt_px(88.0), "88");
        assert_eq!(fmt_px(-0.001), "0");
        assert_eq!(fmt_meters(1.2345), "1.235");
        assert_eq!(fmt_depth(0.3), "0.3000");
    }

    #[test]
    fn count_text_lists_centroids() {
        let per_query: IndexMap<String, bool> = [("table".to_string(), true), ("lamp".to_string(), false)].into_iter().collect();
        let text = count(&[stat("table", [1.0, 2.0]), stat("table", [3.5, 4.0])], &per_query);
        assert_eq!(text, "Object counts:\ntable: 2, centroids (1, 2), (3.5, 4)\nlamp: 0");
    }

    #[test]
    fn points_text() {
        let per_query: IndexMap<String, bool> = [("cup".to_string(), true)].into_iter().collect();
        let text = points(&[stat("cup", [0.0, 0.0])], Some(512.0), &per_query);
        assert_eq!(text, "3D coordinates [X, Y, Z] in meters relative to the camera (focal length 512 px):\ncup: [1, -0.25, 2.125]");
    }
}
