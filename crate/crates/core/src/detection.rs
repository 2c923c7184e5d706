//! Target detection.
//!
//! Two interchangeable back ends: a deterministic color-predicate
//! connected-components labeler for synthetic scenes, and an HTTP client for
//! an external detector service (e.g. a YOLO server) speaking a small
//! PNG-in / JSON-out contract.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BoundingBox, FrameSize};
use crate::image::ImageFrame;

/// Components smaller than this many pixels are treated as speckle.
pub const MIN_COMPONENT_AREA: usize = 9;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("detector is not configured for {0} mode")]
    WrongMode(&'static str),
    #[error("invalid detector config: {0}")]
    Config(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("malformed detector response: {0}")]
    Malformed(String),
    #[error("invalid detection: {0}")]
    Validation(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub label: String,
    pub score: f64,
}

impl Detection {
    pub fn validate(&self) -> Result<(), DetectError> {
        self.bbox
            .validate()
            .map_err(|e| DetectError::Validation(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.score) {
            return Err(DetectError::Validation(format!(
                "score {} outside [0, 1]",
                self.score
            )));
        }
        Ok(())
    }
}

/// A labelled per-channel range test on normalized sample values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorClass {
    pub label: String,
    pub min: [f32; 3],
    pub max: [f32; 3],
}

impl ColorClass {
    pub fn new(label: &str, min: [f32; 3], max: [f32; 3]) -> Self {
        Self {
            label: label.to_string(),
            min,
            max,
        }
    }

    #[inline]
    fn matches(&self, px: [u16; 3], inv_max: f32) -> bool {
        (0..3).all(|c| {
            let v = f32::from(px[c]) * inv_max;
            v >= self.min[c] && v <= self.max[c]
        })
    }
}

/// Saturated target colors rendered by the virtual camera, in 8-bit sRGB.
pub const PALETTE: [(&str, [u8; 3]); 8] = [
    ("red", [255, 0, 0]),
    ("green", [0, 255, 0]),
    ("blue", [0, 0, 255]),
    ("yellow", [255, 255, 0]),
    ("magenta", [255, 0, 255]),
    ("cyan", [0, 255, 255]),
    ("orange", [255, 128, 0]),
    ("purple", [128, 0, 255]),
];

/// One predicate per palette color. Mid channels (128) accept `[0.35, 0.65]`,
/// saturated ones `>= 0.78`, empty ones `<= 0.24`; neutral grays match none.
pub fn palette_classes() -> Vec<ColorClass> {
    PALETTE
        .iter()
        .map(|(label, rgb)| {
            let mut min = [0.0f32; 3];
            let mut max = [1.0f32; 3];
            for c in 0..3 {
                match rgb[c] {
                    255 => min[c] = 0.78,
                    0 => max[c] = 0.24,
                    _ => {
                        min[c] = 0.35;
                        max[c] = 0.65;
                    }
                }
            }
            ColorClass::new(label, min, max)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DetectorConfig {
    ReferenceBlob {
        classes: Vec<ColorClass>,
    },
    Remote {
        endpoint: String,
        timeout_ms: u64,
    },
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self::ReferenceBlob {
            classes: palette_classes(),
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), DetectError> {
        match self {
            Self::ReferenceBlob { classes } => {
                for c in classes {
                    if (0..3).any(|i| c.min[i] > c.max[i]) {
                        return Err(DetectError::Config(format!(
                            "class {:?} has min > max",
                            c.label
                        )));
                    }
                }
                Ok(())
            }
            Self::Remote { timeout_ms, endpoint } => {
                if *timeout_ms == 0 {
                    return Err(DetectError::Config("timeout must be > 0".into()));
                }
                if endpoint.is_empty() {
                    return Err(DetectError::Config("empty endpoint".into()));
                }
                Ok(())
            }
        }
    }

    /// Runs whichever back end is configured.
    pub fn detect(&self, frame: &ImageFrame, task_label: &str) -> Result<Vec<Detection>, DetectError> {
        match self {
            Self::ReferenceBlob { .. } => detect_blobs(frame, self),
            Self::Remote { .. } => remote_detect(frame, self, task_label),
        }
    }
}

struct Component {
    area: usize,
    sum_x: u64,
    sum_y: u64,
    x_min: u32,
    y_min: u32,
    x_max: u32,
    y_max: u32,
}

/// 8-connected components of pixels matching each configured color class.
///
/// Boxes use pixel-center coordinates and have the component's extent (a
/// component spanning columns 3..=7 is 4 wide) but are centered on the
/// component centroid, which is far less sensitive to the pixel grid than
/// the extent midpoint. For symmetric blobs the two coincide. Score is
/// component area over extent area.
pub fn detect_blobs(frame: &ImageFrame, cfg: &DetectorConfig) -> Result<Vec<Detection>, DetectError> {
    let DetectorConfig::ReferenceBlob { classes } = cfg else {
        return Err(DetectError::WrongMode("reference_blob"));
    };
    let (w, h) = (frame.width(), frame.height());
    let inv_max = 1.0 / f32::from(frame.max_value());
    let mut found: Vec<(usize, Detection)> = Vec::new();
    let mut mask = vec![false; w as usize * h as usize];
    let mut stack: Vec<(u32, u32)> = Vec::new();

    for class in classes {
        for y in 0..h {
            for x in 0..w {
                mask[(y * w + x) as usize] = class.matches(frame.pixel(x, y), inv_max);
            }
        }
        for y0 in 0..h {
            for x0 in 0..w {
                if !mask[(y0 * w + x0) as usize] {
                    continue;
                }
                mask[(y0 * w + x0) as usize] = false;
                stack.push((x0, y0));
                let mut comp = Component {
                    area: 0,
                    sum_x: 0,
                    sum_y: 0,
                    x_min: x0,
                    y_min: y0,
                    x_max: x0,
                    y_max: y0,
                };
                while let Some((x, y)) = stack.pop() {
                    comp.area += 1;
                    comp.sum_x += u64::from(x);
                    comp.sum_y += u64::from(y);
                    comp.x_min = comp.x_min.min(x);
                    comp.x_max = comp.x_max.max(x);
                    comp.y_min = comp.y_min.min(y);
                    comp.y_max = comp.y_max.max(y);
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            let nx = i64::from(x) + dx;
                            let ny = i64::from(y) + dy;
                            if nx < 0 || ny < 0 || nx >= i64::from(w) || ny >= i64::from(h) {
                                continue;
                            }
                            let idx = (ny as u32 * w + nx as u32) as usize;
                            if mask[idx] {
                                mask[idx] = false;
                                stack.push((nx as u32, ny as u32));
                            }
                        }
                    }
                }
                if comp.area < MIN_COMPONENT_AREA {
                    continue;
                }
                let extent = f64::from(comp.x_max - comp.x_min + 1) * f64::from(comp.y_max - comp.y_min + 1);
                let n = comp.area as f64;
                let (cx, cy) = (comp.sum_x as f64 / n, comp.sum_y as f64 / n);
                let half_w = f64::from(comp.x_max - comp.x_min) / 2.0;
                let half_h = f64::from(comp.y_max - comp.y_min) / 2.0;
                let (xm, ym) = (f64::from(w - 1), f64::from(h - 1));
                found.push((
                    comp.area,
                    Detection {
                        bbox: BoundingBox {
                            x_min: (cx - half_w).clamp(0.0, xm),
                            y_min: (cy - half_h).clamp(0.0, ym),
                            x_max: (cx + half_w).clamp(0.0, xm),
                            y_max: (cy + half_h).clamp(0.0, ym),
                        },
                        label: class.label.clone(),
                        score: comp.area as f64 / extent,
                    },
                ));
            }
        }
    }

    found.sort_by(|(a_area, a), (b_area, b)| {
        b_area
            .cmp(a_area)
            .then(a.bbox.y_min.total_cmp(&b.bbox.y_min))
            .then(a.bbox.x_min.total_cmp(&b.bbox.x_min))
            .then(a.label.cmp(&b.label))
    });
    Ok(found.into_iter().map(|(_, d)| d).collect())
}

/// Picks the best detection for a task. Empty `task_label` means any label.
/// Ranking: score, then larger box area, then smaller `x_min`.
pub fn select_target<'a>(dets: &'a [Detection], task_label: &str) -> Option<&'a Detection> {
    dets.iter()
        .filter(|d| task_label.is_empty() || d.label == task_label)
        .max_by(|a, b| {
            a.score
                .total_cmp(&b.score)
                .then(a.bbox.area().total_cmp(&b.bbox.area()))
                .then(b.bbox.x_min.total_cmp(&a.bbox.x_min))
        })
}

#[derive(Debug, Deserialize)]
struct RemoteResponse {
    detections: Vec<RemoteDetection>,
}

#[derive(Debug, Deserialize)]
struct RemoteDetection {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    label: String,
    score: f64,
}

/// Parses a detector-service response body and clamps boxes into the frame.
pub fn parse_remote_response(body: &str, size: FrameSize) -> Result<Vec<Detection>, DetectError> {
    let resp: RemoteResponse =
        serde_json::from_str(body).map_err(|e| DetectError::Malformed(e.to_string()))?;
    resp.detections
        .into_iter()
        .map(|r| {
            let [x_min, y_min, x_max, y_max] = r.bbox;
            let d = Detection {
                bbox: BoundingBox {
                    x_min,
                    y_min,
                    x_max,
                    y_max,
                },
                label: r.label,
                score: r.score,
            };
            d.validate()?;
            Ok(Detection {
                bbox: d.bbox.clamped_to(size),
                ..d
            })
        })
        .collect()
}

/// POSTs the frame as PNG to the configured endpoint.
pub fn remote_detect(
    frame: &ImageFrame,
    cfg: &DetectorConfig,
    task_label: &str,
) -> Result<Vec<Detection>, DetectError> {
    let DetectorConfig::Remote { endpoint, timeout_ms } = cfg else {
        return Err(DetectError::WrongMode("remote"));
    };
    cfg.validate()?;
    let size = frame
        .size()
        .ok_or_else(|| DetectError::Validation("frame smaller than 2x2".into()))?;
    let png = frame
        .encode_png()
        .map_err(|e| DetectError::Transport(format!("encode: {e}")))?;
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_millis(*timeout_ms)))
        .build()
        .into();
    let mut resp = agent
        .post(endpoint)
        .header("Content-Type", "image/png")
        .header("X-Task-Label", task_label)
        .send(&png[..])
        .map_err(|e| DetectError::Transport(e.to_string()))?;
    let body = resp
        .body_mut()
        .read_to_string()
        .map_err(|e| DetectError::Transport(e.to_string()))?;
    parse_remote_response(&body, size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::FormatSpec;

    fn black(w: u32, h: u32) -> ImageFrame {
        ImageFrame::new(w, h, FormatSpec::srgb8()).unwrap()
    }

    fn disc(f: &mut ImageFrame, cx: f64, cy: f64, r: f64, rgb: [u16; 3]) {
        for y in 0..f.height() {
            for x in 0..f.width() {
                let (dx, dy) = (f64::from(x) - cx, f64::from(y) - cy);
                if dx * dx + dy * dy <= r * r {
                    f.set_pixel(x, y, rgb);
                }
            }
        }
    }

    /// Oracle: scan every pixel with the same predicate and take extremes.
    fn scan_bbox(f: &ImageFrame, class: &ColorClass) -> Option<(u32, u32, u32, u32, usize)> {
        let inv = 1.0 / f32::from(f.max_value());
        let mut out: Option<(u32, u32, u32, u32, usize)> = None;
        for y in 0..f.height() {
            for x in 0..f.width() {
                if class.matches(f.pixel(x, y), inv) {
                    out = Some(match out {
                        None => (x, y, x, y, 1),
                        Some((a, b, c, d, n)) => (a.min(x), b.min(y), c.max(x), d.max(y), n + 1),
                    });
                }
            }
        }
        out
    }

    #[test]
    fn single_red_disc() {
        let mut f = black(64, 64);
        disc(&mut f, 20.0, 30.0, 5.0, [255, 0, 0]);
        let dets = detect_blobs(&f, &DetectorConfig::default()).unwrap();
        assert_eq!(dets.len(), 1);
        let d = &dets[0];
        assert_eq!(d.label, "red");
        let red = &palette_classes()[0];
        let (x0, y0, x1, y1, n) = scan_bbox(&f, red).unwrap();
        assert_eq!(
            (d.bbox.x_min, d.bbox.y_min, d.bbox.x_max, d.bbox.y_max),
            (f64::from(x0), f64::from(y0), f64::from(x1), f64::from(y1))
        );
        let (cx, cy) = d.bbox.center();
        assert!((cx - 20.0).abs() <= 1.0 && (cy - 30.0).abs() <= 1.0);
        let extent = f64::from((x1 - x0 + 1) * (y1 - y0 + 1));
        assert!((d.score - n as f64 / extent).abs() < 1e-12);
    }

    #[test]
    fn box_is_centered_on_centroid() {
        // L shape: 5x5 block plus a 5x1 arm to the right
        let mut f = black(32, 32);
        for y in 10..15 {
            for x in 10..15 {
                f.set_pixel(x, y, [255, 0, 0]);
            }
        }
        for x in 15..20 {
            f.set_pixel(x, 10, [255, 0, 0]);
        }
        let d = &detect_blobs(&f, &DetectorConfig::default()).unwrap()[0];
        let (sx, sy, n) = (0..32u32)
            .flat_map(|y| (0..32u32).map(move |x| (x, y)))
            .filter(|&(x, y)| f.pixel(x, y)[0] == 255)
            .fold((0.0, 0.0, 0.0), |(a, b, n), (x, y)| (a + f64::from(x), b + f64::from(y), n + 1.0));
        let (cx, cy) = d.bbox.center();
        assert!((cx - sx / n).abs() < 1e-12 && (cy - sy / n).abs() < 1e-12);
        assert!((d.bbox.width() - 9.0).abs() < 1e-12);
        assert!((d.bbox.height() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn black_frame_has_no_detections() {
        assert!(detect_blobs(&black(32, 32), &DetectorConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn larger_component_first() {
        let mut f = black(64, 64);
        // 5x5 = 25 px and 10x10 = 100 px squares
        for y in 5..10 {
            for x in 5..10 {
                f.set_pixel(x, y, [0, 255, 0]);
            }
        }
        for y in 30..40 {
            for x in 40..50 {
                f.set_pixel(x, y, [0, 255, 0]);
            }
        }
        let dets = detect_blobs(&f, &DetectorConfig::default()).unwrap();
        assert_eq!(dets.len(), 2);
        assert_eq!(dets[0].bbox.x_min, 40.0);
        assert_eq!(dets[1].bbox.x_min, 5.0);
        assert_eq!(dets[0].score, 1.0);
    }

    #[test]
    fn speckle_below_nine_pixels_dropped() {
        let mut f = black(16, 16);
        for (x, y) in [(1, 1), (2, 1), (1, 2), (2, 2), (3, 3), (4, 4), (5, 5), (6, 6)] {
            f.set_pixel(x, y, [255, 0, 0]);
        }
        assert!(detect_blobs(&f, &DetectorConfig::default()).unwrap().is_empty());
        f.set_pixel(7, 7, [255, 0, 0]);
        // diagonal chain joins under 8-connectivity: 9 px
        assert_eq!(detect_blobs(&f, &DetectorConfig::default()).unwrap().len(), 1);
    }

    #[test]
    fn neutral_grays_match_no_class() {
        let classes = palette_classes();
        for g in (0..=255u16).step_by(5) {
            assert!(classes.iter().all(|c| !c.matches([g, g, g], 1.0 / 255.0)));
        }
    }

    #[test]
    fn palette_colors_match_only_their_class() {
        let classes = palette_classes();
        for (i, (_, rgb)) in PALETTE.iter().enumerate() {
            let px = rgb.map(u16::from);
            for (j, c) in classes.iter().enumerate() {
                assert_eq!(c.matches(px, 1.0 / 255.0), i == j, "{} vs {}", PALETTE[i].0, c.label);
            }
        }
    }

    fn det(label: &str, score: f64, b: (f64, f64, f64, f64)) -> Detection {
        Detection {
            bbox: BoundingBox::new(b.0, b.1, b.2, b.3).unwrap(),
            label: label.into(),
            score,
        }
    }

    #[test]
    fn select_target_rules() {
        let dets = vec![det("cup", 0.9, (0.0, 0.0, 1.0, 1.0)), det("block", 0.95, (0.0, 0.0, 1.0, 1.0))];
        assert_eq!(select_target(&dets, "cup").unwrap().label, "cup");
        assert_eq!(select_target(&dets, "").unwrap().label, "block");
        assert!(select_target(&[], "cup").is_none());
        assert!(select_target(&dets, "plate").is_none());

        let dets = vec![det("block", 0.5, (0.0, 0.0, 4.0, 5.0)), det("block", 0.5, (9.0, 0.0, 19.0, 5.0))];
        assert_eq!(select_target(&dets, "block").unwrap().bbox.area(), 50.0);

        let dets = vec![det("block", 0.5, (9.0, 0.0, 14.0, 5.0)), det("block", 0.5, (2.0, 0.0, 7.0, 5.0))];
        assert_eq!(select_target(&dets, "block").unwrap().bbox.x_min, 2.0);
    }

    #[test]
    fn remote_response_parsing() {
        let size = FrameSize::new(100, 50).unwrap();
        let ok = r#"{"detections":[{"box":[-5,10,120,20],"label":"cup","score":0.8,"extra":1}]}"#;
        let d = parse_remote_response(ok, size).unwrap();
        assert_eq!(d[0].bbox, BoundingBox::new(0.0, 10.0, 99.0, 20.0).unwrap());
        let bad = r#"{"detections":[{"box":[0,0,1,1],"label":"cup","score":1.3}]}"#;
        assert!(matches!(parse_remote_response(bad, size), Err(DetectError::Validation(_))));
        assert!(matches!(parse_remote_response("{", size), Err(DetectError::Malformed(_))));
        let inverted = r#"{"detections":[{"box":[5,0,1,1],"label":"cup","score":0.3}]}"#;
        assert!(parse_remote_response(inverted, size).is_err());
    }

    #[test]
    fn config_validation() {
        let c = DetectorConfig::Remote {
            endpoint: "http://x".into(),
            timeout_ms: 0,
        };
        assert!(c.validate().is_err());
        let js = serde_json::to_string(&DetectorConfig::Remote {
            endpoint: "http://127.0.0.1:9".into(),
            timeout_ms: 50,
        })
        .unwrap();
        assert!(js.contains("\"mode\":\"remote\""));
    }
}
