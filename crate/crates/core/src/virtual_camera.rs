//! Stand-in for the physical PTZ camera: a flat textured world raster with
//! colored disc targets, viewed through a crop window driven by pan, tilt
//! and zoom.
//!
//! View mapping: pan sweeps the crop center linearly across the pannable
//! width, tilt across the pannable height, with (pan 0, tilt 30) at the world
//! center. At zoom 1 the crop is `base_fov_fraction` of the world width and
//! always lies inside the raster; at zoom z it is 1/z of that.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::PALETTE;
use crate::geometry::FrameSize;
use crate::gimbal::{CameraState, PAN_RANGE, TILT_RANGE};
use crate::image::{FormatSpec, ImageError, ImageFrame};
use crate::zoom::{bilinear_at, to_sample};

pub const SCENE_FILE: &str = "scene.json";
pub const WORLD_FILE: &str = "world.png";
pub const DEFAULT_OUT_SIZE: FrameSize = FrameSize {
    width: 640,
    height: 360,
};
pub const MAX_OUT_SIZE: FrameSize = FrameSize {
    width: 1280,
    height: 720,
};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("{0} targets requested, palette has {1} colors")]
    TooManyTargets(usize, usize),
    #[error("could not place {0} non-overlapping targets")]
    Placement(usize),
    #[error("unknown target id {0}")]
    UnknownTarget(u32),
    #[error("invalid scene: {0}")]
    Invalid(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub id: u32,
    pub label: String,
    pub color: [u8; 3],
    /// World pixel-center coordinates.
    pub center: (f64, f64),
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub world_size: u32,
    pub base_fov_fraction: f64,
    pub radius_range: (f64, f64),
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            world_size: 2048,
            base_fov_fraction: 0.5,
            radius_range: (20.0, 36.0),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SceneFile {
    seed: u64,
    config: SceneConfig,
    targets: Vec<Target>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldScene {
    pub seed: u64,
    pub config: SceneConfig,
    pub targets: Vec<Target>,
    raster: ImageFrame,
}

/// Crop window in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewWindow {
    pub center: (f64, f64),
    pub width: f64,
    pub height: f64,
}

impl ViewWindow {
    /// World units per output pixel.
    pub fn scale(&self, out: FrameSize) -> f64 {
        self.width / f64::from(out.width)
    }
}

pub fn make_scene(seed: u64, n_targets: usize) -> Result<WorldScene, SceneError> {
    make_scene_with(SceneConfig::default(), seed, n_targets)
}

pub fn make_scene_with(config: SceneConfig, seed: u64, n_targets: usize) -> Result<WorldScene, SceneError> {
    if n_targets > PALETTE.len() {
        return Err(SceneError::TooManyTargets(n_targets, PALETTE.len()));
    }
    if config.world_size < 64 || !(config.base_fov_fraction > 0.0 && config.base_fov_fraction <= 1.0) {
        return Err(SceneError::Invalid(format!("{config:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut raster = background(config.world_size, &mut rng)?;

    let ws = f64::from(config.world_size);
    let (r_lo, r_hi) = config.radius_range;
    let mut targets: Vec<Target> = Vec::with_capacity(n_targets);
    let mut attempts = 0;
    while targets.len() < n_targets {
        attempts += 1;
        if attempts > 10_000 {
            return Err(SceneError::Placement(n_targets));
        }
        let radius = rng.random_range(r_lo..=r_hi);
        // keep targets where a zoom-1 view can be centered on them
        let mut lo = config.base_fov_fraction * ws / 2.0 + radius;
        let mut hi = ws - 1.0 - lo;
        if lo >= hi {
            lo = radius + 2.0;
            hi = ws - 1.0 - lo;
        }
        let c = (rng.random_range(lo..hi), rng.random_range(lo..hi));
        let clear = targets.iter().all(|t| {
            let d = ((t.center.0 - c.0).powi(2) + (t.center.1 - c.1).powi(2)).sqrt();
            d > t.radius + radius + 4.0
        });
        if clear {
            let (label, color) = PALETTE[targets.len()];
            targets.push(Target {
                id: targets.len() as u32,
                label: label.into(),
                color,
                center: c,
                radius,
            });
        }
    }
    for t in &targets {
        paint_disc(&mut raster, t);
    }
    Ok(WorldScene {
        seed,
        config,
        targets,
        raster,
    })
}

/// Smooth value noise plus fine grain, gray levels in [90, 170].
fn background(size: u32, rng: &mut ChaCha8Rng) -> Result<ImageFrame, SceneError> {
    const CELL: u32 = 64;
    let cells = size / CELL + 2;
    let lattice: Vec<f64> = (0..cells * cells).map(|_| rng.random_range(105.0..155.0)).collect();
    let grain_seed: u64 = rng.random();
    let mut img = ImageFrame::new(size, size, FormatSpec::srgb8())?;
    img.samples_mut()
        .par_chunks_mut(size as usize * 3)
        .enumerate()
        .for_each(|(y, row)| {
            let y = y as u32;
            let (cy, fy) = (y / CELL, f64::from(y % CELL) / f64::from(CELL));
            for x in 0..size {
                let (cx, fx) = (x / CELL, f64::from(x % CELL) / f64::from(CELL));
                let l = |i: u32, j: u32| lattice[(j * cells + i) as usize];
                let top = l(cx, cy) * (1.0 - fx) + l(cx + 1, cy) * fx;
                let bot = l(cx, cy + 1) * (1.0 - fx) + l(cx + 1, cy + 1) * fx;
                let grain = (hash(grain_seed, x, y) % 21) as f64 - 10.0;
                let v = (top * (1.0 - fy) + bot * fy + grain).clamp(90.0, 170.0) as u16;
                row[x as usize * 3..x as usize * 3 + 3].copy_from_slice(&[v, v, v]);
            }
        });
    Ok(img)
}

fn hash(seed: u64, x: u32, y: u32) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ (u64::from(x) << 32 | u64::from(y));
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn paint_disc(img: &mut ImageFrame, t: &Target) {
    let (cx, cy) = t.center;
    let r2 = t.radius * t.radius;
    let y0 = (cy - t.radius).floor().max(0.0) as u32;
    let y1 = ((cy + t.radius).ceil() as u32).min(img.height() - 1);
    let x0 = (cx - t.radius).floor().max(0.0) as u32;
    let x1 = ((cx + t.radius).ceil() as u32).min(img.width() - 1);
    let rgb = t.color.map(u16::from);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (dx, dy) = (f64::from(x) - cx, f64::from(y) - cy);
            if dx * dx + dy * dy <= r2 {
                img.set_pixel(x, y, rgb);
            }
        }
    }
}

impl WorldScene {
    pub fn raster(&self) -> &ImageFrame {
        &self.raster
    }

    pub fn world_size(&self) -> f64 {
        f64::from(self.config.world_size)
    }

    pub fn target(&self, id: u32) -> Result<&Target, SceneError> {
        self.targets
            .iter()
            .find(|t| t.id == id)
            .ok_or(SceneError::UnknownTarget(id))
    }

    /// Crop size at zoom 1 for the given output aspect.
    fn base_crop(&self, out: FrameSize) -> (f64, f64) {
        let w = self.config.base_fov_fraction * self.world_size();
        (w, w * f64::from(out.height) / f64::from(out.width))
    }

    pub fn view_window(&self, s: &CameraState, out: FrameSize) -> ViewWindow {
        let ws = self.world_size();
        let (bw, bh) = self.base_crop(out);
        let span_x = ws / 2.0 - bw / 2.0;
        let span_y = ws / 2.0 - bh / 2.0;
        let tilt_mid = (TILT_RANGE.0 + TILT_RANGE.1) / 2.0;
        let tilt_half = (TILT_RANGE.1 - TILT_RANGE.0) / 2.0;
        ViewWindow {
            center: (
                ws / 2.0 + s.pan / PAN_RANGE.1 * span_x,
                ws / 2.0 + (s.tilt - tilt_mid) / tilt_half * span_y,
            ),
            width: bw / s.zoom,
            height: bh / s.zoom,
        }
    }

    /// Pan and tilt (unquantized, clamped to range) that put world point
    /// `p` at the view center.
    pub fn aim_at(&self, p: (f64, f64), out: FrameSize) -> (f64, f64) {
        let ws = self.world_size();
        let (bw, bh) = self.base_crop(out);
        let tilt_mid = (TILT_RANGE.0 + TILT_RANGE.1) / 2.0;
        let tilt_half = (TILT_RANGE.1 - TILT_RANGE.0) / 2.0;
        let pan = (p.0 - ws / 2.0) / (ws / 2.0 - bw / 2.0) * PAN_RANGE.1;
        let tilt = tilt_mid + (p.1 - ws / 2.0) / (ws / 2.0 - bh / 2.0) * tilt_half;
        (pan.clamp(PAN_RANGE.0, PAN_RANGE.1), tilt.clamp(TILT_RANGE.0, TILT_RANGE.1))
    }

    /// Frame coordinates of world point `p`.
    pub fn project(&self, p: (f64, f64), s: &CameraState, out: FrameSize) -> (f64, f64) {
        let v = self.view_window(s, out);
        let k = v.scale(out);
        let (fw, fh) = out.center();
        (fw + (p.0 - v.center.0) / k, fh + (p.1 - v.center.1) / k)
    }

    pub fn unproject(&self, q: (f64, f64), s: &CameraState, out: FrameSize) -> (f64, f64) {
        let v = self.view_window(s, out);
        let k = v.scale(out);
        let (fw, fh) = out.center();
        (v.center.0 + (q.0 - fw) * k, v.center.1 + (q.1 - fh) * k)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), SceneError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        self.raster.save_png(dir.join(WORLD_FILE))?;
        let file = SceneFile {
            seed: self.seed,
            config: self.config,
            targets: self.targets.clone(),
        };
        fs::write(dir.join(SCENE_FILE), serde_json::to_string_pretty(&file)? + "\n")?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, SceneError> {
        let dir = dir.as_ref();
        let file: SceneFile = serde_json::from_str(&fs::read_to_string(dir.join(SCENE_FILE))?)?;
        let raster = ImageFrame::load_png(dir.join(WORLD_FILE))?;
        if raster.width() != file.config.world_size || raster.height() != file.config.world_size {
            return Err(SceneError::Invalid("raster size does not match scene.json".into()));
        }
        Ok(Self {
            seed: file.seed,
            config: file.config,
            targets: file.targets,
            raster,
        })
    }
}

/// Renders the view for camera state `s`. Output pixel `(i, j)` samples the
/// world bilinearly at the unprojected point.
pub fn render_frame(scene: &WorldScene, s: &CameraState, out: FrameSize) -> ImageFrame {
    let v = scene.view_window(s, out);
    let k = v.scale(out);
    let (fw, fh) = out.center();
    let x0 = v.center.0 - fw * k;
    let y0 = v.center.1 - fh * k;
    let mut img = ImageFrame::new(out.width, out.height, scene.raster.format.clone())
        .expect("output size validated by FrameSize");
    let w = out.width as usize;
    img.samples_mut()
        .par_chunks_mut(w * 3)
        .enumerate()
        .for_each(|(j, row)| {
            let wy = y0 + j as f64 * k;
            for i in 0..w {
                let px = bilinear_at(&scene.raster, x0 + i as f64 * k, wy);
                row[i * 3..i * 3 + 3].copy_from_slice(&px.map(to_sample));
            }
        });
    img
}

/// Analytic frame position of target `id`, or `None` if its center falls
/// outside the frame.
pub fn target_frame_position(
    scene: &WorldScene,
    s: &CameraState,
    id: u32,
    out: FrameSize,
) -> Result<Option<(f64, f64)>, SceneError> {
    let t = scene.target(id)?;
    let (x, y) = scene.project(t.center, s, out);
    let inside = x >= -0.5 && y >= -0.5 && x < f64::from(out.width) - 0.5 && y < f64::from(out.height) - 0.5;
    Ok(inside.then_some((x, y)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::{detect_blobs, DetectorConfig};

    fn small() -> SceneConfig {
        SceneConfig {
            world_size: 512,
            base_fov_fraction: 0.5,
            radius_range: (8.0, 12.0),
        }
    }

    fn state(pan: f64, tilt: f64, zoom: f64) -> CameraState {
        CameraState::with_pose(pan, tilt, zoom).unwrap()
    }

    const OUT: FrameSize = FrameSize {
        width: 160,
        height: 90,
    };

    #[test]
    fn seeded_scenes_are_identical() {
        let a = make_scene_with(small(), 42, 3).unwrap();
        let b = make_scene_with(small(), 42, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, make_scene_with(small(), 43, 3).unwrap());
    }

    #[test]
    fn zero_targets_is_background_only() {
        let s = make_scene_with(small(), 1, 0).unwrap();
        assert!(s.targets.is_empty());
        assert!(s.raster().samples().iter().all(|v| (90..=170).contains(v)));
    }

    #[test]
    fn too_many_targets() {
        assert!(matches!(make_scene_with(small(), 1, 9), Err(SceneError::TooManyTargets(9, 8))));
    }

    #[test]
    fn targets_never_overlap() {
        for seed in 0..20 {
            let s = make_scene_with(small(), seed, 8).unwrap();
            for (i, a) in s.targets.iter().enumerate() {
                for b in &s.targets[i + 1..] {
                    let d = ((a.center.0 - b.center.0).powi(2) + (a.center.1 - b.center.1).powi(2)).sqrt();
                    assert!(d > a.radius + b.radius, "seed {seed}");
                }
            }
        }
    }

    #[test]
    fn midpoint_pose_centers_on_world() {
        let s = make_scene_with(small(), 1, 0).unwrap();
        let v = s.view_window(&state(0.0, 30.0, 1.0), OUT);
        assert_eq!(v.center, (256.0, 256.0));
        let v2 = s.view_window(&state(0.0, 30.0, 2.0), OUT);
        assert_eq!(v2.width * 2.0, v.width);
        assert_eq!(v2.height * 2.0, v.height);
    }

    #[test]
    fn extreme_poses_stay_inside_raster() {
        let s = make_scene_with(small(), 1, 0).unwrap();
        for (pan, tilt) in [(-90.0, 0.0), (90.0, 60.0), (-90.0, 60.0), (90.0, 0.0)] {
            let v = s.view_window(&state(pan, tilt, 1.0), OUT);
            assert!(v.center.0 - v.width / 2.0 >= -1e-9);
            assert!(v.center.0 + v.width / 2.0 <= 512.0 + 1e-9);
            assert!(v.center.1 - v.height / 2.0 >= -1e-9);
            assert!(v.center.1 + v.height / 2.0 <= 512.0 + 1e-9);
        }
    }

    #[test]
    fn aimed_target_is_detected_at_center() {
        let scene = make_scene_with(small(), 7, 3).unwrap();
        let t = &scene.targets[1];
        let (pan, tilt) = scene.aim_at(t.center, OUT);
        let st = state(pan, tilt, 1.0);
        let analytic = target_frame_position(&scene, &st, t.id, OUT).unwrap().unwrap();
        let frame = render_frame(&scene, &st, OUT);
        let dets = detect_blobs(&frame, &DetectorConfig::default()).unwrap();
        let d = dets.iter().find(|d| d.label == t.label).unwrap();
        let (cx, cy) = d.bbox.center();
        // aim may be clamped near the world border
        if (pan.abs() < 90.0) && (0.0..60.0).contains(&tilt) && tilt > 0.0 {
            assert!((cx - 80.0).abs() <= 2.0 && (cy - 45.0).abs() <= 2.0, "{cx},{cy}");
        }
        assert!((cx - analytic.0).abs() <= 1.5 && (cy - analytic.1).abs() <= 1.5);
    }

    #[test]
    fn unknown_and_offscreen_targets() {
        let scene = make_scene_with(small(), 3, 2).unwrap();
        assert!(matches!(
            target_frame_position(&scene, &state(0.0, 30.0, 1.0), 99, OUT),
            Err(SceneError::UnknownTarget(99))
        ));
        let t = &scene.targets[0];
        let (pan, tilt) = scene.aim_at(t.center, OUT);
        let st = state(pan, tilt, 7.0);
        let far = scene.unproject((-50.0, -50.0), &st, OUT);
        let mut moved = scene.clone();
        moved.targets[0].center = far;
        assert!(target_frame_position(&moved, &st, 0, OUT).unwrap().is_none());
    }

    #[test]
    fn zoom_magnifies_target() {
        let scene = make_scene_with(small(), 5, 1).unwrap();
        let t = &scene.targets[0];
        let (pan, tilt) = scene.aim_at(t.center, OUT);
        let mut last = 0.0;
        for z in [1.0, 1.5, 2.0, 3.0] {
            let st = state(pan, tilt, z);
            let k = scene.view_window(&st, OUT).scale(OUT);
            let r_frame = t.radius / k;
            assert!(r_frame > last);
            last = r_frame;
        }
    }

    #[test]
    fn render_is_pure_and_save_load_round_trips() {
        let scene = make_scene_with(small(), 9, 2).unwrap();
        let st = state(10.0, 20.0, 1.3);
        assert_eq!(render_frame(&scene, &st, OUT), render_frame(&scene, &st, OUT));
        let dir = tempfile::tempdir().unwrap();
        scene.save(dir.path()).unwrap();
        assert_eq!(WorldScene::load(dir.path()).unwrap(), scene);
    }
}
