//! Synthetic episodes: a seeded scene filmed by the virtual camera along a
//! scripted trajectory that keeps the first target in view while it drifts
//! around the frame and the zoom steps up and down.

use std::f64::consts::TAU;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{CameraView, DatasetError, EpisodeManifest, EpisodeMeta, EpisodeRecord, EpisodeWriter};
use crate::geometry::FrameSize;
use crate::gimbal::{clamp_quantize, focal_from_zoom, zoom_grid_value, CameraState};
use crate::image::FormatSpec;
use crate::virtual_camera::{make_scene, render_frame, SceneError, WorldScene, DEFAULT_OUT_SIZE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub frames: usize,
    pub targets: usize,
    pub out_size: FrameSize,
    pub frame_rate_hz: f64,
    /// Every n-th frame is shot with no target in view.
    #[serde(default)]
    pub blank_every: Option<usize>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            frames: 20,
            targets: 1,
            out_size: DEFAULT_OUT_SIZE,
            frame_rate_hz: 60.0,
            blank_every: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Camera state for frame `i`: the tracked target sits at a slowly moving
/// offset from the frame center and zoom cycles over [1, 1.5] on the 0.05
/// grid.
pub fn trajectory_state(scene: &WorldScene, cfg: &SynthConfig, i: usize) -> CameraState {
    let steps = (5.0 * (1.0 - (TAU * i as f64 / 150.0).cos()) / 2.0).round();
    let zoom = zoom_grid_value(steps as i64);
    let out = cfg.out_size;
    let Some(t) = scene.targets.first() else {
        let (pan, tilt) = clamp_quantize(40.0 * (TAU * i as f64 / 200.0).sin(), 30.0);
        return state(pan, tilt, zoom);
    };
    let base = state(0.0, 30.0, zoom);
    let k = scene.view_window(&base, out).scale(out);
    let off = (
        0.25 * f64::from(out.width) * (TAU * i as f64 / 90.0).sin(),
        0.15 * f64::from(out.height) * (TAU * i as f64 / 70.0 + 1.0).sin(),
    );
    let view_center = (t.center.0 - off.0 * k, t.center.1 - off.1 * k);
    let (pan, tilt) = scene.aim_at(view_center, out);
    let (pan, tilt) = clamp_quantize(pan, tilt);
    state(pan, tilt, zoom)
}

fn state(pan: f64, tilt: f64, zoom: f64) -> CameraState {
    CameraState::with_pose(pan, tilt, zoom).expect("trajectory stays in range")
}

/// Renders and writes a synthetic top-view episode into `dir`.
pub fn synth_episode(cfg: &SynthConfig, dir: impl AsRef<Path>) -> Result<EpisodeManifest, SynthError> {
    let scene = make_scene(cfg.seed, cfg.targets)?;
    let meta = EpisodeMeta {
        name: format!("synth-{}", cfg.seed),
        frame_rate_hz: cfg.frame_rate_hz,
        frame_size: cfg.out_size,
        layout: vec![CameraView::Top],
        arms_present: false,
        frame_format: FormatSpec::srgb8(),
    };
    let mut w = EpisodeWriter::create(dir, meta)?;
    for i in 0..cfg.frames {
        let mut st = trajectory_state(&scene, cfg, i);
        if cfg.blank_every.is_some_and(|n| n > 0 && i % n == n - 1) {
            // swing away so no target is in view
            st = blank_state(&scene, cfg.out_size, st);
        }
        let frame = render_frame(&scene, &st, cfg.out_size);
        let t_ms = (i as f64 * 1000.0 / cfg.frame_rate_hz).round() as u64;
        let record = EpisodeRecord::at(
            t_ms,
            st.tilt as f32,
            st.pan as f32,
            st.zoom as f32,
            focal_from_zoom(st.zoom).expect("zoom in range") as f32,
        );
        w.append(record, &[(CameraView::Top, &frame)])?;
    }
    Ok(w.finish()?)
}

/// A maximally zoomed view with no target inside it, searching the pose
/// grid; falls back to `fallback` if every pose shows a target.
fn blank_state(scene: &WorldScene, out: FrameSize, fallback: CameraState) -> CameraState {
    for pan in (-18..=18).map(|p| f64::from(p) * 5.0) {
        for tilt in (0..=12).map(|t| f64::from(t) * 5.0) {
            let st = state(pan, tilt, 7.0);
            let v = scene.view_window(&st, out);
            let clear = scene.targets.iter().all(|t| {
                let dx = (t.center.0 - v.center.0).abs() - v.width / 2.0;
                let dy = (t.center.1 - v.center.1).abs() - v.height / 2.0;
                dx > t.radius + 2.0 || dy > t.radius + 2.0
            });
            if clear {
                return st;
            }
        }
    }
    fallback
}
