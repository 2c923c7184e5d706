//! Per-frame active-vision processing and whole-episode batch runs.
//!
//! For each top-view frame: detect on the raw frame, pick the task target,
//! choose a zoom factor, warp so the target lands at the frame center,
//! super-resolve the region of interest, then run the format guard with the
//! plain warp as the fallback reference.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{self, CameraView, DatasetError, EpisodeWriter, Processing};
use crate::detection::{select_target, DetectError, Detection, DetectorConfig};
use crate::format_guard::{enforce, GuardReport};
use crate::geometry::{compose, recenter_transform, zoom_transform, Affine2D, BoundingBox, FrameSize};
use crate::image::ImageFrame;
use crate::sr::{sr_forward, SrConfig, SrError, SrNetwork};
use crate::zoom::{bicubic_upscale, bilinear_at, compute_scale_factor, crop_and_fill, to_sample, ZoomError, ZoomParams};

pub const SUMMARY_FILE: &str = "summary.json";
pub const FRAME_REPORTS_FILE: &str = "frame_reports.jsonl";
/// Extra source pixels around the ROI so upscaler taps see real context.
const ROI_MARGIN: f64 = 2.0;
const BATCH: usize = 32;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Zoom(#[from] ZoomError),
    #[error(transparent)]
    Sr(#[from] SrError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SrMode {
    Network,
    #[default]
    Bicubic,
    None,
}

impl SrMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "network" => Some(Self::Network),
            "bicubic" => Some(Self::Bicubic),
            "none" => Some(Self::None),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MissPolicy {
    #[default]
    HoldLast,
    Passthrough,
}

impl MissPolicy {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "hold_last" => Some(Self::HoldLast),
            "passthrough" => Some(Self::Passthrough),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub zoom: ZoomParams,
    pub detector: DetectorConfig,
    pub sr: SrMode,
    /// Network shape and the cap `r` on the SR factor (bicubic included).
    pub sr_config: SrConfig,
    /// Weights for `sr = network`; seeded weights are used when absent.
    pub sr_weights: Option<PathBuf>,
    pub sr_seed: u64,
    pub miss_policy: MissPolicy,
    /// Empty matches any label.
    pub task_label: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            zoom: ZoomParams::default(),
            detector: DetectorConfig::default(),
            sr: SrMode::default(),
            sr_config: SrConfig::default(),
            sr_weights: None,
            sr_seed: 0,
            miss_policy: MissPolicy::default(),
            task_label: String::new(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.zoom.validate()?;
        self.detector.validate()?;
        self.sr_config.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult {
    pub frame: ImageFrame,
    pub affine: Affine2D,
    pub scale: f64,
    pub detection: Option<Detection>,
    pub guard: GuardReport,
    pub miss: bool,
    /// Integer SR factor applied to the ROI (1 = none).
    pub sr_factor: u32,
    pub error: Option<String>,
}

/// Carried across frames for `hold_last`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FrameState {
    pub last: Option<(Affine2D, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub frames: usize,
    pub hits: usize,
    pub misses: usize,
    pub mean_s: Option<f64>,
    pub runtime_ms: f64,
}

#[derive(Debug, Serialize)]
struct FrameReport<'a> {
    index: usize,
    miss: bool,
    scale: f64,
    sr_factor: u32,
    detection: Option<&'a Detection>,
    guard: &'a GuardReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
}

pub struct Pipeline {
    cfg: PipelineConfig,
    net: Option<SrNetwork>,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let net = match (cfg.sr, &cfg.sr_weights) {
            (SrMode::Network, Some(path)) => Some(SrNetwork::load(path)?),
            (SrMode::Network, None) => Some(SrNetwork::seeded(cfg.sr_config, cfg.sr_seed)?),
            _ => None,
        };
        Ok(Self { cfg, net })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    fn sr_cap(&self) -> u32 {
        match &self.net {
            Some(n) => n.upscale(),
            None => self.cfg.sr_config.upscale as u32,
        }
    }

    pub fn process_frame(&self, frame: &ImageFrame, state: &mut FrameState) -> FrameResult {
        let detection = self
            .cfg
            .detector
            .detect(frame, &self.cfg.task_label)
            .map(|dets| select_target(&dets, &self.cfg.task_label).cloned());
        let (detection, error) = match detection {
            Ok(d) => (d, None),
            Err(e) => (None, Some(e.to_string())),
        };
        match detection {
            Some(det) => match self.hit(frame, &det) {
                Ok(r) => {
                    state.last = Some((r.affine, r.scale));
                    r
                }
                Err(e) => self.miss(frame, state, Some(det), Some(e.to_string())),
            },
            None => self.miss(frame, state, None, error),
        }
    }

    fn hit(&self, frame: &ImageFrame, det: &Detection) -> Result<FrameResult, PipelineError> {
        let f = frame_size(frame)?;
        let decision = compute_scale_factor(&det.bbox, f, &self.cfg.zoom);
        let s = decision.s;
        let affine = compose(&zoom_transform(s, f).map_err(ZoomError::from)?, &recenter_transform(&det.bbox, f));
        let base = crop_and_fill(frame, &affine, f)?;
        let u = (s.ceil() as u32).min(self.sr_cap());
        let (candidate, sr_factor) = match self.cfg.sr {
            SrMode::None => (base.clone(), 1),
            _ if u <= 1 => (base.clone(), 1),
            _ => (self.super_resolve_roi(frame, &base, &affine, &det.bbox, u)?, u),
        };
        let (out, guard) = enforce(&candidate, &base).expect("same dimensions");
        Ok(FrameResult {
            frame: out,
            affine,
            scale: s,
            detection: Some(det.clone()),
            guard,
            miss: false,
            sr_factor,
            error: None,
        })
    }

    /// Replaces warped pixels whose source lies inside the alpha-expanded ROI
    /// with samples from a `u`-times upscaled copy of that region.
    fn super_resolve_roi(
        &self,
        frame: &ImageFrame,
        base: &ImageFrame,
        affine: &Affine2D,
        bbox: &BoundingBox,
        u: u32,
    ) -> Result<ImageFrame, PipelineError> {
        let f = frame_size(frame)?;
        let roi = bbox.expanded(self.cfg.zoom.alpha).clamped_to(f);
        let (w, h) = (frame.width(), frame.height());
        let mut x0 = (roi.x_min - ROI_MARGIN).floor().max(0.0) as u32;
        let mut y0 = (roi.y_min - ROI_MARGIN).floor().max(0.0) as u32;
        let mut x1 = ((roi.x_max + ROI_MARGIN).ceil() as u32).min(w - 1);
        let mut y1 = ((roi.y_max + ROI_MARGIN).ceil() as u32).min(h - 1);

        let use_net = self.net.as_ref().filter(|n| n.upscale() == u);
        if let Some(net) = use_net {
            let win = net.config.window as u32;
            grow_to(&mut x0, &mut x1, win, w);
            grow_to(&mut y0, &mut y1, win, h);
        }
        let patch = frame.crop(x0, y0, x1 - x0 + 1, y1 - y0 + 1).map_err(ZoomError::from)?;
        let up = match use_net {
            Some(net) if patch.width() >= net.config.window as u32 && patch.height() >= net.config.window as u32 => {
                sr_forward(&patch, net)?
            }
            _ => bicubic_upscale(&patch, u)?,
        };

        let inv = affine.inverse().map_err(ZoomError::from)?;
        let uf = f64::from(u);
        let (ox, oy) = (f64::from(x0), f64::from(y0));
        let mut out = base.clone();
        let row_len = w as usize * 3;
        out.samples_mut()
            .par_chunks_mut(row_len)
            .enumerate()
            .for_each(|(y, row)| {
                for x in 0..w as usize {
                    let (sx, sy) = inv.apply((x as f64, y as f64));
                    if sx < roi.x_min || sx > roi.x_max || sy < roi.y_min || sy > roi.y_max {
                        continue;
                    }
                    let px = (sx - ox + 0.5) * uf - 0.5;
                    let py = (sy - oy + 0.5) * uf - 0.5;
                    let v = bilinear_at(&up, px, py);
                    row[x * 3..x * 3 + 3].copy_from_slice(&v.map(to_sample));
                }
            });
        Ok(out)
    }

    fn miss(
        &self,
        frame: &ImageFrame,
        state: &FrameState,
        detection: Option<Detection>,
        error: Option<String>,
    ) -> FrameResult {
        let (frame_out, affine, scale) = match (self.cfg.miss_policy, state.last) {
            (MissPolicy::HoldLast, Some((a, s))) => {
                let warped = frame_size(frame)
                    .ok()
                    .and_then(|f| crop_and_fill(frame, &a, f).ok())
                    .unwrap_or_else(|| frame.clone());
                (warped, a, s)
            }
            _ => (frame.clone(), Affine2D::IDENTITY, 1.0),
        };
        let (frame_out, guard) = enforce(&frame_out, &frame_out.clone()).expect("same dimensions");
        FrameResult {
            frame: frame_out,
            affine,
            scale,
            detection,
            guard,
            miss: true,
            sr_factor: 1,
            error,
        }
    }
}

fn frame_size(frame: &ImageFrame) -> Result<FrameSize, ZoomError> {
    Ok(FrameSize::new(frame.width(), frame.height()).map_err(ZoomError::from)?)
}

/// Widens `[lo, hi]` to at least `min_len` samples inside `[0, limit)`.
fn grow_to(lo: &mut u32, hi: &mut u32, min_len: u32, limit: u32) {
    while *hi - *lo + 1 < min_len.min(limit) {
        if *hi + 1 < limit {
            *hi += 1;
        }
        if *hi - *lo + 1 < min_len && *lo > 0 {
            *lo -= 1;
        }
    }
}

/// Functional form of [`Pipeline::process_frame`].
pub fn process_frame(frame: &ImageFrame, state: &mut FrameState, cfg: &PipelineConfig) -> Result<FrameResult, PipelineError> {
    Ok(Pipeline::new(cfg.clone())?.process_frame(frame, state))
}

/// Processes every top-view frame of the episode at `input` into `output`.
/// Records, other views and depth files are carried over unchanged; each
/// record gains the applied scale and affine.
pub fn process_episode(
    input: impl AsRef<Path>,
    output: impl AsRef<Path>,
    cfg: &PipelineConfig,
) -> Result<Summary, PipelineError> {
    let started = Instant::now();
    let (input, output) = (input.as_ref(), output.as_ref());
    let pipeline = Pipeline::new(cfg.clone())?;
    let episode = dataset::read_episode(input)?;
    let mut writer = EpisodeWriter::create(output, episode.manifest.meta())?;
    let expected = episode.manifest.frame_size;

    let mut state = FrameState::default();
    let mut reports = String::new();
    let (mut frames, mut hits, mut s_sum) = (0usize, 0usize, 0.0f64);
    let sequential = cfg.miss_policy == MissPolicy::HoldLast;

    for chunk in episode.records.chunks(BATCH) {
        let loaded: Vec<Option<ImageFrame>> = chunk
            .par_iter()
            .map(|r| episode.frames.load(r, CameraView::Top))
            .collect::<Result<_, _>>()?;
        let run = |img: &ImageFrame, st: &mut FrameState| {
            if img.width() != expected.width || img.height() != expected.height {
                let mut r = pipeline.miss(img, &FrameState::default(), None, None);
                r.error = Some(format!(
                    "frame is {}x{}, episode is {}x{}",
                    img.width(),
                    img.height(),
                    expected.width,
                    expected.height
                ));
                return r;
            }
            pipeline.process_frame(img, st)
        };
        let results: Vec<Option<FrameResult>> = if sequential {
            loaded
                .iter()
                .map(|img| img.as_ref().map(|img| run(img, &mut state)))
                .collect()
        } else {
            loaded
                .par_iter()
                .map(|img| img.as_ref().map(|img| run(img, &mut FrameState::default())))
                .collect()
        };
        for (record, result) in chunk.iter().zip(results) {
            let mut record = record.clone();
            let Some(res) = result else {
                writer.append_copying(record, input, &[])?;
                continue;
            };
            let index = writer.len();
            record.processing = Some(Processing {
                scale: res.scale,
                affine: res.affine,
                hit: !res.miss,
            });
            writer.append_copying(record, input, &[(CameraView::Top, &res.frame)])?;
            frames += 1;
            hits += usize::from(!res.miss);
            s_sum += res.scale;
            let rep = FrameReport {
                index,
                miss: res.miss,
                scale: res.scale,
                sr_factor: res.sr_factor,
                detection: res.detection.as_ref(),
                guard: &res.guard,
                error: res.error.as_deref(),
            };
            reports.push_str(&serde_json::to_string(&rep).expect("report serializes"));
            reports.push('\n');
        }
    }
    writer.finish()?;

    let summary = Summary {
        frames,
        hits,
        misses: frames - hits,
        mean_s: (frames > 0).then(|| s_sum / frames as f64),
        runtime_ms: started.elapsed().as_secs_f64() * 1000.0,
    };
    let write = |name: &str, text: String| {
        let path = output.join(name);
        fs::write(&path, text).map_err(|source| PipelineError::Io { path, source })
    };
    write(FRAME_REPORTS_FILE, reports)?;
    write(SUMMARY_FILE, serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n")?;
    Ok(summary)
}
