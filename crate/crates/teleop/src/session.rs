//! Session state machine. Inputs are inbound messages and clock ticks, taken
//! strictly one at a time; outputs are outbound messages. No networking here.

use std::path::PathBuf;
use std::sync::Arc;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;

use avr_core::dataset::{CameraView, EpisodeManifest, EpisodeMeta, EpisodeRecord, EpisodeWriter};
use avr_core::geometry::Quaternion;
use avr_core::gimbal::{map_pose, zoom_rate, zoom_step, Admission, CameraState, RateGate, MAX_ZOOM_RATE};
use avr_core::image::FormatSpec;
use avr_core::virtual_camera::{make_scene, render_frame, SceneError, WorldScene, DEFAULT_OUT_SIZE};
use avr_core::FrameSize;

use crate::protocol::{
    codes, parse_inbound, Inbound, Outbound, RecordAction, RecordStatus, Role, ZoomCommand, PROTOCOL_VERSION,
};

pub const FRAME_RATE_HZ: f64 = 60.0;

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub out_size: FrameSize,
    pub seed: u64,
    pub targets: usize,
    /// Recordings go to `record_root/<name>`.
    pub record_root: PathBuf,
    pub frame_rate_hz: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            out_size: DEFAULT_OUT_SIZE,
            seed: 1,
            targets: 3,
            record_root: PathBuf::from("recordings"),
            frame_rate_hz: FRAME_RATE_HZ,
        }
    }
}

struct Recording {
    writer: EpisodeWriter,
    name: String,
    t0_ms: Option<f64>,
}

pub struct Session {
    cfg: SessionConfig,
    scene: Arc<WorldScene>,
    camera: CameraState,
    pose_gate: RateGate,
    frame_gate: RateGate,
    zoom_velocity: f64,
    last_tick_ms: Option<f64>,
    state_seq: u64,
    frame_seq: u64,
    recording: Option<Recording>,
    auto_names: usize,
}

impl Session {
    pub fn new(cfg: SessionConfig) -> Result<Self, SceneError> {
        let scene = Arc::new(make_scene(cfg.seed, cfg.targets)?);
        Ok(Self::with_scene(cfg, scene))
    }

    pub fn with_scene(cfg: SessionConfig, scene: Arc<WorldScene>) -> Self {
        let frame_gate = RateGate::new(cfg.frame_rate_hz);
        Self {
            cfg,
            scene,
            camera: CameraState::with_pose(0.0, 30.0, 1.0).expect("home pose is legal"),
            pose_gate: RateGate::pose_gate(),
            frame_gate,
            zoom_velocity: 0.0,
            last_tick_ms: None,
            state_seq: 0,
            frame_seq: 0,
            recording: None,
            auto_names: 0,
        }
    }

    pub fn camera(&self) -> &CameraState {
        &self.camera
    }

    pub fn scene(&self) -> &Arc<WorldScene> {
        &self.scene
    }

    pub fn is_recording(&self) -> bool {
        self.recording.is_some()
    }

    pub fn frames_emitted(&self) -> u64 {
        self.frame_seq
    }

    /// Current camera state as an outbound message (consumes a state seq).
    pub fn state_message(&mut self) -> Outbound {
        let c = self.camera;
        let msg = Outbound::State {
            pan: c.pan,
            tilt: c.tilt,
            zoom: c.zoom,
            focal_mm: c.focal_mm,
            seq: self.state_seq,
        };
        self.state_seq += 1;
        msg
    }

    pub fn handle_bytes(&mut self, role: Role, bytes: &[u8]) -> Vec<Outbound> {
        match std::str::from_utf8(bytes) {
            Ok(text) => self.handle_message(role, text),
            Err(e) => vec![Outbound::error(codes::BAD_MESSAGE, format!("not UTF-8: {e}"))],
        }
    }

    pub fn handle_message(&mut self, role: Role, text: &str) -> Vec<Outbound> {
        match parse_inbound(text) {
            Ok(msg) => self.apply(role, msg),
            Err(e) => vec![e.to_outbound()],
        }
    }

    pub fn apply(&mut self, role: Role, msg: Inbound) -> Vec<Outbound> {
        if role == Role::Viewer && msg.is_control() {
            return vec![Outbound::error(codes::FORBIDDEN, "viewers cannot send control messages")];
        }
        match msg {
            Inbound::Hello { proto, .. } => {
                if proto != PROTOCOL_VERSION {
                    return vec![Outbound::error(
                        codes::UNSUPPORTED,
                        format!("protocol version {proto}, server speaks {PROTOCOL_VERSION}"),
                    )];
                }
                vec![self.state_message()]
            }
            Inbound::Pose { q, t_ms } => self.pose(q, t_ms),
            Inbound::Zoom(ZoomCommand::Step { dir }) => match zoom_step(&self.camera, dir) {
                Ok(next) => {
                    self.camera = next;
                    self.zoom_velocity = 0.0;
                    vec![self.state_message()]
                }
                Err(e) => vec![Outbound::error(codes::INVALID, e.to_string())],
            },
            Inbound::Zoom(ZoomCommand::Rate { v }) => {
                if !v.is_finite() || v.abs() > MAX_ZOOM_RATE {
                    return vec![Outbound::error(codes::INVALID, format!("zoom rate {v} outside [-2, 2]"))];
                }
                self.zoom_velocity = v;
                vec![self.state_message()]
            }
            Inbound::Record { action: RecordAction::Start, name } => self.start_recording(name),
            Inbound::Record { action: RecordAction::Stop, .. } => match self.stop_recording() {
                Ok(Some((name, m))) => vec![Outbound::Record {
                    status: RecordStatus::Stopped,
                    name,
                    records: m.record_count,
                }],
                Ok(None) => vec![Outbound::error(codes::NOT_RECORDING, "no active recording")],
                Err(e) => vec![Outbound::error(codes::RECORD_FAILED, e)],
            },
        }
    }

    fn pose(&mut self, q: [f64; 4], t_ms: f64) -> Vec<Outbound> {
        if !t_ms.is_finite() || t_ms < 0.0 || q.iter().any(|v| !v.is_finite()) {
            return vec![Outbound::error(codes::INVALID, "pose values must be finite, t_ms >= 0")];
        }
        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        if quat.normalized().is_err() {
            return vec![Outbound::error(codes::INVALID, "degenerate quaternion")];
        }
        match self.pose_gate.admit(t_ms) {
            Admission::Rejected => Vec::new(),
            Admission::TimeRegression => vec![Outbound::error(
                codes::TIME_REGRESSION,
                format!("pose t_ms {t_ms} earlier than a previous pose"),
            )],
            Admission::Accepted => match map_pose(&quat, &self.camera) {
                Ok((next, _)) => {
                    self.camera = next;
                    vec![self.state_message()]
                }
                Err(e) => vec![Outbound::error(codes::INVALID, e.to_string())],
            },
        }
    }

    fn start_recording(&mut self, name: Option<String>) -> Vec<Outbound> {
        if self.recording.is_some() {
            return vec![Outbound::error(codes::ALREADY_RECORDING, "a recording is already active")];
        }
        let name = match name {
            Some(n) => n,
            None => loop {
                self.auto_names += 1;
                let n = format!("episode_{:03}", self.auto_names);
                if !self.cfg.record_root.join(&n).exists() {
                    break n;
                }
            },
        };
        let dir = self.cfg.record_root.join(&name);
        if dir.exists() {
            return vec![Outbound::error(codes::RECORD_FAILED, format!("{} already exists", dir.display()))];
        }
        let meta = EpisodeMeta {
            name: name.clone(),
            frame_rate_hz: self.cfg.frame_rate_hz,
            frame_size: self.cfg.out_size,
            layout: vec![CameraView::Top],
            arms_present: false,
            frame_format: FormatSpec::srgb8(),
        };
        match EpisodeWriter::create(&dir, meta) {
            Ok(writer) => {
                self.recording = Some(Recording {
                    writer,
                    name: name.clone(),
                    t0_ms: None,
                });
                vec![Outbound::Record {
                    status: RecordStatus::Started,
                    name,
                    records: 0,
                }]
            }
            Err(e) => vec![Outbound::error(codes::RECORD_FAILED, e.to_string())],
        }
    }

    /// Closes the active recording, if any, writing its manifest.
    pub fn stop_recording(&mut self) -> Result<Option<(String, EpisodeManifest)>, String> {
        let Some(rec) = self.recording.take() else {
            return Ok(None);
        };
        rec.writer
            .finish()
            .map(|m| Some((rec.name, m)))
            .map_err(|e| e.to_string())
    }

    /// Advances the session clock. Integrates rate zoom, and emits a frame
    /// when the 60 Hz cadence allows. Non-monotone ticks are ignored.
    pub fn tick(&mut self, t_ms: f64) -> Vec<Outbound> {
        if !t_ms.is_finite() || self.last_tick_ms.is_some_and(|last| t_ms < last) {
            return Vec::new();
        }
        let mut out = Vec::new();
        if let Some(last) = self.last_tick_ms {
            if self.zoom_velocity != 0.0 {
                if let Ok(next) = zoom_rate(&self.camera, self.zoom_velocity, t_ms - last) {
                    if next.zoom != self.camera.zoom {
                        self.camera = next;
                        out.push(self.state_message());
                    }
                }
            }
        }
        self.last_tick_ms = Some(t_ms);
        if self.frame_gate.admit(t_ms) != Admission::Accepted {
            return out;
        }
        let frame = render_frame(&self.scene, &self.camera, self.cfg.out_size);
        let png = match frame.encode_png() {
            Ok(p) => p,
            Err(e) => {
                out.push(Outbound::error(codes::RECORD_FAILED, format!("frame encode: {e}")));
                return out;
            }
        };
        if let Some(err) = self.record_frame(t_ms, &png) {
            out.push(err);
        }
        out.push(Outbound::Frame {
            seq: self.frame_seq,
            encoding: "png_b64".into(),
            data: B64.encode(&png),
        });
        self.frame_seq += 1;
        out
    }

    fn record_frame(&mut self, t_ms: f64, png: &[u8]) -> Option<Outbound> {
        let rec = self.recording.as_mut()?;
        let t0 = *rec.t0_ms.get_or_insert(t_ms);
        let c = self.camera;
        let record = EpisodeRecord::at(
            (t_ms - t0).round() as u64,
            c.tilt as f32,
            c.pan as f32,
            c.zoom as f32,
            c.focal_mm as f32,
        );
        match rec.writer.append_png(record, CameraView::Top, png) {
            Ok(_) => None,
            Err(e) => {
                // a failed append leaves the episode unusable; close what we have
                let name = rec.name.clone();
                let _ = self.stop_recording();
                Some(Outbound::error(codes::RECORD_FAILED, format!("recording {name} stopped: {e}")))
            }
        }
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        let _ = self.stop_recording();
    }
}
