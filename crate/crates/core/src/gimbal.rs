//! Pan-tilt-zoom control law.
//!
//! Head pose quaternions become clamped pan/tilt commands on a 0.5 degree
//! grid, pose updates are admitted at no more than 120 Hz, and zoom is driven
//! either in 0.05 steps (keyboard) or at a continuous rate (controller
//! buttons). Focal length follows zoom linearly over 4.8-48.2 mm.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{quaternion_to_yaw_pitch, GeometryError, Quaternion};

pub const PAN_RANGE: (f64, f64) = (-90.0, 90.0);
pub const TILT_RANGE: (f64, f64) = (0.0, 60.0);
pub const ZOOM_RANGE: (f64, f64) = (1.0, 7.0);
pub const FOCAL_RANGE_MM: (f64, f64) = (4.8, 48.2);
pub const ANGLE_QUANTUM_DEG: f64 = 0.5;
pub const ZOOM_STEPS_PER_UNIT: i64 = 20;
pub const ZOOM_STEP: f64 = 0.05;
pub const MAX_ZOOM_RATE: f64 = 2.0;
pub const POSE_RATE_HZ: f64 = 120.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GimbalError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("zoom {0} outside [1, 7]")]
    ZoomOutOfRange(f64),
    #[error("zoom rate {0}/s exceeds 2/s")]
    RateTooHigh(f64),
    #[error("negative time step {0} ms")]
    NegativeDt(f64),
    #[error("non-finite input")]
    NonFinite,
    #[error("camera state invariant violated: {0}")]
    Invariant(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ZoomMode {
    #[default]
    Step,
    Rate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraState {
    pub pan: f64,
    pub tilt: f64,
    pub zoom: f64,
    pub focal_mm: f64,
    pub zoom_mode: ZoomMode,
    pub last_update_ms: f64,
}

impl Default for CameraState {
    fn default() -> Self {
        Self {
            pan: 0.0,
            tilt: 0.0,
            zoom: 1.0,
            focal_mm: FOCAL_RANGE_MM.0,
            zoom_mode: ZoomMode::Step,
            last_update_ms: 0.0,
        }
    }
}

/// Zoom after `n` steps up from 1. A single division of exact integers, so
/// the result is the double nearest the decimal value (20 steps -> 2.0,
/// 1 step -> 1.05 exactly as written).
pub fn zoom_grid_value(n: i64) -> f64 {
    (ZOOM_STEPS_PER_UNIT + n) as f64 / ZOOM_STEPS_PER_UNIT as f64
}

fn on_zoom_grid(z: f64) -> bool {
    let steps = (z - 1.0) * ZOOM_STEPS_PER_UNIT as f64;
    (steps - steps.round()).abs() * ZOOM_STEP <= 1e-9
}

impl CameraState {
    pub fn with_pose(pan: f64, tilt: f64, zoom: f64) -> Result<Self, GimbalError> {
        let s = Self {
            pan,
            tilt,
            zoom,
            focal_mm: focal_from_zoom(zoom)?,
            zoom_mode: if on_zoom_grid(zoom) { ZoomMode::Step } else { ZoomMode::Rate },
            last_update_ms: 0.0,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), GimbalError> {
        let bad = |m: String| Err(GimbalError::Invariant(m));
        if !(TILT_RANGE.0..=TILT_RANGE.1).contains(&self.tilt) {
            return bad(format!("tilt {}", self.tilt));
        }
        if !(PAN_RANGE.0..=PAN_RANGE.1).contains(&self.pan) {
            return bad(format!("pan {}", self.pan));
        }
        if !(ZOOM_RANGE.0..=ZOOM_RANGE.1).contains(&self.zoom) {
            return bad(format!("zoom {}", self.zoom));
        }
        if self.zoom_mode == ZoomMode::Step && !on_zoom_grid(self.zoom) {
            return bad(format!("zoom {} off the 0.05 grid in step mode", self.zoom));
        }
        if self.focal_mm != focal_from_zoom(self.zoom)? {
            return bad(format!("focal {} does not match zoom {}", self.focal_mm, self.zoom));
        }
        Ok(())
    }
}

/// Clamp into the mechanical range, then round to the nearest 0.5 degree
/// (ties away from zero).
pub fn clamp_quantize(yaw_deg: f64, pitch_deg: f64) -> (f64, f64) {
    let q = |v: f64, (lo, hi): (f64, f64)| {
        let c = v.clamp(lo, hi);
        (c / ANGLE_QUANTUM_DEG).round() * ANGLE_QUANTUM_DEG
    };
    (q(yaw_deg, PAN_RANGE), q(pitch_deg, TILT_RANGE))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoseOutcome {
    Applied,
    /// Pitch hit the gimbal-lock band; pan was held.
    PanHeld,
}

/// New pan/tilt from a head pose. Zoom is untouched.
pub fn map_pose(q: &Quaternion, s: &CameraState) -> Result<(CameraState, PoseOutcome), GimbalError> {
    let q = q.normalized()?;
    let yp = quaternion_to_yaw_pitch(&q);
    let (pan, tilt) = clamp_quantize(yp.yaw_deg, yp.pitch_deg);
    let mut next = *s;
    next.tilt = tilt;
    if yp.gimbal_lock {
        return Ok((next, PoseOutcome::PanHeld));
    }
    next.pan = pan;
    Ok((next, PoseOutcome::Applied))
}

/// Linear zoom-to-focal map; exact at both ends.
pub fn focal_from_zoom(z: f64) -> Result<f64, GimbalError> {
    if !z.is_finite() || !(ZOOM_RANGE.0..=ZOOM_RANGE.1).contains(&z) {
        return Err(GimbalError::ZoomOutOfRange(z));
    }
    let t = (z - ZOOM_RANGE.0) / (ZOOM_RANGE.1 - ZOOM_RANGE.0);
    Ok((1.0 - t) * FOCAL_RANGE_MM.0 + t * FOCAL_RANGE_MM.1)
}

/// One keyboard step of +-0.05, clamped to [1, 7]. An off-grid zoom (after
/// rate control) is snapped to the nearest grid point first.
pub fn zoom_step(s: &CameraState, dir: i8) -> Result<CameraState, GimbalError> {
    let steps = ((s.zoom - 1.0) * ZOOM_STEPS_PER_UNIT as f64).round() as i64;
    let max_steps = (ZOOM_RANGE.1 as i64 - 1) * ZOOM_STEPS_PER_UNIT;
    let next_steps = (steps + i64::from(dir.signum())).clamp(0, max_steps);
    let zoom = zoom_grid_value(next_steps);
    Ok(CameraState {
        zoom,
        focal_mm: focal_from_zoom(zoom)?,
        zoom_mode: ZoomMode::Step,
        ..*s
    })
}

/// Continuous zoom at `v` units/second for `dt_ms`.
pub fn zoom_rate(s: &CameraState, v: f64, dt_ms: f64) -> Result<CameraState, GimbalError> {
    if !v.is_finite() || !dt_ms.is_finite() {
        return Err(GimbalError::NonFinite);
    }
    if v.abs() > MAX_ZOOM_RATE {
        return Err(GimbalError::RateTooHigh(v));
    }
    if dt_ms < 0.0 {
        return Err(GimbalError::NegativeDt(dt_ms));
    }
    let zoom = (s.zoom + v * dt_ms / 1000.0).clamp(ZOOM_RANGE.0, ZOOM_RANGE.1);
    Ok(CameraState {
        zoom,
        focal_mm: focal_from_zoom(zoom)?,
        zoom_mode: ZoomMode::Rate,
        ..*s
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    Accepted,
    Rejected,
    /// Timestamp went backwards; rejected.
    TimeRegression,
}

/// Fixed-frequency admission gate.
///
/// Accepted updates are assigned slots on a grid of `min_interval_ms`; an
/// update is accepted once the next slot is due. The slot trails the accept
/// time by at most half an interval, so the long-run rate equals the grid
/// rate even when inputs arrive on a coarser clock (e.g. integer ms).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateGate {
    pub min_interval_ms: f64,
    anchor_ms: f64,
    slots: u64,
    started: bool,
    last_seen_ms: f64,
}

impl RateGate {
    pub fn new(rate_hz: f64) -> Self {
        assert!(rate_hz > 0.0 && rate_hz.is_finite(), "rate must be positive");
        Self {
            min_interval_ms: 1000.0 / rate_hz,
            anchor_ms: 0.0,
            slots: 0,
            started: false,
            last_seen_ms: f64::NEG_INFINITY,
        }
    }

    pub fn pose_gate() -> Self {
        Self::new(POSE_RATE_HZ)
    }

    /// Slot time of the most recent accept.
    pub fn last_accept_slot(&self) -> Option<f64> {
        self.started
            .then(|| self.anchor_ms + self.slots as f64 * self.min_interval_ms)
    }

    pub fn admit(&mut self, t_ms: f64) -> Admission {
        if !t_ms.is_finite() || t_ms < self.last_seen_ms {
            return Admission::TimeRegression;
        }
        self.last_seen_ms = t_ms;
        let Some(slot) = self.last_accept_slot() else {
            self.started = true;
            self.anchor_ms = t_ms;
            self.slots = 0;
            return Admission::Accepted;
        };
        let next = slot + self.min_interval_ms;
        if t_ms + 1e-9 < next {
            return Admission::Rejected;
        }
        let floor = t_ms - self.min_interval_ms / 2.0;
        if next >= floor {
            self.slots += 1;
        } else {
            self.anchor_ms = floor;
            self.slots = 0;
        }
        Admission::Accepted
    }
}

impl Default for RateGate {
    fn default() -> Self {
        Self::pose_gate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamp_quantize_examples() {
        assert_eq!(clamp_quantize(33.7, 10.0), (33.5, 10.0));
        assert_eq!(clamp_quantize(33.75, 0.0), (34.0, 0.0));
        assert_eq!(clamp_quantize(95.0, -5.0), (90.0, 0.0));
        assert_eq!(clamp_quantize(-33.75, 59.9), (-34.0, 60.0));
    }

    #[test]
    fn map_pose_examples() {
        let s = CameraState::default();
        let (n, _) = map_pose(&Quaternion::IDENTITY, &s).unwrap();
        assert_eq!((n.pan, n.tilt), (0.0, 0.0));
        let q = Quaternion::from_yaw_pitch_roll(0.0, 75.0, 0.0);
        assert_eq!(map_pose(&q, &s).unwrap().0.tilt, 60.0);
        let q = Quaternion::from_yaw_pitch_roll(-123.0, 20.0, 0.0);
        let (n, _) = map_pose(&q, &s).unwrap();
        assert_eq!((n.pan, n.tilt), (-90.0, 20.0));
        assert_eq!(n.zoom, s.zoom);
    }

    #[test]
    fn gimbal_lock_holds_pan() {
        let s = CameraState::with_pose(12.5, 10.0, 1.0).unwrap();
        let q = Quaternion::from_yaw_pitch_roll(50.0, 90.0, 0.0);
        let (n, out) = map_pose(&q, &s).unwrap();
        assert_eq!(out, PoseOutcome::PanHeld);
        assert_eq!((n.pan, n.tilt), (12.5, 60.0));
    }

    #[test]
    fn degenerate_pose_rejected() {
        let q = Quaternion::new(0.0, 0.0, 0.0, 0.0);
        assert!(map_pose(&q, &CameraState::default()).is_err());
    }

    #[test]
    fn admit_examples() {
        let mut g = RateGate::pose_gate();
        assert_eq!(g.admit(0.0), Admission::Accepted);
        assert_eq!(g.admit(5.0), Admission::Rejected);
        let mut g = RateGate::pose_gate();
        g.admit(0.0);
        assert_eq!(g.admit(9.0), Admission::Accepted);
        assert_eq!(g.admit(3.0), Admission::TimeRegression);
    }

    #[test]
    fn admit_one_second_at_1khz() {
        let mut g = RateGate::pose_gate();
        let n = (0..1000).filter(|t| g.admit(f64::from(*t)) == Admission::Accepted).count();
        assert!(n == 120 || n == 121, "{n}");
    }

    #[test]
    fn admit_reanchors_after_idle() {
        let mut g = RateGate::pose_gate();
        g.admit(0.0);
        assert_eq!(g.admit(1000.0), Admission::Accepted);
        // no burst after a long gap
        assert_eq!(g.admit(1001.0), Admission::Rejected);
        assert_eq!(g.admit(1004.0), Admission::Rejected);
    }

    #[test]
    fn zoom_step_examples() {
        let s = CameraState::default();
        let up = zoom_step(&s, 1).unwrap();
        assert_eq!(up.zoom, 1.05);
        let top = CameraState::with_pose(0.0, 0.0, 7.0).unwrap();
        assert_eq!(zoom_step(&top, 1).unwrap().zoom, 7.0);
        assert_eq!(zoom_step(&s, -1).unwrap().zoom, 1.0);
    }

    #[test]
    fn grid_values_match_their_decimals() {
        for n in 0..=120 {
            let text = format!("{}.{:02}", 1 + n / 20, (n % 20) * 5);
            assert_eq!(zoom_grid_value(n), text.parse::<f64>().unwrap(), "{text}");
        }
    }

    #[test]
    fn zoom_rate_examples() {
        let s = CameraState::default();
        assert!((zoom_rate(&s, 1.0, 500.0).unwrap().zoom - 1.5).abs() < 1e-12);
        assert_eq!(zoom_rate(&s, 0.0, 500.0).unwrap().zoom, 1.0);
        let hi = CameraState::with_pose(0.0, 0.0, 6.9).unwrap();
        assert_eq!(zoom_rate(&hi, 1.0, 500.0).unwrap().zoom, 7.0);
        assert!(matches!(zoom_rate(&s, 1.0, -1.0), Err(GimbalError::NegativeDt(_))));
        assert!(matches!(zoom_rate(&s, 2.5, 1.0), Err(GimbalError::RateTooHigh(_))));
    }

    #[test]
    fn focal_examples() {
        assert_eq!(focal_from_zoom(1.0).unwrap(), 4.8);
        assert_eq!(focal_from_zoom(7.0).unwrap(), 48.2);
        assert!((focal_from_zoom(4.0).unwrap() - 26.5).abs() < 1e-12);
        assert!(focal_from_zoom(0.99).is_err());
        assert!(focal_from_zoom(7.01).is_err());
    }

    #[test]
    fn state_after_rate_then_step_is_on_grid() {
        let s = zoom_rate(&CameraState::default(), 1.0, 123.0).unwrap();
        assert_eq!(s.zoom_mode, ZoomMode::Rate);
        assert!(s.validate().is_ok());
        let s = zoom_step(&s, 1).unwrap();
        assert!(s.validate().is_ok());
        assert!((s.zoom - 1.15).abs() < 1e-12);
    }
}
