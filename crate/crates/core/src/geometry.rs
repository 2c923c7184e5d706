//! Planar geometry for ROI re-centering and zoom, and the head-pose
//! quaternion decomposition used by the gimbal.
//!
//! All coordinates are continuous pixel coordinates with the origin at the
//! top-left pixel center. Nothing here rounds; rounding happens only when an
//! image is resampled.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid bounding box: {0}")]
    InvalidBox(String),
    #[error("invalid frame size {width}x{height} (both sides must be >= 2)")]
    InvalidFrameSize { width: u32, height: u32 },
    #[error("zoom scale must be finite and > 0, got {0}")]
    InvalidScale(f64),
    #[error("transform is singular (det = {0:e})")]
    Singular(f64),
    #[error("quaternion norm {0:e} too small to normalize")]
    DegenerateQuaternion(f64),
}

/// Axis-aligned box in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, GeometryError> {
        let b = Self {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let all = [self.x_min, self.y_min, self.x_max, self.y_max];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidBox("non-finite coordinate".into()));
        }
        if self.x_min > self.x_max || self.y_min > self.y_max {
            return Err(GeometryError::InvalidBox(format!(
                "min exceeds max: ({}, {}, {}, {})",
                self.x_min, self.y_min, self.x_max, self.y_max
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Exact midpoint of the box.
    pub fn center(&self) -> (f64, f64) {
        bbox_center(self)
    }

    /// Grows the box about its center by `factor` on each side length.
    pub fn expanded(&self, factor: f64) -> Self {
        let (cx, cy) = self.center();
        let hw = 0.5 * self.width() * factor;
        let hh = 0.5 * self.height() * factor;
        Self {
            x_min: cx - hw,
            y_min: cy - hh,
            x_max: cx + hw,
            y_max: cy + hh,
        }
    }

    /// Clamps all corners into `[0, W-1] x [0, H-1]`.
    pub fn clamped_to(&self, size: FrameSize) -> Self {
        let xm = f64::from(size.width - 1);
        let ym = f64::from(size.height - 1);
        Self {
            x_min: self.x_min.clamp(0.0, xm),
            y_min: self.y_min.clamp(0.0, ym),
            x_max: self.x_max.clamp(0.0, xm),
            y_max: self.y_max.clamp(0.0, ym),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameSize {
    pub width: u32,
    pub height: u32,
}

impl FrameSize {
    pub fn new(width: u32, height: u32) -> Result<Self, GeometryError> {
        if width < 2 || height < 2 {
            return Err(GeometryError::InvalidFrameSize { width, height });
        }
        Ok(Self { width, height })
    }

    pub fn center(&self) -> (f64, f64) {
        (f64::from(self.width) / 2.0, f64::from(self.height) / 2.0)
    }
}

pub fn bbox_center(b: &BoundingBox) -> (f64, f64) {
    ((b.x_min + b.x_max) / 2.0, (b.y_min + b.y_max) / 2.0)
}

/// 2D affine transform stored as a row-major homogeneous 3x3 matrix whose
/// bottom row is always `(0, 0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 9]", into = "[f64; 9]")]
pub struct Affine2D {
    // rows 0 and 1; row 2 is implicit
    m: [[f64; 3]; 2],
}

impl Affine2D {
    pub const IDENTITY: Self = Self {
        m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
    };

    pub fn from_rows(r0: [f64; 3], r1: [f64; 3]) -> Self {
        Self { m: [r0, r1] }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self::from_rows([1.0, 0.0, tx], [0.0, 1.0, ty])
    }

    /// Full 3x3 matrix, row-major.
    pub fn matrix(&self) -> [[f64; 3]; 3] {
        [self.m[0], self.m[1], [0.0, 0.0, 1.0]]
    }

    pub fn to_array(&self) -> [f64; 9] {
        let [r0, r1] = self.m;
        [r0[0], r0[1], r0[2], r1[0], r1[1], r1[2], 0.0, 0.0, 1.0]
    }

    /// Translation component `(T_x, T_y)`.
    pub fn translation_part(&self) -> (f64, f64) {
        (self.m[0][2], self.m[1][2])
    }

    pub fn apply(&self, p: (f64, f64)) -> (f64, f64) {
        let [r0, r1] = &self.m;
        (
            r0[0] * p.0 + r0[1] * p.1 + r0[2],
            r1[0] * p.0 + r1[1] * p.1 + r1[2],
        )
    }

    pub fn determinant(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn inverse(&self) -> Result<Self, GeometryError> {
        let det = self.determinant();
        if !det.is_finite() || det.abs() < 1e-12 {
            return Err(GeometryError::Singular(det));
        }
        let [[a, b, tx], [c, d, ty]] = self.m;
        let ia = d / det;
        let ib = -b / det;
        let ic = -c / det;
        let id = a / det;
        Ok(Self::from_rows(
            [ia, ib, -(ia * tx + ib * ty)],
            [ic, id, -(ic * tx + id * ty)],
        ))
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }

    /// Largest absolute entry-wise difference to `other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.to_array()
            .iter()
            .zip(other.to_array().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Default for Affine2D {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl From<Affine2D> for [f64; 9] {
    fn from(a: Affine2D) -> Self {
        a.to_array()
    }
}

impl TryFrom<[f64; 9]> for Affine2D {
    type Error = GeometryError;

    fn try_from(v: [f64; 9]) -> Result<Self, Self::Error> {
        if v[6] != 0.0 || v[7] != 0.0 || v[8] != 1.0 {
            return Err(GeometryError::InvalidBox(format!(
                "affine bottom row must be (0, 0, 1), got ({}, {}, {})",
                v[6], v[7], v[8]
            )));
        }
        Ok(Self::from_rows([v[0], v[1], v[2]], [v[3], v[4], v[5]]))
    }
}

/// Translation that moves the box center onto the frame center.
pub fn recenter_transform(b: &BoundingBox, f: FrameSize) -> Affine2D {
    let (xc, yc) = bbox_center(b);
    let (cx, cy) = f.center();
    Affine2D::translation(cx - xc, cy - yc)
}

/// Uniform scale by `s` about the frame center.
pub fn zoom_transform(s: f64, f: FrameSize) -> Result<Affine2D, GeometryError> {
    if !s.is_finite() || s <= 0.0 {
        return Err(GeometryError::InvalidScale(s));
    }
    let (cx, cy) = f.center();
    Ok(Affine2D::from_rows(
        [s, 0.0, cx - s * cx],
        [0.0, s, cy - s * cy],
    ))
}

/// `compose(a, b)` applies `b` first, then `a`.
pub fn compose(a: &Affine2D, b: &Affine2D) -> Affine2D {
    let am = a.matrix();
    let bm = b.matrix();
    let mut out = [[0.0; 3]; 2];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| am[i][k] * bm[k][j]).sum();
        }
    }
    Affine2D { m: out }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Self = Self {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(&self) -> Result<Self, GeometryError> {
        let n = self.norm();
        if !n.is_finite() || n < 1e-9 {
            return Err(GeometryError::DegenerateQuaternion(n));
        }
        Ok(Self::new(self.w / n, self.x / n, self.y / n, self.z / n))
    }

    /// Rotation of `angle_deg` about a (not necessarily unit) axis.
    pub fn from_axis_angle(axis: [f64; 3], angle_deg: f64) -> Result<Self, GeometryError> {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if n < 1e-12 {
            return Err(GeometryError::DegenerateQuaternion(n));
        }
        let half = angle_deg.to_radians() / 2.0;
        let s = half.sin() / n;
        Ok(Self::new(half.cos(), axis[0] * s, axis[1] * s, axis[2] * s))
    }

    /// Intrinsic Z(yaw)-Y(pitch)-X(roll) rotation.
    pub fn from_yaw_pitch_roll(yaw_deg: f64, pitch_deg: f64, roll_deg: f64) -> Self {
        let (sy, cy) = (yaw_deg.to_radians() / 2.0).sin_cos();
        let (sp, cp) = (pitch_deg.to_radians() / 2.0).sin_cos();
        let (sr, cr) = (roll_deg.to_radians() / 2.0).sin_cos();
        Self::new(
            cr * cp * cy + sr * sp * sy,
            sr * cp * cy - cr * sp * sy,
            cr * sp * cy + sr * cp * sy,
            cr * cp * sy - sr * sp * cy,
        )
    }
}

/// Yaw/pitch extracted from a head pose. `gimbal_lock` is set when pitch is
/// within 0.01 degrees of +-90, in which case yaw is reported as 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YawPitch {
    pub yaw_deg: f64,
    pub pitch_deg: f64,
    pub gimbal_lock: bool,
}

const GIMBAL_LOCK_MARGIN_DEG: f64 = 0.01;

/// Z-Y-X decomposition of a normalized quaternion, roll discarded.
///
/// Frame convention: +Z up, +X forward. Yaw lies in (-180, 180], pitch in
/// [-90, 90].
pub fn quaternion_to_yaw_pitch(q: &Quaternion) -> YawPitch {
    let Quaternion { w, x, y, z } = *q;
    let sin_pitch = (2.0 * (w * y - z * x)).clamp(-1.0, 1.0);
    let pitch_deg = sin_pitch.asin().to_degrees();
    if (90.0 - pitch_deg.abs()) <= GIMBAL_LOCK_MARGIN_DEG {
        return YawPitch {
            yaw_deg: 0.0,
            pitch_deg,
            gimbal_lock: true,
        };
    }
    let mut yaw_deg = (2.0 * (w * z + x * y))
        .atan2(1.0 - 2.0 * (y * y + z * z))
        .to_degrees();
    if yaw_deg <= -180.0 {
        yaw_deg += 360.0;
    }
    YawPitch {
        yaw_deg,
        pitch_deg,
        gimbal_lock: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fs(w: u32, h: u32) -> FrameSize {
        FrameSize::new(w, h).unwrap()
    }

    #[test]
    fn center_examples() {
        let c = |a, b, c, d| bbox_center(&BoundingBox::new(a, b, c, d).unwrap());
        assert_eq!(c(100.0, 100.0, 200.0, 200.0), (150.0, 150.0));
        assert_eq!(c(0.0, 0.0, 0.0, 0.0), (0.0, 0.0));
        assert_eq!(c(10.0, 20.0, 11.0, 23.0), (10.5, 21.5));
    }

    #[test]
    fn box_rejects_inverted_and_nan() {
        assert!(BoundingBox::new(5.0, 0.0, 4.0, 1.0).is_err());
        assert!(BoundingBox::new(0.0, f64::NAN, 4.0, 1.0).is_err());
    }

    #[test]
    fn recenter_examples() {
        let t = recenter_transform(&BoundingBox::new(100.0, 100.0, 200.0, 200.0).unwrap(), fs(640, 480));
        assert_eq!(t.translation_part(), (170.0, 90.0));
        let t = recenter_transform(&BoundingBox::new(300.0, 220.0, 340.0, 260.0).unwrap(), fs(640, 480));
        assert!(t.is_identity());
        let t = recenter_transform(&BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap(), fs(64, 64));
        assert_eq!(t.translation_part(), (27.0, 27.0));
    }

    #[test]
    fn zoom_examples() {
        let z = zoom_transform(2.0, fs(640, 480)).unwrap();
        assert_eq!(z.apply((320.0, 240.0)), (320.0, 240.0));
        assert_eq!(z.apply((160.0, 240.0)), (0.0, 240.0));
        assert!(zoom_transform(1.0, fs(33, 17)).unwrap().is_identity());
        assert!(zoom_transform(0.0, fs(4, 4)).is_err());
        assert!(zoom_transform(-1.0, fs(4, 4)).is_err());
        assert!(zoom_transform(f64::INFINITY, fs(4, 4)).is_err());
    }

    #[test]
    fn compose_examples() {
        let f = fs(640, 480);
        let x = Affine2D::from_rows([1.5, 0.2, 3.0], [-0.1, 0.7, 9.0]);
        assert_eq!(compose(&Affine2D::IDENTITY, &x), x);
        let id = compose(&zoom_transform(2.0, f).unwrap(), &zoom_transform(0.5, f).unwrap());
        assert!(id.max_abs_diff(&Affine2D::IDENTITY) < 1e-12);

        let b = BoundingBox::new(37.0, 81.0, 90.0, 111.0).unwrap();
        let a = compose(&zoom_transform(3.3, f).unwrap(), &recenter_transform(&b, f));
        let p = a.apply(b.center());
        assert!((p.0 - 320.0).abs() < 1e-9 && (p.1 - 240.0).abs() < 1e-9);
    }

    #[test]
    fn inverse_and_singular() {
        let a = Affine2D::from_rows([2.0, 1.0, 5.0], [1.0, 3.0, -2.0]);
        let inv = a.inverse().unwrap();
        assert!(compose(&a, &inv).max_abs_diff(&Affine2D::IDENTITY) < 1e-12);
        let s = Affine2D::from_rows([1.0, 2.0, 0.0], [2.0, 4.0, 0.0]);
        assert!(matches!(s.inverse(), Err(GeometryError::Singular(_))));
    }

    #[test]
    fn affine_serde_enforces_bottom_row() {
        let a = Affine2D::translation(1.0, 2.0);
        let js = serde_json::to_string(&a).unwrap();
        assert_eq!(js, "[1.0,0.0,1.0,0.0,1.0,2.0,0.0,0.0,1.0]");
        assert_eq!(serde_json::from_str::<Affine2D>(&js).unwrap(), a);
        assert!(serde_json::from_str::<Affine2D>("[1,0,0,0,1,0,0,1,1]").is_err());
    }

    #[test]
    fn quaternion_examples() {
        let yp = quaternion_to_yaw_pitch(&Quaternion::IDENTITY);
        assert_eq!((yp.yaw_deg, yp.pitch_deg, yp.gimbal_lock), (0.0, 0.0, false));

        let q = Quaternion::from_axis_angle([0.0, 0.0, 1.0], 90.0).unwrap();
        let yp = quaternion_to_yaw_pitch(&q);
        assert!((yp.yaw_deg - 90.0).abs() < 1e-9 && yp.pitch_deg.abs() < 1e-9);

        let q = Quaternion::from_axis_angle([0.0, 1.0, 0.0], 30.0).unwrap();
        let yp = quaternion_to_yaw_pitch(&q);
        assert!(yp.yaw_deg.abs() < 1e-9 && (yp.pitch_deg - 30.0).abs() < 1e-9);
    }

    #[test]
    fn yaw_range_excludes_minus_180() {
        let q = Quaternion::from_axis_angle([0.0, 0.0, 1.0], -180.0).unwrap();
        let yp = quaternion_to_yaw_pitch(&q);
        assert!((yp.yaw_deg - 180.0).abs() < 1e-9);
    }

    #[test]
    fn gimbal_lock_flagged() {
        let q = Quaternion::from_yaw_pitch_roll(40.0, 89.995, 0.0);
        let yp = quaternion_to_yaw_pitch(&q);
        assert!(yp.gimbal_lock);
        assert_eq!(yp.yaw_deg, 0.0);
        let q = Quaternion::from_yaw_pitch_roll(40.0, 89.9, 0.0);
        assert!(!quaternion_to_yaw_pitch(&q).gimbal_lock);
    }

    #[test]
    fn normalization_rejects_near_zero() {
        assert!(Quaternion::new(1e-10, 0.0, 0.0, 0.0).normalized().is_err());
        let q = Quaternion::new(2.0, 0.0, 0.0, 0.0).normalized().unwrap();
        assert!((q.norm() - 1.0).abs() < 1e-12);
    }
}
