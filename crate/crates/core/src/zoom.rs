//! Dynamic zoom: scale-factor selection, affine crop-and-fill warping and the
//! bicubic fallback upscaler.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Affine2D, BoundingBox, FrameSize, GeometryError};
use crate::image::{ImageError, ImageFrame, CHANNELS};

#[derive(Debug, Error)]
pub enum ZoomError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("invalid zoom parameters: {0}")]
    Params(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoomParams {
    pub s_max: f64,
    pub alpha: f64,
}

impl Default for ZoomParams {
    fn default() -> Self {
        Self {
            s_max: 7.0,
            alpha: 1.2,
        }
    }
}

impl ZoomParams {
    pub fn validate(&self) -> Result<(), ZoomError> {
        if !(self.s_max.is_finite() && self.s_max >= 1.0) {
            return Err(ZoomError::Params(format!("s_max must be >= 1, got {}", self.s_max)));
        }
        if !(self.alpha.is_finite() && self.alpha >= 1.0) {
            return Err(ZoomError::Params(format!("alpha must be >= 1, got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleFlag {
    /// Box had zero width or height; no zoom applied.
    ZeroArea,
    /// Raw factor was below 1 and was raised to 1.
    ClampedLow,
    /// Raw factor exceeded `s_max`.
    ClampedHigh,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleDecision {
    pub s: f64,
    pub flag: Option<ScaleFlag>,
}

/// `s = clamp(min(W / (alpha w), H / (alpha h)), 1, s_max)`: the largest
/// zoom at which the alpha-padded target still fits the frame.
pub fn compute_scale_factor(target: &BoundingBox, f: FrameSize, zp: &ZoomParams) -> ScaleDecision {
    let (w, h) = (target.width(), target.height());
    if !(w > 0.0 && h > 0.0) {
        return ScaleDecision {
            s: 1.0,
            flag: Some(ScaleFlag::ZeroArea),
        };
    }
    let raw = (f64::from(f.width) / (zp.alpha * w)).min(f64::from(f.height) / (zp.alpha * h));
    if raw < 1.0 {
        ScaleDecision {
            s: 1.0,
            flag: Some(ScaleFlag::ClampedLow),
        }
    } else if raw > zp.s_max {
        ScaleDecision {
            s: zp.s_max,
            flag: Some(ScaleFlag::ClampedHigh),
        }
    } else {
        ScaleDecision { s: raw, flag: None }
    }
}

/// Bilinear sample with edge replication. `(x, y)` must lie in the frame's
/// pixel area `[-0.5, W-0.5) x [-0.5, H-0.5)`.
#[inline]
pub(crate) fn bilinear_at(src: &ImageFrame, x: f64, y: f64) -> [f64; 3] {
    let (w, h) = (i64::from(src.width()), i64::from(src.height()));
    let x0f = x.floor();
    let y0f = y.floor();
    let fx = x - x0f;
    let fy = y - y0f;
    let cx = |v: i64| v.clamp(0, w - 1) as u32;
    let cy = |v: i64| v.clamp(0, h - 1) as u32;
    let (x0, y0) = (x0f as i64, y0f as i64);
    let p00 = src.pixel(cx(x0), cy(y0));
    if fx == 0.0 && fy == 0.0 {
        return p00.map(f64::from);
    }
    let p10 = src.pixel(cx(x0 + 1), cy(y0));
    let p01 = src.pixel(cx(x0), cy(y0 + 1));
    let p11 = src.pixel(cx(x0 + 1), cy(y0 + 1));
    let mut out = [0.0; 3];
    for c in 0..CHANNELS {
        let top = f64::from(p00[c]) * (1.0 - fx) + f64::from(p10[c]) * fx;
        let bot = f64::from(p01[c]) * (1.0 - fx) + f64::from(p11[c]) * fx;
        out[c] = top * (1.0 - fy) + bot * fy;
    }
    out
}

#[inline]
pub(crate) fn in_pixel_area(src: &ImageFrame, x: f64, y: f64) -> bool {
    x >= -0.5 && y >= -0.5 && x < f64::from(src.width()) - 0.5 && y < f64::from(src.height()) - 0.5
}

#[inline]
pub(crate) fn to_sample(v: f64) -> u16 {
    v.round().clamp(0.0, f64::from(u16::MAX)) as u16
}

/// Warps `frame` by `t` (source -> output) into a frame of size `f`.
///
/// Each output pixel is bilinearly sampled at `t^-1(p)`; samples falling
/// outside the source pixel area are black. The source format is kept.
pub fn crop_and_fill(frame: &ImageFrame, t: &Affine2D, f: FrameSize) -> Result<ImageFrame, ZoomError> {
    let inv = t.inverse()?;
    let mut out = ImageFrame::new(f.width, f.height, frame.format.clone())?;
    for y in 0..f.height {
        for x in 0..f.width {
            let (sx, sy) = inv.apply((f64::from(x), f64::from(y)));
            if in_pixel_area(frame, sx, sy) {
                let v = bilinear_at(frame, sx, sy);
                out.set_pixel(x, y, v.map(to_sample));
            }
        }
    }
    Ok(out)
}

/// Catmull-Rom kernel (a = -0.5).
#[inline]
pub fn catmull_rom(t: f64) -> f64 {
    let t = t.abs();
    if t < 1.0 {
        1.5 * t * t * t - 2.5 * t * t + 1.0
    } else if t < 2.0 {
        -0.5 * t * t * t + 2.5 * t * t - 4.0 * t + 2.0
    } else {
        0.0
    }
}

/// Four taps and weights for sampling position `pos` on an axis of length `n`.
fn cubic_taps(pos: f64, n: u32) -> ([u32; 4], [f64; 4]) {
    let base = pos.floor();
    let frac = pos - base;
    let mut idx = [0u32; 4];
    let mut wts = [0.0; 4];
    for k in 0..4 {
        let i = base as i64 - 1 + k as i64;
        idx[k] = i.clamp(0, i64::from(n) - 1) as u32;
        wts[k] = catmull_rom(frac - (k as f64 - 1.0));
    }
    (idx, wts)
}

/// Catmull-Rom upscale by integer factor `r`, pixel-area aligned: output
/// pixel `X` samples input position `(X + 0.5) / r - 0.5`.
///
/// Overshoot above the frame's bit depth is kept (up to `u16::MAX`) so the
/// format guard can see it.
pub fn bicubic_upscale(p: &ImageFrame, r: u32) -> Result<ImageFrame, ZoomError> {
    if r == 0 {
        return Err(ZoomError::Params("upscale factor must be >= 1".into()));
    }
    if r == 1 {
        return Ok(p.clone());
    }
    let (w, h) = (p.width(), p.height());
    let (ow, oh) = (w * r, h * r);
    let inv_r = 1.0 / f64::from(r);
    let xtaps: Vec<_> = (0..ow)
        .map(|x| cubic_taps((f64::from(x) + 0.5) * inv_r - 0.5, w))
        .collect();
    let ytaps: Vec<_> = (0..oh)
        .map(|y| cubic_taps((f64::from(y) + 0.5) * inv_r - 0.5, h))
        .collect();

    // horizontal pass into f64 rows, then vertical
    let mut horiz = vec![0.0f64; ow as usize * h as usize * CHANNELS];
    for y in 0..h {
        for (x, (ix, wx)) in xtaps.iter().enumerate() {
            let o = (y as usize * ow as usize + x) * CHANNELS;
            for k in 0..4 {
                let px = p.pixel(ix[k], y);
                for c in 0..CHANNELS {
                    horiz[o + c] += wx[k] * f64::from(px[c]);
                }
            }
        }
    }
    let mut out = ImageFrame::new(ow, oh, p.format.clone())?;
    for (y, (iy, wy)) in ytaps.iter().enumerate() {
        for x in 0..ow as usize {
            let mut acc = [0.0; 3];
            for k in 0..4 {
                let o = (iy[k] as usize * ow as usize + x) * CHANNELS;
                for c in 0..CHANNELS {
                    acc[c] += wy[k] * horiz[o + c];
                }
            }
            out.set_pixel(x as u32, y as u32, acc.map(to_sample));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{compose, recenter_transform, zoom_transform};
    use crate::image::FormatSpec;

    fn fs(w: u32, h: u32) -> FrameSize {
        FrameSize::new(w, h).unwrap()
    }

    fn bbox(w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(10.0, 10.0, 10.0 + w, 10.0 + h).unwrap()
    }

    #[test]
    fn scale_factor_examples() {
        let zp = ZoomParams::default();
        let d = compute_scale_factor(&bbox(100.0, 50.0), fs(640, 480), &zp);
        // min(640 / 120, 480 / 60) = min(5.333.., 8)
        assert!((d.s - 640.0 / 120.0).abs() < 1e-12);
        assert_eq!(d.flag, None);

        let d = compute_scale_factor(&bbox(640.0, 480.0), fs(640, 480), &zp);
        assert_eq!(d.s, 1.0);
        assert_eq!(d.flag, Some(ScaleFlag::ClampedLow));

        let zp1 = ZoomParams { s_max: 7.0, alpha: 1.0 };
        let d = compute_scale_factor(&bbox(64.0, 48.0), fs(640, 480), &zp1);
        assert_eq!(d.s, 7.0);
        assert_eq!(d.flag, Some(ScaleFlag::ClampedHigh));

        let d = compute_scale_factor(&bbox(0.0, 30.0), fs(640, 480), &zp);
        assert_eq!((d.s, d.flag), (1.0, Some(ScaleFlag::ZeroArea)));
    }

    #[test]
    fn zoom_params_validation() {
        assert!(ZoomParams { s_max: 0.5, alpha: 1.2 }.validate().is_err());
        assert!(ZoomParams { s_max: 7.0, alpha: 0.9 }.validate().is_err());
        assert!(ZoomParams::default().validate().is_ok());
    }

    fn ramp(w: u32, h: u32) -> ImageFrame {
        let mut f = ImageFrame::new(w, h, FormatSpec::srgb8()).unwrap();
        for y in 0..h {
            for x in 0..w {
                f.set_pixel(x, y, [(x * 7 % 256) as u16, (y * 13 % 256) as u16, ((x + y) % 256) as u16]);
            }
        }
        f
    }

    #[test]
    fn identity_warp_is_exact() {
        let f = ramp(23, 17);
        let out = crop_and_fill(&f, &Affine2D::IDENTITY, fs(23, 17)).unwrap();
        assert_eq!(out, f);
    }

    #[test]
    fn translation_fills_vacated_band_black() {
        let mut f = ramp(40, 10);
        for v in f.samples_mut() {
            *v = v.saturating_add(1).max(1);
        }
        let out = crop_and_fill(&f, &Affine2D::translation(10.0, 0.0), fs(40, 10)).unwrap();
        for y in 0..10 {
            for x in 0..10 {
                assert_eq!(out.pixel(x, y), [0, 0, 0]);
            }
            for x in 10..40 {
                assert_eq!(out.pixel(x, y), f.pixel(x - 10, y));
            }
        }
    }

    #[test]
    fn singular_transform_rejected() {
        let f = ramp(4, 4);
        let t = Affine2D::from_rows([0.0, 0.0, 1.0], [0.0, 1.0, 0.0]);
        assert!(matches!(crop_and_fill(&f, &t, fs(4, 4)), Err(ZoomError::Geometry(_))));
    }

    #[test]
    fn zoom_preserves_center_checker() {
        // 2x2 checker at the center of a 16x16 frame: pixels (7..=8, 7..=8)
        let mut f = ImageFrame::filled(16, 16, [50, 50, 50], FormatSpec::srgb8()).unwrap();
        let colors = [[255, 0, 0], [0, 255, 0], [0, 0, 255], [255, 255, 0]];
        let cells = [(7, 7), (8, 7), (7, 8), (8, 8)];
        for (c, &(x, y)) in colors.iter().zip(cells.iter()) {
            f.set_pixel(x, y, *c);
        }
        let size = fs(16, 16);
        let t = zoom_transform(2.0, size).unwrap();
        let out = crop_and_fill(&f, &t, size).unwrap();
        // Oracle: invert the zoom by hand, q = (p - 8) / 2 + 8, and sample.
        for &(px, py) in &[(8u32, 8u32), (6, 6), (9, 9), (7, 8)] {
            let qx = (f64::from(px) - 8.0) / 2.0 + 8.0;
            let qy = (f64::from(py) - 8.0) / 2.0 + 8.0;
            let (x0, y0) = (qx.floor() as u32, qy.floor() as u32);
            let (fx, fy) = (qx - qx.floor(), qy - qy.floor());
            let mut want = [0u16; 3];
            for (c, w) in want.iter_mut().enumerate() {
                let g = |x: u32, y: u32| f64::from(f.pixel(x, y)[c]);
                let v = g(x0, y0) * (1.0 - fx) * (1.0 - fy)
                    + g(x0 + 1, y0) * fx * (1.0 - fy)
                    + g(x0, y0 + 1) * (1.0 - fx) * fy
                    + g(x0 + 1, y0 + 1) * fx * fy;
                *w = v.round() as u16;
            }
            assert_eq!(out.pixel(px, py), want, "pixel ({px},{py})");
        }
        // the frame-center pixel maps onto itself
        assert_eq!(out.pixel(8, 8), f.pixel(8, 8));
    }

    #[test]
    fn warp_recenters_target() {
        let mut f = ImageFrame::new(64, 48, FormatSpec::srgb8()).unwrap();
        f.set_pixel(10, 12, [255, 255, 255]);
        let b = BoundingBox::new(10.0, 12.0, 10.0, 12.0).unwrap();
        let size = fs(64, 48);
        let t = compose(&zoom_transform(1.0, size).unwrap(), &recenter_transform(&b, size));
        let out = crop_and_fill(&f, &t, size).unwrap();
        assert_eq!(out.pixel(32, 24), [255, 255, 255]);
    }

    #[test]
    fn bicubic_constant_and_identity() {
        let g = ImageFrame::filled(7, 5, [77, 140, 200], FormatSpec::srgb8()).unwrap();
        let up = bicubic_upscale(&g, 3).unwrap();
        assert_eq!((up.width(), up.height()), (21, 15));
        assert!(up.samples().chunks(3).all(|p| p == [77, 140, 200]));
        let f = ramp(6, 4);
        assert_eq!(bicubic_upscale(&f, 1).unwrap(), f);
        assert!(bicubic_upscale(&f, 0).is_err());
    }

    #[test]
    fn bicubic_ramp_matches_direct_kernel() {
        let mut f = ImageFrame::new(2, 2, FormatSpec::srgb8()).unwrap();
        for y in 0..2 {
            f.set_pixel(0, y, [0, 0, 0]);
            f.set_pixel(1, y, [200, 100, 50]);
        }
        let up = bicubic_upscale(&f, 2).unwrap();
        // Oracle: evaluate the kernel directly at u = (X + 0.5)/2 - 0.5 with
        // clamped taps over the two-sample row [0, 200].
        let row = [0.0f64, 200.0];
        let mut prev = -1i32;
        for x in 0..4u32 {
            let u = (f64::from(x) + 0.5) / 2.0 - 0.5;
            let mut v = 0.0;
            for i in -2i32..4 {
                let src = row[i.clamp(0, 1) as usize];
                v += src * catmull_rom(u - f64::from(i));
            }
            let got = up.pixel(x, 0)[0];
            assert_eq!(got, v.round() as u16, "col {x}");
            assert!(i32::from(got) >= prev);
            prev = i32::from(got);
            assert_eq!(up.pixel(x, 0), up.pixel(x, 3));
        }
    }
}
