//! Output-format verification mask and correction.
//!
//! Bit depth, color space and metadata are whole-frame properties; they are
//! evaluated once and broadcast over the mask. Value representability (every
//! sample fits the reference bit depth) is the per-pixel predicate. Pixels
//! where the mask is 0 are replaced by the reference frame's pixels.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{ColorSpace, FormatSpec, ImageFrame};

/// Bound on correction passes; with the mask held fixed one pass suffices.
pub const MAX_CORRECTION_ITERATIONS: u32 = 4;

#[derive(Debug, Error, PartialEq)]
pub enum GuardError {
    #[error("frame dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    Dimensions,
    BitDepth,
    ColorSpace,
    Metadata,
    Representable,
}

/// Binary H x W matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormatMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl FormatMask {
    pub fn filled(width: u32, height: u32, value: bool) -> Self {
        Self {
            width,
            height,
            bits: vec![value; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.bits[(y * self.width + x) as usize] = v;
    }

    pub fn ones(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn ones_fraction(&self) -> f64 {
        self.ones() as f64 / self.bits.len() as f64
    }

    pub fn all_ones(&self) -> bool {
        self.bits.iter().all(|b| *b)
    }
}

/// Color spaces accepted as equivalent to `cs`.
pub fn compatible_color_spaces(cs: &ColorSpace) -> Vec<ColorSpace> {
    vec![cs.clone()]
}

/// Whole-frame predicates of `candidate` against `spec` that fail.
pub fn global_failures(candidate: &FormatSpec, spec: &FormatSpec) -> Vec<Predicate> {
    let mut failing = Vec::new();
    if candidate.bit_depth != spec.bit_depth {
        failing.push(Predicate::BitDepth);
    }
    if !compatible_color_spaces(&spec.color_space).contains(&candidate.color_space) {
        failing.push(Predicate::ColorSpace);
    }
    if candidate.metadata != spec.metadata {
        failing.push(Predicate::Metadata);
    }
    failing
}

/// Mask of `candidate` against a bare format spec, plus failing predicates.
pub fn mask_against_spec(candidate: &ImageFrame, spec: &FormatSpec) -> (FormatMask, Vec<Predicate>) {
    let (w, h) = (candidate.width(), candidate.height());
    let mut failing = global_failures(&candidate.format, spec);
    if !failing.is_empty() {
        return (FormatMask::filled(w, h, false), failing);
    }
    let max = spec.bit_depth.max_value();
    let mut mask = FormatMask::filled(w, h, true);
    for (i, px) in candidate.samples().chunks_exact(3).enumerate() {
        if px.iter().any(|&v| v > max) {
            mask.bits[i] = false;
        }
    }
    if !mask.all_ones() {
        failing.push(Predicate::Representable);
    }
    (mask, failing)
}

pub fn compute_format_mask(candidate: &ImageFrame, reference: &ImageFrame) -> Result<FormatMask, GuardError> {
    check_dims(candidate, reference)?;
    Ok(mask_against_spec(candidate, &reference.format).0)
}

fn check_dims(a: &ImageFrame, b: &ImageFrame) -> Result<(), GuardError> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(GuardError::DimensionMismatch(a.width(), a.height(), b.width(), b.height()));
    }
    Ok(())
}

/// `out = candidate * M + reference * (1 - M)`, pixel-wise. The result
/// carries the reference format descriptor.
pub fn iterative_correct(
    candidate: &ImageFrame,
    reference: &ImageFrame,
    mask: &FormatMask,
) -> Result<ImageFrame, GuardError> {
    check_dims(candidate, reference)?;
    if mask.width != candidate.width() || mask.height != candidate.height() {
        return Err(GuardError::DimensionMismatch(
            mask.width,
            mask.height,
            candidate.width(),
            candidate.height(),
        ));
    }
    let mut out = reference.clone();
    for (i, keep) in mask.bits.iter().enumerate() {
        if *keep {
            let o = i * 3;
            out.samples_mut()[o..o + 3].copy_from_slice(&candidate.samples()[o..o + 3]);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuardReport {
    pub ones_fraction: f64,
    pub failing: Vec<Predicate>,
    pub corrected: bool,
    pub iterations: u32,
}

/// Read-only check of `frame` against `reference`.
pub fn verify_frame(frame: &ImageFrame, reference: &ImageFrame) -> GuardReport {
    if check_dims(frame, reference).is_err() {
        return GuardReport {
            ones_fraction: 0.0,
            failing: vec![Predicate::Dimensions],
            corrected: false,
            iterations: 0,
        };
    }
    let (mask, failing) = mask_against_spec(frame, &reference.format);
    GuardReport {
        ones_fraction: mask.ones_fraction(),
        failing,
        corrected: false,
        iterations: 0,
    }
}

/// Runs mask + correction until the mask is all ones (or the iteration cap).
/// The report describes the incoming candidate.
pub fn enforce(candidate: &ImageFrame, reference: &ImageFrame) -> Result<(ImageFrame, GuardReport), GuardError> {
    check_dims(candidate, reference)?;
    let (first, failing) = mask_against_spec(candidate, &reference.format);
    let mut report = GuardReport {
        ones_fraction: first.ones_fraction(),
        failing,
        corrected: false,
        iterations: 0,
    };
    let mut current = candidate.clone();
    let mut mask = first;
    while !mask.all_ones() && report.iterations < MAX_CORRECTION_ITERATIONS {
        current = iterative_correct(&current, reference, &mask)?;
        report.iterations += 1;
        report.corrected = true;
        mask = mask_against_spec(&current, &reference.format).0;
    }
    Ok((current, report))
}
