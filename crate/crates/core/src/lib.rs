//! Active-vision engine: target re-centering and simulated optical zoom with
//! super-resolution over recorded episodes, plus the pan-tilt-zoom control
//! law and a virtual camera for live teleoperation.

pub mod dataset;
pub mod detection;
pub mod format_guard;
pub mod geometry;
pub mod gimbal;
pub mod image;
pub mod pipeline;
pub mod sr;
pub mod synth;
pub mod virtual_camera;
pub mod zoom;

pub use geometry::{Affine2D, BoundingBox, FrameSize, Quaternion};
pub use image::{BitDepth, ColorSpace, FormatSpec, ImageFrame};
