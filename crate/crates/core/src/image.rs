//! RGB raster frames with an explicit format descriptor, plus PNG I/O.
//!
//! Samples are stored as `u16` regardless of the declared bit depth so that
//! intermediate results may temporarily exceed the representable range of an
//! 8-bit frame; the format guard is what brings them back in line.

use std::io::Cursor;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::FrameSize;

pub const CHANNELS: usize = 3;

/// Text-chunk keyword reserved for the color-space tag.
const COLOR_SPACE_KEY: &str = "avr:color-space";

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("frame dimensions {0}x{1} are invalid")]
    InvalidSize(u32, u32),
    #[error("sample buffer has {got} values, expected {expected}")]
    BufferLength { got: usize, expected: usize },
    #[error("unsupported png layout: {0}")]
    Unsupported(String),
    #[error("metadata: {0}")]
    Metadata(String),
    #[error("png decode: {0}")]
    Decode(#[from] png::DecodingError),
    #[error("png encode: {0}")]
    Encode(#[from] png::EncodingError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn bits(self) -> u8 {
        match self {
            Self::Eight => 8,
            Self::Sixteen => 16,
        }
    }

    pub fn max_value(self) -> u16 {
        match self {
            Self::Eight => u8::MAX as u16,
            Self::Sixteen => u16::MAX,
        }
    }
}

impl TryFrom<u8> for BitDepth {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            8 => Ok(Self::Eight),
            16 => Ok(Self::Sixteen),
            other => Err(format!("bit depth must be 8 or 16, got {other}")),
        }
    }
}

impl From<BitDepth> for u8 {
    fn from(b: BitDepth) -> u8 {
        b.bits()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorSpace {
    Srgb,
    LinearSrgb,
    DisplayP3,
}

impl ColorSpace {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Srgb => "srgb",
            Self::LinearSrgb => "linear_srgb",
            Self::DisplayP3 => "display_p3",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "srgb" => Some(Self::Srgb),
            "linear_srgb" => Some(Self::LinearSrgb),
            "display_p3" => Some(Self::DisplayP3),
            _ => None,
        }
    }
}

/// Bit depth, color space and an ordered flat metadata list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatSpec {
    pub bit_depth: BitDepth,
    pub color_space: ColorSpace,
    #[serde(default)]
    pub metadata: Vec<(String, String)>,
}

impl FormatSpec {
    pub fn srgb8() -> Self {
        Self {
            bit_depth: BitDepth::Eight,
            color_space: ColorSpace::Srgb,
            metadata: Vec::new(),
        }
    }

    pub fn with_metadata(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.push((key.into(), value.into()));
        self
    }

    pub fn validate(&self) -> Result<(), ImageError> {
        let mut seen = std::collections::HashSet::new();
        for (k, _) in &self.metadata {
            if !seen.insert(k.as_str()) {
                return Err(ImageError::Metadata(format!("duplicate key {k:?}")));
            }
            if k == COLOR_SPACE_KEY {
                return Err(ImageError::Metadata(format!("key {k:?} is reserved")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageFrame {
    width: u32,
    height: u32,
    data: Vec<u16>,
    pub format: FormatSpec,
}

impl ImageFrame {
    pub fn new(width: u32, height: u32, format: FormatSpec) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::InvalidSize(width, height));
        }
        Ok(Self {
            width,
            height,
            data: vec![0; width as usize * height as usize * CHANNELS],
            format,
        })
    }

    pub fn from_samples(
        width: u32,
        height: u32,
        data: Vec<u16>,
        format: FormatSpec,
    ) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::InvalidSize(width, height));
        }
        let expected = width as usize * height as usize * CHANNELS;
        if data.len() != expected {
            return Err(ImageError::BufferLength {
                got: data.len(),
                expected,
            });
        }
        Ok(Self {
            width,
            height,
            data,
            format,
        })
    }

    /// Frame filled with one color.
    pub fn filled(width: u32, height: u32, rgb: [u16; 3], format: FormatSpec) -> Result<Self, ImageError> {
        let mut f = Self::new(width, height, format)?;
        for px in f.data.chunks_exact_mut(CHANNELS) {
            px.copy_from_slice(&rgb);
        }
        Ok(f)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn size(&self) -> Option<FrameSize> {
        FrameSize::new(self.width, self.height).ok()
    }

    pub fn samples(&self) -> &[u16] {
        &self.data
    }

    pub fn samples_mut(&mut self) -> &mut [u16] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * CHANNELS
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> [u16; 3] {
        let i = self.index(x, y);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u16; 3]) {
        let i = self.index(x, y);
        self.data[i..i + CHANNELS].copy_from_slice(&rgb);
    }

    pub fn max_value(&self) -> u16 {
        self.format.bit_depth.max_value()
    }

    /// Copies the half-open pixel rectangle `[x0, x0+w) x [y0, y0+h)`.
    pub fn crop(&self, x0: u32, y0: u32, w: u32, h: u32) -> Result<Self, ImageError> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(ImageError::InvalidSize(w, h));
        }
        let mut out = Self::new(w, h, self.format.clone())?;
        let row = w as usize * CHANNELS;
        for y in 0..h {
            let src = self.index(x0, y0 + y);
            let dst = out.index(0, y);
            out.data[dst..dst + row].copy_from_slice(&self.data[src..src + row]);
        }
        Ok(out)
    }

    /// Horizontal mirror image.
    pub fn mirrored(&self) -> Self {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.set_pixel(self.width - 1 - x, y, self.pixel(x, y));
            }
        }
        out
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, ImageError> {
        self.format.validate()?;
        let mut buf = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut buf, self.width, self.height);
            enc.set_color(png::ColorType::Rgb);
            enc.set_compression(png::Compression::Fast);
            enc.set_depth(match self.format.bit_depth {
                BitDepth::Eight => png::BitDepth::Eight,
                BitDepth::Sixteen => png::BitDepth::Sixteen,
            });
            enc.add_text_chunk(COLOR_SPACE_KEY.into(), self.format.color_space.as_str().into())?;
            for (k, v) in &self.format.metadata {
                enc.add_text_chunk(k.clone(), v.clone())?;
            }
            let mut w = enc.write_header()?;
            let max = self.max_value();
            let bytes: Vec<u8> = match self.format.bit_depth {
                BitDepth::Eight => self.data.iter().map(|&v| v.min(max) as u8).collect(),
                BitDepth::Sixteen => self.data.iter().flat_map(|v| v.to_be_bytes()).collect(),
            };
            w.write_image_data(&bytes)?;
            w.finish()?;
        }
        Ok(buf)
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self, ImageError> {
        let mut dec = png::Decoder::new(Cursor::new(bytes));
        dec.set_transformations(png::Transformations::IDENTITY);
        let mut reader = dec.read_info()?;
        let info = reader.info();
        if info.color_type != png::ColorType::Rgb {
            return Err(ImageError::Unsupported(format!("color type {:?}", info.color_type)));
        }
        let bit_depth = match info.bit_depth {
            png::BitDepth::Eight => BitDepth::Eight,
            png::BitDepth::Sixteen => BitDepth::Sixteen,
            other => return Err(ImageError::Unsupported(format!("bit depth {other:?}"))),
        };
        let (width, height) = (info.width, info.height);
        let mut color_space = ColorSpace::Srgb;
        let mut metadata = Vec::new();
        for chunk in &info.uncompressed_latin1_text {
            if chunk.keyword == COLOR_SPACE_KEY {
                color_space = ColorSpace::parse(&chunk.text).ok_or_else(|| {
                    ImageError::Metadata(format!("unknown color space {:?}", chunk.text))
                })?;
            } else {
                metadata.push((chunk.keyword.clone(), chunk.text.clone()));
            }
        }
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| ImageError::Unsupported("image too large".into()))?;
        let mut buf = vec![0u8; size];
        let out = reader.next_frame(&mut buf)?;
        buf.truncate(out.buffer_size());
        let data: Vec<u16> = match bit_depth {
            BitDepth::Eight => buf.iter().map(|&b| u16::from(b)).collect(),
            BitDepth::Sixteen => buf
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]))
                .collect(),
        };
        Self::from_samples(
            width,
            height,
            data,
            FormatSpec {
                bit_depth,
                color_space,
                metadata,
            },
        )
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        std::fs::write(path, self.encode_png()?)?;
        Ok(())
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self, ImageError> {
        Self::decode_png(&std::fs::read(path)?)
    }
}
