//! Float RGB images, 8-bit PNG export and a lossless float image container.
//!
//! The float container ("FIM1") is little endian:
//! `b"FIM1"`, width `u32`, height `u32`, channels `u32`, then row-major `f32` samples.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

pub const FLOAT_IMAGE_MAGIC: &[u8; 4] = b"FIM1";

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("png codec: {0}")]
    Codec(#[from] image::ImageError),
    #[error("float image format error at byte {offset}: {reason}")]
    Format { offset: usize, reason: String },
    #[error("image shape mismatch: {0}")]
    Shape(String),
}

/// Row-major `H x W x 3` image with `f32` samples, nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, data: vec![0.0; width as usize * height as usize * 3] }
    }

    pub fn filled(width: u32, height: u32, rgb: [f32; 3]) -> Self {
        let mut img = Self::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn from_data(width: u32, height: u32, data: Vec<f32>) -> Result<Self, ImageError> {
        let expected = width as usize * height as usize * 3;
        if data.len() != expected {
            return Err(ImageError::Shape(format!(
                "{width}x{height} rgb needs {expected} samples, got {}",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    pub fn pixel(&self, x: u32, y: u32) -> [f32; 3] {
        let o = self.offset(x, y);
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [f32; 3]) {
        let o = self.offset(x, y);
        self.data[o..o + 3].copy_from_slice(&rgb);
    }

    pub fn same_shape(&self, other: &RgbImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let bytes = self.data.iter().map(|v| quantize(*v)).collect();
        image::RgbImage::from_raw(self.width, self.height, bytes).expect("buffer sized by construction")
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            data: img.as_raw().iter().map(|b| *b as f32 / 255.0).collect(),
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<(), ImageError> {
        self.to_rgb8().save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Self, ImageError> {
        Ok(Self::from_rgb8(&image::open(path)?.to_rgb8()))
    }

    /// Encodes the image as PNG bytes in memory.
    pub fn png_bytes(&self) -> Result<Vec<u8>, ImageError> {
        let mut out = std::io::Cursor::new(Vec::new());
        self.to_rgb8().write_to(&mut out, image::ImageFormat::Png)?;
        Ok(out.into_inner())
    }
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a multi-channel float image in the lossless "FIM1" container.
pub fn write_float_image<W: Write>(
    mut w: W,
    width: u32,
    height: u32,
    channels: u32,
    data: &[f32],
) -> Result<(), ImageError> {
    let expected = width as usize * height as usize * channels as usize;
    if data.len() != expected {
        return Err(ImageError::Shape(format!("expected {expected} samples, got {}", data.len())));
    }
    let mut buf = Vec::with_capacity(16 + data.len() * 4);
    buf.extend_from_slice(FLOAT_IMAGE_MAGIC);
    buf.extend_from_slice(&width.to_le_bytes());
    buf.extend_from_slice(&height.to_le_bytes());
    buf.extend_from_slice(&channels.to_le_bytes());
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Reads a "FIM1" container, returning `(width, height, channels, samples)`.
pub fn read_float_image<R: Read>(mut r: R) -> Result<(u32, u32, u32, Vec<f32>), ImageError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 16 {
        return Err(ImageError::Format { offset: bytes.len(), reason: "truncated header".into() });
    }
    if &bytes[0..4] != FLOAT_IMAGE_MAGIC {
        return Err(ImageError::Format { offset: 0, reason: "bad magic".into() });
    }
    let field = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let (width, height, channels) = (field(4), field(8), field(12));
    let count = width as usize * height as usize * channels as usize;
    let end = 16 + count * 4;
    if bytes.len() < end {
        return Err(ImageError::Format { offset: bytes.len(), reason: format!("truncated payload, need {end} bytes") });
    }
    if bytes.len() > end {
        return Err(ImageError::Format { offset: end, reason: "trailing bytes".into() });
    }
    let data = bytes[16..end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((width, height, channels, data))
}
