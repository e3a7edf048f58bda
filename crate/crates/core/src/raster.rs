//! 8-bit raster images and PNG/JPEG I/O.

use std::path::Path;

use image::{DynamicImage, ImageBuffer};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Decoded 8-bit raster, row-major, channels interleaved.
#[derive(Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    channels: u8,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for RasterImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RasterImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

impl RasterImage {
    /// Zero-filled image.
    pub fn new(width: u32, height: u32, channels: u8) -> Result<Self> {
        Self::filled(width, height, channels, 0)
    }

    pub fn filled(width: u32, height: u32, channels: u8, value: u8) -> Result<Self> {
        check_dims(width, height, channels)?;
        let len = width as usize * height as usize * channels as usize;
        Ok(Self {
            width,
            height,
            channels,
            pixels: vec![value; len],
        })
    }

    pub fn from_raw(width: u32, height: u32, channels: u8, pixels: Vec<u8>) -> Result<Self> {
        check_dims(width, height, channels)?;
        let expected = width as usize * height as usize * channels as usize;
        if pixels.len() != expected {
            return Err(Error::invalid(format!(
                "pixel buffer has {} samples, expected {width}x{height}x{channels} = {expected}",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    /// Builds an image by evaluating `f(x, y, channel)` for every sample.
    pub fn from_fn(
        width: u32,
        height: u32,
        channels: u8,
        mut f: impl FnMut(u32, u32, u8) -> u8,
    ) -> Result<Self> {
        check_dims(width, height, channels)?;
        let mut pixels = Vec::with_capacity(width as usize * height as usize * channels as usize);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    pixels.push(f(x, y, c));
                }
            }
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub(crate) fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * self.channels as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32, channel: u8) -> u8 {
        self.pixels[self.offset(x, y) + channel as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, channel: u8, value: u8) {
        let i = self.offset(x, y) + channel as usize;
        self.pixels[i] = value;
    }

    /// All channels of one pixel.
    pub fn pixel(&self, x: u32, y: u32) -> &[u8] {
        let i = self.offset(x, y);
        &self.pixels[i..i + self.channels as usize]
    }

    /// SHA-256 over `width (u32 LE) | height (u32 LE) | channels (u8) | samples`.
    ///
    /// Hashing decoded samples rather than encoded bytes keeps digests stable
    /// across PNG encoders.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.width.to_le_bytes());
        hasher.update(self.height.to_le_bytes());
        hasher.update([self.channels]);
        hasher.update(&self.pixels);
        hex::encode(hasher.finalize())
    }

    /// Largest absolute per-sample difference, or `None` if shapes differ.
    pub fn max_abs_diff(&self, other: &RasterImage) -> Option<u8> {
        if self.dims() != other.dims() || self.channels != other.channels {
            return None;
        }
        Some(
            self.pixels
                .iter()
                .zip(&other.pixels)
                .map(|(a, b)| a.abs_diff(*b))
                .max()
                .unwrap_or(0),
        )
    }

    /// Decodes a PNG or JPEG file. Grey images stay single-channel, images
    /// with alpha become RGBA, everything else RGB.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let decoded = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_dynamic(decoded))
    }

    /// Decodes an in-memory PNG or JPEG buffer.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let decoded = image::load_from_memory(bytes).map_err(|source| Error::Image {
            path: "<memory>".into(),
            source,
        })?;
        Ok(Self::from_dynamic(decoded))
    }

    fn from_dynamic(decoded: DynamicImage) -> Self {
        let (channels, width, height, pixels) = match decoded {
            DynamicImage::ImageLuma8(img) => (1, img.width(), img.height(), img.into_raw()),
            img if img.color().has_alpha() => {
                let rgba = img.into_rgba8();
                (4, rgba.width(), rgba.height(), rgba.into_raw())
            }
            img => {
                let rgb = img.into_rgb8();
                (3, rgb.width(), rgb.height(), rgb.into_raw())
            }
        };
        Self {
            width,
            height,
            channels,
            pixels,
        }
    }

    fn to_dynamic(&self) -> Result<DynamicImage> {
        let (w, h, buf) = (self.width, self.height, self.pixels.clone());
        let bad = || Error::invalid("pixel buffer does not match dimensions");
        Ok(match self.channels {
            1 => DynamicImage::ImageLuma8(ImageBuffer::from_raw(w, h, buf).ok_or_else(bad)?),
            2 => DynamicImage::ImageLumaA8(ImageBuffer::from_raw(w, h, buf).ok_or_else(bad)?),
            3 => DynamicImage::ImageRgb8(ImageBuffer::from_raw(w, h, buf).ok_or_else(bad)?),
            4 => DynamicImage::ImageRgba8(ImageBuffer::from_raw(w, h, buf).ok_or_else(bad)?),
            c => return Err(Error::invalid(format!("cannot encode {c}-channel image"))),
        })
    }

    /// Writes a PNG. The format is fixed regardless of the file extension.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.to_dynamic()?
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })
    }

    /// Encodes to an in-memory PNG.
    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = std::io::Cursor::new(Vec::new());
        self.to_dynamic()?
            .write_to(&mut out, image::ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: "<memory>".into(),
                source,
            })?;
        Ok(out.into_inner())
    }
}

fn check_dims(width: u32, height: u32, channels: u8) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::invalid(format!(
            "image dimensions must be at least 1x1, got {width}x{height}"
        )));
    }
    if channels == 0 {
        return Err(Error::invalid("image must have at least one channel"));
    }
    Ok(())
}
