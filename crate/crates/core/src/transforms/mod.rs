//! Deterministic raster transforms.
//!
//! Every transform is a pure function of its input image and parameters
//! (noise included: it draws from a per-call seed), keeps the channel count,
//! and produces samples in `[0, 255]`. Interpolation is bilinear throughout,
//! with half-pixel-centre alignment.

mod blur;
mod resample;

use serde::{Deserialize, Serialize};

pub use blur::{blur, gaussian_kernel};
pub use resample::{normalize_gsd, normalized_dims, rescale, zoom, MAX_ZOOM, MIN_ZOOM};

use crate::raster::RasterImage;
use crate::rng::SplitMix64;
use crate::{Error, Result};

/// Rotation angles the augmentation set supports, in degrees clockwise.
pub const ROTATION_ANGLES: [u32; 5] = [15, 30, 45, 90, 180];

/// Largest accepted channel-noise amplitude.
pub const MAX_NOISE_AMPLITUDE: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipAxis {
    /// Mirror left-right (reverses columns).
    EastWest,
    /// Mirror top-bottom (reverses rows).
    NorthSouth,
}

/// Declarative description of one transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum TransformSpec {
    Rotate { degrees: u32 },
    Flip { axis: FlipAxis },
    Zoom { factor: f64 },
    ChannelNoise { amplitude: u32, seed: u64 },
    Blur { sigma: f64 },
    Rescale { width: u32, height: u32 },
}

impl TransformSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TransformSpec::Rotate { degrees } if !ROTATION_ANGLES.contains(&degrees) => Err(
                Error::invalid(format!("unsupported rotation angle {degrees}")),
            ),
            TransformSpec::Zoom { factor }
                if !(MIN_ZOOM - 1e-9..=MAX_ZOOM + 1e-9).contains(&factor) =>
            {
                Err(Error::invalid(format!("zoom factor {factor} out of range")))
            }
            TransformSpec::ChannelNoise { amplitude, .. } if amplitude > MAX_NOISE_AMPLITUDE => {
                Err(Error::invalid(format!(
                    "noise amplitude {amplitude} > {MAX_NOISE_AMPLITUDE}"
                )))
            }
            TransformSpec::Blur { sigma } if !(sigma.is_finite() && sigma > 0.0) => Err(
                Error::invalid(format!("blur sigma must be positive, got {sigma}")),
            ),
            TransformSpec::Rescale { width, height } if width == 0 || height == 0 => {
                Err(Error::invalid("rescale target must be at least 1x1"))
            }
            _ => Ok(()),
        }
    }

    pub fn apply(&self, image: &RasterImage) -> Result<RasterImage> {
        match *self {
            TransformSpec::Rotate { degrees } => rotate(image, degrees),
            TransformSpec::Flip { axis } => Ok(flip(image, axis)),
            TransformSpec::Zoom { factor } => zoom(image, factor),
            TransformSpec::ChannelNoise { amplitude, seed } => {
                channel_noise(image, amplitude, seed)
            }
            TransformSpec::Blur { sigma } => blur(image, sigma),
            TransformSpec::Rescale { width, height } => rescale(image, width, height),
        }
    }
}

/// Applies `steps` left to right.
pub fn apply_pipeline(image: &RasterImage, steps: &[TransformSpec]) -> Result<RasterImage> {
    let mut current = image.clone();
    for step in steps {
        current = step.apply(&current)?;
    }
    Ok(current)
}

pub fn flip(image: &RasterImage, axis: FlipAxis) -> RasterImage {
    let (w, h) = image.dims();
    let ch = image.channels() as usize;
    let mut out = image.clone();
    match axis {
        FlipAxis::EastWest => {
            for y in 0..h {
                for x in 0..w {
                    let src = image.offset(w - 1 - x, y);
                    let dst = out.offset(x, y);
                    out.pixels_mut()[dst..dst + ch].copy_from_slice(&image.pixels()[src..src + ch]);
                }
            }
        }
        FlipAxis::NorthSouth => {
            let row = w as usize * ch;
            for y in 0..h {
                let src = image.offset(0, h - 1 - y);
                let dst = out.offset(0, y);
                out.pixels_mut()[dst..dst + row].copy_from_slice(&image.pixels()[src..src + row]);
            }
        }
    }
    out
}

/// Rotates clockwise by one of [`ROTATION_ANGLES`].
///
/// 90 and 180 are exact permutations (90 swaps the dimensions). Other angles
/// rotate about the centre onto a same-sized canvas with bilinear sampling;
/// samples falling outside the source are 0.
pub fn rotate(image: &RasterImage, degrees: u32) -> Result<RasterImage> {
    match degrees {
        90 => Ok(rotate90(image)),
        180 => Ok(rotate180(image)),
        15 | 30 | 45 => Ok(rotate_bilinear(image, f64::from(degrees))),
        d => Err(Error::invalid(format!(
            "unsupported rotation angle {d}; expected one of {ROTATION_ANGLES:?}"
        ))),
    }
}

fn rotate90(image: &RasterImage) -> RasterImage {
    let (w, h) = image.dims();
    let ch = image.channels() as usize;
    let mut out = RasterImage::new(h, w, image.channels()).expect("non-empty source");
    // out(x', y') = in(y', h - 1 - x')
    for yo in 0..w {
        for xo in 0..h {
            let src = image.offset(yo, h - 1 - xo);
            let dst = out.offset(xo, yo);
            out.pixels_mut()[dst..dst + ch].copy_from_slice(&image.pixels()[src..src + ch]);
        }
    }
    out
}

fn rotate180(image: &RasterImage) -> RasterImage {
    let ch = image.channels() as usize;
    let mut pixels = Vec::with_capacity(image.pixels().len());
    for px in image.pixels().chunks_exact(ch).rev() {
        pixels.extend_from_slice(px);
    }
    RasterImage::from_raw(image.width(), image.height(), image.channels(), pixels)
        .expect("same shape")
}

fn rotate_bilinear(image: &RasterImage, degrees: f64) -> RasterImage {
    let (w, h) = image.dims();
    let ch = image.channels();
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cx, cy) = (f64::from(w) / 2.0, f64::from(h) / 2.0);
    let (max_x, max_y) = (f64::from(w - 1), f64::from(h - 1));
    let mut out = RasterImage::new(w, h, ch).expect("non-empty source");
    for y in 0..h {
        for x in 0..w {
            let dx = f64::from(x) + 0.5 - cx;
            let dy = f64::from(y) + 0.5 - cy;
            // Inverse of the clockwise rotation, in pixel-index coordinates.
            let sx = cos * dx + sin * dy + cx - 0.5;
            let sy = -sin * dx + cos * dy + cy - 0.5;
            if sx < -0.5 || sy < -0.5 || sx > max_x + 0.5 || sy > max_y + 0.5 {
                continue;
            }
            let sx = sx.clamp(0.0, max_x);
            let sy = sy.clamp(0.0, max_y);
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as u32, y0 as u32);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            for c in 0..ch {
                let p00 = f64::from(image.get(x0, y0, c));
                let p10 = f64::from(image.get(x1, y0, c));
                let p01 = f64::from(image.get(x0, y1, c));
                let p11 = f64::from(image.get(x1, y1, c));
                let top = p00 + (p10 - p00) * fx;
                let bottom = p01 + (p11 - p01) * fx;
                out.set(x, y, c, resample::to_u8(top + (bottom - top) * fy));
            }
        }
    }
    out
}

/// Adds one uniform offset in `[-amplitude, amplitude]` per channel.
///
/// Offsets are drawn channel-major from `SplitMix64::new(seed)` via
/// [`SplitMix64::uniform_i64`], then added to every sample of that channel
/// and clamped to `[0, 255]`.
pub fn channel_noise(image: &RasterImage, amplitude: u32, seed: u64) -> Result<RasterImage> {
    if amplitude > MAX_NOISE_AMPLITUDE {
        return Err(Error::invalid(format!(
            "noise amplitude {amplitude} exceeds {MAX_NOISE_AMPLITUDE}"
        )));
    }
    if amplitude == 0 {
        return Ok(image.clone());
    }
    let offsets = channel_offsets(image.channels(), amplitude, seed);
    let ch = image.channels() as usize;
    let mut out = image.clone();
    for (i, v) in out.pixels_mut().iter_mut().enumerate() {
        *v = (i64::from(*v) + offsets[i % ch]).clamp(0, 255) as u8;
    }
    Ok(out)
}

/// The per-channel offsets [`channel_noise`] applies.
pub fn channel_offsets(channels: u8, amplitude: u32, seed: u64) -> Vec<i64> {
    let mut rng = SplitMix64::new(seed);
    let a = i64::from(amplitude);
    (0..channels).map(|_| rng.uniform_i64(-a, a)).collect()
}
