use crate::raster::RasterImage;
use crate::transforms::resample::to_u8;
use crate::{Error, Result};

/// Normalized 1-D Gaussian taps for offsets `-r..=r`, `r = ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f32>> {
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(Error::invalid(format!(
            "blur sigma must be positive, got {sigma}"
        )));
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let weights: Vec<f64> = (-radius..=radius)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| (w / sum) as f32).collect())
}

/// Separable Gaussian blur with clamp-to-edge borders, per channel.
pub fn blur(image: &RasterImage, sigma: f64) -> Result<RasterImage> {
    let kernel = gaussian_kernel(sigma)?;
    let radius = (kernel.len() / 2) as i64;
    let (w, h) = (image.width() as i64, image.height() as i64);
    let ch = image.channels() as usize;
    let src = image.pixels();

    let mut horizontal = vec![0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            let out = ((y * w + x) as usize) * ch;
            for (k, weight) in kernel.iter().enumerate() {
                let sx = (x + k as i64 - radius).clamp(0, w - 1);
                let i = ((y * w + sx) as usize) * ch;
                for c in 0..ch {
                    horizontal[out + c] += weight * f32::from(src[i + c]);
                }
            }
        }
    }

    let mut out = vec![0u8; src.len()];
    let mut acc = vec![0f32; ch];
    for y in 0..h {
        for x in 0..w {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for (k, weight) in kernel.iter().enumerate() {
                let sy = (y + k as i64 - radius).clamp(0, h - 1);
                let i = ((sy * w + x) as usize) * ch;
                for c in 0..ch {
                    acc[c] += weight * horizontal[i + c];
                }
            }
            let o = ((y * w + x) as usize) * ch;
            for c in 0..ch {
                out[o + c] = to_u8(f64::from(acc[c]));
            }
        }
    }
    RasterImage::from_raw(image.width(), image.height(), image.channels(), out)
}
