use crate::geometry::{self, gsd_scale_factor, BoundingBox};
use crate::raster::RasterImage;
use crate::{Error, Result};

/// Zoom factors accepted by [`zoom`]: `[1/1.5, 1.5]`.
pub const MIN_ZOOM: f64 = 1.0 / 1.5;
pub const MAX_ZOOM: f64 = 1.5;
const ZOOM_EPS: f64 = 1e-9;

#[inline]
pub(crate) fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Source taps for one output coordinate under half-pixel-centre alignment.
#[derive(Clone, Copy)]
struct Tap {
    lo: u32,
    hi: u32,
    frac: f64,
}

fn taps(src_len: u32, dst_len: u32) -> Vec<Tap> {
    let scale = f64::from(src_len) / f64::from(dst_len);
    let max = f64::from(src_len - 1);
    (0..dst_len)
        .map(|d| {
            let s = ((f64::from(d) + 0.5) * scale - 0.5).clamp(0.0, max);
            let lo = s.floor();
            Tap {
                lo: lo as u32,
                hi: (lo as u32 + 1).min(src_len - 1),
                frac: s - lo,
            }
        })
        .collect()
}

/// Bilinear resample to exactly `width` x `height`; aspect ratio is not kept.
pub fn rescale(image: &RasterImage, width: u32, height: u32) -> Result<RasterImage> {
    if width == 0 || height == 0 {
        return Err(Error::invalid(format!(
            "rescale target must be at least 1x1, got {width}x{height}"
        )));
    }
    if image.dims() == (width, height) {
        return Ok(image.clone());
    }
    let xs = taps(image.width(), width);
    let ys = taps(image.height(), height);
    let ch = image.channels();
    let mut out = RasterImage::new(width, height, ch)?;
    for (y, ty) in ys.iter().enumerate() {
        for (x, tx) in xs.iter().enumerate() {
            for c in 0..ch {
                let p00 = f64::from(image.get(tx.lo, ty.lo, c));
                let p10 = f64::from(image.get(tx.hi, ty.lo, c));
                let p01 = f64::from(image.get(tx.lo, ty.hi, c));
                let p11 = f64::from(image.get(tx.hi, ty.hi, c));
                let top = p00 + (p10 - p00) * tx.frac;
                let bottom = p01 + (p11 - p01) * tx.frac;
                out.set(x as u32, y as u32, c, to_u8(top + (bottom - top) * ty.frac));
            }
        }
    }
    Ok(out)
}

/// Zooms about the centre, keeping output dimensions equal to the input.
///
/// Factors above 1 centre-crop a `(w / f, h / f)` window and scale it up;
/// factors below 1 shrink the whole image onto a zero-filled canvas.
pub fn zoom(image: &RasterImage, factor: f64) -> Result<RasterImage> {
    if !(MIN_ZOOM - ZOOM_EPS..=MAX_ZOOM + ZOOM_EPS).contains(&factor) {
        return Err(Error::invalid(format!(
            "zoom factor {factor} outside [{MIN_ZOOM:.4}, {MAX_ZOOM}]"
        )));
    }
    zoom_unchecked(image, factor)
}

pub(crate) fn zoom_unchecked(image: &RasterImage, factor: f64) -> Result<RasterImage> {
    if !factor.is_finite() || factor <= 0.0 {
        return Err(Error::invalid(format!(
            "zoom factor must be positive, got {factor}"
        )));
    }
    let (w, h) = image.dims();
    if factor == 1.0 {
        return Ok(image.clone());
    }
    if factor > 1.0 {
        let cw = ((f64::from(w) / factor).round() as u32).clamp(1, w);
        let ch = ((f64::from(h) / factor).round() as u32).clamp(1, h);
        let window = BoundingBox::new((w - cw) / 2, (h - ch) / 2, cw, ch)?;
        return rescale(&geometry::crop(image, window)?, w, h);
    }
    let nw = ((f64::from(w) * factor).round() as u32).clamp(1, w);
    let nh = ((f64::from(h) * factor).round() as u32).clamp(1, h);
    let small = rescale(image, nw, nh)?;
    let mut canvas = RasterImage::new(w, h, image.channels())?;
    let (ox, oy) = ((w - nw) / 2, (h - nh) / 2);
    let row = nw as usize * image.channels() as usize;
    for y in 0..nh {
        let src = small.offset(0, y);
        let dst = canvas.offset(ox, oy + y);
        canvas.pixels_mut()[dst..dst + row].copy_from_slice(&small.pixels()[src..src + row]);
    }
    Ok(canvas)
}

/// Output dimensions after GSD normalization: `round(dim * gsd / target)`, at least 1.
pub fn normalized_dims(width: u32, height: u32, gsd: f64, target_gsd: f64) -> Result<(u32, u32)> {
    let factor = gsd_scale_factor(gsd, target_gsd)?;
    // Snapping 2v keeps exact halves (e.g. 5 * 0.3 / 1.0) rounding up.
    let scale = |d: u32| {
        (geometry::snap(2.0 * f64::from(d) * factor) / 2.0)
            .round()
            .max(1.0) as u32
    };
    Ok((scale(width), scale(height)))
}

/// Resamples so that each output pixel covers `target_gsd` meters.
pub fn normalize_gsd(image: &RasterImage, gsd: f64, target_gsd: f64) -> Result<RasterImage> {
    let (w, h) = normalized_dims(image.width(), image.height(), gsd, target_gsd)?;
    rescale(image, w, h)
}
