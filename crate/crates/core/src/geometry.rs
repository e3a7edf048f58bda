//! Bounding-box arithmetic: context expansion, cropping, GSD scale factors.

use serde::{Deserialize, Serialize};

use crate::raster::RasterImage;
use crate::{Error, Result};

/// Axis-aligned box in integer pixel coordinates. Serialized as `[x, y, w, h]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "[u32; 4]", into = "[u32; 4]")]
pub struct BoundingBox {
    x: u32,
    y: u32,
    width: u32,
    height: u32,
}

impl BoundingBox {
    pub fn new(x: u32, y: u32, width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "bounding box must be at least 1x1, got {width}x{height}"
            )));
        }
        if x.checked_add(width).is_none() || y.checked_add(height).is_none() {
            return Err(Error::invalid("bounding box extent overflows"));
        }
        Ok(Self {
            x,
            y,
            width,
            height,
        })
    }

    /// Box covering a whole `width` x `height` image.
    pub fn full(width: u32, height: u32) -> Result<Self> {
        Self::new(0, 0, width, height)
    }

    pub fn x(&self) -> u32 {
        self.x
    }

    pub fn y(&self) -> u32 {
        self.y
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Exclusive right edge.
    pub fn right(&self) -> u32 {
        self.x + self.width
    }

    /// Exclusive bottom edge.
    pub fn bottom(&self) -> u32 {
        self.y + self.height
    }

    pub fn area(&self) -> u64 {
        u64::from(self.width) * u64::from(self.height)
    }

    pub fn fits_within(&self, image_width: u32, image_height: u32) -> bool {
        self.right() <= image_width && self.bottom() <= image_height
    }

    pub fn contains(&self, other: &BoundingBox) -> bool {
        self.x <= other.x
            && self.y <= other.y
            && other.right() <= self.right()
            && other.bottom() <= self.bottom()
    }

    pub fn intersection(&self, other: &BoundingBox) -> Option<BoundingBox> {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        (x0 < x1 && y0 < y1).then(|| BoundingBox {
            x: x0,
            y: y0,
            width: x1 - x0,
            height: y1 - y0,
        })
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> u64 {
        self.intersection(other).map_or(0, |b| b.area())
    }

    /// Shifts the origin by `(dx, dy)`.
    pub fn translate(&self, dx: u32, dy: u32) -> Result<BoundingBox> {
        BoundingBox::new(self.x + dx, self.y + dy, self.width, self.height)
    }
}

impl TryFrom<[u32; 4]> for BoundingBox {
    type Error = Error;

    fn try_from([x, y, w, h]: [u32; 4]) -> Result<Self> {
        BoundingBox::new(x, y, w, h)
    }
}

impl From<BoundingBox> for [u32; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x, b.y, b.width, b.height]
    }
}

/// The context ratio `C`; non-negative and finite.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ContextRatio(f64);

impl ContextRatio {
    pub const DEFAULT: ContextRatio = ContextRatio(1.5);

    pub fn new(c: f64) -> Result<Self> {
        if !c.is_finite() || c < 0.0 {
            return Err(Error::invalid(format!(
                "context ratio must be finite and >= 0, got {c}"
            )));
        }
        Ok(Self(c))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for ContextRatio {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl TryFrom<f64> for ContextRatio {
    type Error = Error;
    fn try_from(c: f64) -> Result<Self> {
        ContextRatio::new(c)
    }
}

impl From<ContextRatio> for f64 {
    fn from(c: ContextRatio) -> f64 {
        c.0
    }
}

/// Result of [`expand_context`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpandedBox {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    /// Requested padding per horizontal side, `C * AR / 2 * width`.
    pub requested_pad_x: f64,
    /// Requested padding per vertical side, `C * AR / 2 * height`.
    pub requested_pad_y: f64,
    /// Smallest whole-pixel gain over the left and right sides.
    pub applied_pad_x: u32,
    /// Smallest whole-pixel gain over the top and bottom sides.
    pub applied_pad_y: u32,
    pub clamped: bool,
}

// Relative tolerance for treating a float product as the integer it sits on.
const SNAP_EPS: f64 = 1e-12;

pub(crate) fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() <= SNAP_EPS * v.abs().max(1.0) {
        r
    } else {
        v
    }
}

/// Expands `bbox` by the context window `C * AR / 2` of its width and height
/// on every side, where `AR = image_width / image_height`.
///
/// The new origin is floored and the new far edge ceiled before clamping to
/// the image, so rounding never removes requested context.
pub fn expand_context(
    bbox: BoundingBox,
    image_width: u32,
    image_height: u32,
    ratio: ContextRatio,
) -> Result<ExpandedBox> {
    if image_width == 0 || image_height == 0 {
        return Err(Error::invalid("image dimensions must be at least 1x1"));
    }
    if !bbox.fits_within(image_width, image_height) {
        return Err(Error::BoxOutOfBounds(format!(
            "{:?} does not fit in {image_width}x{image_height}",
            <[u32; 4]>::from(bbox)
        )));
    }
    if ratio.value() == 0.0 {
        return Ok(ExpandedBox {
            bbox,
            requested_pad_x: 0.0,
            requested_pad_y: 0.0,
            applied_pad_x: 0,
            applied_pad_y: 0,
            clamped: false,
        });
    }

    let aspect = f64::from(image_width) / f64::from(image_height);
    let window = ratio.value() * aspect / 2.0;
    let pad_x = window * f64::from(bbox.width);
    let pad_y = window * f64::from(bbox.height);

    let left = snap(f64::from(bbox.x) - pad_x).floor();
    let top = snap(f64::from(bbox.y) - pad_y).floor();
    let right = snap(f64::from(bbox.right()) + pad_x).ceil();
    let bottom = snap(f64::from(bbox.bottom()) + pad_y).ceil();

    let clamped = left < 0.0
        || top < 0.0
        || right > f64::from(image_width)
        || bottom > f64::from(image_height);
    let x0 = left.max(0.0) as u32;
    let y0 = top.max(0.0) as u32;
    let x1 = right.min(f64::from(image_width)) as u32;
    let y1 = bottom.min(f64::from(image_height)) as u32;

    Ok(ExpandedBox {
        bbox: BoundingBox::new(x0, y0, x1 - x0, y1 - y0)?,
        requested_pad_x: pad_x,
        requested_pad_y: pad_y,
        applied_pad_x: (bbox.x - x0).min(x1 - bbox.right()),
        applied_pad_y: (bbox.y - y0).min(y1 - bbox.bottom()),
        clamped,
    })
}

/// Factor by which image dimensions must be multiplied so that each output
/// pixel covers `target_gsd` meters.
pub fn gsd_scale_factor(gsd: f64, target_gsd: f64) -> Result<f64> {
    for (name, v) in [("gsd", gsd), ("target gsd", target_gsd)] {
        if !v.is_finite() || v <= 0.0 {
            return Err(Error::invalid(format!("{name} must be positive, got {v}")));
        }
    }
    Ok(gsd / target_gsd)
}

/// Copies the pixels under `bbox` into a new image.
pub fn crop(image: &RasterImage, bbox: BoundingBox) -> Result<RasterImage> {
    if !bbox.fits_within(image.width(), image.height()) {
        return Err(Error::BoxOutOfBounds(format!(
            "{:?} does not fit in {}x{}",
            <[u32; 4]>::from(bbox),
            image.width(),
            image.height()
        )));
    }
    let ch = image.channels() as usize;
    let row_len = bbox.width() as usize * ch;
    let mut pixels = Vec::with_capacity(row_len * bbox.height() as usize);
    for y in bbox.y()..bbox.bottom() {
        let start = image.offset(bbox.x(), y);
        pixels.extend_from_slice(&image.pixels()[start..start + row_len]);
    }
    RasterImage::from_raw(bbox.width(), bbox.height(), image.channels(), pixels)
}
