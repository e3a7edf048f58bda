#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{TimeZone, Utc};
use satpipe::dataset::{Sidecar, SidecarBox};
use satpipe::geometry::BoundingBox;
use satpipe::RasterImage;

/// Deterministic, non-constant RGB content.
pub fn pattern(width: u32, height: u32, salt: u32) -> RasterImage {
    RasterImage::from_fn(width, height, 3, |x, y, c| {
        let v =
            x.wrapping_mul(31) ^ y.wrapping_mul(17) ^ salt.wrapping_mul(101) ^ (u32::from(c) * 71);
        (v % 251) as u8
    })
    .unwrap()
}

pub fn sidecar(id: &str, width: u32, height: u32, gsd: f64, boxes: &[(&str, [u32; 4])]) -> Sidecar {
    Sidecar {
        img_filename: format!("{id}.png"),
        img_width: width,
        img_height: height,
        gsd,
        timestamp: Utc.with_ymd_and_hms(2017, 5, 4, 10, 30, 0).unwrap(),
        bounding_boxes: boxes
            .iter()
            .map(|(cat, b)| SidecarBox {
                category: cat.to_string(),
                bbox: BoundingBox::new(b[0], b[1], b[2], b[3]).unwrap(),
            })
            .collect(),
        features: BTreeMap::from([
            ("cloud_cover".to_string(), 0.25),
            ("sun_elevation".to_string(), 41.0),
        ]),
    }
}

/// Writes `<id>.png` and `<id>.json` into `dir`.
pub fn write_record(
    dir: &Path,
    id: &str,
    width: u32,
    height: u32,
    gsd: f64,
    boxes: &[(&str, [u32; 4])],
) {
    pattern(width, height, id.len() as u32 * 7 + width)
        .save_png(dir.join(format!("{id}.png")))
        .unwrap();
    sidecar(id, width, height, gsd, boxes)
        .write(&dir.join(format!("{id}.json")))
        .unwrap();
}
