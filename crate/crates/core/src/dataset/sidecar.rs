//! On-disk sidecar schema: one JSON document per image, `<image-stem>.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::geometry::BoundingBox;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub img_filename: String,
    pub img_width: u32,
    pub img_height: u32,
    /// Meters per pixel.
    pub gsd: f64,
    pub timestamp: DateTime<Utc>,
    pub bounding_boxes: Vec<SidecarBox>,
    #[serde(default)]
    pub features: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarBox {
    pub category: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

impl Sidecar {
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    /// Resolves `img_filename` against the directory holding the sidecar.
    pub fn image_path(&self, sidecar_dir: &Path) -> PathBuf {
        let p = Path::new(&self.img_filename);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            sidecar_dir.join(p)
        }
    }
}

/// `img_filename` value for an image written next to a sidecar in `dir`:
/// the bare file name when the image lives in `dir`, else the full path.
pub fn relative_image_name(image_path: &Path, dir: &Path) -> String {
    match (image_path.parent(), image_path.file_name()) {
        (Some(parent), Some(name)) if same_dir(parent, dir) => name.to_string_lossy().into_owned(),
        _ => image_path.to_string_lossy().into_owned(),
    }
}

fn same_dir(a: &Path, b: &Path) -> bool {
    if a == b {
        return true;
    }
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    }
}
