//! Dataset ingest and summary statistics.
//!
//! A dataset directory holds image files (PNG or JPEG) plus one sidecar JSON
//! document per image (see [`Sidecar`]). [`ingest`] validates every sidecar
//! and skips, with a report entry, anything malformed; one corrupt file must
//! not abort a large ingest.

mod buckets;
mod sidecar;
mod stats;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use buckets::{
    bucket_dims, bucket_distance, bucket_resolutions, nearest_bucket, round_to_multiple_of_8,
    Bucketing, IndexBucketing, Resolution,
};
pub use sidecar::{relative_image_name, Sidecar, SidecarBox};
pub use stats::{compute_stats, median_lower, DatasetStats, GsdHistogram, GSD_BUCKET_WIDTH};

use crate::geometry::BoundingBox;
use crate::{Error, Result};

/// Reserved category for regions containing no valid object.
pub const FALSE_DETECTION: &str = "false_detection";

/// Category ids live in `0..MAX_CATEGORIES`.
pub const MAX_CATEGORIES: usize = 63;

/// Metadata vectors stay below this many entries.
pub const MAX_FEATURES: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub u16);

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// A category. Ordering follows the id.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CategoryLabel {
    pub id: ClassId,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetadata {
    /// Ground sample distance, meters per pixel.
    pub gsd: f64,
    pub timestamp: DateTime<Utc>,
    pub features: BTreeMap<String, f64>,
}

impl ImageMetadata {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.gsd.is_finite() && self.gsd > 0.0) {
            return Err(format!("gsd must be > 0 (got {})", self.gsd));
        }
        if self.features.len() >= MAX_FEATURES {
            return Err(format!(
                "features must have fewer than {MAX_FEATURES} entries (got {})",
                self.features.len()
            ));
        }
        if let Some((k, v)) = self.features.iter().find(|(_, v)| !v.is_finite()) {
            return Err(format!("feature `{k}` is not finite ({v})"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledBox {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub label: CategoryLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    /// Sidecar file stem.
    pub id: String,
    pub image_path: PathBuf,
    pub image_width: u32,
    pub image_height: u32,
    pub boxes: Vec<LabeledBox>,
    pub metadata: ImageMetadata,
}

impl ImageRecord {
    pub fn validate(&self) -> std::result::Result<(), String> {
        self.metadata.validate()?;
        if self.image_width == 0 || self.image_height == 0 {
            return Err("image dimensions must be at least 1x1".into());
        }
        if self.boxes.is_empty() {
            return Err("record has no bounding boxes".into());
        }
        for b in &self.boxes {
            if !b.bbox.fits_within(self.image_width, self.image_height) {
                return Err(format!(
                    "box {:?} exceeds image {}x{}",
                    <[u32; 4]>::from(b.bbox),
                    self.image_width,
                    self.image_height
                ));
            }
        }
        Ok(())
    }

    pub fn to_sidecar(&self, dir: &Path) -> Sidecar {
        Sidecar {
            img_filename: relative_image_name(&self.image_path, dir),
            img_width: self.image_width,
            img_height: self.image_height,
            gsd: self.metadata.gsd,
            timestamp: self.metadata.timestamp,
            bounding_boxes: self
                .boxes
                .iter()
                .map(|b| SidecarBox {
                    category: b.label.name.clone(),
                    bbox: b.bbox,
                })
                .collect(),
            features: self.metadata.features.clone(),
        }
    }
}

/// Immutable set of validated records plus per-class box counts.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetIndex {
    records: Vec<ImageRecord>,
    class_counts: BTreeMap<CategoryLabel, usize>,
}

impl DatasetIndex {
    pub fn from_records(records: Vec<ImageRecord>) -> Self {
        let mut class_counts = BTreeMap::new();
        for b in records.iter().flat_map(|r| &r.boxes) {
            *class_counts.entry(b.label.clone()).or_insert(0) += 1;
        }
        Self {
            records,
            class_counts,
        }
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn class_counts(&self) -> &BTreeMap<CategoryLabel, usize> {
        &self.class_counts
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn total_boxes(&self) -> usize {
        self.class_counts.values().sum()
    }

    pub fn labels(&self) -> impl Iterator<Item = &CategoryLabel> {
        self.class_counts.keys()
    }

    pub fn label_by_name(&self, name: &str) -> Option<&CategoryLabel> {
        self.class_counts.keys().find(|l| l.name == name)
    }

    /// Writes one sidecar per record into `dir`. Images are not copied.
    pub fn write_sidecars(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for record in &self.records {
            record
                .to_sidecar(dir)
                .write(&dir.join(format!("{}.json", record.id)))?;
        }
        Ok(())
    }
}

/// One skipped input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestWarning {
    pub file: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub warnings: Vec<IngestWarning>,
}

impl IngestReport {
    /// One JSON object per skipped record.
    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        for w in &self.warnings {
            serde_json::to_writer(&mut out, w)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub index: DatasetIndex,
    pub report: IngestReport,
}

struct Parsed {
    id: String,
    sidecar_path: PathBuf,
    image_path: PathBuf,
    sidecar: Sidecar,
}

/// Reads every `*.json` sidecar directly under `root`, in file-name order.
pub fn ingest(root: &Path) -> Result<Ingested> {
    if !root.is_dir() {
        return Err(Error::MissingDirectory(root.to_path_buf()));
    }
    let mut sidecars: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    sidecars.sort();

    let parsed: Vec<std::result::Result<Parsed, IngestWarning>> =
        sidecars.par_iter().map(|p| parse_one(root, p)).collect();

    let mut report = IngestReport::default();
    let mut ok = Vec::new();
    for item in parsed {
        match item {
            Ok(p) => ok.push(p),
            Err(w) => report.warnings.push(w),
        }
    }

    // Data-defined label set: ids follow sorted category names.
    let names: BTreeSet<&str> = ok
        .iter()
        .flat_map(|p| p.sidecar.bounding_boxes.iter().map(|b| b.category.as_str()))
        .collect();
    let labels: BTreeMap<String, CategoryLabel> = names
        .into_iter()
        .take(MAX_CATEGORIES)
        .enumerate()
        .map(|(i, name)| {
            (
                name.to_string(),
                CategoryLabel {
                    id: ClassId(i as u16),
                    name: name.to_string(),
                },
            )
        })
        .collect();

    let mut records = Vec::with_capacity(ok.len());
    'records: for p in ok {
        let mut boxes = Vec::with_capacity(p.sidecar.bounding_boxes.len());
        for b in &p.sidecar.bounding_boxes {
            let Some(label) = labels.get(&b.category) else {
                report.warnings.push(IngestWarning {
                    file: p.sidecar_path.clone(),
                    reason: format!(
                        "category `{}` exceeds the {MAX_CATEGORIES}-category limit",
                        b.category
                    ),
                });
                continue 'records;
            };
            boxes.push(LabeledBox {
                bbox: b.bbox,
                label: label.clone(),
            });
        }
        let s = p.sidecar;
        records.push(ImageRecord {
            id: p.id,
            image_path: p.image_path,
            image_width: s.img_width,
            image_height: s.img_height,
            boxes,
            metadata: ImageMetadata {
                gsd: s.gsd,
                timestamp: s.timestamp,
                features: s.features,
            },
        });
    }

    for w in &report.warnings {
        log::warn!("skipped {}: {}", w.file.display(), w.reason);
    }
    Ok(Ingested {
        index: DatasetIndex::from_records(records),
        report,
    })
}

fn parse_one(root: &Path, path: &Path) -> std::result::Result<Parsed, IngestWarning> {
    let warn = |reason: String| IngestWarning {
        file: path.to_path_buf(),
        reason,
    };
    let sidecar = Sidecar::read(path).map_err(|e| warn(e.to_string()))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let image_path = sidecar.image_path(root);

    let meta = ImageMetadata {
        gsd: sidecar.gsd,
        timestamp: sidecar.timestamp,
        features: sidecar.features.clone(),
    };
    meta.validate().map_err(warn)?;
    if sidecar.img_width == 0 || sidecar.img_height == 0 {
        return Err(warn("img_width and img_height must be >= 1".into()));
    }
    if sidecar.bounding_boxes.is_empty() {
        return Err(warn("bounding_boxes is empty".into()));
    }
    for b in &sidecar.bounding_boxes {
        if !b.bbox.fits_within(sidecar.img_width, sidecar.img_height) {
            return Err(warn(format!(
                "box {:?} exceeds image {}x{}",
                <[u32; 4]>::from(b.bbox),
                sidecar.img_width,
                sidecar.img_height
            )));
        }
    }
    let (w, h) = image::image_dimensions(&image_path)
        .map_err(|e| warn(format!("unreadable image {}: {e}", image_path.display())))?;
    if (w, h) != (sidecar.img_width, sidecar.img_height) {
        return Err(warn(format!(
            "image {} is {w}x{h} but sidecar says {}x{}",
            image_path.display(),
            sidecar.img_width,
            sidecar.img_height
        )));
    }
    Ok(Parsed {
        id,
        sidecar_path: path.to_path_buf(),
        image_path,
        sidecar,
    })
}

/// Serializes a `BTreeMap<CategoryLabel, V>` as `[{"id", "name", "value"}]`.
pub(crate) mod label_map {
    use std::collections::BTreeMap;

    use serde::ser::SerializeSeq;
    use serde::{Serialize, Serializer};

    use super::CategoryLabel;

    #[derive(Serialize)]
    struct Entry<'a, V> {
        id: u16,
        name: &'a str,
        value: &'a V,
    }

    pub fn serialize<S: Serializer, V: Serialize>(
        map: &BTreeMap<CategoryLabel, V>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(map.len()))?;
        for (k, v) in map {
            seq.serialize_element(&Entry {
                id: k.id.0,
                name: &k.name,
                value: v,
            })?;
        }
        seq.end()
    }
}
