use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::{
    relative_image_name, DatasetIndex, ImageRecord, Sidecar, SidecarBox, FALSE_DETECTION,
};
use crate::geometry::BoundingBox;
use crate::rng::SplitMix64;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FalseDetectionConfig {
    /// Largest allowed `area(crop ∩ box) / area(crop)` over labeled boxes.
    pub max_overlap_fraction: f64,
    pub crops_per_image: usize,
    pub seed: u64,
    pub max_attempts_per_crop: usize,
}

impl Default for FalseDetectionConfig {
    fn default() -> Self {
        Self {
            max_overlap_fraction: 0.1,
            crops_per_image: 1,
            seed: 0,
            max_attempts_per_crop: 50,
        }
    }
}

impl FalseDetectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.max_overlap_fraction) {
            return Err(Error::invalid(format!(
                "max_overlap_fraction must lie in [0, 1], got {}",
                self.max_overlap_fraction
            )));
        }
        if self.max_attempts_per_crop == 0 {
            return Err(Error::invalid("max_attempts_per_crop must be >= 1"));
        }
        Ok(())
    }
}

/// Empirical `(width, height)` distribution of labeled boxes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxSizeDistribution {
    sizes: Vec<(u32, u32)>,
}

impl BoxSizeDistribution {
    pub fn new(sizes: Vec<(u32, u32)>) -> Result<Self> {
        if sizes.is_empty() || sizes.iter().any(|&(w, h)| w == 0 || h == 0) {
            return Err(Error::invalid(
                "box size distribution needs non-empty sizes",
            ));
        }
        Ok(Self { sizes })
    }

    /// Sizes of every box not already labeled as a false detection.
    pub fn from_index(index: &DatasetIndex) -> Result<Self> {
        Self::new(
            index
                .records()
                .iter()
                .flat_map(|r| &r.boxes)
                .filter(|b| b.label.name != FALSE_DETECTION)
                .map(|b| (b.bbox.width(), b.bbox.height()))
                .collect(),
        )
    }

    pub fn sizes(&self) -> &[(u32, u32)] {
        &self.sizes
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FalseDetection {
    pub record_id: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FalseDetections {
    pub crops: Vec<FalseDetection>,
    pub warnings: Vec<String>,
}

impl FalseDetections {
    /// One sidecar document per crop, labeled [`FALSE_DETECTION`]. Image
    /// paths are written relative to `dir` where possible.
    pub fn write_jsonl(
        &self,
        index: &DatasetIndex,
        dir: &std::path::Path,
        mut out: impl Write,
    ) -> Result<()> {
        for crop in &self.crops {
            let record = index
                .records()
                .iter()
                .find(|r| r.id == crop.record_id)
                .ok_or_else(|| Error::invalid(format!("unknown record `{}`", crop.record_id)))?;
            let sidecar = Sidecar {
                img_filename: relative_image_name(&record.image_path, dir),
                img_width: record.image_width,
                img_height: record.image_height,
                gsd: record.metadata.gsd,
                timestamp: record.metadata.timestamp,
                bounding_boxes: vec![SidecarBox {
                    category: FALSE_DETECTION.to_string(),
                    bbox: crop.bbox,
                }],
                features: record.metadata.features.clone(),
            };
            let line = serde_json::to_string(&sidecar).map_err(|source| Error::Json {
                path: dir.to_path_buf(),
                source,
            })?;
            writeln!(out, "{line}").map_err(|e| Error::io(dir, e))?;
        }
        Ok(())
    }
}

fn overlap_ok(crop: &BoundingBox, record: &ImageRecord, max_fraction: f64) -> bool {
    let area = crop.area() as f64;
    record
        .boxes
        .iter()
        .all(|b| crop.intersection_area(&b.bbox) as f64 / area <= max_fraction)
}

/// Samples background crops that stay clear of labeled boxes.
///
/// Records are visited in index order with a single generator, so the result
/// is a pure function of the index and config.
pub fn generate_false_detections(
    index: &DatasetIndex,
    sizes: &BoxSizeDistribution,
    cfg: &FalseDetectionConfig,
) -> Result<FalseDetections> {
    cfg.validate()?;
    if index.is_empty() {
        return Err(Error::NoRecords);
    }
    let mut rng = SplitMix64::new(cfg.seed);
    let mut out = FalseDetections::default();

    for record in index.records() {
        let fitting: Vec<(u32, u32)> = sizes
            .sizes()
            .iter()
            .copied()
            .filter(|&(w, h)| w <= record.image_width && h <= record.image_height)
            .collect();
        if fitting.is_empty() {
            out.warnings.push(format!(
                "{}: image {}x{} is smaller than every crop size",
                record.id, record.image_width, record.image_height
            ));
            continue;
        }
        for slot in 0..cfg.crops_per_image {
            let mut accepted = None;
            for _ in 0..cfg.max_attempts_per_crop {
                let (w, h) = fitting[rng.below(fitting.len() as u64) as usize];
                let x = rng.below(u64::from(record.image_width - w) + 1) as u32;
                let y = rng.below(u64::from(record.image_height - h) + 1) as u32;
                let crop = BoundingBox::new(x, y, w, h)?;
                if overlap_ok(&crop, record, cfg.max_overlap_fraction) {
                    accepted = Some(crop);
                    break;
                }
            }
            match accepted {
                Some(bbox) => out.crops.push(FalseDetection {
                    record_id: record.id.clone(),
                    bbox,
                }),
                None => out.warnings.push(format!(
                    "{}: crop {slot} found no position within {} attempts",
                    record.id, cfg.max_attempts_per_crop
                )),
            }
        }
    }
    for w in &out.warnings {
        log::warn!("{w}");
    }
    Ok(out)
}
