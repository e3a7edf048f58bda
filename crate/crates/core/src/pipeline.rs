//! The composed preprocessing pipeline and its configuration.
//!
//! Every labeled box goes through the same four stages: expand to the
//! context window, crop, resample to the target GSD, then resize to either a
//! fixed target or the nearest resolution bucket. Each output image gets a
//! sidecar in the ingest schema, so the output directory is itself a
//! dataset.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{FalseDetectionConfig, Family, NoiseConfig};
use crate::dataset::{
    bucket_dims, nearest_bucket, DatasetIndex, ImageRecord, Resolution, Sidecar, SidecarBox,
};
use crate::geometry::{crop, expand_context, BoundingBox, ContextRatio, ExpandedBox};
use crate::sampler::SamplerConfig;
use crate::staging::{LatencyModel, StagingConfig};
use crate::transforms::{normalize_gsd, normalized_dims, rescale};
use crate::{Error, RasterImage, Result};

/// File name of the preprocessing manifest inside the output directory.
pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub context_ratio: f64,
    /// Meters per output pixel.
    pub target_gsd: f64,
    /// Fixed output size `[width, height]`, used unless `bucket_count` is set.
    pub rescale_target: [u32; 2],
    pub bucket_count: Option<usize>,
    pub families: Vec<Family>,
    pub noise: NoiseConfig,
    pub false_detections: FalseDetectionConfig,
    pub sampler: SamplerConfig,
    pub staging: StagingConfig,
    pub latency: LatencyModel,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            context_ratio: ContextRatio::DEFAULT.value(),
            target_gsd: 1.0,
            rescale_target: [224, 224],
            bucket_count: None,
            families: Family::ALL.to_vec(),
            noise: NoiseConfig::default(),
            false_detections: FalseDetectionConfig::default(),
            sampler: SamplerConfig::default(),
            staging: StagingConfig::default(),
            latency: LatencyModel::default(),
        }
    }
}

/// Values given on the command line; each one beats the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub context_ratio: Option<f64>,
    pub target_gsd: Option<f64>,
    pub rescale_target: Option<[u32; 2]>,
    pub bucket_count: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(c) = self.context_ratio {
            cfg.context_ratio = c;
        }
        if let Some(g) = self.target_gsd {
            cfg.target_gsd = g;
        }
        if let Some(r) = self.rescale_target {
            cfg.rescale_target = r;
            cfg.bucket_count = None;
        }
        if let Some(k) = self.bucket_count {
            cfg.bucket_count = Some(k);
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Defaults, overlaid by the optional config file, overlaid by flags.
    pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match file {
            Some(path) => Self::load(path)?,
            None => Self::default(),
        };
        overrides.apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        ContextRatio::new(self.context_ratio)?;
        if !(self.target_gsd.is_finite() && self.target_gsd > 0.0) {
            return Err(Error::Config(format!(
                "target_gsd must be > 0, got {}",
                self.target_gsd
            )));
        }
        if self.rescale_target.contains(&0) {
            return Err(Error::Config("rescale_target must be at least 1x1".into()));
        }
        if self.bucket_count == Some(0) {
            return Err(Error::Config("bucket_count must be >= 1".into()));
        }
        self.noise.validate()?;
        self.false_detections.validate()?;
        self.staging.validate()?;
        self.latency.validate()
    }
}

/// One processed box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessEntry {
    pub record_id: String,
    pub box_index: usize,
    pub category: String,
    pub file: PathBuf,
    pub sidecar: PathBuf,
    #[serde(rename = "source_box")]
    pub source_bbox: BoundingBox,
    pub expanded: ExpandedBox,
    /// Crop size after GSD normalization, `[width, height]`.
    pub normalized: [u32; 2],
    pub output: [u32; 2],
    pub output_gsd: f64,
    /// Index into [`PreprocessReport::buckets`] in bucket mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bucket: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessReport {
    pub entries: Vec<PreprocessEntry>,
    pub buckets: Option<Vec<Resolution>>,
    pub warnings: Vec<String>,
}

impl PreprocessReport {
    pub fn write_manifest(&self, mut out: impl Write) -> std::io::Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

struct Planned {
    record: usize,
    box_index: usize,
    expanded: ExpandedBox,
    normalized: (u32, u32),
}

/// Maps `inner` (in source pixels) into an output image that resamples
/// `outer` to `out_w` x `out_h`, rounding outward.
fn map_box(inner: BoundingBox, outer: BoundingBox, out_w: u32, out_h: u32) -> Result<BoundingBox> {
    let sx = f64::from(out_w) / f64::from(outer.width());
    let sy = f64::from(out_h) / f64::from(outer.height());
    let x0 = (f64::from(inner.x() - outer.x()) * sx).floor() as u32;
    let y0 = (f64::from(inner.y() - outer.y()) * sy).floor() as u32;
    let x1 = ((f64::from(inner.right() - outer.x()) * sx).ceil() as u32)
        .clamp(x0 + 1, out_w.max(x0 + 1));
    let y1 = ((f64::from(inner.bottom() - outer.y()) * sy).ceil() as u32)
        .clamp(y0 + 1, out_h.max(y0 + 1));
    let x0 = x0.min(out_w - 1);
    let y0 = y0.min(out_h - 1);
    BoundingBox::new(x0, y0, x1.min(out_w) - x0, y1.min(out_h) - y0)
}

fn process_record(
    record: &ImageRecord,
    planned: &[&Planned],
    targets: &[Target],
    cfg: &PipelineConfig,
    out_dir: &Path,
) -> Result<Vec<PreprocessEntry>> {
    let image = RasterImage::load(&record.image_path)?;
    if image.dims() != (record.image_width, record.image_height) {
        return Err(Error::invalid(format!(
            "{} changed size since ingest",
            record.image_path.display()
        )));
    }
    planned
        .iter()
        .zip(targets)
        .map(|(p, &(tw, th, bucket))| {
            let labeled = &record.boxes[p.box_index];
            let cropped = crop(&image, p.expanded.bbox)?;
            let normalized = normalize_gsd(&cropped, record.metadata.gsd, cfg.target_gsd)?;
            let output = rescale(&normalized, tw, th)?;

            let stem = format!("{}_{}", record.id, p.box_index);
            let file = out_dir.join(format!("{stem}.png"));
            output.save_png(&file)?;

            let outer = p.expanded.bbox;
            let gsd_x = record.metadata.gsd * f64::from(outer.width()) / f64::from(tw);
            let gsd_y = record.metadata.gsd * f64::from(outer.height()) / f64::from(th);
            let output_gsd = (gsd_x * gsd_y).sqrt();
            let sidecar = Sidecar {
                img_filename: format!("{stem}.png"),
                img_width: tw,
                img_height: th,
                gsd: output_gsd,
                timestamp: record.metadata.timestamp,
                bounding_boxes: vec![SidecarBox {
                    category: labeled.label.name.clone(),
                    bbox: map_box(labeled.bbox, outer, tw, th)?,
                }],
                features: record.metadata.features.clone(),
            };
            let sidecar_path = out_dir.join(format!("{stem}.json"));
            sidecar.write(&sidecar_path)?;

            Ok(PreprocessEntry {
                record_id: record.id.clone(),
                box_index: p.box_index,
                category: labeled.label.name.clone(),
                file,
                sidecar: sidecar_path,
                source_bbox: labeled.bbox,
                expanded: p.expanded,
                normalized: [p.normalized.0, p.normalized.1],
                output: [tw, th],
                output_gsd,
                bucket,
            })
        })
        .collect()
}

/// Runs every box of `index` through the pipeline, writing
/// `<record_id>_<box_index>.png` plus a sidecar per box and
/// [`MANIFEST_FILE`] into `out_dir`.
/// Output size and optional bucket index of one crop.
type Target = (u32, u32, Option<usize>);

pub fn preprocess(
    index: &DatasetIndex,
    out_dir: &Path,
    cfg: &PipelineConfig,
    jobs: usize,
) -> Result<PreprocessReport> {
    cfg.validate()?;
    if index.is_empty() {
        return Err(Error::NoRecords);
    }
    let ratio = ContextRatio::new(cfg.context_ratio)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut planned = Vec::new();
    for (ri, record) in index.records().iter().enumerate() {
        for (bi, labeled) in record.boxes.iter().enumerate() {
            let expanded =
                expand_context(labeled.bbox, record.image_width, record.image_height, ratio)?;
            let normalized = normalized_dims(
                expanded.bbox.width(),
                expanded.bbox.height(),
                record.metadata.gsd,
                cfg.target_gsd,
            )?;
            planned.push(Planned {
                record: ri,
                box_index: bi,
                expanded,
                normalized,
            });
        }
    }

    let mut warnings = Vec::new();
    let (targets, buckets): (Vec<Target>, _) = match cfg.bucket_count {
        None => {
            let [w, h] = cfg.rescale_target;
            (planned.iter().map(|_| (w, h, None)).collect(), None)
        }
        Some(k) => {
            let dims: Vec<(u32, u32)> = planned.iter().map(|p| p.normalized).collect();
            let b = bucket_dims(&dims, k)?;
            warnings.extend(b.warnings);
            let targets = dims
                .iter()
                .map(|&(w, h)| {
                    let i = nearest_bucket(w, h, &b.buckets);
                    (b.buckets[i].width, b.buckets[i].height, Some(i))
                })
                .collect();
            (targets, Some(b.buckets))
        }
    };

    let mut per_record: Vec<(Vec<&Planned>, Vec<Target>)> =
        vec![(Vec::new(), Vec::new()); index.len()];
    for (p, t) in planned.iter().zip(targets) {
        per_record[p.record].0.push(p);
        per_record[p.record].1.push(t);
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot build worker pool: {e}")))?;
    let results: Vec<Result<Vec<PreprocessEntry>>> = pool.install(|| {
        index
            .records()
            .par_iter()
            .zip(per_record.par_iter())
            .map(|(record, (p, t))| process_record(record, p, t, cfg, out_dir))
            .collect()
    });
    let mut entries = Vec::with_capacity(planned.len());
    for r in results {
        entries.extend(r?);
    }

    let report = PreprocessReport {
        entries,
        buckets,
        warnings,
    };
    let manifest = out_dir.join(MANIFEST_FILE);
    let mut file = std::io::BufWriter::new(
        std::fs::File::create(&manifest).map_err(|e| Error::io(&manifest, e))?,
    );
    report
        .write_manifest(&mut file)
        .and_then(|()| file.flush())
        .map_err(|e| Error::io(&manifest, e))?;
    Ok(report)
}
