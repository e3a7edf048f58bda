//! Offline augmentation: every variant of an image is enumerated up front,
//! rendered once and written to disk, so training reads finished pixels.
//!
//! Metadata noise and false-detection crops live in the submodules; both are
//! cheap and run at use time rather than during precompute.

mod false_detections;
mod metadata;

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use false_detections::{
    generate_false_detections, BoxSizeDistribution, FalseDetection, FalseDetectionConfig,
    FalseDetections,
};
pub use metadata::{augment_metadata, FeatureNormalizer, FeatureRange, NoiseConfig};

use crate::rng::seed_from_key;
use crate::transforms::{apply_pipeline, FlipAxis, TransformSpec, MIN_ZOOM};
use crate::{Error, RasterImage, Result};

/// Rotation family, identity first.
pub const ROTATIONS: [u32; 6] = [0, 15, 30, 45, 90, 180];
/// Zoom family, ascending; `1.0` is the identity.
pub const ZOOMS: [f64; 5] = [MIN_ZOOM, 0.8, 1.0, 1.25, 1.5];
/// Per-channel offset bound used by the noise family.
pub const DEFAULT_NOISE_AMPLITUDE: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Rotations,
    Flips,
    Zooms,
    Noise,
}

impl Family {
    pub const ALL: [Family; 4] = [
        Family::Rotations,
        Family::Flips,
        Family::Zooms,
        Family::Noise,
    ];
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rotations" | "rotate" => Ok(Family::Rotations),
            "flips" | "flip" => Ok(Family::Flips),
            "zooms" | "zoom" => Ok(Family::Zooms),
            "noise" => Ok(Family::Noise),
            other => Err(Error::invalid(format!(
                "unknown augmentation family `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationStep {
    pub variant_tag: String,
    pub pipeline: Vec<TransformSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPlan {
    pub record_id: String,
    pub steps: Vec<AugmentationStep>,
}

fn flip_code(flip: Option<FlipAxis>) -> &'static str {
    match flip {
        None => "NO",
        Some(FlipAxis::EastWest) => "EW",
        Some(FlipAxis::NorthSouth) => "NS",
    }
}

/// `r{deg:03}_f{NO|EW|NS}_z{zoom*100:03}_n{0|1}`.
pub fn variant_tag(degrees: u32, flip: Option<FlipAxis>, zoom: f64, noise: bool) -> String {
    format!(
        "r{degrees:03}_f{}_z{:03}_n{}",
        flip_code(flip),
        (zoom * 100.0).round() as u32,
        u8::from(noise)
    )
}

/// Cross-product of the enabled families in canonical order
/// (rotate, flip, zoom, noise). Disabled families contribute only their
/// identity, and identity parts are left out of the pipeline.
pub fn plan_augmentations(record_id: &str, families: &BTreeSet<Family>) -> AugmentationPlan {
    let rotations: &[u32] = if families.contains(&Family::Rotations) {
        &ROTATIONS
    } else {
        &[0]
    };
    let flips: &[Option<FlipAxis>] = if families.contains(&Family::Flips) {
        &[None, Some(FlipAxis::EastWest), Some(FlipAxis::NorthSouth)]
    } else {
        &[None]
    };
    let zooms: &[f64] = if families.contains(&Family::Zooms) {
        &ZOOMS
    } else {
        &[1.0]
    };
    let noises: &[bool] = if families.contains(&Family::Noise) {
        &[false, true]
    } else {
        &[false]
    };
    let noise_seed = seed_from_key(record_id);

    let mut steps = Vec::new();
    for &degrees in rotations {
        for &flip in flips {
            for &zoom in zooms {
                for &noise in noises {
                    let mut pipeline = Vec::new();
                    if degrees != 0 {
                        pipeline.push(TransformSpec::Rotate { degrees });
                    }
                    if let Some(axis) = flip {
                        pipeline.push(TransformSpec::Flip { axis });
                    }
                    if zoom != 1.0 {
                        pipeline.push(TransformSpec::Zoom { factor: zoom });
                    }
                    if noise {
                        pipeline.push(TransformSpec::ChannelNoise {
                            amplitude: DEFAULT_NOISE_AMPLITUDE,
                            seed: noise_seed,
                        });
                    }
                    steps.push(AugmentationStep {
                        variant_tag: variant_tag(degrees, flip, zoom, noise),
                        pipeline,
                    });
                }
            }
        }
    }
    AugmentationPlan {
        record_id: record_id.to_string(),
        steps,
    }
}

/// One written variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub record_id: String,
    pub variant_tag: String,
    pub file: PathBuf,
    pub pipeline: Vec<TransformSpec>,
    /// Digest of the decoded pixels, see [`RasterImage::digest`].
    pub sha256: String,
}

pub fn write_manifest(entries: &[ManifestEntry], mut out: impl Write) -> std::io::Result<()> {
    for e in entries {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Renders every step of `plan` from `source` and writes
/// `<record_id>__<variant_tag>.png` files into `out_dir`, using up to `jobs`
/// worker threads. Entries come back in plan order regardless of `jobs`.
///
/// If any write fails, every file this call produced is removed and
/// [`Error::PartialWrite`] reports the first failure.
pub fn execute_plan(
    plan: &AugmentationPlan,
    source: &RasterImage,
    out_dir: &Path,
    jobs: usize,
) -> Result<Vec<ManifestEntry>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot build worker pool: {e}")))?;

    let results: Vec<Result<ManifestEntry>> = pool.install(|| {
        plan.steps
            .par_iter()
            .map(|step| {
                let image = apply_pipeline(source, &step.pipeline)?;
                let file = out_dir.join(format!("{}__{}.png", plan.record_id, step.variant_tag));
                image.save_png(&file)?;
                Ok(ManifestEntry {
                    record_id: plan.record_id.clone(),
                    variant_tag: step.variant_tag.clone(),
                    file,
                    pipeline: step.pipeline.clone(),
                    sha256: image.digest(),
                })
            })
            .collect()
    });

    let mut written = Vec::with_capacity(results.len());
    let mut first_error = None;
    for r in results {
        match r {
            Ok(entry) => written.push(entry),
            Err(e) if first_error.is_none() => first_error = Some(e),
            Err(_) => {}
        }
    }
    match first_error {
        None => Ok(written),
        Some(source) => {
            let mut cleaned = 0;
            for entry in &written {
                if std::fs::remove_file(&entry.file).is_ok() {
                    cleaned += 1;
                }
            }
            let path = match &source {
                Error::Io { path, .. } | Error::Image { path, .. } => path.clone(),
                _ => out_dir.to_path_buf(),
            };
            Err(Error::PartialWrite {
                path,
                cleaned,
                source: Box::new(source),
            })
        }
    }
}
