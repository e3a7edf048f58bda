use std::collections::BTreeMap;

use chrono::Duration;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetIndex, ImageMetadata};
use crate::rng::SplitMix64;
use crate::{Error, Result};

/// Uniform noise ranges for metadata augmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Half-width of the feature noise, in normalized `[0, 1]` units.
    pub feature_noise_half_width: f64,
    /// Timestamp shift bound in seconds.
    pub time_of_day_jitter: u32,
    /// Timestamp shift bound in days.
    pub day_of_year_jitter: u32,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            feature_noise_half_width: 0.05,
            time_of_day_jitter: 4 * 3600,
            day_of_year_jitter: 45,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.feature_noise_half_width.is_finite() && self.feature_noise_half_width >= 0.0) {
            return Err(Error::invalid(format!(
                "feature_noise_half_width must be >= 0, got {}",
                self.feature_noise_half_width
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureRange {
    pub min: f64,
    pub max: f64,
}

impl FeatureRange {
    pub fn normalize(&self, v: f64) -> f64 {
        if self.max > self.min {
            (v - self.min) / (self.max - self.min)
        } else {
            0.0
        }
    }

    pub fn denormalize(&self, n: f64) -> f64 {
        self.min + n * (self.max - self.min)
    }
}

/// Per-feature min/max used for `[0, 1]` normalization.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureNormalizer {
    pub ranges: BTreeMap<String, FeatureRange>,
}

impl FeatureNormalizer {
    /// Observed range of every feature across the index.
    pub fn fit(index: &DatasetIndex) -> Self {
        let mut ranges: BTreeMap<String, FeatureRange> = BTreeMap::new();
        for (k, &v) in index.records().iter().flat_map(|r| &r.metadata.features) {
            ranges
                .entry(k.clone())
                .and_modify(|r| {
                    r.min = r.min.min(v);
                    r.max = r.max.max(v);
                })
                .or_insert(FeatureRange { min: v, max: v });
        }
        Self { ranges }
    }

    pub fn insert(&mut self, feature: impl Into<String>, min: f64, max: f64) {
        self.ranges
            .insert(feature.into(), FeatureRange { min, max });
    }

    pub fn get(&self, feature: &str) -> Option<FeatureRange> {
        self.ranges.get(feature).copied()
    }
}

/// Adds uniform noise to every feature (in normalized space, clamped to the
/// normalizer's range) and shifts the timestamp by independent time-of-day
/// and day-of-year jitters. `gsd` is left alone.
///
/// Draw order from `SplitMix64(cfg.seed)`: one `next_f64` per feature in key
/// order, then `uniform_i64(-tod, tod)` seconds, then `uniform_i64(-doy, doy)`
/// days.
pub fn augment_metadata(
    metadata: &ImageMetadata,
    cfg: &NoiseConfig,
    normalizer: &FeatureNormalizer,
) -> Result<ImageMetadata> {
    cfg.validate()?;
    let mut rng = SplitMix64::new(cfg.seed);
    let h = cfg.feature_noise_half_width;
    let mut features = BTreeMap::new();
    for (name, &value) in &metadata.features {
        let range = normalizer
            .get(name)
            .ok_or_else(|| Error::invalid(format!("no normalizer range for feature `{name}`")))?;
        let r = rng.next_f64();
        let out = if h == 0.0 {
            value
        } else if range.max <= range.min {
            range.min
        } else {
            let noisy = range.normalize(value) + (-h + 2.0 * h * r);
            range.denormalize(noisy.clamp(0.0, 1.0))
        };
        features.insert(name.clone(), out);
    }

    let tod = i64::from(cfg.time_of_day_jitter);
    let doy = i64::from(cfg.day_of_year_jitter);
    let seconds = rng.uniform_i64(-tod, tod);
    let days = rng.uniform_i64(-doy, doy);
    let timestamp = metadata.timestamp + Duration::seconds(seconds) + Duration::days(days);

    Ok(ImageMetadata {
        gsd: metadata.gsd,
        timestamp,
        features,
    })
}
