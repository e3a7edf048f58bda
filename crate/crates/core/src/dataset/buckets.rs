//! Resolution buckets: a small set of canonical sizes heterogeneous images
//! snap to, bounding the number of distinct tensor shapes.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::DatasetIndex;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Resolution {
    pub width: u32,
    pub height: u32,
}

impl Resolution {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height }
    }

    pub fn area(&self) -> u64 {
        u64::from(self.width) * u64::from(self.height)
    }

    fn area_key(&self) -> (u64, u32, u32) {
        (self.area(), self.width, self.height)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bucketing {
    /// Ascending by area.
    pub buckets: Vec<Resolution>,
    /// Bucket index per input, in input order.
    pub assignments: Vec<usize>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexBucketing {
    pub buckets: Vec<Resolution>,
    /// Record id to bucket index.
    pub assignments: BTreeMap<String, usize>,
    pub warnings: Vec<String>,
}

/// Nearest multiple of 8, ties to the even multiple, never below 8.
pub fn round_to_multiple_of_8(v: u32) -> u32 {
    let m = (f64::from(v) / 8.0).round_ties_even() as u32;
    m.max(1) * 8
}

/// `|ln(w / bw)| + |ln(h / bh)|`.
pub fn bucket_distance(width: u32, height: u32, bucket: Resolution) -> f64 {
    (f64::from(width) / f64::from(bucket.width)).ln().abs()
        + (f64::from(height) / f64::from(bucket.height)).ln().abs()
}

/// Index of the closest bucket; ties go to the lower index.
pub fn nearest_bucket(width: u32, height: u32, buckets: &[Resolution]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, b) in buckets.iter().enumerate() {
        let d = bucket_distance(width, height, *b);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

/// Picks `k` buckets at the k-quantile centres of `dims` ordered by area and
/// assigns every input to its nearest bucket.
///
/// Bucket `i` is the element at sorted position `ceil((2i + 1) n / 2k) - 1`,
/// so `k = 1` yields the lower median. Dimensions are then rounded to a
/// multiple of 8; buckets that coincide after rounding are merged.
pub fn bucket_dims(dims: &[(u32, u32)], k: usize) -> Result<Bucketing> {
    if k == 0 {
        return Err(Error::invalid("bucket count must be >= 1"));
    }
    if dims.is_empty() {
        return Err(Error::NoRecords);
    }
    let mut warnings = Vec::new();
    let distinct: BTreeSet<(u32, u32)> = dims.iter().copied().collect();
    let k = if k > distinct.len() {
        warnings.push(format!(
            "requested {k} buckets but only {} distinct resolutions; using {}",
            distinct.len(),
            distinct.len()
        ));
        distinct.len()
    } else {
        k
    };

    let mut sorted: Vec<Resolution> = dims.iter().map(|&(w, h)| Resolution::new(w, h)).collect();
    sorted.sort_by_key(Resolution::area_key);
    let n = sorted.len();

    let mut buckets: Vec<Resolution> = (0..k)
        .map(|i| {
            let pos = ((2 * i + 1) * n).div_ceil(2 * k) - 1;
            let r = sorted[pos.min(n - 1)];
            Resolution::new(
                round_to_multiple_of_8(r.width),
                round_to_multiple_of_8(r.height),
            )
        })
        .collect();
    buckets.sort_by_key(Resolution::area_key);
    let before = buckets.len();
    buckets.dedup();
    if buckets.len() < before {
        warnings.push(format!(
            "{} buckets coincided after rounding to multiples of 8; {} remain",
            before - buckets.len(),
            buckets.len()
        ));
    }

    let assignments = dims
        .iter()
        .map(|&(w, h)| nearest_bucket(w, h, &buckets))
        .collect();
    Ok(Bucketing {
        buckets,
        assignments,
        warnings,
    })
}

/// [`bucket_dims`] over the image resolutions of `index`.
pub fn bucket_resolutions(index: &DatasetIndex, k: usize) -> Result<IndexBucketing> {
    let dims: Vec<(u32, u32)> = index
        .records()
        .iter()
        .map(|r| (r.image_width, r.image_height))
        .collect();
    let b = bucket_dims(&dims, k)?;
    Ok(IndexBucketing {
        buckets: b.buckets,
        assignments: index
            .records()
            .iter()
            .map(|r| r.id.clone())
            .zip(b.assignments)
            .collect(),
        warnings: b.warnings,
    })
}
