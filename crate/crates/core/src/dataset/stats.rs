use std::collections::BTreeMap;

use serde::ser::SerializeSeq;
use serde::{Serialize, Serializer};

use super::{label_map, CategoryLabel, DatasetIndex};
use crate::{Error, Result};

/// GSD histogram bin width in meters.
pub const GSD_BUCKET_WIDTH: f64 = 0.5;

/// Lower median: element `(n - 1) / 2` of the sorted values.
pub fn median_lower<T: Ord + Copy>(values: &[T]) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    Some(sorted[(sorted.len() - 1) / 2])
}

/// Fixed-width histogram; bin `i` covers `[i * w, (i + 1) * w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GsdHistogram {
    pub bucket_width: f64,
    pub counts: BTreeMap<u32, usize>,
}

impl GsdHistogram {
    pub fn from_values(values: impl IntoIterator<Item = f64>, bucket_width: f64) -> Self {
        let mut counts = BTreeMap::new();
        for v in values {
            *counts.entry((v / bucket_width).floor() as u32).or_insert(0) += 1;
        }
        Self {
            bucket_width,
            counts,
        }
    }

    /// `(lower, upper, count)` per non-empty bin, ascending.
    pub fn bins(&self) -> impl Iterator<Item = (f64, f64, usize)> + '_ {
        self.counts.iter().map(|(&i, &n)| {
            let lo = f64::from(i) * self.bucket_width;
            (lo, lo + self.bucket_width, n)
        })
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }
}

impl Serialize for GsdHistogram {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Bin {
            lower: f64,
            upper: f64,
            count: usize,
        }
        let mut seq = s.serialize_seq(Some(self.counts.len()))?;
        for (lower, upper, count) in self.bins() {
            seq.serialize_element(&Bin {
                lower,
                upper,
                count,
            })?;
        }
        seq.end()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub record_count: usize,
    pub mean_width: f64,
    pub mean_height: f64,
    pub median_width: u32,
    pub median_height: u32,
    /// `mean_width / mean_height`.
    pub mean_aspect_ratio: f64,
    /// `median_width / median_height`.
    pub median_aspect_ratio: f64,
    pub gsd_histogram: GsdHistogram,
    #[serde(serialize_with = "label_map::serialize")]
    pub class_counts: BTreeMap<CategoryLabel, usize>,
    #[serde(serialize_with = "label_map::serialize")]
    pub class_frequencies: BTreeMap<CategoryLabel, f64>,
}

/// Summaries over every record in the index.
pub fn compute_stats(index: &DatasetIndex) -> Result<DatasetStats> {
    let records = index.records();
    if records.is_empty() {
        return Err(Error::NoRecords);
    }
    let n = records.len() as f64;
    let widths: Vec<u32> = records.iter().map(|r| r.image_width).collect();
    let heights: Vec<u32> = records.iter().map(|r| r.image_height).collect();
    let mean_width = widths.iter().map(|&w| f64::from(w)).sum::<f64>() / n;
    let mean_height = heights.iter().map(|&h| f64::from(h)).sum::<f64>() / n;
    let median_width = median_lower(&widths).expect("non-empty");
    let median_height = median_lower(&heights).expect("non-empty");

    let total = index.total_boxes() as f64;
    let class_frequencies = index
        .class_counts()
        .iter()
        .map(|(label, &count)| (label.clone(), count as f64 / total))
        .collect();

    Ok(DatasetStats {
        record_count: records.len(),
        mean_width,
        mean_height,
        median_width,
        median_height,
        mean_aspect_ratio: mean_width / mean_height,
        median_aspect_ratio: f64::from(median_width) / f64::from(median_height),
        gsd_histogram: GsdHistogram::from_values(
            records.iter().map(|r| r.metadata.gsd),
            GSD_BUCKET_WIDTH,
        ),
        class_counts: index.class_counts().clone(),
        class_frequencies,
    })
}

impl DatasetStats {
    /// Aligned plain-text summary: resolution table, GSD bins, class frequencies.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("records: {}\n\n", self.record_count));
        out.push_str(&format!(
            "{:<8}{:>12}{:>13}{:>14}\n",
            "", "Width (px)", "Height (px)", "Aspect Ratio"
        ));
        out.push_str(&format!(
            "{:<8}{:>12.1}{:>13.1}{:>14.3}\n",
            "Mean", self.mean_width, self.mean_height, self.mean_aspect_ratio
        ));
        out.push_str(&format!(
            "{:<8}{:>12}{:>13}{:>14.3}\n\n",
            "Median", self.median_width, self.median_height, self.median_aspect_ratio
        ));
        out.push_str("gsd (m)          count\n");
        for (lo, hi, count) in self.gsd_histogram.bins() {
            out.push_str(&format!("[{lo:>5.1}, {hi:>5.1})  {count:>7}\n"));
        }
        out.push_str("\nclass                          count  frequency\n");
        for (label, freq) in &self.class_frequencies {
            let count = self.class_counts.get(label).copied().unwrap_or(0);
            out.push_str(&format!("{:<28}{:>8}{:>11.4}\n", label.name, count, freq));
        }
        out
    }
}
