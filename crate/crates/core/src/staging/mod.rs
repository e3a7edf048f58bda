//! Staged streaming I/O.
//!
//! Random-access creates and deletes on a shared store are slow, while
//! sequential block reads are cheap. The staging pattern streams inputs into
//! a bounded fast buffer with sequential reads, does the write-heavy work
//! there and evicts each item as soon as it has been consumed.
//!
//! [`stream_items`] is the real engine; [`run_direct`] and [`run_staged`]
//! are an analytic latency simulator that quantifies the gain for a trace.

mod sim;
mod stream;
mod trace;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use sim::{run_direct, run_staged, simulate, SimulationReport, StagedRun};
pub use stream::{stream_items, FailedItem, StreamConfig, StreamItem, StreamReport};
pub use trace::{default_write_heavy_trace, TraceOp, WorkloadTrace};

use crate::{Error, Result};

const MIB: u64 = 1024 * 1024;

/// Per-operation latencies of the slow store and the staging area, in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencyModel {
    pub random_read_latency: f64,
    /// Cost of one block in a sequential stream.
    pub sequential_block_latency: f64,
    pub random_create_latency: f64,
    pub random_delete_latency: f64,
    pub block_size: u64,
    pub staging_read_latency: f64,
    pub staging_create_latency: f64,
    pub staging_delete_latency: f64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self::from_random_rates(0.004, 0.012, 0.010)
    }
}

impl LatencyModel {
    /// Sequential blocks at 1/100 of the random read latency and staging
    /// operations at 1/1000 of their slow-store counterparts.
    pub fn from_random_rates(read: f64, create: f64, delete: f64) -> Self {
        Self {
            random_read_latency: read,
            sequential_block_latency: read / 100.0,
            random_create_latency: create,
            random_delete_latency: delete,
            block_size: MIB,
            staging_read_latency: read / 1000.0,
            staging_create_latency: create / 1000.0,
            staging_delete_latency: delete / 1000.0,
        }
    }

    /// Reads a model from TOML, or from JSON when the extension is `.json`.
    /// Missing fields keep their defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            ("random_read_latency", self.random_read_latency),
            ("sequential_block_latency", self.sequential_block_latency),
            ("random_create_latency", self.random_create_latency),
            ("random_delete_latency", self.random_delete_latency),
            ("staging_read_latency", self.staging_read_latency),
            ("staging_create_latency", self.staging_create_latency),
            ("staging_delete_latency", self.staging_delete_latency),
        ];
        if let Some((name, v)) = all.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
        }
        if self.block_size == 0 {
            return Err(Error::Config("block_size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StagingConfig {
    /// Staging area size in bytes.
    pub capacity: u64,
    /// Sequential blocks allowed in flight at once.
    pub prefetch_depth: usize,
}

impl Default for StagingConfig {
    fn default() -> Self {
        Self {
            capacity: 256 * MIB,
            prefetch_depth: 4,
        }
    }
}

impl StagingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 {
            return Err(Error::Config("capacity must be >= 1".into()));
        }
        if self.prefetch_depth == 0 {
            return Err(Error::Config("prefetch_depth must be >= 1".into()));
        }
        Ok(())
    }
}

pub(crate) fn nanos(seconds: f64) -> u64 {
    (seconds * 1e9).round() as u64
}

pub(crate) fn seconds(nanos: u64) -> f64 {
    nanos as f64 / 1e9
}
