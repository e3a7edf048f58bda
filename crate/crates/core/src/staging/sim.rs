//! Deterministic latency accounting in integer nanoseconds.
//!
//! The staged model has two actors. A sequential reader fetches every
//! source read of the trace, in trace order, as `ceil(size / block_size)`
//! blocks; block `g` may not start before block `g - prefetch_depth` has
//! finished, and an item is only admitted once enough earlier items have
//! been consumed that it fits in the prefetch budget. A worker replays the
//! trace against staging: a source read finishes when both its fetch and
//! the staging read are done, after which the item is evicted.
//!
//! The prefetch budget is the capacity minus the peak live bytes of the
//! trace's own temporary items, so temporaries never wait on prefetch.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::trace::Resolved;
use super::{nanos, seconds, LatencyModel, StagingConfig, TraceOp, WorkloadTrace};
use crate::{Error, Result};

/// Total time with every op charged at the slow store's random-access rates.
pub fn run_direct(trace: &WorkloadTrace, model: &LatencyModel) -> Result<f64> {
    Ok(seconds(direct_nanos(trace, model)?))
}

fn direct_nanos(trace: &WorkloadTrace, model: &LatencyModel) -> Result<u64> {
    model.validate()?;
    let read = nanos(model.random_read_latency);
    let create = nanos(model.random_create_latency);
    let delete = nanos(model.random_delete_latency);
    Ok(trace
        .resolve()?
        .iter()
        .map(|op| match op {
            Resolved::SourceRead { .. } | Resolved::TempRead => read,
            Resolved::Create { .. } => create,
            Resolved::Delete { .. } => delete,
        })
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagedRun {
    pub total_nanos: u64,
    pub peak_staging_bytes: u64,
    /// Source items whose admission waited on capacity.
    pub stalls: u64,
}

impl StagedRun {
    pub fn total_seconds(&self) -> f64 {
        seconds(self.total_nanos)
    }
}

struct Fetched {
    size: u64,
    release: u64,
}

/// Replays `trace` through the staged model.
pub fn run_staged(
    trace: &WorkloadTrace,
    model: &LatencyModel,
    cfg: &StagingConfig,
) -> Result<StagedRun> {
    model.validate()?;
    cfg.validate()?;
    let resolved = trace.resolve()?;

    let mut live = 0u64;
    let mut max_temp = 0u64;
    let mut largest_source = 0u64;
    for op in &resolved {
        match *op {
            Resolved::Create { size } => {
                live += size;
                max_temp = max_temp.max(live);
            }
            Resolved::Delete { size } => live -= size,
            Resolved::SourceRead { size } => {
                if size > cfg.capacity {
                    return Err(Error::Capacity(format!(
                        "item of {size} bytes exceeds capacity {}",
                        cfg.capacity
                    )));
                }
                largest_source = largest_source.max(size);
            }
            Resolved::TempRead => {}
        }
    }
    if largest_source + max_temp > cfg.capacity {
        return Err(Error::Capacity(format!(
            "{largest_source}-byte source item plus {max_temp} bytes of live temporaries exceed capacity {}",
            cfg.capacity
        )));
    }
    let budget = cfg.capacity - max_temp;

    let seq = nanos(model.sequential_block_latency);
    let staging_read = nanos(model.staging_read_latency);
    let staging_create = nanos(model.staging_create_latency);
    let staging_delete = nanos(model.staging_delete_latency);
    let depth = cfg.prefetch_depth;

    let mut events: Vec<(u64, i64)> = Vec::new();
    let mut block_done: Vec<u64> = Vec::new();
    let mut fetched: Vec<Fetched> = Vec::new();
    let mut temp_start: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    let mut resident_from = 0usize;
    let mut resident_bytes = 0u64;
    let mut last_admit = 0u64;
    let mut stalls = 0u64;
    let mut t = 0u64;

    for (op, kind) in trace.ops.iter().zip(&resolved) {
        match (*kind, op) {
            (Resolved::SourceRead { size }, _) => {
                let flow = |g: usize, done: &[u64]| if g >= depth { done[g - depth] } else { 0 };
                let ready = last_admit.max(flow(block_done.len(), &block_done));
                let mut wait_for = 0u64;
                while resident_bytes + size > budget {
                    let evicted = &fetched[resident_from];
                    wait_for = wait_for.max(evicted.release);
                    resident_bytes -= evicted.size;
                    resident_from += 1;
                }
                if wait_for > ready {
                    stalls += 1;
                }
                let admit = ready.max(wait_for);
                last_admit = admit;

                let blocks = size.div_ceil(model.block_size).max(1);
                let mut issue = admit;
                for _ in 0..blocks {
                    issue = issue.max(flow(block_done.len(), &block_done));
                    block_done.push(issue + seq);
                }
                let fetch_done = *block_done.last().expect("at least one block");
                t = fetch_done.max(t + staging_read);
                fetched.push(Fetched { size, release: t });
                resident_bytes += size;
                events.push((admit, size as i64));
                events.push((t, -(size as i64)));
            }
            (Resolved::TempRead, _) => t += staging_read,
            (Resolved::Create { size }, TraceOp::Create { item, .. }) => {
                temp_start.insert(item, (t, size));
                t += staging_create;
            }
            (Resolved::Delete { .. }, TraceOp::Delete { item }) => {
                t += staging_delete;
                let (start, size) = temp_start.remove(item.as_str()).expect("resolved trace");
                events.push((start, size as i64));
                events.push((t, -(size as i64)));
            }
            _ => unreachable!("resolution preserves op kinds"),
        }
    }
    for (start, size) in temp_start.into_values() {
        events.push((start, size as i64));
    }

    events.sort_by_key(|&(time, delta)| (time, delta));
    let mut occupancy = 0i64;
    let mut peak = 0i64;
    for (_, delta) in events {
        occupancy += delta;
        peak = peak.max(occupancy);
    }

    Ok(StagedRun {
        total_nanos: t,
        peak_staging_bytes: peak as u64,
        stalls,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub direct_s: f64,
    pub staged_s: f64,
    /// `direct_s / staged_s`; 1 for an empty trace.
    pub speedup: f64,
    pub peak_staging_bytes: u64,
    pub stalls: u64,
}

/// Runs both models over `trace`.
pub fn simulate(
    trace: &WorkloadTrace,
    model: &LatencyModel,
    cfg: &StagingConfig,
) -> Result<SimulationReport> {
    let direct = direct_nanos(trace, model)?;
    let staged = run_staged(trace, model, cfg)?;
    let speedup = if staged.total_nanos == 0 {
        1.0
    } else {
        direct as f64 / staged.total_nanos as f64
    };
    Ok(SimulationReport {
        direct_s: seconds(direct),
        staged_s: staged.total_seconds(),
        speedup,
        peak_staging_bytes: staged.peak_staging_bytes,
        stalls: staged.stalls,
    })
}
