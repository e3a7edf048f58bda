use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One trace line, `{"op": "read|create|delete", "item": ..., "size": ...}`.
///
/// A read of an item that is not live in staging fetches it from the slow
/// store and needs `size`; a read of a created item is served from staging.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum TraceOp {
    Read {
        item: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        size: Option<u64>,
    },
    Create {
        item: String,
        size: u64,
    },
    Delete {
        item: String,
    },
}

/// The kind of each op once item lifetimes are resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Resolved {
    SourceRead { size: u64 },
    TempRead,
    Create { size: u64 },
    Delete { size: u64 },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WorkloadTrace {
    pub ops: Vec<TraceOp>,
}

impl WorkloadTrace {
    pub fn new(ops: Vec<TraceOp>) -> Self {
        Self { ops }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn read_jsonl(reader: impl BufRead) -> Result<Self> {
        let mut ops = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::InvalidTrace(format!("line {}: {e}", n + 1)))?;
            if line.trim().is_empty() {
                continue;
            }
            let op = serde_json::from_str(&line)
                .map_err(|e| Error::InvalidTrace(format!("line {}: {e}", n + 1)))?;
            ops.push(op);
        }
        Ok(Self { ops })
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        for op in &self.ops {
            serde_json::to_writer(&mut out, op)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Resolves each op against the set of live temporary items.
    pub(crate) fn resolve(&self) -> Result<Vec<Resolved>> {
        let mut live: BTreeMap<&str, u64> = BTreeMap::new();
        self.ops
            .iter()
            .enumerate()
            .map(|(i, op)| match op {
                TraceOp::Read { item, size } => match live.get(item.as_str()) {
                    Some(_) => Ok(Resolved::TempRead),
                    None => size
                        .map(|size| Resolved::SourceRead { size })
                        .ok_or_else(|| {
                            Error::InvalidTrace(format!("op {i}: read of `{item}` needs a size"))
                        }),
                },
                TraceOp::Create { item, size } => {
                    if live.insert(item, *size).is_some() {
                        return Err(Error::InvalidTrace(format!(
                            "op {i}: `{item}` created while still live"
                        )));
                    }
                    Ok(Resolved::Create { size: *size })
                }
                TraceOp::Delete { item } => live
                    .remove(item.as_str())
                    .map(|size| Resolved::Delete { size })
                    .ok_or_else(|| {
                        Error::InvalidTrace(format!("op {i}: delete of `{item}` which is not live"))
                    }),
            })
            .collect()
    }
}

/// Deterministic 1000-op trace of 100 rounds. Each round reads one 4 MiB
/// source, then creates, reads back and deletes three 4 MiB temporaries.
pub fn default_write_heavy_trace() -> WorkloadTrace {
    const SIZE: u64 = 4 * 1024 * 1024;
    let mut ops = Vec::with_capacity(1000);
    for round in 0..100 {
        ops.push(TraceOp::Read {
            item: format!("src{round:03}"),
            size: Some(SIZE),
        });
        let temps: Vec<String> = (0..3).map(|t| format!("tmp{round:03}_{t}")).collect();
        for t in &temps {
            ops.push(TraceOp::Create {
                item: t.clone(),
                size: SIZE,
            });
        }
        for t in &temps {
            ops.push(TraceOp::Read {
                item: t.clone(),
                size: None,
            });
        }
        for t in &temps {
            ops.push(TraceOp::Delete { item: t.clone() });
        }
    }
    WorkloadTrace { ops }
}
