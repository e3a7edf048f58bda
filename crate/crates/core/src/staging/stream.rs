//! Bounded hand-off between one sequential reader and a pool of consumers.

use std::collections::VecDeque;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};

use super::StagingConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamItem {
    pub id: String,
    pub bytes: Vec<u8>,
}

impl StreamItem {
    pub fn new(id: impl Into<String>, bytes: Vec<u8>) -> Self {
        Self {
            id: id.into(),
            bytes,
        }
    }

    pub fn size(&self) -> u64 {
        self.bytes.len() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamConfig {
    pub staging: StagingConfig,
    pub consumers: usize,
    /// When set, staged items are spilled here as files (e.g. on a RAM disk)
    /// and removed as soon as their consumer returns.
    pub staging_dir: Option<PathBuf>,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            staging: StagingConfig::default(),
            consumers: 1,
            staging_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedItem {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamReport {
    pub processed: usize,
    pub failed: Vec<FailedItem>,
    /// Items the reader had to hold back because staging was full.
    pub stalls: usize,
    pub peak_occupancy: u64,
}

enum Payload {
    Memory(Vec<u8>),
    File(PathBuf),
}

struct Staged {
    id: String,
    size: u64,
    payload: Payload,
}

#[derive(Default)]
struct Buffer {
    queue: VecDeque<Staged>,
    occupied: u64,
    done: bool,
    report: StreamReport,
}

struct Shared {
    buffer: Mutex<Buffer>,
    not_full: Condvar,
    not_empty: Condvar,
}

impl Shared {
    fn fail(&self, id: String, reason: String) {
        log::warn!("item {id} failed: {reason}");
        self.buffer
            .lock()
            .expect("buffer lock")
            .report
            .failed
            .push(FailedItem { id, reason });
    }
}

fn stage(dir: &Path, seq: usize, bytes: &[u8]) -> Result<PathBuf> {
    let path = dir.join(format!("{seq:08}.staged"));
    std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Streams `source` through a staging buffer of `cfg.staging.capacity`
/// bytes into `consumer`, running `cfg.consumers` consumers in parallel.
///
/// The reader blocks while the next item does not fit; an item's bytes are
/// released the moment its callback returns. Source errors, oversized items,
/// consumer errors and consumer panics mark the item failed and streaming
/// continues.
pub fn stream_items<I, F>(source: I, cfg: &StreamConfig, consumer: F) -> Result<StreamReport>
where
    I: IntoIterator<Item = Result<StreamItem>>,
    I::IntoIter: Send,
    F: Fn(&StreamItem) -> Result<()> + Sync,
{
    cfg.staging.validate()?;
    if cfg.consumers == 0 {
        return Err(Error::Config("need at least one consumer".into()));
    }
    if let Some(dir) = &cfg.staging_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let capacity = cfg.staging.capacity;
    let shared = Shared {
        buffer: Mutex::new(Buffer::default()),
        not_full: Condvar::new(),
        not_empty: Condvar::new(),
    };
    let source = source.into_iter();

    std::thread::scope(|scope| {
        for _ in 0..cfg.consumers {
            scope.spawn(|| consume(&shared, &consumer));
        }
        scope.spawn(|| {
            for (seq, item) in source.enumerate() {
                let item = match item {
                    Ok(item) => item,
                    Err(e) => {
                        shared.fail(format!("#{seq}"), e.to_string());
                        continue;
                    }
                };
                let size = item.size();
                if size > capacity {
                    shared.fail(
                        item.id,
                        format!("{size} bytes exceed staging capacity {capacity}"),
                    );
                    continue;
                }
                let payload = match &cfg.staging_dir {
                    None => Payload::Memory(item.bytes),
                    Some(dir) => match stage(dir, seq, &item.bytes) {
                        Ok(path) => Payload::File(path),
                        Err(e) => {
                            shared.fail(item.id, e.to_string());
                            continue;
                        }
                    },
                };
                let mut buf = shared.buffer.lock().expect("buffer lock");
                if buf.occupied + size > capacity {
                    buf.report.stalls += 1;
                    while buf.occupied + size > capacity {
                        buf = shared.not_full.wait(buf).expect("buffer lock");
                    }
                }
                buf.occupied += size;
                buf.report.peak_occupancy = buf.report.peak_occupancy.max(buf.occupied);
                buf.queue.push_back(Staged {
                    id: item.id,
                    size,
                    payload,
                });
                drop(buf);
                shared.not_empty.notify_one();
            }
            shared.buffer.lock().expect("buffer lock").done = true;
            shared.not_empty.notify_all();
        });
    });

    let buffer = shared.buffer.into_inner().expect("buffer lock");
    Ok(buffer.report)
}

fn consume<F>(shared: &Shared, consumer: &F)
where
    F: Fn(&StreamItem) -> Result<()>,
{
    loop {
        let staged = {
            let mut buf = shared.buffer.lock().expect("buffer lock");
            loop {
                if let Some(s) = buf.queue.pop_front() {
                    break s;
                }
                if buf.done {
                    return;
                }
                buf = shared.not_empty.wait(buf).expect("buffer lock");
            }
        };

        let outcome = match staged.payload {
            Payload::Memory(bytes) => run(consumer, StreamItem::new(staged.id.clone(), bytes)),
            Payload::File(ref path) => {
                let result = std::fs::read(path)
                    .map_err(|e| Error::io(path, e))
                    .and_then(|bytes| run(consumer, StreamItem::new(staged.id.clone(), bytes)));
                let _ = std::fs::remove_file(path);
                result
            }
        };

        let mut buf = shared.buffer.lock().expect("buffer lock");
        buf.occupied -= staged.size;
        match outcome {
            Ok(()) => buf.report.processed += 1,
            Err(e) => {
                log::warn!("item {} failed: {e}", staged.id);
                buf.report.failed.push(FailedItem {
                    id: staged.id,
                    reason: e.to_string(),
                });
            }
        }
        drop(buf);
        shared.not_full.notify_all();
    }
}

fn run<F>(consumer: &F, item: StreamItem) -> Result<()>
where
    F: Fn(&StreamItem) -> Result<()>,
{
    match catch_unwind(AssertUnwindSafe(|| consumer(&item))) {
        Ok(result) => result,
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "consumer panicked".into());
            Err(Error::invalid(format!("consumer panicked: {msg}")))
        }
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
    use std::time::Duration;

    use super::*;

    fn items(n: usize, size: usize) -> Vec<Result<StreamItem>> {
        (0..n)
            .map(|i| Ok(StreamItem::new(format!("i{i}"), vec![i as u8; size])))
            .collect()
    }

    fn cfg(capacity: u64, consumers: usize) -> StreamConfig {
        StreamConfig {
            staging: StagingConfig {
                capacity,
                prefetch_depth: 1,
            },
            consumers,
            staging_dir: None,
        }
    }

    #[test]
    fn empty_source() {
        let r = stream_items(Vec::new(), &cfg(10, 2), |_| Ok(())).unwrap();
        assert_eq!(r, StreamReport::default());
    }

    #[test]
    fn roomy_buffer_never_stalls() {
        let r = stream_items(items(10, 1), &cfg(100, 1), |_| Ok(())).unwrap();
        assert_eq!((r.processed, r.stalls), (10, 0));
    }

    #[test]
    fn full_buffer_stalls_once_per_item() {
        // Item 0 fills the buffer; each later item waits for its predecessor.
        let r = stream_items(items(10, 10), &cfg(10, 1), |_| {
            std::thread::sleep(Duration::from_millis(15));
            Ok(())
        })
        .unwrap();
        assert_eq!((r.processed, r.stalls, r.peak_occupancy), (10, 9, 10));
    }

    #[test]
    fn every_item_exactly_once() {
        let seen: Vec<AtomicUsize> = (0..200).map(|_| AtomicUsize::new(0)).collect();
        let live = AtomicU64::new(0);
        let max_live = AtomicU64::new(0);
        let r = stream_items(items(200, 7), &cfg(50, 4), |item| {
            let now = live.fetch_add(item.size(), Ordering::SeqCst) + item.size();
            max_live.fetch_max(now, Ordering::SeqCst);
            seen[usize::from(item.bytes[0])].fetch_add(1, Ordering::SeqCst);
            live.fetch_sub(item.size(), Ordering::SeqCst);
            Ok(())
        });
        let r = r.unwrap();
        assert_eq!(r.processed, 200);
        assert!(r.peak_occupancy <= 50);
        assert!(max_live.load(Ordering::SeqCst) <= 50);
        assert!(seen.iter().all(|c| c.load(Ordering::SeqCst) == 1));
    }

    #[test]
    fn failures_do_not_stop_the_stream() {
        let mut source = items(5, 2);
        source.push(Err(Error::invalid("unreadable")));
        source.push(Ok(StreamItem::new("huge", vec![0; 100])));
        let r = stream_items(source, &cfg(10, 2), |item| {
            if item.id == "i1" {
                return Err(Error::invalid("bad pixels"));
            }
            if item.id == "i3" {
                panic!("boom");
            }
            Ok(())
        })
        .unwrap();
        assert_eq!(r.processed, 3);
        let mut failed: Vec<&str> = r.failed.iter().map(|f| f.id.as_str()).collect();
        failed.sort();
        assert_eq!(failed, vec!["#5", "huge", "i1", "i3"]);
    }

    #[test]
    fn staging_dir_is_emptied() {
        let dir = tempfile::tempdir().unwrap();
        let config = StreamConfig {
            staging_dir: Some(dir.path().to_path_buf()),
            ..cfg(64, 2)
        };
        let total = AtomicUsize::new(0);
        let r = stream_items(items(20, 8), &config, |item| {
            total.fetch_add(item.bytes.len(), Ordering::SeqCst);
            Ok(())
        })
        .unwrap();
        assert_eq!(r.processed, 20);
        assert_eq!(total.load(Ordering::SeqCst), 160);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }
}
