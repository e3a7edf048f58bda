//! Class-balanced batch sampling.
//!
//! Classes are drawn with probability proportional to `p log(1/p)`, which
//! damps head classes and lifts mid-frequency ones. On top of the i.i.d.
//! draws a coverage guarantee forces every positive-weight class into at
//! least one batch of every `guarantee_window` consecutive batches.
//!
//! The forced set is chosen earliest-deadline-first: each batch forces the
//! classes whose deadline is this batch, plus as many of the next-most-starved
//! classes as needed so that upcoming deadlines still fit in the remaining
//! batches of the window. With `window >= ceil(classes / batch_size)` this
//! never overflows a batch, including the very first window.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::dataset::{ClassId, DatasetIndex, DatasetStats};
use crate::rng::SplitMix64;
use crate::{Error, Result};

/// Seed used when none is configured.
pub const DEFAULT_SEED: u64 = 42;

const FREQUENCY_TOLERANCE: f64 = 1e-6;

/// Normalized per-class sampling probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    weights: BTreeMap<ClassId, f64>,
}

impl ClassWeights {
    pub fn get(&self, class: ClassId) -> f64 {
        self.weights.get(&class).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ClassId, f64)> + '_ {
        self.weights.iter().map(|(&c, &w)| (c, w))
    }

    pub fn as_map(&self) -> &BTreeMap<ClassId, f64> {
        &self.weights
    }

    pub fn positive_classes(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.weights
            .iter()
            .filter(|(_, &w)| w > 0.0)
            .map(|(&c, _)| c)
    }
}

/// Entropy-term weights `p ln(1/p)`, normalized to sum to 1.
///
/// If every raw term is zero (all mass on one class) the weights fall back
/// to uniform over classes with `p > 0`.
pub fn compute_class_weights(frequencies: &BTreeMap<ClassId, f64>) -> Result<ClassWeights> {
    compute_class_weights_with_base(frequencies, std::f64::consts::E)
}

/// As [`compute_class_weights`] with `log_base(1/p)`; the base cancels on
/// normalization, so every base > 1 yields the same weights.
pub fn compute_class_weights_with_base(
    frequencies: &BTreeMap<ClassId, f64>,
    base: f64,
) -> Result<ClassWeights> {
    if !(base.is_finite() && base > 1.0) {
        return Err(Error::invalid(format!("log base must be > 1, got {base}")));
    }
    if frequencies.is_empty() {
        return Err(Error::invalid("no class frequencies"));
    }
    if let Some((c, p)) = frequencies
        .iter()
        .find(|(_, p)| !(p.is_finite() && **p >= 0.0))
    {
        return Err(Error::invalid(format!("frequency of class {c} is {p}")));
    }
    let sum: f64 = frequencies.values().sum();
    if (sum - 1.0).abs() > FREQUENCY_TOLERANCE {
        return Err(Error::invalid(format!(
            "class frequencies sum to {sum}, expected 1 +/- {FREQUENCY_TOLERANCE}"
        )));
    }

    let ln_base = base.ln();
    let raw: BTreeMap<ClassId, f64> = frequencies
        .iter()
        .map(|(&c, &p)| {
            let r = if p > 0.0 {
                p * (1.0 / p).ln() / ln_base
            } else {
                0.0
            };
            (c, r)
        })
        .collect();
    let total: f64 = raw.values().sum();
    let weights = if total > 0.0 {
        raw.into_iter().map(|(c, r)| (c, r / total)).collect()
    } else {
        let support = frequencies.values().filter(|&&p| p > 0.0).count() as f64;
        frequencies
            .iter()
            .map(|(&c, &p)| (c, if p > 0.0 { 1.0 / support } else { 0.0 }))
            .collect()
    };
    Ok(ClassWeights { weights })
}

/// Class frequencies keyed by id, from dataset statistics.
pub fn frequencies_by_id(stats: &DatasetStats) -> BTreeMap<ClassId, f64> {
    stats
        .class_frequencies
        .iter()
        .map(|(label, &f)| (label.id, f))
        .collect()
}

/// `max(1, ceil(classes / batch_size))`.
pub fn guarantee_window(num_classes: usize, batch_size: usize) -> u32 {
    num_classes.div_ceil(batch_size.max(1)).max(1) as u32
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Uniform with replacement inside the class (oversampling).
    #[default]
    WithReplacement,
    /// Walk a shuffled permutation of the class, reshuffling when exhausted.
    WithoutReplacement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub batch_size: usize,
    /// `false` disables forced inclusion entirely.
    pub guarantee: bool,
    /// Overrides the default window of `ceil(classes / batch_size)`.
    pub window: Option<u32>,
    pub seed: u64,
    pub selection: Selection,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            guarantee: true,
            window: None,
            seed: DEFAULT_SEED,
            selection: Selection::WithReplacement,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Cursor {
    order: Vec<usize>,
    next: usize,
}

/// Single-owner sampling state; serializable for checkpoint and resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerState {
    weights: ClassWeights,
    batch_size: usize,
    guarantee_window: Option<u32>,
    /// Batches since each positive-weight class last appeared.
    last_seen: BTreeMap<ClassId, u32>,
    rng: SplitMix64,
    batches_drawn: u64,
    selection: Selection,
    #[serde(default)]
    cursors: BTreeMap<ClassId, Cursor>,
}

impl SamplerState {
    pub fn new(weights: ClassWeights, config: &SamplerConfig) -> Result<Self> {
        if config.batch_size == 0 {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        let positive: Vec<ClassId> = weights.positive_classes().collect();
        if positive.is_empty() {
            return Err(Error::invalid("no class has positive weight"));
        }
        let guarantee_window = if config.guarantee {
            let w = config
                .window
                .unwrap_or_else(|| guarantee_window(positive.len(), config.batch_size));
            if w == 0 {
                return Err(Error::invalid("guarantee window must be >= 1"));
            }
            Some(w)
        } else {
            None
        };
        Ok(Self {
            last_seen: positive.iter().map(|&c| (c, 0)).collect(),
            weights,
            batch_size: config.batch_size,
            guarantee_window,
            rng: SplitMix64::new(config.seed),
            batches_drawn: 0,
            selection: config.selection,
            cursors: BTreeMap::new(),
        })
    }

    pub fn weights(&self) -> &ClassWeights {
        &self.weights
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn guarantee_window(&self) -> Option<u32> {
        self.guarantee_window
    }

    pub fn last_seen(&self) -> &BTreeMap<ClassId, u32> {
        &self.last_seen
    }

    pub fn batches_drawn(&self) -> u64 {
        self.batches_drawn
    }

    pub fn rng_state(&self) -> u64 {
        self.rng.state()
    }

    /// Classes that must appear in the next batch, ascending by id, and
    /// whether the window could not be honoured.
    fn forced_classes(&self) -> (Vec<ClassId>, bool) {
        let Some(window) = self.guarantee_window else {
            return (Vec::new(), false);
        };
        let mut by_urgency: Vec<(ClassId, u32)> =
            self.last_seen.iter().map(|(&c, &s)| (c, s)).collect();
        by_urgency.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));

        // Classes due within h batches: last_seen >= window - h. The next
        // h - 1 batches can absorb (h - 1) * batch_size of them.
        let mut need = 0usize;
        for h in 1..=window {
            let due = by_urgency.iter().filter(|(_, s)| *s + h >= window).count();
            let later = (h as usize - 1) * self.batch_size;
            need = need.max(due.saturating_sub(later));
        }
        let overflow = need > self.batch_size;
        let mut forced: Vec<ClassId> = by_urgency
            .into_iter()
            .take(need.min(self.batch_size))
            .map(|(c, _)| c)
            .collect();
        forced.sort();
        (forced, overflow)
    }

    fn draw_class(&mut self) -> ClassId {
        let r = self.rng.next_f64();
        let mut acc = 0.0;
        let mut last = None;
        for (c, w) in self.weights.iter() {
            if w <= 0.0 {
                continue;
            }
            acc += w;
            last = Some(c);
            if r < acc {
                return c;
            }
        }
        last.expect("at least one positive weight")
    }

    fn draw_record(&mut self, class: ClassId, pool: &[usize]) -> usize {
        match self.selection {
            Selection::WithReplacement => pool[self.rng.below(pool.len() as u64) as usize],
            Selection::WithoutReplacement => {
                let needs_shuffle = self
                    .cursors
                    .get(&class)
                    .is_none_or(|c| c.next >= c.order.len());
                if needs_shuffle {
                    let mut order = pool.to_vec();
                    for i in (1..order.len()).rev() {
                        let j = self.rng.below(i as u64 + 1) as usize;
                        order.swap(i, j);
                    }
                    self.cursors.insert(class, Cursor { order, next: 0 });
                }
                let cursor = self.cursors.get_mut(&class).expect("just inserted");
                cursor.next += 1;
                cursor.order[cursor.next - 1]
            }
        }
    }
}

/// Records available per class.
#[derive(Debug, Clone)]
pub struct ClassPools {
    pools: BTreeMap<ClassId, Vec<usize>>,
    record_ids: Vec<String>,
}

impl ClassPools {
    /// A record joins the pool of every class among its boxes.
    pub fn from_index(index: &DatasetIndex) -> Self {
        let mut pools: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
        for (i, record) in index.records().iter().enumerate() {
            let classes: BTreeSet<ClassId> = record.boxes.iter().map(|b| b.label.id).collect();
            for c in classes {
                pools.entry(c).or_default().push(i);
            }
        }
        Self {
            pools,
            record_ids: index.records().iter().map(|r| r.id.clone()).collect(),
        }
    }

    /// Builds pools directly from `(record_id, class)` pairs.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, ClassId)>) -> Self {
        let mut pools: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
        let mut record_ids = Vec::new();
        for (id, class) in pairs {
            pools.entry(class).or_default().push(record_ids.len());
            record_ids.push(id.to_string());
        }
        Self { pools, record_ids }
    }

    pub fn pool(&self, class: ClassId) -> &[usize] {
        self.pools.get(&class).map_or(&[], Vec::as_slice)
    }

    pub fn record_id(&self, record: usize) -> &str {
        &self.record_ids[record]
    }

    /// Empirical class frequencies over pool memberships.
    pub fn frequencies(&self) -> BTreeMap<ClassId, f64> {
        let total: usize = self.pools.values().map(Vec::len).sum();
        self.pools
            .iter()
            .map(|(&c, p)| (c, p.len() as f64 / total as f64))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchItem {
    pub record: usize,
    pub class: ClassId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub batch: u64,
    pub items: Vec<BatchItem>,
    /// Classes that took slots ahead of free draws, ascending.
    pub forced: Vec<ClassId>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct BatchManifestLine<'a> {
    pub batch: u64,
    pub items: Vec<&'a str>,
    pub forced: Vec<ClassId>,
}

impl Batch {
    pub fn classes(&self) -> BTreeSet<ClassId> {
        self.items.iter().map(|i| i.class).collect()
    }

    pub fn manifest_line<'a>(&self, pools: &'a ClassPools) -> BatchManifestLine<'a> {
        BatchManifestLine {
            batch: self.batch,
            items: self
                .items
                .iter()
                .map(|i| pools.record_id(i.record))
                .collect(),
            forced: self.forced.clone(),
        }
    }
}

/// Draws the next batch and advances `state`.
pub fn sample_batch(state: &mut SamplerState, pools: &ClassPools) -> Result<Batch> {
    for class in state.weights.positive_classes() {
        if pools.pool(class).is_empty() {
            return Err(Error::invalid(format!(
                "class {class} has positive weight but no records"
            )));
        }
    }

    let (forced, overflow) = state.forced_classes();
    let mut warnings = Vec::new();
    if overflow {
        let msg = format!(
            "batch {}: more classes due than batch size {}; filled with the longest-starved",
            state.batches_drawn, state.batch_size
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let mut items = Vec::with_capacity(state.batch_size);
    for &class in &forced {
        let record = state.draw_record(class, pools.pool(class));
        items.push(BatchItem { record, class });
    }
    while items.len() < state.batch_size {
        let class = state.draw_class();
        let record = state.draw_record(class, pools.pool(class));
        items.push(BatchItem { record, class });
    }

    let present: BTreeSet<ClassId> = items.iter().map(|i| i.class).collect();
    for (class, seen) in state.last_seen.iter_mut() {
        *seen = if present.contains(class) {
            0
        } else {
            *seen + 1
        };
    }
    let batch = Batch {
        batch: state.batches_drawn,
        items,
        forced,
        warnings,
    };
    state.batches_drawn += 1;
    Ok(batch)
}
