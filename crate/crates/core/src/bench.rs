//! Transform benchmark harness.
//!
//! Three fixed pipelines are timed over an image corpus for every registered
//! backend:
//!
//! | test | pipeline                                   |
//! |------|--------------------------------------------|
//! | T1   | load, Gaussian blur (sigma 2), flip east-west |
//! | T2   | load, rotate 45 degrees                     |
//! | T3   | load, rescale to 224x224                    |
//!
//! One untimed warm-up pass per backend and test precedes the timed runs and
//! doubles as the output-equivalence check against the first backend.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::transforms::{self, FlipAxis};
use crate::{Error, RasterImage, Result};

/// Largest per-sample difference still counted as equivalent output.
pub const OUTPUT_TOLERANCE: u8 = 2;

/// A named provider of the benchmarked operations.
pub trait TransformBackend: Send + Sync {
    fn name(&self) -> &str;

    fn load(&self, path: &Path) -> Result<RasterImage> {
        RasterImage::load(path)
    }

    fn blur(&self, image: &RasterImage, sigma: f64) -> Result<RasterImage>;

    fn flip(&self, image: &RasterImage, axis: FlipAxis) -> Result<RasterImage>;

    fn rotate(&self, image: &RasterImage, degrees: u32) -> Result<RasterImage>;

    fn rescale(&self, image: &RasterImage, width: u32, height: u32) -> Result<RasterImage>;
}

/// The crate's own transforms.
#[derive(Debug, Clone, Default)]
pub struct ReferenceBackend {
    name: String,
}

impl ReferenceBackend {
    pub fn new() -> Self {
        Self::named("reference")
    }

    /// Same implementation under another name, for self-comparison.
    pub fn named(name: impl Into<String>) -> Self {
        Self { name: name.into() }
    }
}

impl TransformBackend for ReferenceBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn blur(&self, image: &RasterImage, sigma: f64) -> Result<RasterImage> {
        transforms::blur(image, sigma)
    }

    fn flip(&self, image: &RasterImage, axis: FlipAxis) -> Result<RasterImage> {
        Ok(transforms::flip(image, axis))
    }

    fn rotate(&self, image: &RasterImage, degrees: u32) -> Result<RasterImage> {
        transforms::rotate(image, degrees)
    }

    fn rescale(&self, image: &RasterImage, width: u32, height: u32) -> Result<RasterImage> {
        transforms::rescale(image, width, height)
    }
}

/// Reference transforms except for blur, which convolves with the full 2-D
/// kernel instead of two 1-D passes: `O(r^2)` work per pixel rather than
/// `O(r)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct NaiveBlurBackend;

impl TransformBackend for NaiveBlurBackend {
    fn name(&self) -> &str {
        "naive"
    }

    fn blur(&self, image: &RasterImage, sigma: f64) -> Result<RasterImage> {
        let kernel = transforms::gaussian_kernel(sigma)?;
        let r = (kernel.len() / 2) as i64;
        let (w, h) = (i64::from(image.width()), i64::from(image.height()));
        let ch = image.channels();
        RasterImage::from_fn(image.width(), image.height(), ch, |x, y, c| {
            let mut acc = 0f64;
            for (ky, wy) in kernel.iter().enumerate() {
                let sy = (i64::from(y) + ky as i64 - r).clamp(0, h - 1) as u32;
                for (kx, wx) in kernel.iter().enumerate() {
                    let sx = (i64::from(x) + kx as i64 - r).clamp(0, w - 1) as u32;
                    acc += f64::from(*wy) * f64::from(*wx) * f64::from(image.get(sx, sy, c));
                }
            }
            acc.round().clamp(0.0, 255.0) as u8
        })
    }

    fn flip(&self, image: &RasterImage, axis: FlipAxis) -> Result<RasterImage> {
        Ok(transforms::flip(image, axis))
    }

    fn rotate(&self, image: &RasterImage, degrees: u32) -> Result<RasterImage> {
        transforms::rotate(image, degrees)
    }

    fn rescale(&self, image: &RasterImage, width: u32, height: u32) -> Result<RasterImage> {
        transforms::rescale(image, width, height)
    }
}

/// Backends addressable by name.
#[derive(Clone, Default)]
pub struct BackendRegistry {
    backends: BTreeMap<String, Arc<dyn TransformBackend>>,
}

impl BackendRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// `reference`, `reference-copy` (identical, for self-comparison) and `naive`.
    pub fn with_builtins() -> Self {
        let mut r = Self::new();
        r.register(ReferenceBackend::new());
        r.register(ReferenceBackend::named("reference-copy"));
        r.register(NaiveBlurBackend);
        r
    }

    pub fn register(&mut self, backend: impl TransformBackend + 'static) {
        self.backends
            .insert(backend.name().to_string(), Arc::new(backend));
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn TransformBackend>> {
        self.backends
            .get(name)
            .cloned()
            .ok_or_else(|| Error::UnknownBackend(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.backends.keys().map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BenchTest {
    T1,
    T2,
    T3,
}

impl BenchTest {
    pub const ALL: [BenchTest; 3] = [BenchTest::T1, BenchTest::T2, BenchTest::T3];

    pub fn describe(self) -> &'static str {
        match self {
            BenchTest::T1 => "load + blur(sigma=2) + flip(east_west)",
            BenchTest::T2 => "load + rotate(45)",
            BenchTest::T3 => "load + rescale(224x224)",
        }
    }

    pub fn run(self, backend: &dyn TransformBackend, path: &Path) -> Result<RasterImage> {
        let image = backend.load(path)?;
        match self {
            BenchTest::T1 => backend.flip(&backend.blur(&image, 2.0)?, FlipAxis::EastWest),
            BenchTest::T2 => backend.rotate(&image, 45),
            BenchTest::T3 => backend.rescale(&image, 224, 224),
        }
    }
}

impl std::str::FromStr for BenchTest {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "T1" => Ok(BenchTest::T1),
            "T2" => Ok(BenchTest::T2),
            "T3" => Ok(BenchTest::T3),
            _ => Err(Error::invalid(format!("unknown bench test `{s}`"))),
        }
    }
}

impl std::fmt::Display for BenchTest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    pub corpus_dir: PathBuf,
    pub image_count: usize,
    pub runs: usize,
    pub tests: Vec<BenchTest>,
    pub backends: Vec<String>,
    /// Process the images of each run on all cores.
    pub parallel: bool,
}

impl BenchSpec {
    pub fn new(corpus_dir: impl Into<PathBuf>) -> Self {
        Self {
            corpus_dir: corpus_dir.into(),
            image_count: 300,
            runs: 5,
            tests: BenchTest::ALL.to_vec(),
            backends: vec!["reference".into()],
            parallel: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 || self.image_count == 0 {
            return Err(Error::invalid("runs and image_count must be >= 1"));
        }
        if self.tests.is_empty() || self.backends.is_empty() {
            return Err(Error::invalid("need at least one test and one backend"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub images: usize,
    pub skipped: Vec<PathBuf>,
    pub mean_width: f64,
    pub mean_height: f64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestTiming {
    pub test: BenchTest,
    pub backend: String,
    pub mean_seconds: f64,
    /// Sample standard deviation; 0 for a single run.
    pub stddev_seconds: f64,
    pub run_seconds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mismatch {
    pub test: BenchTest,
    pub backend: String,
    pub baseline: String,
    pub image: PathBuf,
    pub max_abs_diff: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub corpus: CorpusSummary,
    pub runs: usize,
    pub parallel: bool,
    /// Always true: the warm-up pass is never timed.
    pub warm_up_excluded: bool,
    /// Grouped by test, fastest backend first.
    pub timings: Vec<TestTiming>,
    pub mismatches: Vec<Mismatch>,
}

impl BenchReport {
    pub fn has_mismatch(&self) -> bool {
        !self.mismatches.is_empty()
    }

    /// Backend names for `test`, fastest first.
    pub fn ranking(&self, test: BenchTest) -> Vec<&str> {
        self.timings
            .iter()
            .filter(|t| t.test == test)
            .map(|t| t.backend.as_str())
            .collect()
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "corpus: {} images (mean {:.1}x{:.1}), {} skipped, sha256 {}",
            self.corpus.images,
            self.corpus.mean_width,
            self.corpus.mean_height,
            self.corpus.skipped.len(),
            self.corpus.sha256
        );
        let mode = if self.parallel {
            "parallel"
        } else {
            "single-threaded"
        };
        let _ = writeln!(out, "runs: {} ({mode}, warm-up excluded)\n", self.runs);
        let _ = writeln!(
            out,
            "{:<5}{:<18}{:>14}{:>14}",
            "test", "backend", "mean (s)", "stddev (s)"
        );
        for t in &self.timings {
            let _ = writeln!(
                out,
                "{:<5}{:<18}{:>14.6}{:>14.6}",
                t.test.to_string(),
                t.backend,
                t.mean_seconds,
                t.stddev_seconds
            );
        }
        if self.has_mismatch() {
            let _ = writeln!(
                out,
                "\nOUTPUT MISMATCH: {} case(s) beyond +/-{OUTPUT_TOLERANCE}; timing comparisons are invalid",
                self.mismatches.len()
            );
        }
        out
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
}

/// First `count` decodable images of `dir` in file-name order, with the
/// undecodable ones that were passed over.
pub fn select_corpus(dir: &Path, count: usize) -> Result<(Vec<PathBuf>, CorpusSummary)> {
    if !dir.is_dir() {
        return Err(Error::MissingDirectory(dir.to_path_buf()));
    }
    let mut candidates: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image(p))
        .collect();
    candidates.sort();

    let mut chosen = Vec::with_capacity(count);
    let mut skipped = Vec::new();
    let mut hasher = Sha256::new();
    let (mut sum_w, mut sum_h) = (0f64, 0f64);
    for path in candidates {
        if chosen.len() == count {
            break;
        }
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        match RasterImage::decode(&bytes) {
            Ok(img) => {
                sum_w += f64::from(img.width());
                sum_h += f64::from(img.height());
                let name = path.file_name().unwrap_or_default().to_string_lossy();
                hasher.update((name.len() as u64).to_le_bytes());
                hasher.update(name.as_bytes());
                hasher.update((bytes.len() as u64).to_le_bytes());
                hasher.update(&bytes);
                chosen.push(path);
            }
            Err(e) => {
                log::warn!("skipping undecodable {}: {e}", path.display());
                skipped.push(path);
            }
        }
    }
    if chosen.len() < count {
        return Err(Error::invalid(format!(
            "corpus {} has {} decodable images, need {count}",
            dir.display(),
            chosen.len()
        )));
    }
    let n = chosen.len() as f64;
    let summary = CorpusSummary {
        images: chosen.len(),
        skipped,
        mean_width: sum_w / n,
        mean_height: sum_h / n,
        sha256: hex::encode(hasher.finalize()),
    };
    Ok((chosen, summary))
}

/// `(mean, sample stddev)`.
pub fn mean_stddev(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn run_once(
    test: BenchTest,
    backend: &dyn TransformBackend,
    images: &[PathBuf],
    parallel: bool,
) -> Result<()> {
    if parallel {
        images
            .par_iter()
            .try_for_each(|p| test.run(backend, p).map(drop))
    } else {
        images
            .iter()
            .try_for_each(|p| test.run(backend, p).map(drop))
    }
}

/// Runs every test for every backend named in `spec`.
pub fn run_bench(spec: &BenchSpec, registry: &BackendRegistry) -> Result<BenchReport> {
    spec.validate()?;
    let backends = spec
        .backends
        .iter()
        .map(|name| registry.get(name))
        .collect::<Result<Vec<_>>>()?;
    let (images, corpus) = select_corpus(&spec.corpus_dir, spec.image_count)?;

    let mut timings = Vec::new();
    let mut mismatches = Vec::new();
    for &test in &spec.tests {
        let baseline: Vec<RasterImage> = images
            .iter()
            .map(|p| test.run(backends[0].as_ref(), p))
            .collect::<Result<_>>()?;
        for backend in &backends[1..] {
            for (path, expected) in images.iter().zip(&baseline) {
                let out = test.run(backend.as_ref(), path)?;
                let diff = out.max_abs_diff(expected);
                if diff.is_none_or(|d| d > OUTPUT_TOLERANCE) {
                    mismatches.push(Mismatch {
                        test,
                        backend: backend.name().to_string(),
                        baseline: backends[0].name().to_string(),
                        image: path.clone(),
                        max_abs_diff: diff,
                    });
                }
            }
        }

        let mut per_test = Vec::with_capacity(backends.len());
        for backend in &backends {
            let mut run_seconds = Vec::with_capacity(spec.runs);
            for _ in 0..spec.runs {
                let start = Instant::now();
                run_once(test, backend.as_ref(), &images, spec.parallel)?;
                run_seconds.push(start.elapsed().as_secs_f64());
            }
            let (mean_seconds, stddev_seconds) = mean_stddev(&run_seconds);
            per_test.push(TestTiming {
                test,
                backend: backend.name().to_string(),
                mean_seconds,
                stddev_seconds,
                run_seconds,
            });
        }
        per_test.sort_by(|a, b| a.mean_seconds.total_cmp(&b.mean_seconds));
        timings.extend(per_test);
    }

    if !mismatches.is_empty() {
        log::warn!("{} output mismatches between backends", mismatches.len());
    }
    Ok(BenchReport {
        corpus,
        runs: spec.runs,
        parallel: spec.parallel,
        warm_up_excluded: true,
        timings,
        mismatches,
    })
}
