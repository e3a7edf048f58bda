//! `satpipe`: command-line front end for the satpipe dataset toolkit.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use satpipe::augment::{
    augment_metadata, execute_plan, generate_false_detections, plan_augmentations, write_manifest,
    BoxSizeDistribution, Family, FeatureNormalizer, ManifestEntry,
};
use satpipe::bench::{run_bench, BackendRegistry, BenchSpec, BenchTest};
use satpipe::dataset::{compute_stats, ingest, DatasetIndex};
use satpipe::pipeline::{preprocess, Overrides, PipelineConfig, MANIFEST_FILE};
use satpipe::sampler::{compute_class_weights, sample_batch, ClassPools, SamplerState, Selection};
use satpipe::staging::{
    default_write_heavy_trace, simulate, stream_items, LatencyModel, StreamConfig, StreamItem,
    WorkloadTrace,
};
use satpipe::RasterImage;

const STAGING_DIR_ENV: &str = "SATPIPE_STAGING_DIR";

#[derive(Parser, Debug)]
#[command(
    name = "satpipe",
    version,
    about = "Satellite-imagery dataset preparation toolkit"
)]
struct Cli {
    /// Worker threads for parallel stages [default: available cores].
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// TOML pipeline config. Flags given on the command line take precedence
    /// over values in this file, which take precedence over built-in defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate a directory of image + sidecar pairs.
    Ingest {
        root: PathBuf,
        /// Write one JSON line per skipped record here.
        #[arg(long, value_name = "FILE")]
        report: Option<PathBuf>,
    },
    /// Print dataset statistics.
    Stats {
        root: PathBuf,
        /// Emit JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Turn every labeled box into a GSD-normalized, resized crop.
    Preprocess(PreprocessArgs),
    /// Write the offline augmentation variants of every image.
    Augment(AugmentArgs),
    /// Sample background crops as an extra `false_detection` class.
    FalseDets(FalseDetsArgs),
    /// Emit class-balanced batch manifests.
    Sample(SampleArgs),
    /// Time transform backends on a corpus of images.
    Bench(BenchArgs),
    /// Compare direct and staged I/O time for a workload trace.
    StageSim(StageSimArgs),
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    root: PathBuf,
    out_dir: PathBuf,
    /// Context ratio C: each side grows by C * AR / 2 of the box size
    /// [default: 1.5, the best-performing ratio in context-window sweeps].
    #[arg(long)]
    context_ratio: Option<f64>,
    /// Output meters per pixel [default: 1.0, a one-meter normalized grid].
    #[arg(long)]
    target_gsd: Option<f64>,
    /// Fixed output size as WxH [default: 224x224, the conventional square
    /// closest to the median image size].
    #[arg(long, value_parser = parse_size, conflicts_with = "buckets")]
    rescale: Option<[u32; 2]>,
    /// Resize each crop to the nearest of K resolution buckets instead of a
    /// fixed size [default: off].
    #[arg(long, value_name = "K")]
    buckets: Option<usize>,
}

#[derive(Args, Debug)]
struct AugmentArgs {
    root: PathBuf,
    out_dir: PathBuf,
    /// Families to combine, comma separated
    /// [default: rotations,flips,zooms,noise, i.e. all 180 variants].
    #[arg(long, value_delimiter = ',')]
    families: Option<Vec<Family>>,
    /// Also write jittered metadata for every record to metadata.jsonl.
    #[arg(long)]
    metadata: bool,
    /// Seed for metadata jitter [default: 0].
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct FalseDetsArgs {
    root: PathBuf,
    /// Output JSON lines, one sidecar per crop.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Largest allowed overlap with any labeled box, as a fraction of the
    /// crop area [default: 0.1].
    #[arg(long)]
    max_overlap: Option<f64>,
    /// Crops to attempt per image [default: 1].
    #[arg(long)]
    per_image: Option<usize>,
    /// [default: 0]
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct SampleArgs {
    root: PathBuf,
    /// Number of batch manifests to emit.
    #[arg(long, default_value_t = 1)]
    batches: u64,
    /// [default: 32]
    #[arg(long)]
    batch_size: Option<usize>,
    /// [default: 42]
    #[arg(long)]
    seed: Option<u64>,
    /// Guarantee window in batches [default: ceil(classes / batch size)].
    #[arg(long)]
    window: Option<u32>,
    /// Draw freely without forcing unseen classes in.
    #[arg(long)]
    no_guarantee: bool,
    /// Walk each class pool as a shuffled permutation instead of drawing
    /// with replacement.
    #[arg(long)]
    without_replacement: bool,
    /// Write manifests here instead of stdout.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    corpus: PathBuf,
    /// Timed runs per test and backend [default: 5, averaged].
    #[arg(long, default_value_t = 5)]
    runs: usize,
    /// Images drawn from the corpus in file-name order [default: 300].
    #[arg(long, default_value_t = 300)]
    images: usize,
    /// Tests to run, comma separated [default: T1,T2,T3].
    #[arg(long, value_delimiter = ',')]
    tests: Option<Vec<BenchTest>>,
    /// Backends to compare, comma separated; the first is the output
    /// baseline [default: reference].
    #[arg(long, value_delimiter = ',')]
    backends: Option<Vec<String>>,
    /// Process each run's images on all worker threads.
    #[arg(long)]
    parallel: bool,
    /// Also write the report as JSON.
    #[arg(long, value_name = "FILE")]
    json: Option<PathBuf>,
    /// Exit 0 even when backends disagree on outputs.
    #[arg(long)]
    allow_mismatch: bool,
}

#[derive(Args, Debug)]
struct StageSimArgs {
    /// Latency model, TOML or JSON [default: 4 ms random reads with
    /// sequential blocks 100x cheaper].
    #[arg(long, value_name = "FILE")]
    model: Option<PathBuf>,
    /// Workload trace as JSON lines [default: built-in write-heavy trace].
    #[arg(long, value_name = "FILE")]
    trace: Option<PathBuf>,
    /// Staging capacity in bytes [default: 268435456].
    #[arg(long)]
    capacity: Option<u64>,
    /// Sequential blocks in flight [default: 4].
    #[arg(long)]
    prefetch_depth: Option<usize>,
    /// Write the trace that was simulated to this file.
    #[arg(long, value_name = "FILE")]
    emit_trace: Option<PathBuf>,
}

/// Failure that maps to a specific exit code.
#[derive(Debug)]
struct Mismatch(usize);

impl std::fmt::Display for Mismatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} backend output mismatches", self.0)
    }
}

impl std::error::Error for Mismatch {}

fn parse_size(s: &str) -> Result<[u32; 2], String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WxH, got `{s}`"))?;
    let parse = |v: &str| match v.trim().parse::<u32>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(format!("invalid dimension `{v}` in `{s}`")),
    };
    Ok([parse(w)?, parse(h)?])
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<Mismatch>() => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let jobs = cli
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    let config = cli.config.as_deref();
    match cli.command {
        Command::Ingest { root, report } => cmd_ingest(&root, report.as_deref()),
        Command::Stats { root, json } => cmd_stats(&root, json),
        Command::Preprocess(args) => cmd_preprocess(args, config, jobs),
        Command::Augment(args) => cmd_augment(args, config, jobs),
        Command::FalseDets(args) => cmd_false_dets(args, config),
        Command::Sample(args) => cmd_sample(args, config),
        Command::Bench(args) => cmd_bench(args, jobs),
        Command::StageSim(args) => cmd_stage_sim(args, config),
    }
}

fn load_index(root: &Path) -> anyhow::Result<DatasetIndex> {
    let ingested = ingest(root)?;
    for w in &ingested.report.warnings {
        warn!("skipped {}: {}", w.file.display(), w.reason);
    }
    Ok(ingested.index)
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))?;
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn cmd_ingest(root: &Path, report: Option<&Path>) -> anyhow::Result<()> {
    let ingested = ingest(root)?;
    for w in &ingested.report.warnings {
        warn!("skipped {}: {}", w.file.display(), w.reason);
    }
    if let Some(path) = report {
        let mut out = create(path)?;
        ingested.report.write_jsonl(&mut out)?;
        out.flush()?;
    }
    let index = &ingested.index;
    println!(
        "{} records, {} boxes, {} classes, {} skipped",
        index.len(),
        index.total_boxes(),
        index.class_counts().len(),
        ingested.report.warnings.len()
    );
    Ok(())
}

fn cmd_stats(root: &Path, json: bool) -> anyhow::Result<()> {
    let stats = compute_stats(&load_index(root)?)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&stats)?);
    } else {
        print!("{}", stats.to_table());
    }
    Ok(())
}

fn cmd_preprocess(args: PreprocessArgs, config: Option<&Path>, jobs: usize) -> anyhow::Result<()> {
    let overrides = Overrides {
        context_ratio: args.context_ratio,
        target_gsd: args.target_gsd,
        rescale_target: args.rescale,
        bucket_count: args.buckets,
    };
    let cfg = PipelineConfig::resolve(config, &overrides)?;
    let index = load_index(&args.root)?;
    let report = preprocess(&index, &args.out_dir, &cfg, jobs)?;
    for w in &report.warnings {
        warn!("{w}");
    }
    if let Some(buckets) = &report.buckets {
        let sizes: Vec<String> = buckets
            .iter()
            .map(|b| format!("{}x{}", b.width, b.height))
            .collect();
        info!("buckets: {}", sizes.join(", "));
    }
    println!(
        "{} crops written to {}",
        report.entries.len(),
        args.out_dir.join(MANIFEST_FILE).display()
    );
    Ok(())
}

fn cmd_augment(args: AugmentArgs, config: Option<&Path>, jobs: usize) -> anyhow::Result<()> {
    let mut cfg = PipelineConfig::resolve(config, &Overrides::default())?;
    if let Some(families) = args.families {
        cfg.families = families;
    }
    if let Some(seed) = args.seed {
        cfg.noise.seed = seed;
    }
    let index = load_index(&args.root)?;
    let families: BTreeSet<Family> = cfg.families.iter().copied().collect();
    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;

    let stream_cfg = StreamConfig {
        staging: cfg.staging.clone(),
        consumers: jobs,
        staging_dir: std::env::var_os(STAGING_DIR_ENV).map(PathBuf::from),
    };
    let source = index.records().iter().map(|r| {
        std::fs::read(&r.image_path)
            .map(|bytes| StreamItem::new(r.id.clone(), bytes))
            .map_err(|e| satpipe::Error::Io {
                path: r.image_path.clone(),
                source: e,
            })
    });
    let results: Mutex<BTreeMap<String, Vec<ManifestEntry>>> = Mutex::new(BTreeMap::new());
    let report = stream_items(source, &stream_cfg, |item| {
        let image = RasterImage::decode(&item.bytes)?;
        let plan = plan_augmentations(&item.id, &families);
        let entries = execute_plan(&plan, &image, &args.out_dir, 1)?;
        results.lock().unwrap().insert(item.id.clone(), entries);
        Ok(())
    })?;
    info!(
        "streamed {} images, {} stalls, peak staging {} bytes",
        report.processed, report.stalls, report.peak_occupancy
    );

    let entries: Vec<ManifestEntry> = results
        .into_inner()
        .unwrap()
        .into_values()
        .flatten()
        .collect();
    let mut out = create(&args.out_dir.join(MANIFEST_FILE))?;
    write_manifest(&entries, &mut out)?;
    out.flush()?;

    if args.metadata {
        let normalizer = FeatureNormalizer::fit(&index);
        let mut out = create(&args.out_dir.join("metadata.jsonl"))?;
        for record in index.records() {
            let meta = augment_metadata(&record.metadata, &cfg.noise, &normalizer)?;
            let line = serde_json::json!({ "record_id": record.id, "metadata": meta });
            writeln!(out, "{line}")?;
        }
        out.flush()?;
    }

    if !report.failed.is_empty() {
        for f in &report.failed {
            warn!("{}: {}", f.id, f.reason);
        }
        bail!("{} of {} images failed", report.failed.len(), index.len());
    }
    println!(
        "{} variants written for {} images",
        entries.len(),
        report.processed
    );
    Ok(())
}

fn cmd_false_dets(args: FalseDetsArgs, config: Option<&Path>) -> anyhow::Result<()> {
    let mut cfg = PipelineConfig::resolve(config, &Overrides::default())?.false_detections;
    if let Some(v) = args.max_overlap {
        cfg.max_overlap_fraction = v;
    }
    if let Some(v) = args.per_image {
        cfg.crops_per_image = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    let index = load_index(&args.root)?;
    let sizes = BoxSizeDistribution::from_index(&index)?;
    let dets = generate_false_detections(&index, &sizes, &cfg)?;
    for w in &dets.warnings {
        warn!("{w}");
    }
    let dir = args.out.parent().unwrap_or(Path::new("."));
    let mut out = create(&args.out)?;
    dets.write_jsonl(&index, dir, &mut out)?;
    out.flush()?;
    println!(
        "{} false-detection crops written to {}",
        dets.crops.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_sample(args: SampleArgs, config: Option<&Path>) -> anyhow::Result<()> {
    let mut cfg = PipelineConfig::resolve(config, &Overrides::default())?.sampler;
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if args.window.is_some() {
        cfg.window = args.window;
    }
    if args.no_guarantee {
        cfg.guarantee = false;
    }
    if args.without_replacement {
        cfg.selection = Selection::WithoutReplacement;
    }
    let index = load_index(&args.root)?;
    let pools = ClassPools::from_index(&index);
    let weights = compute_class_weights(&pools.frequencies())?;
    let mut state = SamplerState::new(weights, &cfg)?;

    let mut out: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(create(path)?),
        None => Box::new(std::io::stdout().lock()),
    };
    for _ in 0..args.batches {
        let batch = sample_batch(&mut state, &pools)?;
        for w in &batch.warnings {
            warn!("batch {}: {w}", batch.batch);
        }
        serde_json::to_writer(&mut out, &batch.manifest_line(&pools))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn cmd_bench(args: BenchArgs, jobs: usize) -> anyhow::Result<()> {
    let mut spec = BenchSpec::new(&args.corpus);
    spec.runs = args.runs;
    spec.image_count = args.images;
    spec.parallel = args.parallel;
    if let Some(tests) = args.tests {
        spec.tests = tests;
    }
    if let Some(backends) = args.backends {
        spec.backends = backends;
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    let report = pool.install(|| run_bench(&spec, &BackendRegistry::with_builtins()))?;
    print!("{}", report.to_table());
    if let Some(path) = &args.json {
        let mut out = create(path)?;
        serde_json::to_writer_pretty(&mut out, &report)?;
        out.flush()?;
    }
    for m in &report.mismatches {
        warn!(
            "{} {}: {} differs from {} on {}",
            m.test,
            m.backend,
            m.backend,
            m.baseline,
            m.image.display()
        );
    }
    if report.has_mismatch() && !args.allow_mismatch {
        return Err(Mismatch(report.mismatches.len()).into());
    }
    Ok(())
}

fn cmd_stage_sim(args: StageSimArgs, config: Option<&Path>) -> anyhow::Result<()> {
    let cfg = PipelineConfig::resolve(config, &Overrides::default())?;
    let model = match &args.model {
        Some(path) => LatencyModel::load(path)?,
        None => cfg.latency,
    };
    let mut staging = cfg.staging;
    if let Some(v) = args.capacity {
        staging.capacity = v;
    }
    if let Some(v) = args.prefetch_depth {
        staging.prefetch_depth = v;
    }
    let trace = match &args.trace {
        Some(path) => {
            let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            WorkloadTrace::read_jsonl(BufReader::new(file))?
        }
        None => default_write_heavy_trace(),
    };
    if let Some(path) = &args.emit_trace {
        let mut out = create(path)?;
        trace.write_jsonl(&mut out)?;
        out.flush()?;
    }
    let report = simulate(&trace, &model, &staging)?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}
