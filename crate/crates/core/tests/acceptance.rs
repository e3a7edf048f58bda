//! Acceptance criteria, one PASS/FAIL line each. Runs with its own harness
//! so the lines are always printed; exits non-zero if any criterion fails.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

mod common;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;
use std::time::{Duration, Instant};

use chrono::Utc;
use satpipe::augment::{
    execute_plan, generate_false_detections, plan_augmentations, BoxSizeDistribution,
    FalseDetectionConfig, Family,
};
use satpipe::bench::{run_bench, BackendRegistry, BenchSpec, BenchTest};
use satpipe::dataset::{
    ingest, CategoryLabel, ClassId, DatasetIndex, ImageMetadata, ImageRecord, LabeledBox,
};
use satpipe::geometry::{crop, expand_context, BoundingBox, ContextRatio};
use satpipe::pipeline::{preprocess, PipelineConfig};
use satpipe::rng::SplitMix64;
use satpipe::sampler::{
    compute_class_weights, sample_batch, ClassPools, SamplerConfig, SamplerState,
};
use satpipe::staging::{
    default_write_heavy_trace, run_direct, run_staged, LatencyModel, StagingConfig, TraceOp,
};
use satpipe::transforms::{
    blur, flip, normalize_gsd, normalized_dims, rescale, rotate, zoom, FlipAxis,
};
use satpipe::RasterImage;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn within(limit: Duration, start: Instant) -> Outcome {
    let took = start.elapsed();
    if took > limit {
        Err(format!(
            "took {:.2} s, limit {:.0} s",
            took.as_secs_f64(),
            limit.as_secs_f64()
        ))
    } else {
        Ok(format!("{:.2} s", took.as_secs_f64()))
    }
}

fn random_image(rng: &mut SplitMix64, max_side: u64) -> RasterImage {
    let w = 1 + rng.below(max_side) as u32;
    let h = 1 + rng.below(max_side) as u32;
    let ch = if rng.below(2) == 0 { 1 } else { 3 };
    let pixels = (0..w * h * u32::from(ch))
        .map(|_| rng.below(256) as u8)
        .collect();
    RasterImage::from_raw(w, h, ch, pixels).unwrap()
}

fn max_diff(a: &RasterImage, b: &RasterImage) -> Option<u8> {
    if a.dims() != b.dims() || a.channels() != b.channels() {
        return None;
    }
    a.pixels()
        .iter()
        .zip(b.pixels())
        .map(|(x, y)| x.abs_diff(*y))
        .max()
}

// 1 ------------------------------------------------------------------------

/// Exact rational evaluation: with `c = k / 100` the per-side padding is
/// `k * W * w / (200 * H)` pixels; the origin moves out by its ceiling.
fn context_oracle(b: [u32; 4], iw: u32, ih: u32, k: u64) -> ([u32; 4], bool) {
    let den = 200 * u64::from(ih);
    let pad = |len: u32| (k * u64::from(iw) * u64::from(len)).div_ceil(den) as i64;
    let (px, py) = (pad(b[2]), pad(b[3]));
    let (x0, y0) = (i64::from(b[0]) - px, i64::from(b[1]) - py);
    let (x1, y1) = (i64::from(b[0] + b[2]) + px, i64::from(b[1] + b[3]) + py);
    let clamped = x0 < 0 || y0 < 0 || x1 > i64::from(iw) || y1 > i64::from(ih);
    let (x0, y0) = (x0.max(0), y0.max(0));
    let (x1, y1) = (x1.min(i64::from(iw)), y1.min(i64::from(ih)));
    (
        [x0 as u32, y0 as u32, (x1 - x0) as u32, (y1 - y0) as u32],
        clamped,
    )
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = SplitMix64::new(1);
    let mut zero_cases = 0;
    for case in 0..1000 {
        let iw = 1 + rng.below(2000) as u32;
        let ih = 1 + rng.below(2000) as u32;
        let bw = 1 + rng.below(u64::from(iw)) as u32;
        let bh = 1 + rng.below(u64::from(ih)) as u32;
        let bx = rng.below(u64::from(iw - bw) + 1) as u32;
        let by = rng.below(u64::from(ih - bh) + 1) as u32;
        let k = if case % 10 == 0 { 0 } else { rng.below(401) };
        let bbox = BoundingBox::new(bx, by, bw, bh).unwrap();
        let ratio = ContextRatio::new(k as f64 / 100.0).unwrap();
        let got = expand_context(bbox, iw, ih, ratio).map_err(|e| e.to_string())?;
        let (expected, clamped) = context_oracle([bx, by, bw, bh], iw, ih, k);
        ensure!(
            <[u32; 4]>::from(got.bbox) == expected && got.clamped == clamped,
            "case {case}: image {iw}x{ih} box {:?} c={} gave {:?} (clamped {}), oracle {:?} (clamped {clamped})",
            [bx, by, bw, bh],
            ratio.value(),
            <[u32; 4]>::from(got.bbox),
            got.clamped,
            expected
        );
        if k == 0 {
            zero_cases += 1;
            ensure!(got.bbox == bbox, "case {case}: c = 0 changed the box");
        }
    }
    let t = within(Duration::from_secs(1), start)?;
    Ok(format!("1000 cases exact, {zero_cases} with c = 0, {t}"))
}

// 2 ------------------------------------------------------------------------

fn criterion_2() -> Outcome {
    let mut rng = SplitMix64::new(2);
    for case in 0..500 {
        // gsd = a / 100 and target = b / 100, so the oracle is integer
        // rounding of dim * a / b, halves rounding up.
        let a = 10 + rng.below(491);
        let b = if case % 5 == 0 {
            a
        } else {
            10 + rng.below(491)
        };
        let (w, h) = (1 + rng.below(3000) as u32, 1 + rng.below(3000) as u32);
        let oracle = |d: u32| ((2 * u64::from(d) * a + b) / (2 * b)).max(1) as u32;
        let got =
            normalized_dims(w, h, a as f64 / 100.0, b as f64 / 100.0).map_err(|e| e.to_string())?;
        ensure!(
            got == (oracle(w), oracle(h)),
            "case {case}: {w}x{h} gsd {a}/100 target {b}/100 gave {got:?}, oracle {:?}",
            (oracle(w), oracle(h))
        );
        if case < 100 {
            let small = RasterImage::new(1 + w % 40, 1 + h % 40, 1).unwrap();
            let out = normalize_gsd(&small, a as f64 / 100.0, b as f64 / 100.0)
                .map_err(|e| e.to_string())?;
            ensure!(
                out.dims() == (oracle(small.width()), oracle(small.height())),
                "case {case}: raster dims {:?} disagree with oracle",
                out.dims()
            );
            if a == b {
                ensure!(out == small, "case {case}: identity GSD changed pixels");
            }
        }
    }
    Ok("500 cases exact, including gsd = target identity".into())
}

// 3 ------------------------------------------------------------------------

fn bilinear_oracle(img: &RasterImage, w: u32, h: u32) -> RasterImage {
    let (sw, sh) = (f64::from(img.width()), f64::from(img.height()));
    RasterImage::from_fn(w, h, img.channels(), |x, y, c| {
        let sx = ((f64::from(x) + 0.5) * sw / f64::from(w) - 0.5).clamp(0.0, sw - 1.0);
        let sy = ((f64::from(y) + 0.5) * sh / f64::from(h) - 0.5).clamp(0.0, sh - 1.0);
        let (x0, y0) = (sx.floor() as u32, sy.floor() as u32);
        let (x1, y1) = (
            (x0 + 1).min(img.width() - 1),
            (y0 + 1).min(img.height() - 1),
        );
        let (fx, fy) = (sx - sx.floor(), sy - sy.floor());
        let p = |x, y| f64::from(img.get(x, y, c));
        let v = p(x0, y0) * (1.0 - fx) * (1.0 - fy)
            + p(x1, y0) * fx * (1.0 - fy)
            + p(x0, y1) * (1.0 - fx) * fy
            + p(x1, y1) * fx * fy;
        v.round().clamp(0.0, 255.0) as u8
    })
    .unwrap()
}

fn zoom_oracle(img: &RasterImage, f: f64) -> RasterImage {
    let (w, h) = img.dims();
    if f >= 1.0 {
        let cw = ((f64::from(w) / f).round() as u32).clamp(1, w);
        let ch = ((f64::from(h) / f).round() as u32).clamp(1, h);
        let (ox, oy) = ((w - cw) / 2, (h - ch) / 2);
        let window =
            RasterImage::from_fn(cw, ch, img.channels(), |x, y, c| img.get(ox + x, oy + y, c))
                .unwrap();
        return bilinear_oracle(&window, w, h);
    }
    let nw = ((f64::from(w) * f).round() as u32).clamp(1, w);
    let nh = ((f64::from(h) * f).round() as u32).clamp(1, h);
    let small = bilinear_oracle(img, nw, nh);
    let (ox, oy) = ((w - nw) / 2, (h - nh) / 2);
    RasterImage::from_fn(w, h, img.channels(), |x, y, c| {
        if x >= ox && x < ox + nw && y >= oy && y < oy + nh {
            small.get(x - ox, y - oy, c)
        } else {
            0
        }
    })
    .unwrap()
}

fn blur_oracle(img: &RasterImage, sigma: f64) -> RasterImage {
    let r = (3.0 * sigma).ceil() as i64;
    let mut weights = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            weights.push((
                dx,
                dy,
                (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp(),
            ));
        }
    }
    let total: f64 = weights.iter().map(|w| w.2).sum();
    let (w, h) = (i64::from(img.width()), i64::from(img.height()));
    RasterImage::from_fn(img.width(), img.height(), img.channels(), |x, y, c| {
        let mut acc = 0.0;
        for &(dx, dy, wt) in &weights {
            let sx = (i64::from(x) + dx).clamp(0, w - 1) as u32;
            let sy = (i64::from(y) + dy).clamp(0, h - 1) as u32;
            acc += wt * f64::from(img.get(sx, sy, c));
        }
        (acc / total).round().clamp(0.0, 255.0) as u8
    })
    .unwrap()
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut rng = SplitMix64::new(3);
    let err = |e: satpipe::Error| e.to_string();
    let mut worst = 0u8;
    for case in 0..200 {
        let img = random_image(&mut rng, 16);
        let r90 = |i: &RasterImage| rotate(i, 90).unwrap();
        ensure!(
            r90(&r90(&r90(&r90(&img)))) == img,
            "case {case}: rotate90^4 != identity"
        );
        ensure!(
            r90(&r90(&img)) == rotate(&img, 180).map_err(err)?,
            "case {case}: rotate90^2 != rotate180"
        );
        for axis in [FlipAxis::EastWest, FlipAxis::NorthSouth] {
            ensure!(
                flip(&flip(&img, axis), axis) == img,
                "case {case}: flip {axis:?} not an involution"
            );
        }
        ensure!(
            flip(&flip(&img, FlipAxis::EastWest), FlipAxis::NorthSouth)
                == rotate(&img, 180).map_err(err)?,
            "case {case}: flipEW then flipNS != rotate180"
        );
        ensure!(
            flip(&r90(&img), FlipAxis::EastWest) == r90(&flip(&img, FlipAxis::NorthSouth)),
            "case {case}: dihedral relation r*s != s'*r"
        );

        let (tw, th) = (1 + rng.below(16) as u32, 1 + rng.below(16) as u32);
        let factor = 1.0 / 1.5 + rng.next_f64() * (1.5 - 1.0 / 1.5);
        let sigma = 0.5 + rng.next_f64() * 2.5;
        let checks = [
            (
                "rescale",
                rescale(&img, tw, th).map_err(err)?,
                bilinear_oracle(&img, tw, th),
            ),
            (
                "zoom",
                zoom(&img, factor).map_err(err)?,
                zoom_oracle(&img, factor),
            ),
            (
                "blur",
                blur(&img, sigma).map_err(err)?,
                blur_oracle(&img, sigma),
            ),
        ];
        for (name, got, want) in checks {
            let d = max_diff(&got, &want);
            ensure!(
                d.is_some_and(|d| d <= 1),
                "case {case}: {name} on {}x{}x{} differs from oracle by {d:?}",
                img.width(),
                img.height(),
                img.channels()
            );
            worst = worst.max(d.unwrap_or(0));
        }
    }
    let t = within(Duration::from_secs(30), start)?;
    Ok(format!(
        "200 cases, group identities exact, max resample deviation {worst}, {t}"
    ))
}

// 4 ------------------------------------------------------------------------

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let source = common::pattern(64, 64, 4);
    let plan = plan_augmentations("fixture", &Family::ALL.into_iter().collect());
    ensure!(
        plan.steps.len() == 180,
        "plan has {} steps",
        plan.steps.len()
    );
    let run = |jobs: usize| -> Result<Vec<(String, String)>, String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let manifest = execute_plan(&plan, &source, dir.path(), jobs).map_err(|e| e.to_string())?;
        for entry in &manifest {
            let on_disk = RasterImage::load(&entry.file).map_err(|e| e.to_string())?;
            if on_disk.digest() != entry.sha256 {
                return Err(format!(
                    "{} does not match its manifest digest",
                    entry.file.display()
                ));
            }
        }
        Ok(manifest
            .into_iter()
            .map(|e| (e.variant_tag, e.sha256))
            .collect())
    };
    let first = run(1)?;
    let second = run(1)?;
    let parallel = run(4)?;
    ensure!(first.len() == 180, "{} manifest entries", first.len());
    ensure!(first == second, "digests differ between two runs");
    ensure!(
        first == parallel,
        "digests differ between --jobs 1 and --jobs 4"
    );
    let t = within(Duration::from_secs(60), start)?;
    Ok(format!(
        "180 variants, identical digests across runs and jobs 1/4, {t}"
    ))
}

// 5 ------------------------------------------------------------------------

fn imbalanced_frequencies(classes: usize) -> BTreeMap<ClassId, f64> {
    let raw: Vec<f64> = (0..classes)
        .map(|j| (-(100f64.ln()) * j as f64 / (classes - 1) as f64).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.iter()
        .enumerate()
        .map(|(j, r)| (ClassId(j as u16), r / total))
        .collect()
}

fn pools(classes: usize, per_class: usize) -> ClassPools {
    let ids: Vec<String> = (0..classes * per_class).map(|i| format!("r{i}")).collect();
    ClassPools::from_pairs(
        ids.iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), ClassId((i / per_class) as u16))),
    )
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let freqs = imbalanced_frequencies(63);
    let spread = freqs[&ClassId(0)] / freqs[&ClassId(62)];
    ensure!((spread - 100.0).abs() < 1e-6, "frequency spread {spread}");
    let weights = compute_class_weights(&freqs).map_err(|e| e.to_string())?;
    let cfg = SamplerConfig {
        batch_size: 100,
        guarantee: false,
        ..SamplerConfig::default()
    };
    let mut state = SamplerState::new(weights.clone(), &cfg).map_err(|e| e.to_string())?;
    let p = pools(63, 3);
    let mut counts = BTreeMap::new();
    for _ in 0..1000 {
        for item in sample_batch(&mut state, &p)
            .map_err(|e| e.to_string())?
            .items
        {
            *counts.entry(item.class).or_insert(0usize) += 1;
        }
    }
    let l1: f64 = weights
        .iter()
        .map(|(c, w)| (counts.get(&c).copied().unwrap_or(0) as f64 / 100_000.0 - w).abs())
        .sum();
    ensure!(l1 <= 0.02, "L1 distance {l1:.4} > 0.02 (seed {})", cfg.seed);

    let three: BTreeMap<ClassId, f64> =
        [(ClassId(0), 0.7), (ClassId(1), 0.2), (ClassId(2), 0.1)].into();
    let w3 = compute_class_weights(&three).map_err(|e| e.to_string())?;
    for (c, expected) in [(0, 0.3114), (1, 0.4014), (2, 0.2872)] {
        let got = w3.get(ClassId(c));
        ensure!(
            (got - expected).abs() <= 1e-3,
            "3-class weight {c}: {got:.5} vs {expected}"
        );
    }
    let t = within(Duration::from_secs(10), start)?;
    Ok(format!(
        "L1 = {l1:.4} over 100000 draws (seed {}), 3-class example matches, {t}",
        cfg.seed
    ))
}

// 6 ------------------------------------------------------------------------

fn criterion_6() -> Outcome {
    let weights = compute_class_weights(&imbalanced_frequencies(63)).map_err(|e| e.to_string())?;
    let cfg = SamplerConfig {
        batch_size: 32,
        ..SamplerConfig::default()
    };
    let mut state = SamplerState::new(weights, &cfg).map_err(|e| e.to_string())?;
    let window = state.guarantee_window().unwrap_or(0) as usize;
    ensure!(window == 2, "window {window}, expected ceil(63/32) = 2");
    let p = pools(63, 2);
    let mut batches: Vec<BTreeSet<ClassId>> = Vec::with_capacity(1000);
    for _ in 0..1000 {
        batches.push(
            sample_batch(&mut state, &p)
                .map_err(|e| e.to_string())?
                .classes(),
        );
    }
    let violations = batches
        .windows(window)
        .filter(|span| span.iter().flatten().collect::<BTreeSet<_>>().len() != 63)
        .count();
    ensure!(violations == 0, "{violations} windows miss a class");
    Ok(format!(
        "1000 batches, {} windows of 2, zero violations",
        batches.len() - 1
    ))
}

// 7 ------------------------------------------------------------------------

struct OracleModel {
    rr: u64,
    rc: u64,
    rd: u64,
    seq: u64,
    sr: u64,
    sc: u64,
    sd: u64,
    block: u64,
}

impl OracleModel {
    fn from(m: &LatencyModel) -> Self {
        let ns = |s: f64| (s * 1e9).round() as u64;
        Self {
            rr: ns(m.random_read_latency),
            rc: ns(m.random_create_latency),
            rd: ns(m.random_delete_latency),
            seq: ns(m.sequential_block_latency),
            sr: ns(m.staging_read_latency),
            sc: ns(m.staging_create_latency),
            sd: ns(m.staging_delete_latency),
            block: m.block_size,
        }
    }
}

#[derive(Clone, Copy)]
enum Kind {
    Source(usize),
    TempRead,
    Create(u64),
    Delete(u64),
}

struct OracleRun {
    direct: u64,
    staged: u64,
    peak: u64,
    stalls: u64,
}

/// Discrete-event replay: a reader process issuing blocks and a worker
/// process walking the trace, advanced event by event.
fn event_oracle(ops: &[TraceOp], m: &OracleModel, capacity: u64, depth: usize) -> OracleRun {
    let mut live: BTreeMap<&str, u64> = BTreeMap::new();
    let mut kinds = Vec::new();
    let mut sources: Vec<u64> = Vec::new();
    let (mut temp, mut max_temp, mut direct) = (0u64, 0u64, 0u64);
    for op in ops {
        match op {
            TraceOp::Read { item, size } => {
                direct += m.rr;
                if live.contains_key(item.as_str()) {
                    kinds.push(Kind::TempRead);
                } else {
                    kinds.push(Kind::Source(sources.len()));
                    sources.push(size.unwrap());
                }
            }
            TraceOp::Create { item, size } => {
                direct += m.rc;
                live.insert(item, *size);
                temp += size;
                max_temp = max_temp.max(temp);
                kinds.push(Kind::Create(*size));
            }
            TraceOp::Delete { item } => {
                direct += m.rd;
                let size = live.remove(item.as_str()).unwrap();
                temp -= size;
                kinds.push(Kind::Delete(size));
            }
        }
    }
    let budget = capacity - max_temp;

    let blocks: Vec<u64> = sources.iter().map(|s| s.div_ceil(m.block).max(1)).collect();
    let mut remaining = blocks.clone();
    let mut fetched: Vec<Option<u64>> = vec![None; sources.len()];
    let mut in_flight: VecDeque<(u64, usize)> = VecDeque::new();
    let (mut next_item, mut issued_of_next) = (0usize, 0u64);
    let mut stalled_item = usize::MAX;
    let (mut resident, mut temp_live, mut peak, mut stalls) = (0u64, 0u64, 0u64, 0u64);

    let mut pc = 0usize;
    let mut busy_until: Option<u64> = None;
    let mut now = 0u64;
    let mut end = 0u64;

    loop {
        while in_flight.front().is_some_and(|&(t, _)| t <= now) {
            let (_, item) = in_flight.pop_front().unwrap();
            remaining[item] -= 1;
            if remaining[item] == 0 {
                fetched[item] = Some(now);
            }
        }

        // Worker: finish the current op if due, then start the next one.
        loop {
            if let Some(until) = busy_until {
                if until > now {
                    break;
                }
                let done = match kinds[pc] {
                    Kind::Source(i) => match fetched[i] {
                        Some(_) => {
                            resident -= sources[i];
                            true
                        }
                        None => false,
                    },
                    Kind::Delete(size) => {
                        temp_live -= size;
                        true
                    }
                    _ => true,
                };
                if !done {
                    break;
                }
                busy_until = None;
                pc += 1;
                end = now;
            }
            if pc == kinds.len() {
                break;
            }
            busy_until = Some(
                now + match kinds[pc] {
                    Kind::Source(_) | Kind::TempRead => m.sr,
                    Kind::Create(size) => {
                        temp_live += size;
                        peak = peak.max(resident + temp_live);
                        m.sc
                    }
                    Kind::Delete(_) => m.sd,
                },
            );
        }

        // Reader: issue blocks while a slot is free.
        while next_item < sources.len() && in_flight.len() < depth {
            if issued_of_next == 0 {
                if resident + sources[next_item] > budget {
                    if stalled_item != next_item {
                        stalled_item = next_item;
                        stalls += 1;
                    }
                    break;
                }
                resident += sources[next_item];
                peak = peak.max(resident + temp_live);
            }
            in_flight.push_back((now + m.seq, next_item));
            issued_of_next += 1;
            if issued_of_next == blocks[next_item] {
                next_item += 1;
                issued_of_next = 0;
            }
        }

        if pc == kinds.len() {
            break;
        }
        let mut next = u64::MAX;
        if let Some(&(t, _)) = in_flight.front() {
            next = next.min(t);
        }
        if let Some(until) = busy_until {
            if until > now {
                next = next.min(until);
            }
        }
        assert!(
            next != u64::MAX && next > now,
            "oracle made no progress at {now}"
        );
        now = next;
    }
    OracleRun {
        direct,
        staged: end,
        peak,
        stalls,
    }
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let err = |e: satpipe::Error| e.to_string();
    let trace = default_write_heavy_trace();
    let model = LatencyModel::default();
    let cfg = StagingConfig::default();
    let direct = run_direct(&trace, &model).map_err(err)?;
    let staged = run_staged(&trace, &model, &cfg).map_err(err)?;
    let oracle = event_oracle(
        &trace.ops,
        &OracleModel::from(&model),
        cfg.capacity,
        cfg.prefetch_depth,
    );
    ensure!(
        direct == oracle.direct as f64 / 1e9,
        "direct {direct} s vs oracle {} ns",
        oracle.direct
    );
    ensure!(
        staged.total_nanos == oracle.staged,
        "staged {} ns vs oracle {} ns",
        staged.total_nanos,
        oracle.staged
    );
    ensure!(
        staged.peak_staging_bytes == oracle.peak && staged.stalls == oracle.stalls,
        "peak/stalls {}/{} vs oracle {}/{}",
        staged.peak_staging_bytes,
        staged.stalls,
        oracle.peak,
        oracle.stalls
    );
    let ratio = staged.total_seconds() / direct;
    ensure!(ratio <= 1.0 / 3.0, "staged/direct ratio {ratio:.4} > 1/3");

    // A tight buffer forces back-pressure; the oracle must still agree.
    let tight = StagingConfig {
        capacity: 3 * 4 * 1024 * 1024 + 6 * 1024 * 1024,
        prefetch_depth: 3,
    };
    let slow = LatencyModel {
        sequential_block_latency: 0.02,
        ..model.clone()
    };
    let pressured = run_staged(&trace, &slow, &tight).map_err(err)?;
    let o = event_oracle(
        &trace.ops,
        &OracleModel::from(&slow),
        tight.capacity,
        tight.prefetch_depth,
    );
    ensure!(
        (
            pressured.total_nanos,
            pressured.peak_staging_bytes,
            pressured.stalls
        ) == (o.staged, o.peak, o.stalls),
        "back-pressure case: simulator {:?} vs oracle {:?}",
        (
            pressured.total_nanos,
            pressured.peak_staging_bytes,
            pressured.stalls
        ),
        (o.staged, o.peak, o.stalls)
    );
    ensure!(
        pressured.peak_staging_bytes <= tight.capacity,
        "peak above capacity"
    );
    ensure!(
        pressured.stalls > 0,
        "tight buffer never stalled the reader"
    );

    let degenerate = LatencyModel {
        sequential_block_latency: model.random_read_latency,
        block_size: 4 * 1024 * 1024,
        staging_read_latency: model.random_read_latency,
        staging_create_latency: model.random_create_latency,
        staging_delete_latency: model.random_delete_latency,
        ..model.clone()
    };
    let d_direct = run_direct(&trace, &degenerate).map_err(err)?;
    let d_staged = run_staged(&trace, &degenerate, &cfg).map_err(err)?;
    ensure!(
        d_staged.total_seconds() == d_direct,
        "degenerate model: staged {} s != direct {d_direct} s",
        d_staged.total_seconds()
    );
    let t = within(Duration::from_secs(5), start)?;
    Ok(format!(
        "ratio {ratio:.5} (direct {direct:.3} s, staged {:.4} s), oracle exact, degenerate equal, {t}",
        staged.total_seconds()
    ))
}

// 8 ------------------------------------------------------------------------

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for i in 0..50 {
        common::pattern(48, 40, i)
            .save_png(dir.path().join(format!("img{i:03}.png")))
            .map_err(|e| e.to_string())?;
    }
    let spec = BenchSpec {
        image_count: 50,
        runs: 5,
        tests: BenchTest::ALL.to_vec(),
        backends: vec!["reference".into(), "reference-copy".into()],
        ..BenchSpec::new(dir.path())
    };
    let report = run_bench(&spec, &BackendRegistry::with_builtins()).map_err(|e| e.to_string())?;
    ensure!(
        report.timings.len() == 6,
        "{} timing rows",
        report.timings.len()
    );
    for t in &report.timings {
        ensure!(
            t.run_seconds.len() == 5,
            "{} {}: {} runs",
            t.test,
            t.backend,
            t.run_seconds.len()
        );
        let mean = t.run_seconds.iter().sum::<f64>() / 5.0;
        ensure!(
            (t.mean_seconds - mean).abs() <= 1e-9 * mean.abs(),
            "{} {}: mean {} vs recomputed {mean}",
            t.test,
            t.backend,
            t.mean_seconds
        );
    }
    ensure!(
        !report.has_mismatch(),
        "{} output mismatches",
        report.mismatches.len()
    );
    let t = within(Duration::from_secs(120), start)?;
    Ok(format!(
        "3 tests x 2 backends x 5 runs on 50 images, means exact, zero mismatches, {t}"
    ))
}

// 9 ------------------------------------------------------------------------

fn labeled(id: &str, w: u32, h: u32, boxes: &[BoundingBox]) -> ImageRecord {
    ImageRecord {
        id: id.into(),
        image_path: format!("{id}.png").into(),
        image_width: w,
        image_height: h,
        boxes: boxes
            .iter()
            .enumerate()
            .map(|(i, &bbox)| LabeledBox {
                bbox,
                label: CategoryLabel {
                    id: ClassId((i % 3) as u16),
                    name: ["airport", "dam", "stadium"][i % 3].into(),
                },
            })
            .collect(),
        metadata: ImageMetadata {
            gsd: 1.0,
            timestamp: Utc::now(),
            features: BTreeMap::new(),
        },
    }
}

/// Counts covered pixels one by one.
fn overlap_pixels(a: &BoundingBox, b: &BoundingBox) -> u64 {
    let mut n = 0;
    for y in a.y()..a.bottom() {
        for x in a.x()..a.right() {
            if x >= b.x() && x < b.right() && y >= b.y() && y < b.bottom() {
                n += 1;
            }
        }
    }
    n
}

fn criterion_9() -> Outcome {
    let mut rng = SplitMix64::new(9);
    let mut records = Vec::new();
    for i in 0..200 {
        let (w, h) = (64 + rng.below(193) as u32, 64 + rng.below(193) as u32);
        let boxes: Vec<BoundingBox> = (0..1 + rng.below(4))
            .map(|_| {
                let bw = 8 + rng.below(u64::from(w / 2)) as u32;
                let bh = 8 + rng.below(u64::from(h / 2)) as u32;
                let x = rng.below(u64::from(w - bw) + 1) as u32;
                let y = rng.below(u64::from(h - bh) + 1) as u32;
                BoundingBox::new(x, y, bw, bh).unwrap()
            })
            .collect();
        records.push(labeled(&format!("img{i:03}"), w, h, &boxes));
    }
    let index = DatasetIndex::from_records(records);
    let sizes = BoxSizeDistribution::from_index(&index).map_err(|e| e.to_string())?;
    let threshold = 0.1;
    let cfg = FalseDetectionConfig {
        max_overlap_fraction: threshold,
        crops_per_image: 3,
        seed: 9,
        ..FalseDetectionConfig::default()
    };
    let out = generate_false_detections(&index, &sizes, &cfg).map_err(|e| e.to_string())?;
    ensure!(!out.crops.is_empty(), "no crops emitted");
    let by_id: BTreeMap<&str, &ImageRecord> =
        index.records().iter().map(|r| (r.id.as_str(), r)).collect();
    for crop in &out.crops {
        let record = by_id[crop.record_id.as_str()];
        ensure!(
            crop.bbox
                .fits_within(record.image_width, record.image_height),
            "crop outside image {}",
            crop.record_id
        );
        for b in &record.boxes {
            let frac = overlap_pixels(&crop.bbox, &b.bbox) as f64 / crop.bbox.area() as f64;
            ensure!(
                frac <= threshold,
                "{}: overlap fraction {frac:.4}",
                crop.record_id
            );
        }
    }
    let again = generate_false_detections(&index, &sizes, &cfg).map_err(|e| e.to_string())?;
    ensure!(
        again.crops == out.crops,
        "same seed produced a different crop list"
    );

    let covered = DatasetIndex::from_records(vec![labeled(
        "full",
        50,
        40,
        &[BoundingBox::full(50, 40).unwrap()],
    )]);
    let zero = FalseDetectionConfig {
        max_overlap_fraction: 0.0,
        crops_per_image: 5,
        ..FalseDetectionConfig::default()
    };
    let none = generate_false_detections(&covered, &sizes, &zero).map_err(|e| e.to_string())?;
    ensure!(
        none.crops.is_empty(),
        "fully covered image produced {} crops",
        none.crops.len()
    );
    ensure!(
        !none.warnings.is_empty(),
        "fully covered image produced no warning"
    );
    Ok(format!(
        "{} crops over 200 images all within threshold, covered image yields 0",
        out.crops.len()
    ))
}

// 10 -----------------------------------------------------------------------

fn e2e_fixture(dir: &Path) {
    let boxes: [[(&str, [u32; 4]); 2]; 4] = [
        [("airport", [5, 5, 40, 30]), ("dam", [60, 40, 40, 30])],
        [("dam", [0, 0, 40, 30]), ("stadium", [80, 50, 40, 30])],
        [("stadium", [30, 20, 40, 30]), ("airport", [70, 2, 40, 30])],
        [("airport", [1, 60, 40, 30]), ("airport", [55, 10, 40, 30])],
    ];
    for (i, b) in boxes.iter().enumerate() {
        common::write_record(dir, &format!("scene{i}"), 120 + 8 * i as u32, 96, 0.5, b);
    }
}

fn criterion_10() -> Outcome {
    let err = |e: satpipe::Error| e.to_string();
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    e2e_fixture(root.path());
    let ingested = ingest(root.path()).map_err(err)?;
    ensure!(
        ingested.report.warnings.is_empty(),
        "fixture ingest warnings"
    );
    let index = ingested.index;

    let identity = PipelineConfig {
        context_ratio: 0.0,
        target_gsd: 0.5,
        rescale_target: [40, 30],
        ..PipelineConfig::default()
    };
    let out = tempfile::tempdir().map_err(|e| e.to_string())?;
    let report = preprocess(&index, out.path(), &identity, 2).map_err(err)?;
    ensure!(
        report.entries.len() == 8,
        "{} identity outputs",
        report.entries.len()
    );
    for entry in &report.entries {
        let record = index
            .records()
            .iter()
            .find(|r| r.id == entry.record_id)
            .unwrap();
        let raw = crop(
            &RasterImage::load(&record.image_path).map_err(err)?,
            entry.source_bbox,
        )
        .map_err(err)?;
        let got = RasterImage::load(&entry.file).map_err(err)?;
        ensure!(
            got == raw,
            "{} is not bit-identical to the raw crop",
            entry.file.display()
        );
    }

    let defaults = tempfile::tempdir().map_err(|e| e.to_string())?;
    let report = preprocess(&index, defaults.path(), &PipelineConfig::default(), 2).map_err(err)?;
    for entry in &report.entries {
        let img = RasterImage::load(&entry.file).map_err(err)?;
        ensure!(
            img.dims() == (224, 224),
            "{} is {:?}",
            entry.file.display(),
            img.dims()
        );
    }
    ensure!(
        report.entries.iter().any(|e| e.expanded.clamped),
        "no output recorded clamping on a fixture with edge boxes"
    );
    let manifest = std::fs::read_to_string(defaults.path().join("manifest.jsonl"))
        .map_err(|e| e.to_string())?;
    ensure!(
        manifest.lines().count() == report.entries.len(),
        "manifest line count"
    );
    let again = ingest(defaults.path()).map_err(err)?;
    ensure!(
        again.report.warnings.is_empty(),
        "re-ingest warnings: {:?}",
        again.report.warnings
    );
    ensure!(
        again.index.len() == report.entries.len(),
        "re-ingest found {} records",
        again.index.len()
    );
    for entry in &report.entries {
        let stem = format!("{}_{}", entry.record_id, entry.box_index);
        let r = again.index.records().iter().find(|r| r.id == stem);
        ensure!(
            r.is_some_and(|r| (r.image_width, r.image_height) == (224, 224)
                && r.boxes.len() == 1
                && r.boxes[0].label.name == entry.category),
            "re-ingested record {stem} does not match its manifest entry"
        );
    }
    Ok(format!(
        "{} identity crops bit-exact, defaults give 224x224 and re-ingest cleanly",
        8
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("context formula fidelity", criterion_1),
        ("GSD normalization", criterion_2),
        ("transform oracle equivalence", criterion_3),
        ("augmentation determinism", criterion_4),
        ("sampler distribution", criterion_5),
        ("guarantee property", criterion_6),
        ("staging speedup", criterion_7),
        ("bench protocol", criterion_8),
        ("false-detection constraint", criterion_9),
        ("end-to-end preprocess", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS  {:>2}. {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL  {:>2}. {name}: {why}", i + 1);
            }
        }
    }
    println!(
        "\nacceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
