//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::cmp::Ordering;
use std::path::Path;
use std::time::{Duration, Instant};

use image::{GrayImage, Luma};
use patchmine::config::RunConfig;
use patchmine::domain::{Embedding, Proposal};
use patchmine::eval::evaluate_manifest;
use patchmine::export::{LABELS_FILE, MANIFEST_FILE};
use patchmine::filter::{filter_frames, pearson_correlation, FilterParams};
use patchmine::flow::{compute_flow, FlowField, FlowParams};
use patchmine::pipeline::{mine_sequence, run_mine, VideoOutcome, REPORT_FILE};
use patchmine::probe::{probe_dataset, ProbeParams};
use patchmine::proposals::{edge_map, objectness_score, ObjectnessParams, ProposalSet};
use patchmine::selection::{build_clusters, select_background};
use patchmine::synth::texture::ValueNoise;
use patchmine::synth::{generate_corpus, standard_corpus, CorpusOptions, SynthCorpus};
use patchmine::{BoundingBox, Frame, Source, VideoSequence};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Seed of every synthetic corpus below, fixed before any result was seen.
const CORPUS_SEED: u64 = 0;

struct Outcome {
    pass: Option<bool>,
    detail: String,
}

fn pass_if(ok: bool, detail: String) -> Outcome {
    Outcome { pass: Some(ok), detail }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn iou_f64(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix = (a.right().min(b.right()) as i64 - a.x.max(b.x) as i64).max(0);
    let iy = (a.bottom().min(b.bottom()) as i64 - a.y.max(b.y) as i64).max(0);
    let inter = (ix * iy) as f64;
    inter / (a.area() as f64 + b.area() as f64 - inter)
}

fn write_corpus(corpus: &SynthCorpus, root: &Path) {
    generate_corpus(corpus, root).expect("corpus renders");
}

// 1 -----------------------------------------------------------------------

fn full_scale() -> Outcome {
    Outcome {
        pass: None,
        detail: "detector transfer on 150k web videos is out of scope; criteria 2-10 substitute".into(),
    }
}

// 2 -----------------------------------------------------------------------

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn cluster_score_oracle() -> Outcome {
    const DIM: usize = 256;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let t = Instant::now();
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let members = rng.random_range(2..=10usize);
        let mut sets = Vec::new();
        let mut embs = Vec::new();
        let mut raw = Vec::new();
        for f in 0..=members {
            let s_a: f64 = rng.random_range(0.0..=1.0);
            let p = Proposal::new(BoundingBox::new(0, 0, 16, 16), s_a, 1.0, Source::Rgb, f as u32);
            let e = random_unit(&mut rng, DIM);
            sets.push(ProposalSet {
                frame_index: f as u32,
                proposals: vec![p],
            });
            embs.push(vec![Embedding::from_raw(e.clone())]);
            raw.push((s_a, e));
        }
        let clusters = build_clusters(&sets, &embs, false).expect("clusters build");
        let (_, seed) = &raw[0];
        let mut brute = 0.0;
        for (s, e) in &raw[1..] {
            let mut dot = 0.0;
            for k in 0..DIM {
                dot += e[k] * seed[k];
            }
            brute += s * dot;
        }
        worst = worst.max((clusters[0].score - brute).abs());
    }
    let el = t.elapsed();
    pass_if(
        worst <= 1e-9 && el < Duration::from_secs(5),
        format!(
            "1000 clusters, max |score - brute force| = {worst:.2e}, {:.2}s",
            secs(el)
        ),
    )
}

// 3 -----------------------------------------------------------------------

fn plane(seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..64 * 64).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn frame_from(values: &[f64]) -> Frame {
    Frame::from_gray(GrayImage::from_fn(64, 64, |x, y| {
        Luma([(128.0 + 50.0 * values[(y * 64 + x) as usize]).round().clamp(0.0, 255.0) as u8])
    }))
}

fn pearson_oracle(a: &Frame, b: &Frame) -> f64 {
    let xa: Vec<f64> = a.gray().pixels().map(|p| p.0[0] as f64).collect();
    let xb: Vec<f64> = b.gray().pixels().map(|p| p.0[0] as f64).collect();
    let n = xa.len() as f64;
    let (ma, mb) = (xa.iter().sum::<f64>() / n, xb.iter().sum::<f64>() / n);
    let cov: f64 = xa.iter().zip(&xb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = xa.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = xb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// A 64×64 pair whose gray correlation is within 1e-3 of `target`, found by
/// bisecting the mixing weight of a shared and a private component.
fn pair_with_correlation(target: f64) -> (Frame, Frame, f64) {
    let (a, b) = (plane(31), plane(32));
    let first = frame_from(&a);
    let mix = |t: f64| {
        let v: Vec<f64> = a.iter().zip(&b).map(|(x, y)| t * x + (1.0 - t) * y).collect();
        frame_from(&v)
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = (lo + hi) / 2.0;
        if pearson_oracle(&first, &mix(mid)) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let second = mix((lo + hi) / 2.0);
    let r = pearson_oracle(&first, &second);
    assert!((r - target).abs() < 1e-3, "could not hit {target}: {r}");
    (first, second, r)
}

fn checker(mean: u8) -> Frame {
    Frame::from_gray(GrayImage::from_fn(64, 64, |x, y| {
        Luma([if (x / 4 + y / 4) % 2 == 0 { mean - 10 } else { mean + 10 }])
    }))
}

fn filter_fidelity() -> Outcome {
    let params = FilterParams::default();
    let mut notes = Vec::new();
    let mut ok = true;
    for (target, keep) in [(0.09, false), (0.11, true)] {
        let (a, b, r_oracle) = pair_with_correlation(target);
        let r = pearson_correlation(&a, &b).unwrap();
        let seq = VideoSequence {
            video_id: "c".into(),
            frames: vec![a, b],
            retained_indices: vec![0, 1],
        };
        let (kept, _) = filter_frames(seq, &params).unwrap();
        let kept_second = kept.retained_indices == vec![0, 1];
        ok &= kept_second == keep && (r - r_oracle).abs() < 1e-9;
        notes.push(format!("r={r:.4} {}", if kept_second { "kept" } else { "cut" }));
    }

    let means = [100u8, 49, 51, 199, 201, 50, 200];
    let seq = VideoSequence {
        video_id: "i".into(),
        frames: means.iter().map(|&m| checker(m)).collect(),
        retained_indices: (0..means.len() as u32).collect(),
    };
    let (kept, _) = filter_frames(seq, &params).unwrap();
    let kept_means: Vec<u8> = kept.retained_indices.iter().map(|&i| means[i as usize]).collect();
    ok &= kept_means == vec![100, 51, 199, 50, 200];
    ok &= !params.correlation_ok(Some(0.1)) && params.intensity_ok(50.0) && params.intensity_ok(200.0);
    notes.push(format!("intensity survivors {kept_means:?}"));
    pass_if(ok, notes.join(", "))
}

// 4 -----------------------------------------------------------------------

fn textured(seed: u64, dx: f64, dy: f64) -> Frame {
    let tex = ValueNoise::new(seed, 7.0);
    Frame::from_gray(GrayImage::from_fn(320, 240, |x, y| {
        Luma([(60.0 + 140.0 * tex.at(x as f64 - dx, y as f64 - dy)).round() as u8])
    }))
}

fn median_epe(flow: &FlowField<f64>, dx: f64, dy: f64) -> f64 {
    let mut errs = Vec::new();
    for y in 10..flow.height - 10 {
        for x in 10..flow.width - 10 {
            let (u, v) = flow.at(x, y);
            errs.push(((u - dx).powi(2) + (v - dy).powi(2)).sqrt());
        }
    }
    errs.sort_by(f64::total_cmp);
    errs[errs.len() / 2]
}

fn flow_accuracy() -> Outcome {
    let params = FlowParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let t = Instant::now();
    let mut worst = 0.0f64;
    for i in 0..20 {
        let (dx, dy) = loop {
            let d: (f64, f64) = (rng.random_range(-3.0..=3.0), rng.random_range(-3.0..=3.0));
            let m = (d.0 * d.0 + d.1 * d.1).sqrt();
            if (1.0..=3.0).contains(&m) {
                break d;
            }
        };
        let (a, b) = (textured(100 + i, 0.0, 0.0), textured(100 + i, dx, dy));
        let flow: FlowField<f64> = compute_flow(&a, &b, &params).unwrap();
        worst = worst.max(median_epe(&flow, dx, dy));
    }
    let el = t.elapsed();
    let mut zero_max = 0.0f64;
    for i in 0..3 {
        let a = textured(200 + i, 0.0, 0.0);
        let flow: FlowField<f64> = compute_flow(&a, &a, &params).unwrap();
        zero_max = zero_max.max(flow.magnitudes().fold(0.0, f64::max));
    }
    pass_if(
        worst < 0.5 && zero_max < 0.1 && el < Duration::from_secs(30),
        format!(
            "worst per-pair median EPE {worst:.3} px, zero-motion max {zero_max:.2e} px, 20 pairs in {:.1}s",
            secs(el)
        ),
    )
}

// 5 -----------------------------------------------------------------------

fn objectness_brute(mag: &[f64], width: u32, b: &BoundingBox, p: &ObjectnessParams) -> f64 {
    let (mut inner, mut border) = (0.0, 0.0);
    for y in b.y..b.y + b.h {
        for x in b.x..b.x + b.w {
            let v = mag[(y * width + x) as usize];
            let inside = x >= b.x + p.margin
                && x < b.x + b.w - p.margin.min(b.w)
                && y >= b.y + p.margin
                && y < b.y + b.h - p.margin.min(b.h);
            if inside {
                inner += v;
            } else {
                border += v;
            }
        }
    }
    (inner - p.lambda * border).max(0.0) / ((b.w as f64) * (b.h as f64)).powf(p.kappa)
}

fn objectness_and_nms(corpus: &SynthCorpus, cfg: &RunConfig) -> Outcome {
    let spec = &corpus.videos[1];
    let frame = Frame::from_rgb(spec.render().unwrap().swap_remove(0));
    let em = edge_map(&frame);
    let p = ObjectnessParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut n = 0;
    while n < 500 {
        let w = rng.random_range(4..=em.width);
        let h = rng.random_range(4..=em.height);
        if (w * h) < 64 {
            continue;
        }
        let b = BoundingBox::new(
            rng.random_range(0..=em.width - w),
            rng.random_range(0..=em.height - h),
            w,
            h,
        );
        let fast = objectness_score(&em, &b, &p).unwrap();
        let slow = objectness_brute(&em.magnitude, em.width, &b, &p);
        let rel = (fast - slow).abs() / slow.abs().max(1e-12);
        worst = worst.max(if slow == 0.0 { fast.abs() } else { rel });
        n += 1;
    }

    let mut max_iou = 0.0f64;
    let mut frames = 0;
    for spec in &corpus.videos {
        let rendered: Vec<Frame> = spec.render().unwrap().into_iter().map(Frame::from_rgb).collect();
        let n = rendered.len() as u32;
        let seq = VideoSequence {
            video_id: spec.id.clone(),
            frames: rendered,
            retained_indices: (0..n).collect(),
        };
        let VideoOutcome::Mined(r) = mine_sequence(seq, None, cfg) else {
            continue;
        };
        for set in &r.proposals {
            frames += 1;
            for source in [Source::Rgb, Source::Flow] {
                let boxes: Vec<BoundingBox> = set
                    .proposals
                    .iter()
                    .filter(|q| q.source == source)
                    .map(|q| q.bbox)
                    .collect();
                for i in 0..boxes.len() {
                    for j in i + 1..boxes.len() {
                        max_iou = max_iou.max(iou_f64(&boxes[i], &boxes[j]));
                    }
                }
            }
        }
    }
    pass_if(
        worst <= 1e-6 && max_iou <= 0.8 && frames > 0,
        format!("500 boxes max rel err {worst:.2e}; NMS max pairwise IoU {max_iou:.4} over {frames} frames"),
    )
}

// 6, 7 ---------------------------------------------------------------------

fn mining_quality(corpus: &SynthCorpus, tmp: &Path, cfg: &RunConfig, min_hit: f64, check_bg: bool) -> Outcome {
    let input = tmp.join("videos");
    write_corpus(corpus, &input);
    let cfg = RunConfig {
        input_root: input.clone(),
        output_root: tmp.join("mined"),
        workers: 1,
        ..cfg.clone()
    };
    let t = Instant::now();
    let summary = run_mine(&cfg);
    let el = t.elapsed();
    let summary = match summary {
        Ok(s) => s,
        Err(e) => return pass_if(false, format!("mining failed: {e}")),
    };
    let m = evaluate_manifest(&cfg.output_root.join(MANIFEST_FILE), &input).unwrap();
    let mut ok = m.fg_hit_rate >= min_hit;
    let mut detail = format!(
        "{} videos mined, {} skipped, FG hit@0.5 {:.4} over {} frames (need {min_hit}), FG mean IoU {:.3}",
        summary.mined.len(),
        summary.skipped.len(),
        m.fg_hit_rate,
        m.fg_iou_per_frame.len(),
        m.fg_iou_per_frame.iter().sum::<f64>() / m.fg_iou_per_frame.len() as f64
    );
    if check_bg {
        ok &= m.bg_mean_iou_with_gt <= 0.2 && el < Duration::from_secs(120);
        detail += &format!(
            ", BG mean IoU {:.4}, {:.1}s single-threaded",
            m.bg_mean_iou_with_gt,
            secs(el)
        );
    }
    pass_if(ok, detail)
}

// 8 -----------------------------------------------------------------------

/// Strict "a ranks before b" for the pooling order: lower s, then scan order.
fn pool_before(a: &Proposal<f64>, b: &Proposal<f64>) -> bool {
    let key = |p: &Proposal<f64>| (p.bbox.y, p.bbox.x, p.bbox.h, p.bbox.w, p.source == Source::Flow);
    a.s < b.s || (a.s == b.s && key(a) < key(b))
}

/// Compares IoU(a, fg) with IoU(b, fg) exactly by cross-multiplication.
fn iou_cmp(a: &BoundingBox, b: &BoundingBox, fg: &BoundingBox) -> Ordering {
    let ia = a.intersection_area(fg) as u128;
    let ib = b.intersection_area(fg) as u128;
    let ua = (a.area() + fg.area()) as u128 - ia;
    let ub = (b.area() + fg.area()) as u128 - ib;
    (ia * ub).cmp(&(ib * ua))
}

fn background_oracle(all: &[Proposal<f64>], fg: &Proposal<f64>, pool_size: usize) -> Option<Proposal<f64>> {
    let cands: Vec<&Proposal<f64>> = all.iter().filter(|p| p.bbox != fg.bbox).collect();
    // A proposal is pooled when fewer than pool_size candidates precede it.
    let pool: Vec<&Proposal<f64>> = cands
        .iter()
        .copied()
        .filter(|p| cands.iter().filter(|q| pool_before(q, p)).count() < pool_size)
        .collect();
    if pool.is_empty() {
        return None;
    }
    let total: u64 = pool.iter().map(|p| p.bbox.area()).sum();
    let n = pool.len() as u64;
    // area > total / n, compared without division.
    let mut eligible: Vec<&Proposal<f64>> = pool.iter().copied().filter(|p| p.bbox.area() * n > total).collect();
    if eligible.is_empty() {
        let max = pool.iter().map(|p| p.bbox.area()).max().unwrap();
        eligible = pool.iter().copied().filter(|p| p.bbox.area() == max).collect();
    }
    // Winner: no other eligible proposal beats it.
    let beats = |a: &Proposal<f64>, b: &Proposal<f64>| match iou_cmp(&a.bbox, &b.bbox, &fg.bbox) {
        Ordering::Less => true,
        Ordering::Greater => false,
        Ordering::Equal => pool_before(a, b),
    };
    let winners: Vec<&Proposal<f64>> = eligible
        .iter()
        .copied()
        .filter(|p| !eligible.iter().any(|q| beats(q, p)))
        .collect();
    assert_eq!(winners.len(), 1, "oracle must single out one proposal");
    Some(*winners[0])
}

fn background_rule() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut agree = 0;
    let mut fallbacks = 0;
    for case in 0..200 {
        let n = rng.random_range(1..=260usize);
        // Coarse coordinates and scores force ties; every fifth pool is
        // built from equal-area boxes to exercise the fallback.
        let equal_area = case % 5 == 0;
        let mut seen = std::collections::HashSet::new();
        let all: Vec<Proposal<f64>> = (0..n)
            .map(|_| {
                let (w, h) = if equal_area {
                    (20, 20)
                } else {
                    (rng.random_range(1..=8u32) * 10, rng.random_range(1..=8u32) * 10)
                };
                let b = BoundingBox::new(rng.random_range(0..20u32) * 8, rng.random_range(0..15u32) * 8, w, h);
                let source = if rng.random_bool(0.5) {
                    Source::Rgb
                } else {
                    Source::Flow
                };
                Proposal::new(
                    b,
                    rng.random_range(0..6u32) as f64 / 5.0,
                    rng.random_range(0..4u32) as f64 / 3.0,
                    source,
                    0,
                )
            })
            // A frame never holds the same box twice from one source.
            .filter(|p| seen.insert((p.bbox, p.source)))
            .collect();
        let fg = all[rng.random_range(0..all.len())];
        let got = select_background(&all, &fg, 100);
        let want = background_oracle(&all, &fg, 100);
        if let Some(g) = &got {
            fallbacks += (g.path == patchmine::selection::BackgroundPath::Fallback) as usize;
        }
        if got.map(|g| g.proposal) == want {
            agree += 1;
        }
    }
    pass_if(
        agree == 200,
        format!("{agree}/200 pools match the exhaustive rule ({fallbacks} via fallback)"),
    )
}

// 9 -----------------------------------------------------------------------

fn probe_separability(tmp: &Path) -> Outcome {
    let input = tmp.join("videos");
    write_corpus(&standard_corpus(50, CORPUS_SEED, &CorpusOptions::default()), &input);
    let cfg = RunConfig {
        input_root: input,
        output_root: tmp.join("mined"),
        ..Default::default()
    };
    if let Err(e) = run_mine(&cfg) {
        return pass_if(false, format!("mining failed: {e}"));
    }
    let report = probe_dataset::<f64>(&cfg.output_root, &ProbeParams::default()).unwrap();
    let shuffled: Vec<f64> = (0..10)
        .map(|seed| {
            let p = ProbeParams {
                seed,
                shuffle_labels: true,
                ..Default::default()
            };
            probe_dataset::<f64>(&cfg.output_root, &p).unwrap().accuracy
        })
        .collect();
    let mean = shuffled.iter().sum::<f64>() / shuffled.len() as f64;
    let (lo, hi) = shuffled
        .iter()
        .fold((1.0f64, 0.0f64), |(l, h), &a| (l.min(a), h.max(a)));
    pass_if(
        report.accuracy >= 0.90 && (mean - 0.5).abs() <= 0.1,
        format!(
            "held-out accuracy {:.4} ({} test patches); shuffled labels mean {mean:.4} over 10 seeds (range {lo:.3}-{hi:.3})",
            report.accuracy, report.n_test
        ),
    )
}

// 10 ----------------------------------------------------------------------

fn digest(path: &Path) -> String {
    Sha256::digest(std::fs::read(path).unwrap())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn determinism(tmp: &Path) -> Outcome {
    let input = tmp.join("videos");
    write_corpus(&standard_corpus(6, CORPUS_SEED + 10, &CorpusOptions::default()), &input);
    let mut digests = Vec::new();
    for workers in [1, 8] {
        let cfg = RunConfig {
            input_root: input.clone(),
            output_root: tmp.join(format!("w{workers}")),
            workers,
            ..Default::default()
        };
        run_mine(&cfg).unwrap();
        digests.push([MANIFEST_FILE, LABELS_FILE, REPORT_FILE].map(|f| digest(&cfg.output_root.join(f))));
    }
    pass_if(
        digests[0] == digests[1],
        format!(
            "manifest sha256 {}… for workers 1 and 8; labels and report equal: {}",
            &digests[0][0][..16],
            digests[0][1..] == digests[1][1..]
        ),
    )
}

fn main() {
    let cfg = RunConfig::default();
    let corpus = standard_corpus(20, CORPUS_SEED, &CorpusOptions::default());
    let distractors = standard_corpus(
        20,
        CORPUS_SEED,
        &CorpusOptions {
            distractor: true,
            ..Default::default()
        },
    );
    let tmp = tempfile::tempdir().unwrap();
    let dir = |name: &str| {
        let d = tmp.path().join(name);
        std::fs::create_dir_all(&d).unwrap();
        d
    };

    type Criterion<'a> = (&'static str, Box<dyn FnOnce() -> Outcome + 'a>);
    let criteria: Vec<Criterion> = vec![
        ("full-scale detector results", Box::new(full_scale)),
        ("cluster score vs brute force", Box::new(cluster_score_oracle)),
        ("frame filter thresholds", Box::new(filter_fidelity)),
        ("flow accuracy", Box::new(flow_accuracy)),
        (
            "objectness integral table and NMS",
            Box::new(|| objectness_and_nms(&corpus, &cfg)),
        ),
        (
            "end-to-end mining quality",
            Box::new(|| mining_quality(&corpus, &dir("c6"), &cfg, 0.8, true)),
        ),
        (
            "distractor suppression",
            Box::new(|| mining_quality(&distractors, &dir("c7"), &cfg, 0.7, false)),
        ),
        ("background rule vs exhaustive oracle", Box::new(background_rule)),
        ("linear probe separability", Box::new(|| probe_separability(&dir("c9")))),
        ("worker-count determinism", Box::new(|| determinism(&dir("c10")))),
    ];

    let mut failed = 0;
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let o = run();
        let tag = match o.pass {
            Some(true) => "PASS",
            Some(false) => {
                failed += 1;
                "FAIL"
            }
            None => "N/A ",
        };
        println!("{tag} criterion {:>2} {name}: {}", i + 1, o.detail);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
