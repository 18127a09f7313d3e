//! Edge-mass objectness proposals and their appearance/motion cross-scoring.
//!
//! A window scores high when a lot of edge mass sits strictly inside it
//! and little crosses its boundary band:
//!
//! ```text
//! score = max(0, E_in - lambda * E_border) / (w * h)^kappa
//! ```
//!
//! Both masses come from an integral table, so every window costs O(1).

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::domain::{normalize_scores, Proposal, Source};
use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox};
use crate::ingest::Frame;
use crate::scalar::Scalar;

/// Smallest frame side proposals are generated on.
pub const MIN_FRAME_SIDE: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectnessParams {
    /// Weight of the edge mass in the boundary band.
    pub lambda: f64,
    /// Area exponent of the size normalization.
    pub kappa: f64,
    /// Width of the boundary band in pixels.
    pub margin: u32,
    pub min_area: u64,
}

impl Default for ObjectnessParams {
    fn default() -> Self {
        ObjectnessParams {
            lambda: 1.5,
            kappa: 0.75,
            margin: 2,
            min_area: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProposalParams {
    pub n_target: usize,
    /// Smallest and largest window side as fractions of the shorter image side.
    pub scale_range: (f64, f64),
    pub scale_count: usize,
    /// Width:height ratios.
    pub aspect_ratios: Vec<(u32, u32)>,
    /// Step between windows as a fraction of the window side.
    pub stride_fraction: f64,
    pub nms_iou: f64,
    pub top_k: usize,
    /// Locally refine the surviving windows by greedy edge moves.
    pub refine: bool,
    pub objectness: ObjectnessParams,
}

impl Default for ProposalParams {
    fn default() -> Self {
        ProposalParams {
            n_target: 500,
            scale_range: (0.1, 0.8),
            scale_count: 10,
            aspect_ratios: vec![(1, 2), (2, 3), (1, 1), (3, 2), (2, 1)],
            stride_fraction: 1.0 / 8.0,
            nms_iou: 0.8,
            top_k: 15,
            refine: true,
            objectness: ObjectnessParams::default(),
        }
    }
}

/// Normalized gradient magnitude with its integral table.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMap {
    pub width: u32,
    pub height: u32,
    pub magnitude: Vec<f64>,
    /// `(width + 1) × (height + 1)` prefix sums; entry `(x, y)` holds the
    /// mass of columns `0..x` and rows `0..y`.
    pub integral: Vec<f64>,
}

impl EdgeMap {
    pub fn from_magnitude(width: u32, height: u32, magnitude: Vec<f64>) -> Self {
        let (w, h) = (width as usize, height as usize);
        assert_eq!(magnitude.len(), w * h);
        let stride = w + 1;
        let mut integral = vec![0.0; stride * (h + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += magnitude[y * w + x];
                integral[(y + 1) * stride + x + 1] = integral[y * stride + x + 1] + row;
            }
        }
        EdgeMap {
            width,
            height,
            magnitude,
            integral,
        }
    }

    /// Edge mass over columns `x0..x1`, rows `y0..y1`.
    #[inline]
    pub fn mass(&self, x0: u32, y0: u32, x1: u32, y1: u32) -> f64 {
        if x1 <= x0 || y1 <= y0 {
            return 0.0;
        }
        let s = self.width as usize + 1;
        let at = |x: u32, y: u32| self.integral[y as usize * s + x as usize];
        (at(x1, y1) - at(x0, y1) - at(x1, y0) + at(x0, y0)).max(0.0)
    }

    pub fn box_mass(&self, b: &BoundingBox) -> f64 {
        self.mass(b.x, b.y, b.x + b.w, b.y + b.h)
    }
}

/// Sobel magnitude of the gray channel, divided by its 99th percentile (or
/// its maximum when that percentile is zero) and clamped to `[0, 1]`.
pub fn edge_map(f: &Frame) -> EdgeMap {
    let g = f.gray();
    let values: Vec<f64> = g.as_raw().iter().map(|&v| v as f64).collect();
    edge_map_raster(g.width(), g.height(), &values)
}

/// [`edge_map`] of a row-major real raster. The normalization makes the
/// result invariant to affine rescaling of `values`.
pub fn edge_map_raster(width: u32, height: u32, values: &[f64]) -> EdgeMap {
    assert_eq!(values.len(), width as usize * height as usize, "raster size");
    let (w, h) = (width as isize, height as isize);
    let at = |x: isize, y: isize| values[(y.clamp(0, h - 1) * w + x.clamp(0, w - 1)) as usize];
    let mut mag = Vec::with_capacity(values.len());
    for y in 0..h {
        for x in 0..w {
            let gx = at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1)
                - at(x - 1, y - 1)
                - 2.0 * at(x - 1, y)
                - at(x - 1, y + 1);
            let gy = at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1)
                - at(x - 1, y - 1)
                - 2.0 * at(x, y - 1)
                - at(x + 1, y - 1);
            mag.push((gx * gx + gy * gy).sqrt());
        }
    }
    let scale = {
        let mut sorted = mag.clone();
        let k = ((sorted.len() as f64 * 0.99).ceil() as usize).clamp(1, sorted.len().max(1)) - 1;
        let p99 = if sorted.is_empty() {
            0.0
        } else {
            *sorted.select_nth_unstable_by(k, f64::total_cmp).1
        };
        if p99 > 0.0 {
            p99
        } else {
            mag.iter().copied().fold(0.0, f64::max)
        }
    };
    if scale > 0.0 {
        mag.iter_mut().for_each(|m| *m = (*m / scale).min(1.0));
    }
    EdgeMap::from_magnitude(width, height, mag)
}

/// Edge-mass objectness of `b` on `em`.
pub fn objectness_score(em: &EdgeMap, b: &BoundingBox, params: &ObjectnessParams) -> Result<f64> {
    b.check_inside(em.width, em.height)?;
    if b.area() < params.min_area {
        return Err(Error::BoxTooSmall {
            area: b.area(),
            min: params.min_area,
        });
    }
    Ok(score_unchecked(em, b, params))
}

#[inline]
fn score_unchecked(em: &EdgeMap, b: &BoundingBox, params: &ObjectnessParams) -> f64 {
    let total = em.box_mass(b);
    let m = params.margin;
    let inner = if b.w > 2 * m && b.h > 2 * m {
        em.mass(b.x + m, b.y + m, b.x + b.w - m, b.y + b.h - m)
    } else {
        0.0
    };
    let border = (total - inner).max(0.0);
    (inner - params.lambda * border).max(0.0) / (b.area() as f64).powf(params.kappa)
}

/// The deterministic multi-scale sliding-window grid for a `width`×`height`
/// image, in generation order.
pub fn candidate_windows(width: u32, height: u32, params: &ProposalParams) -> Vec<BoundingBox> {
    let short = width.min(height) as f64;
    let (lo, hi) = params.scale_range;
    let n = params.scale_count.max(1);
    let mut out = Vec::new();
    for i in 0..n {
        let frac = if n == 1 {
            lo
        } else {
            lo * (hi / lo).powf(i as f64 / (n - 1) as f64)
        };
        let side = frac * short;
        for &(rw, rh) in &params.aspect_ratios {
            let r = (rw as f64 / rh as f64).sqrt();
            let w = (side * r).round() as u32;
            let h = (side / r).round() as u32;
            if w == 0 || h == 0 || w > width || h > height {
                continue;
            }
            if (w as u64 * h as u64) < params.objectness.min_area {
                continue;
            }
            let sx = ((w as f64 * params.stride_fraction).round() as u32).max(1);
            let sy = ((h as f64 * params.stride_fraction).round() as u32).max(1);
            let mut y = 0;
            while y + h <= height {
                let mut x = 0;
                while x + w <= width {
                    out.push(BoundingBox::new(x, y, w, h));
                    x += sx;
                }
                y += sy;
            }
        }
    }
    out
}

/// Greedy suppression: walk `scored` in order and keep a box unless it
/// overlaps an already kept one by more than `threshold` IoU. Stops after
/// `limit` boxes.
pub fn nms(scored: &[(BoundingBox, f64)], threshold: f64, limit: usize) -> Vec<(BoundingBox, f64)> {
    let mut kept: Vec<(BoundingBox, f64)> = Vec::with_capacity(limit.min(scored.len()));
    for &(b, s) in scored {
        if kept.len() >= limit {
            break;
        }
        if kept.iter().all(|(k, _)| iou::<f64>(k, &b) <= threshold) {
            kept.push((b, s));
        }
    }
    kept
}

/// Scores every grid window, orders by score (ties in scan order) and
/// keeps up to `n_target` after NMS.
pub fn generate_proposals(image: &Frame, params: &ProposalParams) -> Result<Vec<(BoundingBox, f64)>> {
    if image.width() < MIN_FRAME_SIDE || image.height() < MIN_FRAME_SIDE {
        return Err(Error::FrameTooSmall {
            width: image.width(),
            height: image.height(),
            min: MIN_FRAME_SIDE,
        });
    }
    let em = edge_map(image);
    Ok(proposals_on(&em, params))
}

/// [`generate_proposals`] on a precomputed edge map. With `refine`, the
/// windows surviving a first suppression pass are moved to a local score
/// maximum and suppression is rerun over them together with the grid.
pub fn proposals_on(em: &EdgeMap, params: &ProposalParams) -> Vec<(BoundingBox, f64)> {
    let mut scored: Vec<(BoundingBox, f64)> = candidate_windows(em.width, em.height, params)
        .into_iter()
        .map(|b| (b, score_unchecked(em, &b, &params.objectness)))
        .collect();
    scored.sort_by(raw_rank_cmp);
    scored.dedup_by(|a, b| a.0 == b.0);
    let kept = nms(&scored, params.nms_iou, params.n_target);
    if !params.refine {
        return kept;
    }
    let mut pool: Vec<(BoundingBox, f64)> = kept
        .iter()
        .filter(|(_, s)| *s > 0.0)
        .map(|&(b, s)| refine_box(em, b, s, &params.objectness))
        .collect();
    pool.extend(scored);
    pool.sort_by(raw_rank_cmp);
    pool.dedup_by(|a, b| a.0 == b.0);
    nms(&pool, params.nms_iou, params.n_target)
}

/// Greedy coordinate ascent on the objectness of `b`: each side is moved
/// in or out by a step that starts at an eighth of the box and halves down
/// to one pixel, accepting any strict improvement.
pub fn refine_box(em: &EdgeMap, b: BoundingBox, score: f64, params: &ObjectnessParams) -> (BoundingBox, f64) {
    const MAX_MOVES: usize = 200;
    let (mut best, mut best_s) = (b, score);
    let mut step = (b.w.min(b.h) / 8).max(1) as i64;
    let mut moves = 0;
    while step >= 1 && moves < MAX_MOVES {
        let mut improved = true;
        while improved && moves < MAX_MOVES {
            improved = false;
            for (dx0, dy0, dx1, dy1) in [
                (-step, 0, 0, 0),
                (step, 0, 0, 0),
                (0, -step, 0, 0),
                (0, step, 0, 0),
                (0, 0, -step, 0),
                (0, 0, step, 0),
                (0, 0, 0, -step),
                (0, 0, 0, step),
            ] {
                let x0 = best.x as i64 + dx0;
                let y0 = best.y as i64 + dy0;
                let x1 = best.right() as i64 + dx1;
                let y1 = best.bottom() as i64 + dy1;
                if x0 < 0 || y0 < 0 || x1 > em.width as i64 || y1 > em.height as i64 || x1 <= x0 || y1 <= y0 {
                    continue;
                }
                let cand = BoundingBox::new(x0 as u32, y0 as u32, (x1 - x0) as u32, (y1 - y0) as u32);
                if cand.area() < params.min_area {
                    continue;
                }
                let s = score_unchecked(em, &cand, params);
                if s > best_s {
                    best = cand;
                    best_s = s;
                    improved = true;
                    moves += 1;
                }
            }
        }
        step /= 2;
    }
    (best, best_s)
}

/// All cross-scored proposals of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalSet<T> {
    pub frame_index: u32,
    pub proposals: Vec<Proposal<T>>,
}

/// Scores each RGB proposal on the flow edge map and each flow proposal on
/// the RGB edge map, min-max normalizes the appearance and motion channels
/// over the union, and multiplies them.
pub fn cross_score<T: Scalar>(
    rgb_props: &[(BoundingBox, f64)],
    flow_props: &[(BoundingBox, f64)],
    rgb_em: &EdgeMap,
    flow_em: &EdgeMap,
    frame_index: u32,
    params: &ObjectnessParams,
) -> Result<ProposalSet<T>> {
    if (rgb_em.width, rgb_em.height) != (flow_em.width, flow_em.height) {
        return Err(Error::DimensionMismatch(format!(
            "RGB edge map {}x{} vs flow edge map {}x{}",
            rgb_em.width, rgb_em.height, flow_em.width, flow_em.height
        )));
    }
    let n = rgb_props.len() + flow_props.len();
    let mut boxes = Vec::with_capacity(n);
    let mut raw_a = Vec::with_capacity(n);
    let mut raw_m = Vec::with_capacity(n);
    for &(b, s) in rgb_props {
        boxes.push((b, Source::Rgb));
        raw_a.push(T::of(s));
        raw_m.push(T::of(objectness_score(flow_em, &b, params)?));
    }
    for &(b, s) in flow_props {
        boxes.push((b, Source::Flow));
        raw_a.push(T::of(objectness_score(rgb_em, &b, params)?));
        raw_m.push(T::of(s));
    }
    let s_a = normalize_scores(&raw_a)?;
    let s_m = normalize_scores(&raw_m)?;
    let proposals = boxes
        .into_iter()
        .zip(s_a.into_iter().zip(s_m))
        .map(|((b, src), (a, m))| Proposal::new(b, a, m, src, frame_index))
        .collect();
    Ok(ProposalSet { frame_index, proposals })
}

/// The `k` best proposals by `s`, ties by `s_a` then scan order.
pub fn top_k<T: Scalar>(ps: &ProposalSet<T>, k: usize) -> ProposalSet<T> {
    let mut proposals = ps.proposals.clone();
    proposals.sort_by(|a, b| a.rank_cmp(b));
    proposals.truncate(k);
    ProposalSet {
        frame_index: ps.frame_index,
        proposals,
    }
}

/// Ordering on raw `(box, score)` lists: score desc, then scan order.
pub fn raw_rank_cmp(a: &(BoundingBox, f64), b: &(BoundingBox, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.scan_cmp(&b.0))
}
