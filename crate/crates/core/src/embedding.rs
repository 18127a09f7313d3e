//! Handcrafted patch descriptor used for temporal matching, plus a binary
//! file format for embeddings computed elsewhere.
//!
//! A patch is resampled to 64×64 and described by
//! * 4×4 cells × 3 channels × 8-bin colour histograms (384 values), and
//! * 8×8 cells × 9-bin unsigned gradient-orientation histograms (576 values).
//!
//! Each half is L2-normalized, the halves are concatenated, zero-padded to
//! the configured length and L2-normalized again.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use image::{imageops, RgbImage};

use crate::domain::{Embedding, Proposal};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::ingest::{luma_601, Frame};
use crate::scalar::Scalar;

pub const DEFAULT_DIM: usize = 2048;
/// Number of informative leading dimensions of [`embed_patch`].
pub const DESCRIPTOR_DIM: usize = COLOR_DIM + GRADIENT_DIM;
pub const MIN_PATCH_AREA: u64 = 64;

const PATCH_SIDE: u32 = 64;
const COLOR_CELLS: u32 = 4;
const COLOR_BINS: usize = 8;
const COLOR_DIM: usize = (COLOR_CELLS * COLOR_CELLS) as usize * 3 * COLOR_BINS;
const GRAD_CELLS: u32 = 8;
const GRAD_BINS: usize = 9;
const GRADIENT_DIM: usize = (GRAD_CELLS * GRAD_CELLS) as usize * GRAD_BINS;

const EMBEDDING_MAGIC: &[u8; 4] = b"PMEM";
const EMBEDDING_VERSION: u32 = 1;
/// Largest accepted deviation from unit norm in external files.
pub const EXTERNAL_NORM_TOLERANCE: f64 = 1e-3;

/// Descriptor of the pixels inside `bbox`, of length `dim`.
pub fn embed_patch<T: Scalar>(f: &Frame, bbox: &BoundingBox, dim: usize) -> Result<Embedding<T>> {
    bbox.check_inside(f.width(), f.height())?;
    if bbox.area() < MIN_PATCH_AREA {
        return Err(Error::BoxTooSmall {
            area: bbox.area(),
            min: MIN_PATCH_AREA,
        });
    }
    if dim < DESCRIPTOR_DIM {
        return Err(Error::Config(format!(
            "embedding dim {dim} is below the descriptor length {DESCRIPTOR_DIM}"
        )));
    }
    let crop = imageops::crop_imm(f.rgb(), bbox.x, bbox.y, bbox.w, bbox.h).to_image();
    Ok(describe(&crop, dim))
}

/// Descriptor of a whole raster.
pub fn embed_image<T: Scalar>(img: &RgbImage, dim: usize) -> Result<Embedding<T>> {
    let f = Frame::from_rgb(img.clone());
    embed_patch(&f, &BoundingBox::new(0, 0, img.width(), img.height()), dim)
}

fn describe<T: Scalar>(crop: &RgbImage, dim: usize) -> Embedding<T> {
    let patch = if crop.dimensions() == (PATCH_SIDE, PATCH_SIDE) {
        crop.clone()
    } else {
        imageops::resize(crop, PATCH_SIDE, PATCH_SIDE, imageops::FilterType::Triangle)
    };

    let mut color = vec![T::zero(); COLOR_DIM];
    let cell = PATCH_SIDE / COLOR_CELLS;
    let unit = T::one() / T::of((cell * cell) as f64);
    for (x, y, px) in patch.enumerate_pixels() {
        let c = ((y / cell) * COLOR_CELLS + x / cell) as usize;
        for (ch, &v) in px.0.iter().enumerate() {
            let bin = v as usize * COLOR_BINS / 256;
            color[(c * 3 + ch) * COLOR_BINS + bin] = color[(c * 3 + ch) * COLOR_BINS + bin] + unit;
        }
    }

    let side = PATCH_SIDE as isize;
    let gray: Vec<T> = patch
        .pixels()
        .map(|p| T::of(luma_601(p.0[0], p.0[1], p.0[2]) as f64))
        .collect();
    let at = |x: isize, y: isize| gray[(y.clamp(0, side - 1) * side + x.clamp(0, side - 1)) as usize];
    let mut grad = vec![T::zero(); GRADIENT_DIM];
    let gcell = (PATCH_SIDE / GRAD_CELLS) as isize;
    let pi = T::of(std::f64::consts::PI);
    let bin_width = pi / T::of(GRAD_BINS as f64);
    for y in 0..side {
        for x in 0..side {
            let gx = at(x + 1, y) - at(x - 1, y);
            let gy = at(x, y + 1) - at(x, y - 1);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag <= T::zero() {
                continue;
            }
            let mut theta = gy.atan2(gx);
            if theta < T::zero() {
                theta = theta + pi;
            }
            // Linear vote between the two nearest bin centres, wrapping at pi.
            let pos = theta / bin_width - T::of(0.5);
            let lo = pos.floor();
            let frac = pos - lo;
            let lo_bin = (lo.to_isize().unwrap_or(0)).rem_euclid(GRAD_BINS as isize) as usize;
            let hi_bin = (lo_bin + 1) % GRAD_BINS;
            let c = ((y / gcell) * GRAD_CELLS as isize + x / gcell) as usize;
            grad[c * GRAD_BINS + lo_bin] = grad[c * GRAD_BINS + lo_bin] + mag * (T::one() - frac);
            grad[c * GRAD_BINS + hi_bin] = grad[c * GRAD_BINS + hi_bin] + mag * frac;
        }
    }

    let mut values = Vec::with_capacity(dim);
    values.extend(unit_or_zero(color));
    values.extend(unit_or_zero(grad));
    values.resize(dim, T::zero());
    Embedding::normalized(values).expect("colour histogram is never empty")
}

fn unit_or_zero<T: Scalar>(mut v: Vec<T>) -> Vec<T> {
    let norm = v.iter().map(|&x| x * x).sum::<T>().sqrt();
    if norm > T::zero() {
        v.iter_mut().for_each(|x| *x = *x / norm);
    }
    v
}

/// Inner product.
pub fn similarity<T: Scalar>(a: &Embedding<T>, b: &Embedding<T>) -> Result<T> {
    if a.dim() != b.dim() {
        return Err(Error::EmbeddingLength(a.dim(), b.dim()));
    }
    Ok(a.values().iter().zip(b.values()).map(|(&x, &y)| x * y).sum())
}

/// Identity of a proposal in an external embedding file.
pub type ProposalKey = (u32, BoundingBox);

pub type ExternalEmbeddings<T> = HashMap<ProposalKey, Embedding<T>>;

/// Reads an embedding file: `PMEM`, then `version`, `dim` and `count` as
/// `u32`, then `count` records of `frame_index, x, y, w, h` (`u32`) followed
/// by `dim` `f32` values. Everything is little-endian.
pub fn load_external_embeddings<T: Scalar>(path: &Path) -> Result<ExternalEmbeddings<T>> {
    let malformed = |reason: String| Error::Malformed {
        kind: "embedding",
        path: path.to_path_buf(),
        reason,
    };
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    if bytes.len() < 16 || &bytes[..4] != EMBEDDING_MAGIC {
        return Err(malformed("bad header".into()));
    }
    if word(4) != EMBEDDING_VERSION {
        return Err(malformed(format!("unsupported version {}", word(4))));
    }
    let dim = word(8) as usize;
    let count = word(12) as usize;
    if dim == 0 {
        return Err(malformed("zero dimension".into()));
    }
    let record = 20 + 4 * dim;
    if bytes.len() != 16 + count * record {
        return Err(malformed(format!(
            "expected {} bytes for {count} records of dim {dim}, found {}",
            16 + count * record,
            bytes.len()
        )));
    }
    let mut out = HashMap::with_capacity(count);
    for r in 0..count {
        let base = 16 + r * record;
        let frame_index = word(base);
        let bbox = BoundingBox::try_new(word(base + 4), word(base + 8), word(base + 12), word(base + 16))
            .ok_or_else(|| malformed(format!("record {r}: empty box")))?;
        let values: Vec<T> = bytes[base + 20..base + record]
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        let e = Embedding::from_raw(values);
        let norm = e.norm().to_f64_lossy();
        if norm.is_nan() || (norm - 1.0).abs() > EXTERNAL_NORM_TOLERANCE {
            return Err(malformed(format!(
                "record {r} (frame {frame_index}, box {bbox}) has norm {norm}"
            )));
        }
        if out.insert((frame_index, bbox), e).is_some() {
            return Err(malformed(format!(
                "duplicate record for frame {frame_index}, box {bbox}"
            )));
        }
    }
    Ok(out)
}

/// Writes embeddings in the format read by [`load_external_embeddings`],
/// ordered by frame index then scan order.
pub fn write_external_embeddings<T: Scalar>(path: &Path, embeddings: &ExternalEmbeddings<T>) -> Result<()> {
    let mut keys: Vec<&ProposalKey> = embeddings.keys().collect();
    keys.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.scan_cmp(&b.1)));
    let dim = embeddings.values().next().map_or(0, |e| e.dim());
    if let Some(e) = embeddings.values().find(|e| e.dim() != dim) {
        return Err(Error::EmbeddingLength(dim, e.dim()));
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(EMBEDDING_MAGIC);
    for w in [EMBEDDING_VERSION, dim as u32, keys.len() as u32] {
        buf.extend_from_slice(&w.to_le_bytes());
    }
    for key in keys {
        let (frame, b) = *key;
        for w in [frame, b.x, b.y, b.w, b.h] {
            buf.extend_from_slice(&w.to_le_bytes());
        }
        for v in embeddings[key].values() {
            buf.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| Error::io(path, e))
}

/// Embeddings for `proposals` in order; errors listing every proposal the
/// map lacks.
pub fn lookup_embeddings<T: Scalar>(
    map: &ExternalEmbeddings<T>,
    proposals: &[Proposal<T>],
) -> Result<Vec<Embedding<T>>> {
    let missing: Vec<String> = proposals
        .iter()
        .filter(|p| !map.contains_key(&(p.frame_index, p.bbox)))
        .map(|p| format!("frame {} box {}", p.frame_index, p.bbox))
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingEmbeddings(missing.join(", ")));
    }
    Ok(proposals
        .iter()
        .map(|p| map[&(p.frame_index, p.bbox)].clone())
        .collect())
}
