//! Dense Horn–Schunck optical flow on an image pyramid, the flow-magnitude
//! image, and a raw file format for precomputed flow.

use std::io::{Read, Write};
use std::path::Path;

use image::{imageops, GrayImage, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Frame;
use crate::scalar::Scalar;

const FLOW_MAGIC: &[u8; 4] = b"PMFL";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowParams {
    /// Smoothness weight; the energy uses `alpha²`.
    pub alpha: f64,
    /// Jacobi sweeps per pyramid level.
    pub iterations: usize,
    pub levels: usize,
    /// Resolution ratio between consecutive pyramid levels.
    pub scale: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            alpha: 15.0,
            iterations: 100,
            levels: 3,
            scale: 0.5,
        }
    }
}

/// Per-pixel displacement `(u, v)` from the first frame to the second.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField<T> {
    pub width: u32,
    pub height: u32,
    pub u: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Scalar> FlowField<T> {
    pub fn zeros(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        FlowField {
            width,
            height,
            u: vec![T::zero(); n],
            v: vec![T::zero(); n],
        }
    }

    #[inline]
    pub fn at(&self, x: u32, y: u32) -> (T, T) {
        let i = y as usize * self.width as usize + x as usize;
        (self.u[i], self.v[i])
    }

    pub fn magnitudes(&self) -> impl Iterator<Item = T> + '_ {
        self.u.iter().zip(&self.v).map(|(&u, &v)| (u * u + v * v).sqrt())
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.v).all(|x| x.is_finite())
    }
}

/// Row-major scalar raster.
#[derive(Debug, Clone)]
struct Plane<T> {
    w: usize,
    h: usize,
    data: Vec<T>,
}

impl<T: Scalar> Plane<T> {
    fn from_gray(g: &GrayImage) -> Self {
        Plane {
            w: g.width() as usize,
            h: g.height() as usize,
            data: g.as_raw().iter().map(|&v| T::of(v as f64)).collect(),
        }
    }

    fn filled(w: usize, h: usize, v: T) -> Self {
        Plane {
            w,
            h,
            data: vec![v; w * h],
        }
    }

    #[inline]
    fn at(&self, x: isize, y: isize) -> T {
        let x = x.clamp(0, self.w as isize - 1) as usize;
        let y = y.clamp(0, self.h as isize - 1) as usize;
        self.data[y * self.w + x]
    }

    /// Bilinear sample with replicate borders.
    fn sample(&self, x: T, y: T) -> T {
        let max_x = T::of((self.w - 1) as f64);
        let max_y = T::of((self.h - 1) as f64);
        let x = x.max(T::zero()).min(max_x);
        let y = y.max(T::zero()).min(max_y);
        let x0 = x.floor();
        let y0 = y.floor();
        let (fx, fy) = (x - x0, y - y0);
        let (xi, yi) = (x0.to_isize().unwrap_or(0), y0.to_isize().unwrap_or(0));
        let a = self.at(xi, yi);
        let b = self.at(xi + 1, yi);
        let c = self.at(xi, yi + 1);
        let d = self.at(xi + 1, yi + 1);
        let one = T::one();
        (a * (one - fx) + b * fx) * (one - fy) + (c * (one - fx) + d * fx) * fy
    }

    /// Area-averaging downsample to `w`×`h` (each target pixel averages
    /// the source pixels its footprint covers).
    fn downsample(&self, w: usize, h: usize) -> Self {
        let span = |i: usize, n: usize, m: usize| {
            let lo = i * n / m;
            let hi = ((i + 1) * n / m).max(lo + 1).min(n);
            (lo.min(n - 1), hi)
        };
        let mut data = Vec::with_capacity(w * h);
        for j in 0..h {
            let (y0, y1) = span(j, self.h, h);
            for i in 0..w {
                let (x0, x1) = span(i, self.w, w);
                let mut acc = T::zero();
                for y in y0..y1 {
                    acc = acc + self.data[y * self.w + x0..y * self.w + x1].iter().copied().sum::<T>();
                }
                data.push(acc / T::of(((x1 - x0) * (y1 - y0)) as f64));
            }
        }
        Plane { w, h, data }
    }

    /// Bilinear resample onto a `w`×`h` grid with pixel-centre alignment.
    fn upsample(&self, w: usize, h: usize) -> Self {
        let sx = self.w as f64 / w as f64;
        let sy = self.h as f64 / h as f64;
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            let cy = T::of((y as f64 + 0.5) * sy - 0.5);
            for x in 0..w {
                let cx = T::of((x as f64 + 0.5) * sx - 0.5);
                data.push(self.sample(cx, cy));
            }
        }
        Plane { w, h, data }
    }

    fn scaled(mut self, k: T) -> Self {
        self.data.iter_mut().for_each(|v| *v = *v * k);
        self
    }

    /// Central-difference derivatives with replicate padding.
    fn gradients(&self) -> (Plane<T>, Plane<T>) {
        let half = T::of(0.5);
        let mut gx = Vec::with_capacity(self.data.len());
        let mut gy = Vec::with_capacity(self.data.len());
        for y in 0..self.h as isize {
            for x in 0..self.w as isize {
                gx.push((self.at(x + 1, y) - self.at(x - 1, y)) * half);
                gy.push((self.at(x, y + 1) - self.at(x, y - 1)) * half);
            }
        }
        (
            Plane {
                w: self.w,
                h: self.h,
                data: gx,
            },
            Plane {
                w: self.w,
                h: self.h,
                data: gy,
            },
        )
    }

    /// Horn–Schunck neighbourhood average: 1/6 on edge neighbours, 1/12
    /// on diagonals.
    fn neighbour_mean(&self, out: &mut Vec<T>) {
        let edge = T::of(1.0 / 6.0);
        let diag = T::of(1.0 / 12.0);
        let (w, h) = (self.w, self.h);
        out.clear();
        out.resize(w * h, T::zero());
        for y in 0..h {
            let up = &self.data[y.saturating_sub(1) * w..][..w];
            let mid = &self.data[y * w..][..w];
            let down = &self.data[(y + 1).min(h - 1) * w..][..w];
            let row = &mut out[y * w..][..w];
            for x in 0..w {
                let (l, r) = (x.saturating_sub(1), (x + 1).min(w - 1));
                let e = mid[l] + mid[r] + up[x] + down[x];
                let d = up[l] + up[r] + down[l] + down[r];
                row[x] = e * edge + d * diag;
            }
        }
    }
}

fn pyramid<T: Scalar>(base: Plane<T>, levels: usize, scale: f64) -> Vec<Plane<T>> {
    let mut out = vec![base];
    for _ in 1..levels.max(1) {
        let prev = out.last().unwrap();
        let w = ((prev.w as f64 * scale).ceil() as usize).max(1);
        let h = ((prev.h as f64 * scale).ceil() as usize).max(1);
        if w == prev.w && h == prev.h {
            break;
        }
        out.push(prev.downsample(w, h));
    }
    out
}

/// Horn–Schunck flow from `f1` to `f2`, coarse to fine. At each level the
/// second image is warped by the current estimate and the incremental
/// linearized energy is relaxed with Jacobi sweeps. `f2` is resized to
/// `f1` when dimensions differ.
pub fn compute_flow<T: Scalar>(f1: &Frame, f2: &Frame, params: &FlowParams) -> Result<FlowField<T>> {
    let (w, h) = (f1.width(), f1.height());
    let resized;
    let second = if (f2.width(), f2.height()) != (w, h) {
        log::warn!(
            "resizing second frame {}x{} to {}x{} for flow",
            f2.width(),
            f2.height(),
            w,
            h
        );
        resized = imageops::resize(f2.gray(), w, h, imageops::FilterType::Triangle);
        &resized
    } else {
        f2.gray()
    };
    if (second.width(), second.height()) != (w, h) {
        return Err(Error::DimensionMismatch(format!(
            "flow pair {}x{} vs {}x{}",
            w,
            h,
            second.width(),
            second.height()
        )));
    }
    if !(params.scale > 0.0 && params.scale < 1.0) || params.alpha <= 0.0 {
        return Err(Error::Config(format!("invalid flow params {params:?}")));
    }

    let p1 = pyramid(Plane::<T>::from_gray(f1.gray()), params.levels, params.scale);
    let p2 = pyramid(Plane::<T>::from_gray(second), params.levels, params.scale);
    let alpha2 = T::of(params.alpha * params.alpha);

    let coarsest = p1.last().unwrap();
    let mut u = Plane::filled(coarsest.w, coarsest.h, T::zero());
    let mut v = u.clone();

    for (i1, i2) in p1.iter().zip(&p2).rev() {
        if (u.w, u.h) != (i1.w, i1.h) {
            let kx = T::of(i1.w as f64 / u.w as f64);
            let ky = T::of(i1.h as f64 / u.h as f64);
            u = u.upsample(i1.w, i1.h).scaled(kx);
            v = v.upsample(i1.w, i1.h).scaled(ky);
        }
        refine_level(i1, i2, &mut u, &mut v, alpha2, params.iterations);
    }

    Ok(FlowField {
        width: w,
        height: h,
        u: u.data,
        v: v.data,
    })
}

fn refine_level<T: Scalar>(
    i1: &Plane<T>,
    i2: &Plane<T>,
    u: &mut Plane<T>,
    v: &mut Plane<T>,
    alpha2: T,
    iterations: usize,
) {
    let (w, h) = (i1.w, i1.h);
    let mut warped = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let k = y * w + x;
            warped.push(i2.sample(T::of(x as f64) + u.data[k], T::of(y as f64) + v.data[k]));
        }
    }
    let warped = Plane { w, h, data: warped };

    let (gx1, gy1) = i1.gradients();
    let (gx2, gy2) = warped.gradients();
    let half = T::of(0.5);
    let n = w * h;
    let mut ix = Vec::with_capacity(n);
    let mut iy = Vec::with_capacity(n);
    let mut it = Vec::with_capacity(n);
    let mut denom = Vec::with_capacity(n);
    for k in 0..n {
        let gx = (gx1.data[k] + gx2.data[k]) * half;
        let gy = (gy1.data[k] + gy2.data[k]) * half;
        ix.push(gx);
        iy.push(gy);
        it.push(warped.data[k] - i1.data[k]);
        denom.push(alpha2 + gx * gx + gy * gy);
    }

    let u0 = u.data.clone();
    let v0 = v.data.clone();
    let mut ubar = Vec::with_capacity(n);
    let mut vbar = Vec::with_capacity(n);
    for _ in 0..iterations {
        u.neighbour_mean(&mut ubar);
        v.neighbour_mean(&mut vbar);
        for k in 0..n {
            let t = (ix[k] * (ubar[k] - u0[k]) + iy[k] * (vbar[k] - v0[k]) + it[k]) / denom[k];
            u.data[k] = ubar[k] - ix[k] * t;
            v.data[k] = vbar[k] - iy[k] * t;
        }
    }
}

/// Per-pixel flow magnitude rescaled to 8 bits (min → 0, max → 255) and
/// replicated to three channels. A constant-magnitude field maps to zero.
pub fn flow_magnitude_image<T: Scalar>(flow: &FlowField<T>) -> Frame {
    let mags: Vec<f64> = flow.magnitudes().map(|m| m.to_f64_lossy()).collect();
    let lo = mags.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mags.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let gray = GrayImage::from_fn(flow.width, flow.height, |x, y| {
        let m = mags[y as usize * flow.width as usize + x as usize];
        if span > 0.0 {
            Luma([((m - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8])
        } else {
            Luma([0])
        }
    });
    Frame::from_gray(gray)
}

/// Writes `PMFL`, width and height as `u32`, then all `u` then all `v`
/// values as `f32`, little-endian.
pub fn write_flow_file<T: Scalar>(path: &Path, flow: &FlowField<T>) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + 8 * flow.u.len());
    buf.extend_from_slice(FLOW_MAGIC);
    buf.extend_from_slice(&flow.width.to_le_bytes());
    buf.extend_from_slice(&flow.height.to_le_bytes());
    for x in flow.u.iter().chain(&flow.v) {
        buf.extend_from_slice(&(x.to_f64_lossy() as f32).to_le_bytes());
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| Error::io(path, e))
}

pub fn read_flow_file<T: Scalar>(path: &Path) -> Result<FlowField<T>> {
    let malformed = |reason: String| Error::Malformed {
        kind: "flow",
        path: path.to_path_buf(),
        reason,
    };
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[..4] != FLOW_MAGIC {
        return Err(malformed("bad header".into()));
    }
    let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let n = width as usize * height as usize;
    if bytes.len() != 12 + 8 * n {
        return Err(malformed(format!(
            "expected {} bytes for {width}x{height}, found {}",
            12 + 8 * n,
            bytes.len()
        )));
    }
    let mut values = bytes[12..]
        .chunks_exact(4)
        .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64));
    let u: Vec<T> = values.by_ref().take(n).collect();
    let v: Vec<T> = values.collect();
    let flow = FlowField { width, height, u, v };
    if !flow.is_finite() {
        return Err(malformed("non-finite flow values".into()));
    }
    Ok(flow)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::texture::ValueNoise;
    use proptest::prelude::*;

    fn textured_pair(w: u32, h: u32, dx: f64, dy: f64, seed: u64) -> (Frame, Frame) {
        let tex = ValueNoise::new(seed, 7.0);
        let f = |ox: f64, oy: f64| {
            Frame::from_gray(GrayImage::from_fn(w, h, |x, y| {
                Luma([(60.0 + 140.0 * tex.at(x as f64 - ox, y as f64 - oy)).round() as u8])
            }))
        };
        (f(0.0, 0.0), f(dx, dy))
    }

    #[test]
    fn identical_frames_give_zero_flow() {
        let (a, _) = textured_pair(96, 72, 0.0, 0.0, 3);
        let flow: FlowField<f64> = compute_flow(&a, &a, &FlowParams::default()).unwrap();
        assert!(flow.magnitudes().fold(0.0, f64::max) < 0.1);
    }

    #[test]
    fn textureless_frames_give_zero_flow() {
        let a = Frame::from_gray(GrayImage::from_pixel(64, 48, Luma([120])));
        let b = Frame::from_gray(GrayImage::from_pixel(64, 48, Luma([120])));
        let flow: FlowField<f32> = compute_flow(&a, &b, &FlowParams::default()).unwrap();
        assert!(flow.magnitudes().fold(0.0, f32::max) < 0.1);
    }

    #[test]
    fn recovers_translation() {
        let (a, b) = textured_pair(128, 96, 2.0, 0.0, 11);
        let flow: FlowField<f64> = compute_flow(&a, &b, &FlowParams::default()).unwrap();
        let mut errs = Vec::new();
        for y in 10..86 {
            for x in 10..118 {
                let (u, v) = flow.at(x, y);
                errs.push(((u - 2.0).powi(2) + v.powi(2)).sqrt());
            }
        }
        errs.sort_by(f64::total_cmp);
        assert!(errs[errs.len() / 2] < 0.5, "median epe {}", errs[errs.len() / 2]);
    }

    #[test]
    fn deterministic_and_resizes_mismatched_pair() {
        let (a, b) = textured_pair(64, 48, 1.0, 1.0, 5);
        let p = FlowParams::default();
        let f1: FlowField<f64> = compute_flow(&a, &b, &p).unwrap();
        let f2: FlowField<f64> = compute_flow(&a, &b, &p).unwrap();
        assert_eq!(f1, f2);

        let (c, _) = textured_pair(80, 60, 0.0, 0.0, 6);
        let mixed: FlowField<f64> = compute_flow(&a, &c, &p).unwrap();
        assert_eq!((mixed.width, mixed.height), (64, 48));
        assert!(mixed.is_finite());
    }

    #[test]
    fn magnitude_image_endpoints() {
        let zero = FlowField::<f64>::zeros(16, 16);
        assert!(flow_magnitude_image(&zero).gray().as_raw().iter().all(|&v| v == 0));

        let mut field = FlowField::<f64>::zeros(16, 16);
        for y in 4..8 {
            for x in 4..8 {
                let k = y * 16 + x;
                field.u[k] = 3.0;
                field.v[k] = 4.0;
            }
        }
        let img = flow_magnitude_image(&field);
        assert_eq!(img.gray().get_pixel(5, 5).0[0], 255);
        assert_eq!(img.gray().get_pixel(0, 0).0[0], 0);
        assert_eq!(img.rgb().get_pixel(5, 5).0, [255, 255, 255]);
    }

    #[test]
    fn flow_file_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("f.flo");
        let mut field = FlowField::<f64>::zeros(5, 3);
        field.u[4] = 1.5;
        field.v[14] = -0.25;
        write_flow_file(&path, &field).unwrap();
        assert_eq!(read_flow_file::<f64>(&path).unwrap(), field);
        std::fs::write(&path, b"PMFL\x05\0\0\0").unwrap();
        assert!(matches!(read_flow_file::<f64>(&path), Err(Error::Malformed { .. })));
    }

    proptest! {
        #[test]
        fn magnitude_ranking_preserved(vals in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 16)) {
            let mut field = FlowField::<f64>::zeros(4, 4);
            for (k, (u, v)) in vals.iter().enumerate() {
                field.u[k] = *u;
                field.v[k] = *v;
            }
            let mags: Vec<f64> = field.magnitudes().collect();
            let img = flow_magnitude_image(&field);
            let px = img.gray().as_raw();
            for i in 0..16 {
                for j in 0..16 {
                    if mags[i] < mags[j] {
                        prop_assert!(px[i] <= px[j]);
                    }
                }
            }
        }
    }
}
