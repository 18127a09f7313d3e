//! Scene-cut and exposure gates over a frame sequence.

use std::fmt;

use image::GrayImage;

use crate::error::{Error, Result};
use crate::ingest::{Frame, VideoSequence};

/// Side of the square grid correlation is measured on.
pub const CORRELATION_GRID: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterParams {
    /// Consecutive frames must correlate strictly above this.
    pub corr_threshold: f64,
    /// Inclusive bounds on mean gray intensity.
    pub intensity_limits: (f64, f64),
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams {
            corr_threshold: 0.1,
            intensity_limits: (50.0, 200.0),
        }
    }
}

impl FilterParams {
    pub fn intensity_ok(&self, mean: f64) -> bool {
        mean >= self.intensity_limits.0 && mean <= self.intensity_limits.1
    }

    /// An undefined correlation never passes.
    pub fn correlation_ok(&self, r: Option<f64>) -> bool {
        matches!(r, Some(r) if r > self.corr_threshold)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RemovalReason {
    Intensity {
        mean: f64,
    },
    /// Correlation against the retained frame `against`; `None` when one of
    /// the frames has no variance.
    Correlation {
        against: u32,
        r: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Removal {
    pub frame_index: u32,
    pub reason: RemovalReason,
}

impl fmt::Display for Removal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.reason {
            RemovalReason::Intensity { mean } => {
                write!(f, "frame={} gate=intensity mean={mean:.3}", self.frame_index)
            }
            RemovalReason::Correlation { against, r: Some(r) } => write!(
                f,
                "frame={} gate=correlation against={against} r={r:.6}",
                self.frame_index
            ),
            RemovalReason::Correlation { against, r: None } => write!(
                f,
                "frame={} gate=correlation against={against} r=undefined",
                self.frame_index
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FilterReport {
    pub video_id: String,
    pub removals: Vec<Removal>,
    pub input_frames: usize,
}

impl FilterReport {
    /// Why every frame went; meaningful when nothing was retained.
    pub fn rejection_reason(&self) -> String {
        let by_intensity = self
            .removals
            .iter()
            .filter(|r| matches!(r.reason, RemovalReason::Intensity { .. }))
            .count();
        if by_intensity == self.input_frames {
            format!("all {} frames failed the intensity gate", self.input_frames)
        } else {
            format!(
                "all {} frames removed ({} by intensity gate)",
                self.input_frames, by_intensity
            )
        }
    }
}

/// Mean of the gray channel.
pub fn mean_intensity(f: &Frame) -> f64 {
    let g = f.gray().as_raw();
    if g.is_empty() {
        return 0.0;
    }
    g.iter().map(|&v| v as u64).sum::<u64>() as f64 / g.len() as f64
}

/// Box-filter downsample of a gray plane to `side`×`side`.
pub fn downsample_box(gray: &GrayImage, side: usize) -> Vec<f64> {
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let span = |i: usize, n: usize| {
        let lo = i * n / side;
        let hi = ((i + 1) * n / side).max(lo + 1).min(n);
        (lo.min(n - 1), hi)
    };
    let raw = gray.as_raw();
    let mut out = Vec::with_capacity(side * side);
    for j in 0..side {
        let (y0, y1) = span(j, h);
        for i in 0..side {
            let (x0, x1) = span(i, w);
            let mut acc = 0u64;
            for y in y0..y1 {
                acc += raw[y * w + x0..y * w + x1].iter().map(|&v| v as u64).sum::<u64>();
            }
            out.push(acc as f64 / ((x1 - x0) * (y1 - y0)) as f64);
        }
    }
    out
}

/// Pearson correlation of the two frames' 64×64 box-downsampled gray
/// planes. `None` when either plane has zero variance.
pub fn pearson_correlation(f1: &Frame, f2: &Frame) -> Option<f64> {
    let a = downsample_box(f1.gray(), CORRELATION_GRID);
    let b = downsample_box(f2.gray(), CORRELATION_GRID);
    pearson(&a, &b)
}

pub(crate) fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 1e-12 * n || sbb <= 1e-12 * n {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Drops frames outside the intensity limits, then walks consecutive
/// survivors and drops the later frame of every pair that fails the
/// correlation gate. Fails with [`Error::Rejected`] when nothing is left.
pub fn filter_frames(seq: VideoSequence, params: &FilterParams) -> Result<(VideoSequence, FilterReport)> {
    let mut report = FilterReport {
        video_id: seq.video_id.clone(),
        removals: Vec::new(),
        input_frames: seq.frames.len(),
    };

    let mut survivors: Vec<(u32, Frame)> = Vec::new();
    for (frame, index) in seq.frames.into_iter().zip(seq.retained_indices) {
        let mean = mean_intensity(&frame);
        if params.intensity_ok(mean) {
            survivors.push((index, frame));
        } else {
            report.removals.push(Removal {
                frame_index: index,
                reason: RemovalReason::Intensity { mean },
            });
        }
    }

    let mut kept: Vec<(u32, Frame)> = Vec::with_capacity(survivors.len());
    for (index, frame) in survivors {
        match kept.last() {
            None => kept.push((index, frame)),
            Some((prev_index, prev)) => {
                let r = pearson_correlation(prev, &frame);
                if params.correlation_ok(r) {
                    kept.push((index, frame));
                } else {
                    report.removals.push(Removal {
                        frame_index: index,
                        reason: RemovalReason::Correlation {
                            against: *prev_index,
                            r,
                        },
                    });
                }
            }
        }
    }
    report.removals.sort_by_key(|r| r.frame_index);

    if kept.is_empty() {
        return Err(Error::Rejected(Box::new(report)));
    }
    let (retained_indices, frames) = kept.into_iter().unzip();
    Ok((
        VideoSequence {
            video_id: seq.video_id,
            frames,
            retained_indices,
        },
        report,
    ))
}
