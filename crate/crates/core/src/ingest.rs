//! Frame rasters and per-video frame sequences on disk.

use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, RgbImage};

use crate::error::{Error, Result};

/// Extensions accepted as lossless frame rasters.
const FRAME_EXTENSIONS: &[&str] = &["png", "bmp", "ppm", "pgm", "pnm", "tif", "tiff"];

/// An RGB frame with its BT.601 luma plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    rgb: RgbImage,
    gray: GrayImage,
}

impl Frame {
    pub fn from_rgb(rgb: RgbImage) -> Self {
        let gray = GrayImage::from_fn(rgb.width(), rgb.height(), |x, y| {
            let [r, g, b] = rgb.get_pixel(x, y).0;
            Luma([luma_601(r, g, b)])
        });
        Frame { rgb, gray }
    }

    /// Gray frame replicated into three channels.
    pub fn from_gray(gray: GrayImage) -> Self {
        let rgb = RgbImage::from_fn(gray.width(), gray.height(), |x, y| {
            let v = gray.get_pixel(x, y).0[0];
            image::Rgb([v, v, v])
        });
        Frame { rgb, gray }
    }

    pub fn width(&self) -> u32 {
        self.rgb.width()
    }

    pub fn height(&self) -> u32 {
        self.rgb.height()
    }

    pub fn rgb(&self) -> &RgbImage {
        &self.rgb
    }

    pub fn gray(&self) -> &GrayImage {
        &self.gray
    }
}

#[inline]
pub fn luma_601(r: u8, g: u8, b: u8) -> u8 {
    let y = 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64;
    y.round().clamp(0.0, 255.0) as u8
}

/// The frames of one video, in order, tagged with their frame numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSequence {
    pub video_id: String,
    pub frames: Vec<Frame>,
    /// Frame number of each entry of `frames`, strictly increasing.
    pub retained_indices: Vec<u32>,
}

impl VideoSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Frame number encoded in a file stem such as `007`.
fn frame_number(path: &Path) -> Option<u32> {
    let ext = path.extension()?.to_str()?.to_ascii_lowercase();
    if !FRAME_EXTENSIONS.contains(&ext.as_str()) {
        return None;
    }
    let stem = path.file_stem()?.to_str()?;
    if stem.is_empty() || !stem.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    stem.parse().ok()
}

/// Loads every numbered raster in `dir` in frame-number order. The video
/// id is the directory name.
pub fn load_sequence(dir: &Path) -> Result<VideoSequence> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut numbered: Vec<(u32, PathBuf)> = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if let Some(n) = frame_number(&path) {
            numbered.push((n, path));
        }
    }
    if numbered.is_empty() {
        return Err(Error::EmptySequence(dir.to_path_buf()));
    }
    numbered.sort();
    if let Some(w) = numbered.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::DuplicateFrame {
            dir: dir.to_path_buf(),
            index: w[0].0,
        });
    }

    let mut frames = Vec::with_capacity(numbered.len());
    for (_, path) in &numbered {
        let img = image::open(path).map_err(|e| Error::FrameRead {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        frames.push(Frame::from_rgb(img.to_rgb8()));
    }

    let video_id = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(VideoSequence {
        video_id,
        frames,
        retained_indices: numbered.into_iter().map(|(n, _)| n).collect(),
    })
}
