//! Synthetic videos with a moving textured object and known ground truth.

pub mod texture;

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use texture::ValueNoise;

/// File name of the per-video ground-truth sidecar.
pub const GT_FILE: &str = "gt.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Background {
    Plain {
        level: u8,
    },
    /// Static per-pixel Gaussian noise around mid-gray.
    Noise {
        sigma: f64,
    },
    TexturedStatic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TexturedRect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    pub texture_seed: u64,
}

impl TexturedRect {
    fn bbox(&self) -> BoundingBox {
        BoundingBox::new(self.x, self.y, self.w, self.h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub n_frames: u32,
    /// Object placement in the first frame.
    pub object: TexturedRect,
    /// Integer displacement per frame.
    pub motion: (i32, i32),
    pub background: Background,
    #[serde(default)]
    pub distractors: Vec<TexturedRect>,
    pub seed: u64,
}

/// A list of synthetic videos, as read from a TOML spec file with one
/// `[[videos]]` table per entry.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthCorpus {
    pub videos: Vec<SynthSpec>,
}

impl SynthCorpus {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Malformed {
            kind: "synthetic spec",
            path: Default::default(),
            reason: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Malformed { kind, reason, .. } => Error::Malformed {
                kind,
                path: path.to_path_buf(),
                reason,
            },
            e => e,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("corpus serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GtBox {
    pub frame_index: u32,
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl GtBox {
    pub fn bbox(&self) -> BoundingBox {
        BoundingBox::new(self.x, self.y, self.w, self.h)
    }
}

impl SynthSpec {
    fn invalid(&self, reason: impl Into<String>) -> Error {
        Error::InvalidSynthSpec {
            entry: self.id.clone(),
            reason: reason.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() || self.id.contains(['/', '\\']) || self.id.starts_with('.') {
            return Err(self.invalid("id must be a plain directory name"));
        }
        if self.n_frames < 2 {
            return Err(self.invalid("n_frames must be at least 2"));
        }
        if self.width == 0 || self.height == 0 || self.object.w == 0 || self.object.h == 0 {
            return Err(self.invalid("zero-sized frame or object"));
        }
        for t in 0..self.n_frames {
            if self.object_box(t).is_none() {
                return Err(self.invalid(format!("object leaves the frame at frame {t}")));
            }
        }
        for (i, d) in self.distractors.iter().enumerate() {
            if d.w == 0 || d.h == 0 || !d.bbox().fits_in(self.width, self.height) {
                return Err(self.invalid(format!("distractor {i} lies outside the frame")));
            }
        }
        if let Background::Noise { sigma } = self.background {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return Err(self.invalid("noise sigma must be finite and non-negative"));
            }
        }
        Ok(())
    }

    /// Object box in frame `t`, or `None` if it would leave the frame.
    pub fn object_box(&self, t: u32) -> Option<BoundingBox> {
        let x = self.object.x as i64 + self.motion.0 as i64 * t as i64;
        let y = self.object.y as i64 + self.motion.1 as i64 * t as i64;
        if x < 0 || y < 0 {
            return None;
        }
        let b = BoundingBox::try_new(x as u32, y as u32, self.object.w, self.object.h)?;
        b.fits_in(self.width, self.height).then_some(b)
    }

    pub fn ground_truth(&self) -> Vec<GtBox> {
        (0..self.n_frames)
            .filter_map(|t| {
                self.object_box(t).map(|b| GtBox {
                    frame_index: t,
                    x: b.x,
                    y: b.y,
                    w: b.w,
                    h: b.h,
                })
            })
            .collect()
    }

    fn background_image(&self) -> RgbImage {
        let (w, h) = (self.width, self.height);
        match self.background {
            Background::Plain { level } => RgbImage::from_pixel(w, h, Rgb([level, level, level])),
            Background::Noise { sigma } => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                let normal = Normal::new(118.0, sigma.max(0.0)).expect("validated sigma");
                let mut img = RgbImage::new(w, h);
                for px in img.pixels_mut() {
                    let v = normal.sample(&mut rng).round().clamp(0.0, 255.0) as u8;
                    *px = Rgb([v, v, v]);
                }
                img
            }
            Background::TexturedStatic => {
                let tex = ValueNoise::new(self.seed ^ 0x5eed, 9.0);
                RgbImage::from_fn(w, h, |x, y| {
                    let v = (80.0 + 70.0 * tex.at(x as f64, y as f64)).round() as u8;
                    Rgb([v, v, v.saturating_add(10)])
                })
            }
        }
    }

    /// Renders all frames in memory.
    pub fn render(&self) -> Result<Vec<RgbImage>> {
        self.validate()?;
        let background = self.background_image();
        let mut base = background;
        for d in &self.distractors {
            paint_textured(&mut base, &d.bbox(), d.texture_seed);
        }
        Ok((0..self.n_frames)
            .map(|t| {
                let mut frame = base.clone();
                let b = self.object_box(t).expect("validated");
                paint_textured(&mut frame, &b, self.object.texture_seed);
                frame
            })
            .collect())
    }
}

/// Paints a colourful value-noise texture into `b`, anchored to the box so
/// that the texture moves with it.
fn paint_textured(img: &mut RgbImage, b: &BoundingBox, seed: u64) {
    let channels = [
        ValueNoise::new(seed, 5.0),
        ValueNoise::new(seed.wrapping_add(1), 5.0),
        ValueNoise::new(seed.wrapping_add(2), 5.0),
    ];
    for y in 0..b.h {
        for x in 0..b.w {
            let px = channels.map(|n| (30.0 + 200.0 * n.at(x as f64, y as f64)).round() as u8);
            img.put_pixel(b.x + x, b.y + y, Rgb(px));
        }
    }
}

/// Writes the frames of `spec` as `<out_root>/<id>/NNN.png` with a
/// `gt.jsonl` sidecar, returning the ground truth.
pub fn generate_synthetic_video(spec: &SynthSpec, out_root: &Path) -> Result<Vec<GtBox>> {
    let frames = spec.render()?;
    let dir = out_root.join(&spec.id);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for (t, frame) in frames.iter().enumerate() {
        let path = dir.join(format!("{t:03}.png"));
        frame.save(&path).map_err(|e| Error::Io {
            path: path.clone(),
            source: std::io::Error::other(e),
        })?;
    }
    let gt = spec.ground_truth();
    write_ground_truth(&dir.join(GT_FILE), &gt)?;
    Ok(gt)
}

pub fn generate_corpus(corpus: &SynthCorpus, out_root: &Path) -> Result<BTreeMap<String, Vec<GtBox>>> {
    let mut seen = std::collections::BTreeSet::new();
    for spec in &corpus.videos {
        spec.validate()?;
        if !seen.insert(spec.id.as_str()) {
            return Err(spec.invalid("duplicate video id"));
        }
    }
    corpus
        .videos
        .iter()
        .map(|spec| Ok((spec.id.clone(), generate_synthetic_video(spec, out_root)?)))
        .collect()
}

pub fn write_ground_truth(path: &Path, gt: &[GtBox]) -> Result<()> {
    let mut out = Vec::new();
    for g in gt {
        serde_json::to_writer(&mut out, g).expect("plain struct serializes");
        out.push(b'\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<GtBox>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let g: GtBox = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            kind: "ground truth",
            path: path.to_path_buf(),
            reason: format!("line {}: {e}", n + 1),
        })?;
        if g.w == 0 || g.h == 0 {
            return Err(Error::Malformed {
                kind: "ground truth",
                path: path.to_path_buf(),
                reason: format!("line {}: empty box", n + 1),
            });
        }
        out.push(g);
    }
    Ok(out)
}

/// Ground truth for every `<root>/<video>/gt.jsonl`, keyed by video id and
/// frame index.
pub fn load_ground_truth_root(root: &Path) -> Result<BTreeMap<String, BTreeMap<u32, BoundingBox>>> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    for entry in entries {
        let dir = entry.map_err(|e| Error::io(root, e))?.path();
        let gt_path = dir.join(GT_FILE);
        if !gt_path.is_file() {
            continue;
        }
        let id = dir.file_name().unwrap().to_string_lossy().into_owned();
        let boxes = read_ground_truth(&gt_path)?
            .into_iter()
            .map(|g| (g.frame_index, g.bbox()))
            .collect();
        out.insert(id, boxes);
    }
    Ok(out)
}

/// Knobs for [`standard_corpus`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusOptions {
    pub width: u32,
    pub height: u32,
    pub min_frames: u32,
    pub max_frames: u32,
    pub object_size: (u32, u32),
    /// Range of the noise-background standard deviation.
    pub noise_sigma: (f64, f64),
    /// Add one static textured rectangle of the object's size.
    pub distractor: bool,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        CorpusOptions {
            width: 320,
            height: 240,
            min_frames: 5,
            max_frames: 7,
            object_size: (100, 130),
            noise_sigma: (3.0, 8.0),
            distractor: false,
        }
    }
}

/// `n` seeded videos with a single moving object, alternating plain and
/// noise backgrounds.
pub fn standard_corpus(n: usize, seed: u64, opts: &CorpusOptions) -> SynthCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let videos = (0..n)
        .map(|i| {
            let mut attempt = 0;
            loop {
                attempt += 1;
                if let Some(spec) = random_spec(&mut rng, i, seed, opts) {
                    break spec;
                }
                assert!(attempt < 10_000, "corpus options leave no room for the object");
            }
        })
        .collect();
    SynthCorpus { videos }
}

fn random_spec(rng: &mut ChaCha8Rng, i: usize, seed: u64, opts: &CorpusOptions) -> Option<SynthSpec> {
    const MARGIN: i64 = 4;
    let n_frames = rng.random_range(opts.min_frames..=opts.max_frames);
    let ow = rng.random_range(opts.object_size.0..=opts.object_size.1);
    let oh = rng.random_range(opts.object_size.0..=opts.object_size.1);
    let (dx, dy) = loop {
        let d = (rng.random_range(-3i32..=3), rng.random_range(-3i32..=3));
        if d != (0, 0) {
            break d;
        }
    };
    let span = n_frames as i64 - 1;
    let (w, h) = (opts.width as i64, opts.height as i64);
    // Range of first-frame positions keeping the whole path inside.
    let x_lo = MARGIN - (dx as i64 * span).min(0);
    let x_hi = w - MARGIN - ow as i64 - (dx as i64 * span).max(0);
    let y_lo = MARGIN - (dy as i64 * span).min(0);
    let y_hi = h - MARGIN - oh as i64 - (dy as i64 * span).max(0);
    if x_hi < x_lo || y_hi < y_lo {
        return None;
    }
    let x = rng.random_range(x_lo..=x_hi) as u32;
    let y = rng.random_range(y_lo..=y_hi) as u32;
    let background = if i.is_multiple_of(2) {
        Background::Plain {
            level: rng.random_range(90..=130),
        }
    } else {
        Background::Noise {
            sigma: rng.random_range(opts.noise_sigma.0..opts.noise_sigma.1),
        }
    };
    let object = TexturedRect {
        x,
        y,
        w: ow,
        h: oh,
        texture_seed: rng.random::<u32>() as u64,
    };
    let mut distractors = Vec::new();
    if opts.distractor {
        // Keep the distractor clear of the object's whole path.
        let path_x0 = x as i64 + (dx as i64 * span).min(0) - 8;
        let path_x1 = x as i64 + ow as i64 + (dx as i64 * span).max(0) + 8;
        let path_y0 = y as i64 + (dy as i64 * span).min(0) - 8;
        let path_y1 = y as i64 + oh as i64 + (dy as i64 * span).max(0) + 8;
        let placed = (0..200).find_map(|_| {
            let cx = rng.random_range(MARGIN..=w - MARGIN - ow as i64);
            let cy = rng.random_range(MARGIN..=h - MARGIN - oh as i64);
            let clear = cx + ow as i64 <= path_x0 || cx >= path_x1 || cy + oh as i64 <= path_y0 || cy >= path_y1;
            clear.then_some((cx as u32, cy as u32))
        })?;
        distractors.push(TexturedRect {
            x: placed.0,
            y: placed.1,
            w: ow,
            h: oh,
            texture_seed: rng.random::<u32>() as u64,
        });
    }
    Some(SynthSpec {
        id: format!("synth_{seed}_{i:04}"),
        width: opts.width,
        height: opts.height,
        n_frames,
        object,
        motion: (dx, dy),
        background,
        distractors,
        seed: rng.random::<u32>() as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(motion: (i32, i32)) -> SynthSpec {
        SynthSpec {
            id: "v0".into(),
            width: 96,
            height: 72,
            n_frames: 4,
            object: TexturedRect {
                x: 10,
                y: 10,
                w: 20,
                h: 16,
                texture_seed: 3,
            },
            motion,
            background: Background::Noise { sigma: 8.0 },
            distractors: vec![],
            seed: 42,
        }
    }

    #[test]
    fn zero_motion_gives_identical_frames() {
        let s = spec((0, 0));
        let frames = s.render().unwrap();
        assert!(frames.windows(2).all(|w| w[0] == w[1]));
        assert!(s.ground_truth().windows(2).all(|w| w[0].bbox() == w[1].bbox()));
    }

    #[test]
    fn gt_advances_by_motion() {
        let gt = spec((3, 0)).ground_truth();
        assert_eq!(gt.iter().map(|g| g.x).collect::<Vec<_>>(), vec![10, 13, 16, 19]);
    }

    #[test]
    fn object_exiting_is_rejected() {
        let mut s = spec((30, 0));
        s.id = "runaway".into();
        match s.validate() {
            Err(Error::InvalidSynthSpec { entry, .. }) => assert_eq!(entry, "runaway"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let s = spec((1, 2));
        generate_synthetic_video(&s, a.path()).unwrap();
        generate_synthetic_video(&s, b.path()).unwrap();
        for name in ["000.png", "003.png", GT_FILE] {
            assert_eq!(
                std::fs::read(a.path().join("v0").join(name)).unwrap(),
                std::fs::read(b.path().join("v0").join(name)).unwrap()
            );
        }
        let gt = read_ground_truth(&a.path().join("v0").join(GT_FILE)).unwrap();
        assert_eq!(gt, s.ground_truth());
    }

    #[test]
    fn corpus_toml_round_trip() {
        let corpus = standard_corpus(
            3,
            7,
            &CorpusOptions {
                distractor: true,
                ..Default::default()
            },
        );
        let back = SynthCorpus::from_toml_str(&corpus.to_toml()).unwrap();
        assert_eq!(back, corpus);
        for s in &corpus.videos {
            s.validate().unwrap();
            let d = s.distractors[0].bbox();
            for g in s.ground_truth() {
                assert_eq!(g.bbox().intersection_area(&d), 0);
            }
        }
    }
}
