//! Patch cropping, the JSON-lines manifest and the FG/BG dataset layout.
//!
//! Layout under the output directory:
//!
//! ```text
//! fg/<video>_<frame>.png
//! bg/<video>_<frame>.png
//! labels.txt        "<relative path> <1|0>" per line, 1 = foreground
//! manifest.jsonl    one PatchRecord per line
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use image::{imageops, RgbImage};
use serde::{Deserialize, Serialize, Serializer};

use crate::domain::Source;
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::ingest::Frame;
use crate::selection::FrameSelection;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const LABELS_FILE: &str = "labels.txt";
pub const DEFAULT_RESIZE: (u32, u32) = (227, 227);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    #[serde(rename = "FG")]
    Foreground,
    #[serde(rename = "BG")]
    Background,
}

impl Role {
    fn dir(self) -> &'static str {
        match self {
            Role::Foreground => "fg",
            Role::Background => "bg",
        }
    }

    pub fn label(self) -> u8 {
        match self {
            Role::Foreground => 1,
            Role::Background => 0,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Foreground => "FG",
            Role::Background => "BG",
        })
    }
}

/// Rounds to nine significant digits, the precision reals are stored at.
pub fn round_sig9(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{v:.8e}").parse().unwrap_or(v)
}

fn ser_sig9<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(round_sig9(*v))
}

fn ser_opt_sig9<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(v) => s.serialize_some(&round_sig9(*v)),
        None => s.serialize_none(),
    }
}

/// One manifest line. Field order is the serialized key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub video_id: String,
    pub frame_index: u32,
    pub role: Role,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    #[serde(serialize_with = "ser_sig9")]
    pub s_a: f64,
    #[serde(serialize_with = "ser_sig9")]
    pub s_m: f64,
    #[serde(serialize_with = "ser_sig9")]
    pub s: f64,
    /// Winning cluster score; foreground records only.
    #[serde(default, skip_serializing_if = "Option::is_none", serialize_with = "ser_opt_sig9")]
    pub cluster_score: Option<f64>,
    pub source: Source,
    /// Path relative to the dataset directory.
    pub file: String,
}

impl PatchRecord {
    fn sort_key(&self) -> (&str, u32, Role) {
        (&self.video_id, self.frame_index, self.role)
    }

    /// Copy with every real rounded the way the manifest stores it.
    pub fn rounded(&self) -> Self {
        PatchRecord {
            s_a: round_sig9(self.s_a),
            s_m: round_sig9(self.s_m),
            s: round_sig9(self.s),
            cluster_score: self.cluster_score.map(round_sig9),
            ..self.clone()
        }
    }
}

/// Pixel-exact crop, optionally bilinearly resized.
pub fn crop_patch(f: &Frame, bbox: &BoundingBox, resize_to: Option<(u32, u32)>) -> Result<RgbImage> {
    bbox.check_inside(f.width(), f.height())?;
    let crop = imageops::crop_imm(f.rgb(), bbox.x, bbox.y, bbox.w, bbox.h).to_image();
    Ok(match resize_to {
        Some((w, h)) if (w, h) != crop.dimensions() => imageops::resize(&crop, w, h, imageops::FilterType::Triangle),
        _ => crop,
    })
}

/// Writes `records` sorted by (video, frame, role), one JSON object per line.
pub fn write_manifest(records: &[PatchRecord], path: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(Error::NothingMined);
    }
    let mut sorted: Vec<&PatchRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    let mut out = Vec::new();
    for r in sorted {
        serde_json::to_writer(&mut out, r).expect("record serializes");
        out.push(b'\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<PatchRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Malformed {
            kind: "manifest",
            path: path.to_path_buf(),
            reason: format!("line {}: {e}", n + 1),
        })?);
    }
    Ok(out)
}

/// Everything mined from one video, ready for export.
#[derive(Debug, Clone)]
pub struct MinedVideo {
    pub video_id: String,
    pub cluster_score: f64,
    /// Retained frames, parallel to `selections`.
    pub frames: Vec<Frame>,
    pub selections: Vec<FrameSelection<f64>>,
}

fn patch_path(video_id: &str, frame_index: u32, role: Role) -> String {
    format!("{}/{}_{:05}.png", role.dir(), video_id, frame_index)
}

/// Writes the FG and BG patch of every frame of `video` and returns the
/// matching records.
pub fn export_video(video: &MinedVideo, out_dir: &Path, resize: Option<(u32, u32)>) -> Result<Vec<PatchRecord>> {
    for role in [Role::Foreground, Role::Background] {
        let dir = out_dir.join(role.dir());
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let mut records = Vec::with_capacity(2 * video.selections.len());
    for (frame, sel) in video.frames.iter().zip(&video.selections) {
        for (role, p) in [(Role::Foreground, &sel.fg), (Role::Background, &sel.bg)] {
            let file = patch_path(&video.video_id, sel.frame_index, role);
            let path = out_dir.join(&file);
            crop_patch(frame, &p.bbox, resize)?
                .save(&path)
                .map_err(|e| Error::io(&path, std::io::Error::other(e)))?;
            records.push(
                PatchRecord {
                    video_id: video.video_id.clone(),
                    frame_index: sel.frame_index,
                    role,
                    bbox: p.bbox,
                    s_a: p.s_a,
                    s_m: p.s_m,
                    s: p.s,
                    cluster_score: (role == Role::Foreground).then_some(video.cluster_score),
                    source: p.source,
                    file,
                }
                .rounded(),
            );
        }
    }
    Ok(records)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub fg: usize,
    pub bg: usize,
    /// `(fg, bg)` counts per video.
    pub per_video: BTreeMap<String, (usize, usize)>,
}

/// Sorts `records`, rejects duplicate file names, and writes `labels.txt`
/// and the manifest into `out_dir`.
pub fn finalize_dataset(mut records: Vec<PatchRecord>, out_dir: &Path) -> Result<(Vec<PatchRecord>, DatasetSummary)> {
    if records.is_empty() {
        return Err(Error::NothingMined);
    }
    records.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    let mut seen = HashSet::with_capacity(records.len());
    for r in &records {
        if !seen.insert(r.file.as_str()) {
            return Err(Error::Collision(r.file.clone()));
        }
    }

    let mut summary = DatasetSummary::default();
    let mut labels = String::new();
    for r in &records {
        let entry = summary.per_video.entry(r.video_id.clone()).or_default();
        match r.role {
            Role::Foreground => {
                summary.fg += 1;
                entry.0 += 1;
            }
            Role::Background => {
                summary.bg += 1;
                entry.1 += 1;
            }
        }
        labels.push_str(&format!("{} {}\n", r.file, r.role.label()));
    }
    let labels_path = out_dir.join(LABELS_FILE);
    std::fs::write(&labels_path, labels).map_err(|e| Error::io(&labels_path, e))?;
    write_manifest(&records, &out_dir.join(MANIFEST_FILE))?;
    Ok((records, summary))
}

/// [`export_video`] for every video followed by [`finalize_dataset`].
/// Repeated video ids are a collision.
pub fn export_dataset(
    videos: &[MinedVideo],
    out_dir: &Path,
    resize: Option<(u32, u32)>,
) -> Result<(Vec<PatchRecord>, DatasetSummary)> {
    let mut ids = HashSet::new();
    for v in videos {
        if !ids.insert(v.video_id.as_str()) {
            return Err(Error::Collision(format!("video id {} appears twice", v.video_id)));
        }
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut records = Vec::new();
    for v in videos {
        records.extend(export_video(v, out_dir, resize)?);
    }
    finalize_dataset(records, out_dir)
}
