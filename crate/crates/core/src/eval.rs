//! Mining quality against synthetic ground truth.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::export::{read_manifest, PatchRecord, Role};
use crate::geometry::{iou, BoundingBox};
use crate::synth::load_ground_truth_root;

/// IoU at or above which a foreground patch counts as a hit.
pub const HIT_IOU: f64 = 0.5;

/// Ground-truth boxes by video id, then frame index.
pub type GroundTruth = BTreeMap<String, BTreeMap<u32, BoundingBox>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningMetrics {
    /// IoU of each mined FG patch with its frame's ground truth, in
    /// manifest order.
    pub fg_iou_per_frame: Vec<f64>,
    pub fg_hit_rate: f64,
    pub bg_mean_iou_with_gt: f64,
    /// Videos with ground truth but no manifest records.
    pub videos_skipped: usize,
}

impl MiningMetrics {
    pub fn summary(&self) -> String {
        format!(
            "frames={} fg_hit_rate@{HIT_IOU}={:.4} fg_mean_iou={:.4} bg_mean_iou_with_gt={:.4} videos_skipped={}",
            self.fg_iou_per_frame.len(),
            self.fg_hit_rate,
            mean(&self.fg_iou_per_frame),
            self.bg_mean_iou_with_gt,
            self.videos_skipped
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Malformed {
            kind: "metrics",
            path: Default::default(),
            reason: e.to_string(),
        })
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Scores `records` against `gt`. Every record's frame must have a ground
/// truth box; the error lists every one that does not.
pub fn evaluate_mining(records: &[PatchRecord], gt: &GroundTruth) -> Result<MiningMetrics> {
    let missing: Vec<String> = records
        .iter()
        .filter(|r| gt.get(&r.video_id).and_then(|f| f.get(&r.frame_index)).is_none())
        .map(|r| format!("{}:{}", r.video_id, r.frame_index))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if !missing.is_empty() {
        return Err(Error::Coverage(missing.join(", ")));
    }
    let fg: Vec<&PatchRecord> = records.iter().filter(|r| r.role == Role::Foreground).collect();
    if fg.is_empty() {
        return Err(Error::InsufficientData("manifest has no foreground records".into()));
    }
    let truth = |r: &PatchRecord| gt[&r.video_id][&r.frame_index];

    let fg_iou_per_frame: Vec<f64> = fg.iter().map(|r| iou::<f64>(&r.bbox, &truth(r))).collect();
    let hits = fg_iou_per_frame.iter().filter(|&&v| v >= HIT_IOU).count();
    let bg_ious: Vec<f64> = records
        .iter()
        .filter(|r| r.role == Role::Background)
        .map(|r| iou::<f64>(&r.bbox, &truth(r)))
        .collect();
    let mined: BTreeSet<&str> = records.iter().map(|r| r.video_id.as_str()).collect();
    Ok(MiningMetrics {
        fg_hit_rate: hits as f64 / fg_iou_per_frame.len() as f64,
        fg_iou_per_frame,
        bg_mean_iou_with_gt: mean(&bg_ious),
        videos_skipped: gt.keys().filter(|v| !mined.contains(v.as_str())).count(),
    })
}

/// [`evaluate_mining`] on a manifest file and a corpus root holding one
/// ground-truth sidecar per video directory.
pub fn evaluate_manifest(manifest: &Path, gt_root: &Path) -> Result<MiningMetrics> {
    evaluate_mining(&read_manifest(manifest)?, &load_ground_truth_root(gt_root)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Source;

    fn rec(video: &str, frame: u32, role: Role, b: BoundingBox) -> PatchRecord {
        PatchRecord {
            video_id: video.into(),
            frame_index: frame,
            role,
            bbox: b,
            s_a: 1.0,
            s_m: 1.0,
            s: 1.0,
            cluster_score: None,
            source: Source::Rgb,
            file: String::new(),
        }
    }

    fn gt(boxes: &[(&str, u32, BoundingBox)]) -> GroundTruth {
        let mut g = GroundTruth::new();
        for &(v, f, b) in boxes {
            g.entry(v.to_string()).or_default().insert(f, b);
        }
        g
    }

    #[test]
    fn perfect_mining() {
        let b = BoundingBox::new(10, 10, 20, 20);
        let far = BoundingBox::new(60, 60, 10, 10);
        let records = vec![
            rec("a", 0, Role::Foreground, b),
            rec("a", 0, Role::Background, far),
            rec("a", 1, Role::Foreground, b),
            rec("a", 1, Role::Background, far),
        ];
        let m = evaluate_mining(&records, &gt(&[("a", 0, b), ("a", 1, b), ("b", 0, b)])).unwrap();
        assert_eq!(m.fg_iou_per_frame, vec![1.0, 1.0]);
        assert_eq!(m.fg_hit_rate, 1.0);
        assert_eq!(m.bg_mean_iou_with_gt, 0.0);
        assert_eq!(m.videos_skipped, 1);
    }

    #[test]
    fn hand_computed_values() {
        let g = BoundingBox::new(0, 0, 10, 10);
        let records = vec![
            rec("v", 0, Role::Foreground, BoundingBox::new(5, 0, 10, 10)),
            rec("v", 0, Role::Background, BoundingBox::new(0, 5, 10, 10)),
            rec("v", 1, Role::Foreground, BoundingBox::new(0, 0, 10, 5)),
            rec("v", 1, Role::Background, BoundingBox::new(20, 0, 10, 10)),
        ];
        let m = evaluate_mining(&records, &gt(&[("v", 0, g), ("v", 1, g)])).unwrap();
        assert!((m.fg_iou_per_frame[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((m.fg_iou_per_frame[1] - 0.5).abs() < 1e-15);
        assert_eq!(m.fg_hit_rate, 0.5);
        assert!((m.bg_mean_iou_with_gt - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn coverage_mismatch_lists_frames() {
        let b = BoundingBox::new(0, 0, 8, 8);
        let records = vec![rec("v", 0, Role::Foreground, b), rec("v", 7, Role::Foreground, b)];
        let err = evaluate_mining(&records, &gt(&[("v", 0, b)])).unwrap_err();
        assert!(err.to_string().contains("v:7"), "{err}");
    }

    #[test]
    fn metrics_json_round_trip() {
        let m = MiningMetrics {
            fg_iou_per_frame: vec![0.1, 1.0 / 3.0, 0.9],
            fg_hit_rate: 1.0 / 3.0,
            bg_mean_iou_with_gt: 0.05,
            videos_skipped: 2,
        };
        assert_eq!(MiningMetrics::from_json(&m.to_json()).unwrap(), m);
    }
}
