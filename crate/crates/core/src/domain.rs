//! Scored proposals, feature embeddings and temporal clusters.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::scalar::Scalar;

/// Which image a proposal was generated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Source {
    Rgb,
    Flow,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Rgb => "RGB",
            Source::Flow => "FLOW",
        })
    }
}

/// A box with normalized appearance (`s_a`) and motion (`s_m`) scores and
/// their product `s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal<T> {
    pub bbox: BoundingBox,
    pub s_a: T,
    pub s_m: T,
    pub s: T,
    pub source: Source,
    pub frame_index: u32,
}

impl<T: Scalar> Proposal<T> {
    pub fn new(bbox: BoundingBox, s_a: T, s_m: T, source: Source, frame_index: u32) -> Self {
        Proposal {
            bbox,
            s_a,
            s_m,
            s: s_a * s_m,
            source,
            frame_index,
        }
    }

    /// Deterministic tie-break after the scores: scan order, then RGB before FLOW.
    pub fn position_cmp(&self, other: &Self) -> Ordering {
        self.bbox.scan_cmp(&other.bbox).then(self.source.cmp(&other.source))
    }

    /// Ranking used for top-k retention: `s` desc, `s_a` desc, then position.
    pub fn rank_cmp(&self, other: &Self) -> Ordering {
        other
            .s
            .partial_cmp(&self.s)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.s_a.partial_cmp(&self.s_a).unwrap_or(Ordering::Equal))
            .then_with(|| self.position_cmp(other))
    }
}

/// Min-max normalization to `[0, 1]`. A flat list maps to all ones.
pub fn normalize_scores<T: Scalar>(raw: &[T]) -> Result<Vec<T>> {
    if raw.is_empty() {
        return Err(Error::NoProposals);
    }
    let (lo, hi) = raw.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    if hi <= lo {
        return Ok(vec![T::one(); raw.len()]);
    }
    let span = hi - lo;
    Ok(raw
        .iter()
        .map(|&v| ((v - lo) / span).max(T::zero()).min(T::one()))
        .collect())
}

/// Feature vector compared by inner product. Produced embeddings are
/// unit-norm; [`Embedding::from_raw`] exists for callers that need to
/// bypass that.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding<T> {
    values: Vec<T>,
}

impl<T: Scalar> Embedding<T> {
    /// L2-normalizes `values`. Returns `None` for the zero vector.
    pub fn normalized(mut values: Vec<T>) -> Option<Self> {
        let norm = l2_norm(&values);
        if !norm.is_finite() || norm <= T::zero() {
            return None;
        }
        values.iter_mut().for_each(|v| *v = *v / norm);
        Some(Embedding { values })
    }

    /// Wraps `values` as-is, without normalization.
    pub fn from_raw(values: Vec<T>) -> Self {
        Embedding { values }
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> T {
        l2_norm(&self.values)
    }
}

fn l2_norm<T: Scalar>(values: &[T]) -> T {
    values.iter().map(|&v| v * v).sum::<T>().sqrt()
}

/// One per-frame match of a seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterMember<T> {
    pub proposal: Proposal<T>,
    /// Inner product with the seed embedding.
    pub similarity: T,
}

/// A seed proposal from the first frame and its best match in every
/// later frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster<T> {
    pub seed: Proposal<T>,
    pub members: Vec<ClusterMember<T>>,
    pub score: T,
}
