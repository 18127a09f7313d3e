//! Temporal clustering of top proposals and foreground/background choice.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::domain::{Cluster, ClusterMember, Embedding, Proposal};
use crate::embedding::similarity;
use crate::error::{Error, Result};
use crate::geometry::iou_exact;
use crate::proposals::ProposalSet;
use crate::scalar::Scalar;

/// Links every top proposal of the first frame (a seed) to the proposal in
/// each later frame most similar to it. Ties prefer higher `s`, then scan
/// order. `embeddings[f][i]` belongs to `per_frame[f].proposals[i]`.
pub fn build_clusters<T: Scalar>(
    per_frame: &[ProposalSet<T>],
    embeddings: &[Vec<Embedding<T>>],
    include_seed: bool,
) -> Result<Vec<Cluster<T>>> {
    if per_frame.len() < 2 {
        return Err(Error::Skipped(format!(
            "clustering needs at least 2 frames, got {}",
            per_frame.len()
        )));
    }
    if embeddings.len() != per_frame.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} frames of proposals but {} of embeddings",
            per_frame.len(),
            embeddings.len()
        )));
    }
    for (set, embs) in per_frame.iter().zip(embeddings) {
        if set.proposals.is_empty() {
            return Err(Error::Skipped(format!("frame {} has no proposals", set.frame_index)));
        }
        if set.proposals.len() != embs.len() {
            return Err(Error::DimensionMismatch(format!(
                "frame {}: {} proposals but {} embeddings",
                set.frame_index,
                set.proposals.len(),
                embs.len()
            )));
        }
    }

    let (seeds, rest) = per_frame.split_first().unwrap();
    let (seed_embs, rest_embs) = embeddings.split_first().unwrap();
    let mut clusters = Vec::with_capacity(seeds.proposals.len());
    for (seed, seed_emb) in seeds.proposals.iter().zip(seed_embs) {
        let mut members = Vec::with_capacity(rest.len());
        for (set, embs) in rest.iter().zip(rest_embs) {
            let mut best: Option<ClusterMember<T>> = None;
            for (p, e) in set.proposals.iter().zip(embs) {
                let sim = similarity(seed_emb, e)?;
                let better = match &best {
                    None => true,
                    Some(b) => match sim.partial_cmp(&b.similarity).unwrap_or(Ordering::Equal) {
                        Ordering::Greater => true,
                        Ordering::Less => false,
                        Ordering::Equal => match p.s.partial_cmp(&b.proposal.s).unwrap_or(Ordering::Equal) {
                            Ordering::Greater => true,
                            Ordering::Less => false,
                            Ordering::Equal => p.position_cmp(&b.proposal) == Ordering::Less,
                        },
                    },
                };
                if better {
                    best = Some(ClusterMember {
                        proposal: *p,
                        similarity: sim,
                    });
                }
            }
            members.push(best.expect("frame checked nonempty"));
        }
        let mut cluster = Cluster {
            seed: *seed,
            members,
            score: T::zero(),
        };
        cluster.score = cluster_score(&cluster, include_seed);
        clusters.push(cluster);
    }
    Ok(clusters)
}

/// `sum_j s(p_j) * sim(p_j, seed)` over the members; with `include_seed`
/// the seed contributes `s(seed) * 1`.
pub fn cluster_score<T: Scalar>(c: &Cluster<T>, include_seed: bool) -> T {
    let members: T = c.members.iter().map(|m| m.proposal.s * m.similarity).sum();
    if include_seed {
        members + c.seed.s
    } else {
        members
    }
}

/// The winning cluster and the foreground proposal it assigns to each frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Foreground<T> {
    pub cluster_index: usize,
    pub score: T,
    pub per_frame: BTreeMap<u32, Proposal<T>>,
}

/// Picks the highest-scoring cluster (ties: earlier seed in scan order).
/// Its seed is the foreground of the first frame and each member the
/// foreground of its own frame.
pub fn select_foreground<T: Scalar>(clusters: &[Cluster<T>]) -> Option<Foreground<T>> {
    let (cluster_index, best) = clusters.iter().enumerate().reduce(|a, b| {
        match b.1.score.partial_cmp(&a.1.score).unwrap_or(Ordering::Equal) {
            Ordering::Greater => b,
            Ordering::Less => a,
            Ordering::Equal => {
                if b.1.seed.position_cmp(&a.1.seed) == Ordering::Less {
                    b
                } else {
                    a
                }
            }
        }
    })?;
    let mut per_frame = BTreeMap::new();
    per_frame.insert(best.seed.frame_index, best.seed);
    for m in &best.members {
        per_frame.insert(m.proposal.frame_index, m.proposal);
    }
    Some(Foreground {
        cluster_index,
        score: best.score,
        per_frame,
    })
}

/// Which branch of the background rule produced the pick.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackgroundPath {
    /// At least one pooled proposal was larger than the pool's mean area.
    AreaFilter,
    /// No proposal beat the mean; the largest pooled proposals were used.
    Fallback,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackgroundPick<T> {
    pub proposal: Proposal<T>,
    pub path: BackgroundPath,
}

/// Background choice for one frame: pool the `pool_size` lowest-`s`
/// proposals (ties in scan order), keep those with area strictly above the
/// pool's mean area (or, if none, those of maximal area), and return the
/// one overlapping `fg` least (ties: lower `s`, then scan order). Proposals
/// with exactly the foreground box are never candidates. `None` only when
/// nothing else is available.
pub fn select_background<T: Scalar>(
    all: &[Proposal<T>],
    fg: &Proposal<T>,
    pool_size: usize,
) -> Option<BackgroundPick<T>> {
    let mut pool: Vec<&Proposal<T>> = all.iter().filter(|p| p.bbox != fg.bbox).collect();
    pool.sort_by(|a, b| {
        a.s.partial_cmp(&b.s)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.position_cmp(b))
    });
    pool.truncate(pool_size);
    if pool.is_empty() {
        return None;
    }

    let mean_area = pool.iter().map(|p| p.bbox.area() as f64).sum::<f64>() / pool.len() as f64;
    let mut survivors: Vec<&Proposal<T>> = pool
        .iter()
        .copied()
        .filter(|p| p.bbox.area() as f64 > mean_area)
        .collect();
    let path = if survivors.is_empty() {
        let max_area = pool.iter().map(|p| p.bbox.area()).max().unwrap();
        survivors = pool.into_iter().filter(|p| p.bbox.area() == max_area).collect();
        BackgroundPath::Fallback
    } else {
        BackgroundPath::AreaFilter
    };

    let best = survivors.into_iter().min_by(|a, b| {
        iou_exact(&a.bbox, &fg.bbox)
            .cmp(&iou_exact(&b.bbox, &fg.bbox))
            .then_with(|| a.s.partial_cmp(&b.s).unwrap_or(Ordering::Equal))
            .then_with(|| a.position_cmp(b))
    })?;
    Some(BackgroundPick { proposal: *best, path })
}

/// Foreground and background chosen for one retained frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameSelection<T> {
    pub frame_index: u32,
    pub fg: Proposal<T>,
    pub bg: Proposal<T>,
    pub bg_path: BackgroundPath,
}
