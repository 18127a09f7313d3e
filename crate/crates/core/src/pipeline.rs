//! Per-video mining and the batch driver over a directory of videos.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::RunConfig;
use crate::domain::Embedding;
use crate::embedding::{embed_patch, load_external_embeddings, lookup_embeddings};
use crate::error::{Error, Result};
use crate::export::{export_video, finalize_dataset, DatasetSummary, MinedVideo, PatchRecord};
use crate::filter::{filter_frames, FilterReport};
use crate::flow::{compute_flow, flow_magnitude_image, read_flow_file, FlowField};
use crate::ingest::{load_sequence, VideoSequence};
use crate::proposals::{cross_score, edge_map, proposals_on, top_k, ProposalSet, MIN_FRAME_SIDE};
use crate::selection::{build_clusters, select_background, select_foreground, BackgroundPath, FrameSelection};

pub const REPORT_FILE: &str = "report.txt";
pub const EMBEDDINGS_FILE: &str = "embeddings.bin";
pub const FLOW_DIR: &str = "flow";

/// Everything the pipeline derived for one video before export.
#[derive(Debug, Clone)]
pub struct VideoResult {
    pub mined: MinedVideo,
    pub filter: FilterReport,
    /// Every cross-scored proposal per retained frame.
    pub proposals: Vec<ProposalSet<f64>>,
    /// Informational lines for the run report.
    pub notes: Vec<String>,
}

#[derive(Debug, Clone)]
pub enum VideoOutcome {
    Mined(Box<VideoResult>),
    Skipped {
        video_id: String,
        reason: String,
        filter: Option<FilterReport>,
    },
}

impl VideoOutcome {
    pub fn video_id(&self) -> &str {
        match self {
            VideoOutcome::Mined(r) => &r.mined.video_id,
            VideoOutcome::Skipped { video_id, .. } => video_id,
        }
    }
}

/// Name of the precomputed flow file from frame `from` to frame `to`.
pub fn flow_file_name(from: u32, to: u32) -> String {
    format!("{from:03}_{to:03}.flo")
}

/// Flow assigned to retained frame `i`: forward to the next frame, and
/// backward from the last frame to its predecessor.
fn flow_pair(n: usize, i: usize) -> (usize, usize) {
    if i + 1 < n {
        (i, i + 1)
    } else {
        (i, i - 1)
    }
}

fn flow_for(
    seq: &VideoSequence,
    i: usize,
    j: usize,
    video_dir: Option<&Path>,
    cfg: &RunConfig,
    notes: &mut Vec<String>,
) -> Result<FlowField<f64>> {
    let (fi, fj) = (seq.retained_indices[i], seq.retained_indices[j]);
    if cfg.external_flow {
        if let Some(dir) = video_dir {
            let path = dir.join(FLOW_DIR).join(flow_file_name(fi, fj));
            if path.is_file() {
                let flow: FlowField<f64> = read_flow_file(&path)?;
                let (w, h) = (seq.frames[i].width(), seq.frames[i].height());
                if (flow.width, flow.height) != (w, h) {
                    return Err(Error::DimensionMismatch(format!(
                        "{}: flow is {}x{}, frames are {w}x{h}",
                        path.display(),
                        flow.width,
                        flow.height
                    )));
                }
                return Ok(flow);
            }
            log::info!("{}: {} missing, computing flow", seq.video_id, path.display());
            notes.push(format!("flow {fi}->{fj} computed (no external file)"));
        }
    }
    compute_flow(&seq.frames[i], &seq.frames[j], &cfg.flow_params())
}

/// Runs every stage after loading on one sequence. `video_dir` is where
/// external flow and embeddings are looked up.
pub fn mine_sequence(seq: VideoSequence, video_dir: Option<&Path>, cfg: &RunConfig) -> VideoOutcome {
    let video_id = seq.video_id.clone();
    let (seq, filter) = match filter_frames(seq, &cfg.filter_params()) {
        Ok(r) => r,
        Err(Error::Rejected(report)) => {
            return VideoOutcome::Skipped {
                video_id,
                reason: report.rejection_reason(),
                filter: Some(*report),
            }
        }
        Err(e) => {
            return VideoOutcome::Skipped {
                video_id,
                reason: e.to_string(),
                filter: None,
            }
        }
    };
    if seq.len() < 2 {
        let reason = format!("{} (need 2 retained frames)", filter.rejection_reason());
        return VideoOutcome::Skipped {
            video_id,
            reason,
            filter: Some(filter),
        };
    }
    match mine_filtered(seq, video_dir, cfg) {
        Ok((mined, proposals, notes)) => VideoOutcome::Mined(Box::new(VideoResult {
            mined,
            filter,
            proposals,
            notes,
        })),
        Err(e) => VideoOutcome::Skipped {
            video_id,
            reason: e.to_string(),
            filter: Some(filter),
        },
    }
}

type Mined = (MinedVideo, Vec<ProposalSet<f64>>, Vec<String>);

fn mine_filtered(seq: VideoSequence, video_dir: Option<&Path>, cfg: &RunConfig) -> Result<Mined> {
    let (w, h) = (seq.frames[0].width(), seq.frames[0].height());
    if let Some(f) = seq.frames.iter().find(|f| (f.width(), f.height()) != (w, h)) {
        return Err(Error::DimensionMismatch(format!(
            "frames are {w}x{h} and {}x{}",
            f.width(),
            f.height()
        )));
    }
    if w.min(h) < MIN_FRAME_SIDE {
        return Err(Error::FrameTooSmall {
            width: w,
            height: h,
            min: MIN_FRAME_SIDE,
        });
    }

    let params = cfg.proposal_params();
    let n = seq.len();
    let mut notes = Vec::new();
    let mut all = Vec::with_capacity(n);
    let mut top = Vec::with_capacity(n);
    for i in 0..n {
        let (a, b) = flow_pair(n, i);
        let flow = flow_for(&seq, a, b, video_dir, cfg, &mut notes)?;
        let rgb_em = edge_map(&seq.frames[i]);
        let flow_em = edge_map(&flow_magnitude_image(&flow));
        let rgb_props = proposals_on(&rgb_em, &params);
        let flow_props = proposals_on(&flow_em, &params);
        let frame_index = seq.retained_indices[i];
        let scored: ProposalSet<f64> = cross_score(
            &rgb_props,
            &flow_props,
            &rgb_em,
            &flow_em,
            frame_index,
            &params.objectness,
        )
        .map_err(|e| match e {
            Error::NoProposals => Error::Skipped(format!("frame {frame_index} has no proposals")),
            e => e,
        })?;
        top.push(top_k(&scored, params.top_k));
        all.push(scored);
    }

    let embeddings: Vec<Vec<Embedding<f64>>> = if cfg.external_embeddings {
        let dir = video_dir.ok_or_else(|| Error::MissingEmbeddings("no video directory".into()))?;
        let map = load_external_embeddings(&dir.join(EMBEDDINGS_FILE))?;
        top.iter()
            .map(|set| lookup_embeddings(&map, &set.proposals))
            .collect::<Result<_>>()?
    } else {
        top.iter()
            .zip(&seq.frames)
            .map(|(set, f)| {
                set.proposals
                    .iter()
                    .map(|p| embed_patch(f, &p.bbox, cfg.embedding_dim))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?
    };

    let clusters = build_clusters(&top, &embeddings, cfg.include_seed_score)?;
    let fg = select_foreground(&clusters).ok_or(Error::NoProposals)?;
    let mut selections = Vec::with_capacity(n);
    for set in &all {
        let fg_p = fg.per_frame[&set.frame_index];
        let bg = select_background(&set.proposals, &fg_p, cfg.bg_pool).ok_or_else(|| {
            Error::Skipped(format!(
                "frame {} has no background candidate besides the foreground box",
                set.frame_index
            ))
        })?;
        if bg.path == BackgroundPath::Fallback {
            notes.push(format!("frame {} background via max-area fallback", set.frame_index));
        }
        selections.push(FrameSelection {
            frame_index: set.frame_index,
            fg: fg_p,
            bg: bg.proposal,
            bg_path: bg.path,
        });
    }

    let mined = MinedVideo {
        video_id: seq.video_id,
        cluster_score: fg.score,
        frames: seq.frames,
        selections,
    };
    Ok((mined, all, notes))
}

/// Loads and mines the video stored in `dir`.
pub fn mine_video_dir(dir: &Path, cfg: &RunConfig) -> VideoOutcome {
    match load_sequence(dir) {
        Ok(seq) => mine_sequence(seq, Some(dir), cfg),
        Err(e) => VideoOutcome::Skipped {
            video_id: video_id_of(dir),
            reason: e.to_string(),
            filter: None,
        },
    }
}

fn video_id_of(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

/// Sub-directories of `root`, sorted by name.
pub fn discover_videos(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in std::fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        if entry.file_type().map_err(|e| Error::io(entry.path(), e))?.is_dir() {
            dirs.push(entry.path());
        }
    }
    dirs.sort();
    Ok(dirs)
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub mined: Vec<String>,
    pub skipped: Vec<(String, String)>,
    pub dataset: DatasetSummary,
    pub records: Vec<PatchRecord>,
    pub report: String,
}

struct Exported {
    outcome: VideoOutcome,
    records: Vec<PatchRecord>,
}

/// Mines every video under `cfg.input_root` into `cfg.output_root` and
/// writes the dataset, manifest and run report. Fails with
/// [`Error::NothingMined`] (after writing the report) when every video was
/// skipped.
pub fn run_mine(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let dirs = discover_videos(&cfg.input_root)?;
    if dirs.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no video directories under {}",
            cfg.input_root.display()
        )));
    }
    let out = &cfg.output_root;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let work = |dir: &PathBuf| -> Result<Exported> {
        let outcome = mine_video_dir(dir, cfg);
        let records = match &outcome {
            VideoOutcome::Mined(r) => {
                let records = export_video(&r.mined, out, cfg.resize_to())?;
                log::info!("{}: mined {} frames", r.mined.video_id, r.mined.selections.len());
                records
            }
            VideoOutcome::Skipped { video_id, reason, .. } => {
                log::warn!("{video_id}: skipped: {reason}");
                Vec::new()
            }
        };
        Ok(Exported { outcome, records })
    };
    let results: Vec<Result<Exported>> = if cfg.workers == 1 {
        dirs.iter().map(work).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        pool.install(|| dirs.par_iter().map(work).collect())
    };

    let mut exported = results.into_iter().collect::<Result<Vec<_>>>()?;
    exported.sort_by(|a, b| a.outcome.video_id().cmp(b.outcome.video_id()));

    let mut mined = Vec::new();
    let mut skipped = Vec::new();
    let mut records = Vec::new();
    for e in &mut exported {
        match &e.outcome {
            VideoOutcome::Mined(r) => mined.push(r.mined.video_id.clone()),
            VideoOutcome::Skipped { video_id, reason, .. } => skipped.push((video_id.clone(), reason.clone())),
        }
        records.append(&mut e.records);
    }
    let outcomes: Vec<&VideoOutcome> = exported.iter().map(|e| &e.outcome).collect();

    let (records, dataset) = if records.is_empty() {
        (Vec::new(), DatasetSummary::default())
    } else {
        finalize_dataset(records, out)?
    };
    let report = render_report(cfg, &outcomes, &dataset);
    let report_path = out.join(REPORT_FILE);
    std::fs::write(&report_path, &report).map_err(|e| Error::io(&report_path, e))?;
    if mined.is_empty() {
        return Err(Error::NothingMined);
    }
    Ok(RunSummary {
        mined,
        skipped,
        dataset,
        records,
        report,
    })
}

fn render_report(cfg: &RunConfig, outcomes: &[&VideoOutcome], dataset: &DatasetSummary) -> String {
    let mut r = String::new();
    r.push_str("# effective configuration\n");
    r.push_str(&cfg.echo());
    r.push_str("\n# videos\n");
    let mut n_mined = 0;
    for o in outcomes {
        let filter = match o {
            VideoOutcome::Mined(v) => {
                n_mined += 1;
                let fallbacks = v
                    .mined
                    .selections
                    .iter()
                    .filter(|s| s.bg_path == BackgroundPath::Fallback)
                    .count();
                let _ = writeln!(
                    r,
                    "mined {} frames={} cluster_score={} bg_fallback_frames={}",
                    v.mined.video_id,
                    v.mined.selections.len(),
                    crate::export::round_sig9(v.mined.cluster_score),
                    fallbacks
                );
                for note in &v.notes {
                    let _ = writeln!(r, "  note {note}");
                }
                Some(&v.filter)
            }
            VideoOutcome::Skipped {
                video_id,
                reason,
                filter,
            } => {
                let _ = writeln!(r, "skipped {video_id} reason: {reason}");
                filter.as_ref()
            }
        };
        if let Some(f) = filter {
            for removal in &f.removals {
                let _ = writeln!(r, "  removed {removal}");
            }
        }
    }
    let _ = writeln!(
        r,
        "\n# summary\nvideos={} mined={} skipped={} fg_patches={} bg_patches={}",
        outcomes.len(),
        n_mined,
        outcomes.len() - n_mined,
        dataset.fg,
        dataset.bg
    );
    r
}
