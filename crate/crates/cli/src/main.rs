use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use patchmine::config::RunConfig;
use patchmine::eval::evaluate_manifest;
use patchmine::export::MANIFEST_FILE;
use patchmine::pipeline::run_mine;
use patchmine::probe::{probe_dataset, ProbeParams};
use patchmine::synth::{generate_corpus, standard_corpus, CorpusOptions, SynthCorpus};
use patchmine::Error;

#[derive(Parser)]
#[command(
    name = "patchmine",
    version,
    about = "Mine FG/BG training patches from unlabeled videos"
)]
struct Cli {
    /// More log output (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mine every video directory under the input root.
    Mine(Box<MineArgs>),
    /// Render a synthetic corpus with ground-truth sidecars.
    Synth(SynthArgs),
    /// Score a manifest against synthetic ground truth.
    Eval(EvalArgs),
    /// Train and test a linear FG/BG probe on a mined dataset.
    Probe(ProbeArgs),
}

fn parse_pair<T: std::str::FromStr>(s: &str) -> Result<(T, T), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected A,B, got {s:?}"))?;
    let p = |v: &str| v.trim().parse::<T>().map_err(|_| format!("cannot parse {v:?}"));
    Ok((p(a)?, p(b)?))
}

#[derive(Args)]
struct MineArgs {
    /// TOML file of config keys; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input_root: Option<PathBuf>,
    #[arg(long)]
    output_root: Option<PathBuf>,
    #[arg(long)]
    corr_threshold: Option<f64>,
    #[arg(long, value_name = "LO,HI", value_parser = parse_pair::<f64>)]
    intensity_limits: Option<(f64, f64)>,
    #[arg(long)]
    n_proposals: Option<usize>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    bg_pool: Option<usize>,
    #[arg(long)]
    nms_iou: Option<f64>,
    #[arg(long)]
    scale_min: Option<f64>,
    #[arg(long)]
    scale_max: Option<f64>,
    #[arg(long)]
    scale_count: Option<usize>,
    #[arg(long)]
    refine_proposals: Option<bool>,
    #[arg(long)]
    objectness_lambda: Option<f64>,
    #[arg(long)]
    objectness_kappa: Option<f64>,
    #[arg(long)]
    flow_alpha: Option<f64>,
    #[arg(long)]
    flow_iterations: Option<usize>,
    #[arg(long)]
    flow_levels: Option<usize>,
    #[arg(long)]
    flow_scale: Option<f64>,
    #[arg(long)]
    embedding_dim: Option<usize>,
    #[arg(long, value_name = "W,H", value_parser = parse_pair::<u32>)]
    resize: Option<(u32, u32)>,
    /// Keep native crop sizes.
    #[arg(long)]
    no_resize: bool,
    /// Worker threads; 0 uses one per core.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    include_seed_score: Option<bool>,
    #[arg(long)]
    external_flow: Option<bool>,
    #[arg(long)]
    external_embeddings: Option<bool>,
}

macro_rules! override_fields {
    ($cfg:ident, $args:ident, $($f:ident),* $(,)?) => {
        $( if let Some(v) = $args.$f.clone() { $cfg.$f = v; } )*
    };
}

impl MineArgs {
    fn config(&self) -> patchmine::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let a = self;
        override_fields!(
            cfg,
            a,
            input_root,
            output_root,
            corr_threshold,
            intensity_limits,
            n_proposals,
            top_k,
            bg_pool,
            nms_iou,
            scale_min,
            scale_max,
            scale_count,
            refine_proposals,
            objectness_lambda,
            objectness_kappa,
            flow_alpha,
            flow_iterations,
            flow_levels,
            flow_scale,
            embedding_dim,
            resize,
            workers,
            seed,
            include_seed_score,
            external_flow,
            external_embeddings,
        );
        cfg.no_resize |= self.no_resize;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Corpus spec: a TOML file with one [[videos]] table per video.
    #[arg(long, conflicts_with = "standard", required_unless_present = "standard")]
    spec: Option<PathBuf>,
    /// Generate this many seeded standard videos instead of reading a spec.
    #[arg(long)]
    standard: Option<usize>,
    /// Seed of the standard corpus.
    #[arg(long, default_value_t = 0, requires = "standard")]
    seed: u64,
    /// Add one static distractor of the object's size to each standard video.
    #[arg(long, requires = "standard")]
    distractor: bool,
    /// Output root; one directory per video.
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Manifest file, or a mined output directory holding one.
    manifest: PathBuf,
    /// Corpus root with a ground-truth sidecar in each video directory.
    gt_root: PathBuf,
    /// Where to write the metrics JSON (default: metrics.json beside the manifest).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ProbeArgs {
    /// Mined dataset directory (holding labels.txt).
    dataset: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.8)]
    split_ratio: f64,
    /// Permute labels before training (chance-level control).
    #[arg(long)]
    shuffle_labels: bool,
    /// Test on the training split.
    #[arg(long)]
    test_on_train: bool,
    #[arg(long, default_value_t = patchmine::embedding::DEFAULT_DIM)]
    embedding_dim: usize,
    /// Write the report as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn write(path: &Path, text: &str) -> patchmine::Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn mine(args: MineArgs) -> patchmine::Result<()> {
    let cfg = args.config()?;
    info!("mining {} into {}", cfg.input_root.display(), cfg.output_root.display());
    let summary = run_mine(&cfg)?;
    for (id, reason) in &summary.skipped {
        eprintln!("skipped {id}: {reason}");
    }
    println!(
        "mined {} videos, skipped {}: {} FG and {} BG patches in {}",
        summary.mined.len(),
        summary.skipped.len(),
        summary.dataset.fg,
        summary.dataset.bg,
        cfg.output_root.display()
    );
    Ok(())
}

fn synth(args: SynthArgs) -> patchmine::Result<()> {
    let corpus = match (&args.spec, args.standard) {
        (Some(path), _) => SynthCorpus::load(path)?,
        (None, Some(n)) => standard_corpus(
            n,
            args.seed,
            &CorpusOptions {
                distractor: args.distractor,
                ..Default::default()
            },
        ),
        (None, None) => unreachable!("clap requires one of --spec and --standard"),
    };
    let gt = generate_corpus(&corpus, &args.out_dir)?;
    if args.spec.is_none() {
        write(&args.out_dir.join("corpus.toml"), &corpus.to_toml())?;
    }
    println!("wrote {} videos to {}", gt.len(), args.out_dir.display());
    Ok(())
}

fn eval(args: EvalArgs) -> patchmine::Result<()> {
    let manifest = if args.manifest.is_dir() {
        args.manifest.join(MANIFEST_FILE)
    } else {
        args.manifest
    };
    let metrics = evaluate_manifest(&manifest, &args.gt_root)?;
    let out = args
        .out
        .unwrap_or_else(|| manifest.parent().unwrap_or(Path::new(".")).join("metrics.json"));
    write(&out, &metrics.to_json())?;
    println!("{}", metrics.summary());
    Ok(())
}

fn probe(args: ProbeArgs) -> patchmine::Result<()> {
    let params = ProbeParams {
        seed: args.seed,
        split_ratio: args.split_ratio,
        shuffle_labels: args.shuffle_labels,
        test_on_train: args.test_on_train,
        embedding_dim: args.embedding_dim,
        ..Default::default()
    };
    let report = probe_dataset::<f64>(&args.dataset, &params)?;
    if let Some(out) = &args.out {
        write(out, &serde_json::to_string_pretty(&report).expect("report serializes"))?;
    }
    println!("{}", report.summary());
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NothingMined | Error::InsufficientData(_) => 2,
        Error::Io { .. } | Error::FrameRead { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Mine(a) => mine(*a),
        Command::Synth(a) => synth(a),
        Command::Eval(a) => eval(a),
        Command::Probe(a) => probe(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
