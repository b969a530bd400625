//! `dove` command-line interface.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dove::checkpoint::{Checkpoint, MAGIC as CKPT_MAGIC};
use dove::config::{Ablation, ConfigFile, DtgaInputs, HeadKind, TrainConfig};
use dove::data::{bank, load_index_file, synth_dataset, Dataset, SynthSpec};
use dove::diagnostics::gradcheck_suite;
use dove::eval::{embed_split, embedding_distances, evaluate, EvalOptions, Subset};
use dove::train::{train, TrainLog, TrainOptions};
use dove::Error;

const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "dove", version, about = "Cross-modal image/text embedding: train, evaluate, diagnose")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic clustered dataset.
    Synth(SynthArgs),
    /// Train a model and write the best checkpoint.
    Train(Box<TrainArgs>),
    /// Evaluate a checkpoint and emit a retrieval report.
    Eval(EvalArgs),
    /// Finite-difference gradient checks on micro shapes.
    Gradcheck(GradcheckArgs),
    /// Embedding-distance statistics over positive pairs.
    Distances(DistanceArgs),
    /// Print the header of a feature bank or checkpoint.
    Inspect {
        path: PathBuf,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 32)]
    images: usize,
    #[arg(long, default_value_t = 4)]
    clusters: usize,
    /// Multiscale rows per image.
    #[arg(long, default_value_t = 4)]
    n_m: usize,
    /// Regions per image.
    #[arg(long, default_value_t = 36)]
    n_r: usize,
    /// Multiscale feature width.
    #[arg(long, default_value_t = 64)]
    d_in: usize,
    /// Region feature width.
    #[arg(long, default_value_t = 32)]
    d_r: usize,
    #[arg(long, default_value_t = 200)]
    vocab: usize,
    #[arg(long)]
    out: PathBuf,
}

/// Training keys; each overrides the config file when given.
#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    lambda_g: Option<f64>,
    #[arg(long)]
    lr0: Option<f64>,
    #[arg(long)]
    decay_factor: Option<f64>,
    #[arg(long)]
    decay_every: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// no_dtga, no_ifa or no_iga; repeatable.
    #[arg(long)]
    ablate: Vec<Ablation>,
    /// ff, bb, fb or avg.
    #[arg(long)]
    dtga_inputs: Option<DtgaInputs>,
    /// linear or nonlinear.
    #[arg(long)]
    ifa_head: Option<HeadKind>,
    /// linear or nonlinear.
    #[arg(long)]
    iga_head: Option<HeadKind>,
}

impl Overrides {
    fn apply(&self, cfg: &mut TrainConfig) {
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { cfg.$f = v; })* };
        }
        set!(d, alpha, lambda_g, lr0, decay_factor, decay_every, epochs, batch_size, heads, seed, dtga_inputs, ifa_head, iga_head);
        for &a in &self.ablate {
            cfg.apply_ablation(a);
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// `key = value` file; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Where to write the best checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    log: Option<PathBuf>,
    /// Image-index file for training; defaults to every image.
    #[arg(long)]
    train_split: Option<PathBuf>,
    /// Image-index file for model selection; defaults to every image.
    #[arg(long)]
    val_split: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    validate_every: usize,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Image-index file to evaluate; defaults to every image.
    #[arg(long)]
    split: Option<PathBuf>,
    /// Image-index file evaluated as its own block; repeatable.
    #[arg(long)]
    subset: Vec<PathBuf>,
    /// Write the JSON report here and print the table to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Include embedding-distance statistics.
    #[arg(long)]
    distances: bool,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Coordinates checked per parameter tensor (0 = all).
    #[arg(long, default_value_t = 0)]
    max_coords: usize,
}

#[derive(Args)]
struct DistanceArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

enum Failure {
    Check(String),
    Usage(String),
    Io(String),
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Io { .. }
            | Error::BadMagic { .. }
            | Error::Version { .. }
            | Error::Truncated { .. }
            | Error::NonFiniteInFile { .. }
            | Error::Parse { .. } => Failure::Io(msg),
            Error::NonFinite { .. } | Error::Evaluation(_) | Error::Degenerate(_) | Error::NonFiniteGradient(_) => {
                Failure::Numeric(msg)
            }
            Error::Dimension { .. } | Error::Invalid(_) | Error::UnknownParam(_) | Error::DuplicateParam(_) => {
                Failure::Usage(msg)
            }
        }
    }
}

type CmdResult = Result<(), Failure>;

fn write_file(path: &Path, contents: &str) -> CmdResult {
    std::fs::write(path, contents).map_err(|e| Failure::Io(format!("cannot write {}: {e}", path.display())))
}

fn split_or_all(path: Option<&Path>, ds: &Dataset) -> Result<Vec<usize>, Failure> {
    Ok(match path {
        Some(p) => load_index_file(p, ds.n_images())?,
        None => ds.all_images(),
    })
}

fn cmd_synth(a: SynthArgs) -> CmdResult {
    let spec = SynthSpec {
        seed: a.seed,
        n_images: a.images,
        n_clusters: a.clusters,
        n_m: a.n_m,
        n_r: a.n_r,
        d_in: a.d_in,
        d_r: a.d_r,
        vocab_size: a.vocab,
        ..Default::default()
    };
    spec.validate()?;
    let manifest = synth_dataset(&spec, &a.out)?;
    println!("{}", manifest.to_json());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> CmdResult {
    let file = match &a.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let mut cfg = file.train.clone();
    a.overrides.apply(&mut cfg);
    cfg.validate()?;
    print!("{}", TrainLog::header(&cfg));

    let data = a.data.or(file.data).ok_or_else(|| Failure::Usage("no dataset: pass --data or set `data`".into()))?;
    let ckpt = a.checkpoint.or(file.checkpoint).unwrap_or_else(|| PathBuf::from("checkpoint.bin"));
    let log_path = a.log.or(file.log);
    let ds = Dataset::load(&data)?;
    let train_split = split_or_all(a.train_split.as_deref().or(file.train_split.as_deref()), &ds)?;
    let val_split = split_or_all(a.val_split.as_deref().or(file.val_split.as_deref()), &ds)?;

    let mut print_epoch = |e: &dove::train::EpochLog| print!("{}", TrainLog::epoch_line(e));
    let mut outcome = train(
        &cfg,
        &ds,
        TrainOptions {
            train_split: &train_split,
            val_split: &val_split,
            validate_every: a.validate_every,
            threads: a.threads,
            on_epoch: Some(&mut print_epoch),
        },
    )?;
    outcome.best.save(&ckpt)?;
    outcome.log.checkpoint = Some(ckpt.clone());
    if let Some(p) = log_path {
        write_file(&p, &outcome.log.to_text(&cfg))?;
    }
    println!(
        "best epoch {} val_mr {:.4} -> {}",
        outcome.log.best_epoch.unwrap_or(0),
        outcome.log.best_mr,
        ckpt.display()
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> CmdResult {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let ds = Dataset::load(&a.data)?;
    let split = split_or_all(a.split.as_deref(), &ds)?;
    let subsets = a
        .subset
        .iter()
        .map(|p| {
            Ok(Subset {
                name: p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned()),
                images: load_index_file(p, ds.n_images())?,
            })
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    let model = ck.model();
    let report = evaluate(
        model.net(),
        &ck.config,
        &ds,
        &split,
        &EvalOptions { subsets: &subsets, distances: a.distances, threads: a.threads },
    )?;
    match a.out {
        Some(p) => {
            write_file(&p, &report.to_json())?;
            print!("{}", report.render_table());
        }
        None => print!("{}", report.to_json()),
    }
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> CmdResult {
    let cap = (a.max_coords > 0).then_some(a.max_coords);
    let results = gradcheck_suite(a.seed, cap)?;
    let mut worst: f64 = 0.0;
    for r in &results {
        println!("{:<24} max_rel_err {:.3e}  coords {}", r.name, r.report.max_rel_error, r.report.coords_checked);
        worst = worst.max(r.report.max_rel_error);
    }
    println!("overall max_rel_err {worst:.3e} (tolerance {GRADCHECK_TOLERANCE:e})");
    if worst < GRADCHECK_TOLERANCE {
        Ok(())
    } else {
        Err(Failure::Check(format!("gradient check exceeded tolerance: {worst:e}")))
    }
}

fn cmd_distances(a: DistanceArgs) -> CmdResult {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let ds = Dataset::load(&a.data)?;
    let split = split_or_all(a.split.as_deref(), &ds)?;
    let model = ck.model();
    let emb = embed_split(model.net(), &ds, &split, a.threads)?;
    let report = embedding_distances(model.net(), &emb)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("distances serialize"));
    Ok(())
}

fn cmd_inspect(path: &Path) -> CmdResult {
    let bytes = std::fs::read(path).map_err(|e| Failure::Io(format!("cannot read {}: {e}", path.display())))?;
    if bytes.starts_with(CKPT_MAGIC) {
        let ck = Checkpoint::from_bytes(&bytes, path)?;
        println!("checkpoint {}", path.display());
        println!("epoch {}  best_mr {}  adam_step {}", ck.epoch, ck.best_mr, ck.opt.step);
        println!("d_in {}  d_r {}  embed_dim {}  params {}  scalars {}", ck.d_in, ck.d_r, ck.embed_dim, ck.params.len(), ck.params.num_scalars());
        print!("{}", ck.config.to_config_text());
        return Ok(());
    }
    let h = bank::read_header(path)?;
    println!("feature bank {}", path.display());
    println!("samples {}  rows {}  cols {}  bytes {}", h.n_samples, h.rows, h.cols, bytes.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(*a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Distances(a) => cmd_distances(a),
        Command::Inspect { path } => cmd_inspect(&path),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (code, msg) = match f {
                Failure::Check(m) => (1, m),
                Failure::Usage(m) => (2, m),
                Failure::Io(m) => (3, m),
                Failure::Numeric(m) => (4, m),
            };
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
