use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use nowcast::armsim::{generate_dataset, Dataset, Split, WindowSpec};
use nowcast::config::{check_model_against, RunConfig};
use nowcast::model::{load_checkpoint, Checkpoint, Network};
use nowcast::report::write_report_dir;
use nowcast::train::{
    buffered, evaluate, gap_per_horizon, open_output, rollout, EvalMode, RolloutState, Trainer,
};
use nowcast::Error;

#[derive(Parser)]
#[command(
    name = "nowcast",
    version,
    about = "Depth-based pose estimation and forecasting"
)]
struct Cli {
    /// TOML run configuration; its values override the profile's.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base settings: desk (96x128) or tiny (48x64).
    #[arg(long, global = true, default_value = "desk")]
    profile: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset of depth sequences with ground-truth poses.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        sequences: Option<usize>,
        /// Seconds per sequence.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Train a network; writes best.nwck, final.nwck and metrics.ndjson.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Drop the forecasting loss (loss weights 1, 0).
        #[arg(long)]
        no_forecasting: bool,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a checkpoint; writes JSON, CSV and SVG reports.
    Eval {
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "both")]
        mode: ModeArg,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Report directory.
        #[arg(long, default_value = "report")]
        report: PathBuf,
    },
    /// Run a sequence autoregressively; one JSON line per frame.
    Predict {
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        sequence: usize,
        /// Output file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time estimation-only and full-pipeline inference.
    Bench {
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        sequence: usize,
        #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
        frames: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum ModeArg {
    GtPast,
    Autoregressive,
    Both,
}

impl ModeArg {
    fn modes(self) -> Vec<EvalMode> {
        match self {
            Self::GtPast => vec![EvalMode::GtPast],
            Self::Autoregressive => vec![EvalMode::Autoregressive],
            Self::Both => vec![EvalMode::GtPast, EvalMode::Autoregressive],
        }
    }
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self::Run(e)
    }
}

type CmdResult = Result<(), Failure>;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) => 2,
        Error::Config(_) | Error::EmptyEvaluation => 3,
        Error::Io { .. } | Error::Parse { .. } => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(n) = std::env::var("NOWCAST_THREADS") {
        match n.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
            _ => {
                eprintln!("error: NOWCAST_THREADS must be a positive integer, got {n:?}");
                return ExitCode::from(2);
            }
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let base = RunConfig::profile(&cli.profile)?;
    match &cli.config {
        Some(p) => RunConfig::load(p, &base),
        None => Ok(base),
    }
}

fn require(path: Option<PathBuf>, flag: &str) -> Result<PathBuf, Failure> {
    path.ok_or_else(|| Failure::Usage(format!("{flag} is required (or set it in the config file)")))
}

fn run(cli: Cli) -> CmdResult {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Generate {
            out,
            seed,
            sequences,
            duration,
        } => {
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(n) = sequences {
                cfg.sim.n_sequences = n;
            }
            if let Some(d) = duration {
                cfg.sim.duration_s = d;
            }
            cfg.sim.validate()?;
            let m = generate_dataset(&cfg.sim, cfg.seed, &out)?;
            let frames: usize = m.frames_per_sequence.iter().sum();
            println!(
                "wrote {} sequences, {frames} frames to {}",
                m.n_sequences,
                out.display()
            );
            Ok(())
        }
        Command::Train {
            data,
            out,
            no_forecasting,
            epochs,
            seed,
        } => {
            if no_forecasting {
                cfg.train.loss_weights.estimation = 1.0;
                cfg.train.loss_weights.forecasting = 0.0;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(s) = seed {
                cfg.seed = s;
                cfg.train.seed = s;
            }
            let data = require(data.or(cfg.data.clone()), "--data")?;
            let out = require(out.or(cfg.out.clone()), "--out")?;
            cfg.validate()?;
            train(&cfg, &data, &out)
        }
        Command::Eval {
            checkpoint,
            data,
            mode,
            split,
            report,
        } => {
            let data = require(data.or(cfg.data.clone()), "--data")?;
            eval(&cfg, &checkpoint, &data, &mode.modes(), split, &report)
        }
        Command::Predict {
            checkpoint,
            data,
            sequence,
            out,
        } => {
            let data = require(data.or(cfg.data.clone()), "--data")?;
            predict(&cfg, &checkpoint, &data, sequence, out.as_deref())
        }
        Command::Bench {
            checkpoint,
            data,
            sequence,
            frames,
        } => {
            let data = require(data.or(cfg.data.clone()), "--data")?;
            bench(&cfg, &checkpoint, &data, sequence, frames as usize)
        }
    }
}

fn train(cfg: &RunConfig, data: &Path, out: &Path) -> CmdResult {
    let ds = Dataset::open(data)?;
    cfg.check_dataset(ds.manifest())?;
    let load = |split| {
        ds.samples(split, &cfg.window)
            .collect::<Result<Vec<_>, _>>()
    };
    let train = load(Split::Train)?;
    let val = load(Split::Val)?;
    if train.is_empty() {
        return Err(Error::Config(
            "the training split has no complete windows; sequences are too short".into(),
        )
        .into());
    }
    let net = Network::<f32>::new(cfg.model.clone(), ds.manifest().normalization, cfg.seed)?;
    let meta = serde_json::json!({
        "config": cfg,
        "data": data.display().to_string(),
        "dataset_seed": ds.manifest().seed,
    });
    let (dir, log) = open_output(out, meta)?;
    let mut trainer = Trainer::new(
        net,
        cfg.train.clone(),
        cfg.augment.clone(),
        cfg.window.clone(),
    )?;
    let mut log = BufWriter::new(log);
    eprintln!(
        "training on {} samples ({} validation) for {} epochs",
        train.len(),
        val.len(),
        cfg.train.epochs
    );
    let summary = trainer.fit(&train, &val, Some(&dir), &mut log)?;
    log.flush().map_err(|e| Error::Io {
        path: dir.metrics_log(),
        source: e,
    })?;
    println!(
        "{} steps over {} epochs; best epoch {:?} (validation ADD {:?} cm); checkpoints in {}",
        summary.steps,
        summary.epochs_run,
        summary.best_epoch,
        summary.best_val_add_cm,
        out.display()
    );
    Ok(())
}

/// Network plus the window it was trained with.
fn open_checkpoint(
    cfg: &RunConfig,
    path: &Path,
    ds: &Dataset,
) -> Result<(Checkpoint, WindowSpec), Error> {
    let ck = load_checkpoint(path)?;
    check_model_against(&ck.network.config, ds.manifest())?;
    let window = match ck.meta.get("window") {
        Some(w) => serde_json::from_value(w.clone())
            .map_err(|e| Error::Config(format!("{}: bad window: {e}", path.display())))?,
        None => cfg.window.clone(),
    };
    let c = &ck.network.config;
    if window.past_count != c.past_count || window.future_offsets.len() != c.future_count {
        return Err(Error::Config(format!(
            "window does not match the checkpoint's {} past and {} future poses",
            c.past_count, c.future_count
        )));
    }
    window.past_stride(ds.manifest().frame_rate)?;
    Ok((ck, window))
}

fn eval(
    cfg: &RunConfig,
    checkpoint: &Path,
    data: &Path,
    modes: &[EvalMode],
    split: Split,
    report: &Path,
) -> CmdResult {
    let ds = Dataset::open(data)?;
    let (ck, window) = open_checkpoint(cfg, checkpoint, &ds)?;
    let seqs = ds
        .manifest()
        .split_indices(split)
        .into_iter()
        .map(|k| ds.load_sequence(k))
        .collect::<Result<Vec<_>, _>>()?;
    let names = &ds.manifest().joint_names;
    let mut reports = Vec::new();
    for &mode in modes {
        let r = evaluate(
            &ck.network,
            &seqs,
            &window,
            mode,
            &cfg.eval.thresholds_cm,
            names,
        )?;
        println!(
            "{mode}: ADD {:.2} ± {:.2} cm over {} frames; mAP {}",
            r.add_mean,
            r.add_std,
            r.n_frames,
            r.map_at
                .iter()
                .map(|s| format!("@{}cm {:.3}", s.threshold_cm, s.fraction))
                .collect::<Vec<_>>()
                .join(" ")
        );
        reports.push((mode, r));
    }
    let gap = match reports.as_slice() {
        [(EvalMode::GtPast, g), (EvalMode::Autoregressive, a)] => Some(gap_per_horizon(g, a)),
        _ => None,
    };
    let provenance = serde_json::json!({
        "checkpoint": checkpoint.display().to_string(),
        "checkpoint_meta": ck.meta,
        "model": ck.network.config,
        "model_seed": ck.network.seed,
        "data": data.display().to_string(),
        "dataset_seed": ds.manifest().seed,
        "split": split,
        "window": window,
    });
    let files = write_report_dir(
        report,
        &reports,
        gap.as_deref(),
        &provenance,
        cfg.eval.chart_threshold_cm,
    )?;
    println!("wrote {} files to {}", files.len(), report.display());
    Ok(())
}

fn coords(p: &nowcast::spdh::Pose3D) -> Vec<[f64; 3]> {
    p.joints.clone()
}

fn predict(
    cfg: &RunConfig,
    checkpoint: &Path,
    data: &Path,
    sequence: usize,
    out: Option<&Path>,
) -> CmdResult {
    let ds = Dataset::open(data)?;
    let (ck, window) = open_checkpoint(cfg, checkpoint, &ds)?;
    if sequence >= ds.manifest().n_sequences {
        return Err(Failure::Usage(format!(
            "--sequence {sequence} out of range; the dataset has {}",
            ds.manifest().n_sequences
        )));
    }
    let seq = ds.load_sequence(sequence)?;
    let frames = rollout(&ck.network, &seq, &window)?;
    let mut sink: Box<dyn Write> = match out {
        Some(p) => Box::new(BufWriter::new(std::fs::File::create(p).map_err(|e| {
            Error::Io {
                path: p.to_path_buf(),
                source: e,
            }
        })?)),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    };
    let target = out.map_or_else(|| PathBuf::from("<stdout>"), Path::to_path_buf);
    for f in &frames {
        let line = serde_json::json!({
            "frame": f.frame,
            "current": coords(&f.current),
            "forecasts": f.future.iter().map(coords).collect::<Vec<_>>(),
        });
        writeln!(sink, "{line}").map_err(|e| Error::Io {
            path: target.clone(),
            source: e,
        })?;
    }
    sink.flush().map_err(|e| Error::Io {
        path: target,
        source: e,
    })?;
    Ok(())
}

fn summarize(name: &str, ms: &mut [f64]) {
    ms.sort_by(f64::total_cmp);
    let mean = ms.iter().sum::<f64>() / ms.len() as f64;
    let rank = ((0.95 * ms.len() as f64).ceil() as usize).clamp(1, ms.len());
    let p95 = ms[rank - 1];
    println!(
        "{name}: mean {mean:.2} ms, p95 {p95:.2} ms, {:.1} FPS",
        1000.0 / mean
    );
}

fn bench(cfg: &RunConfig, checkpoint: &Path, data: &Path, sequence: usize, n: usize) -> CmdResult {
    const WARMUP: usize = 3;
    let ds = Dataset::open(data)?;
    let (ck, window) = open_checkpoint(cfg, checkpoint, &ds)?;
    if sequence >= ds.manifest().n_sequences {
        return Err(Failure::Usage(format!(
            "--sequence {sequence} out of range"
        )));
    }
    let seq = ds.load_sequence(sequence)?;
    let net = &ck.network;
    let k = &seq.intrinsics;
    let frame = |i: usize| &seq.depth[i % seq.len()];
    let mut est = Vec::with_capacity(n);
    for i in 0..n + WARMUP {
        let t = Instant::now();
        let p = net.predict(frame(i), k, None)?.decode(k);
        std::hint::black_box(p);
        if i >= WARMUP {
            est.push(t.elapsed().as_secs_f64() * 1e3);
        }
    }
    let stride = window.past_stride(seq.frame_rate)?;
    let mut state = RolloutState::new(net.config.past_count, stride)?;
    let mut full = Vec::with_capacity(n);
    for i in 0..n + WARMUP {
        let t = Instant::now();
        let past = match state.history() {
            Some(p) => p,
            None => vec![
                buffered(&net.predict(frame(i), k, None)?.decode(k).current);
                net.config.past_count
            ],
        };
        let p = net.predict(frame(i), k, Some(&past))?.decode(k);
        state.push(buffered(&p.current));
        std::hint::black_box(&p);
        if i >= WARMUP {
            full.push(t.elapsed().as_secs_f64() * 1e3);
        }
    }
    println!("{n} frames of sequence {sequence} after {WARMUP} warmup frames");
    summarize("estimation only", &mut est);
    summarize("full pipeline  ", &mut full);
    Ok(())
}
