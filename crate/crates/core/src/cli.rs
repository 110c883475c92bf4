//! The `tga` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure
//! (failed gradient check or non-finite loss). Standard output depends only
//! on the flags and seed; timings go to standard error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dataio::{generate_synthetic, load_checkpoint, load_dataset, save_checkpoint, Split, SyntheticConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate, localize, EvalConfig, Metrics, Protocol, ProtocolKind, ScoreRule};
use crate::loss::{batch_forward, batch_loss, BatchEntry, Dropout, LossConfig, NegativePolicy};
use crate::nn::gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
use crate::nn::params::{ModelDims, ModelParams};
use crate::nn::tensor::Tensor;
use crate::trainer::{train, TrainConfig, TrainingData};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "tga", version, about = "Text-guided attention moment retrieval")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with planted moments.
    Synth(SynthArgs),
    /// Train a model from scratch.
    Train(TrainArgs),
    /// Evaluate moment localization on a split.
    Eval(EvalArgs),
    /// Rank moments for a single query.
    Localize(LocalizeArgs),
    /// Check analytic gradients of the full pipeline against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON synthetic-data configuration.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the seed in the config file.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.1)]
    pub margin: f64,
    #[arg(long, default_value_t = 128)]
    pub batch: usize,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 300)]
    pub word_dim: usize,
    #[arg(long, default_value_t = 1024)]
    pub text_dim: usize,
    #[arg(long, default_value_t = 1024)]
    pub joint_dim: usize,
    #[arg(long, default_value_t = 0.5)]
    pub dropout: f64,
    #[arg(long, default_value_t = 15)]
    pub lr_decay_every: usize,
    #[arg(long, default_value_t = 10.0)]
    pub lr_decay_factor: f64,
    /// Treat other sentences of the same video as negatives.
    #[arg(long)]
    pub strict_batch_negatives: bool,
    /// Add video-to-text recall to the model-selection criterion.
    #[arg(long)]
    pub bidirectional_val: bool,
}

impl TrainArgs {
    pub fn config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            lr_decay_every: self.lr_decay_every,
            lr_decay_factor: self.lr_decay_factor,
            margin: self.margin,
            batch_size: self.batch,
            max_epochs: self.epochs,
            seed: self.seed,
            word_dim: self.word_dim,
            text_dim: self.text_dim,
            joint_dim: self.joint_dim,
            dropout: self.dropout,
            negatives: if self.strict_batch_negatives {
                NegativePolicy::Strict
            } else {
                NegativePolicy::ExcludeSameVideo
            },
            bidirectional_val: self.bidirectional_val,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ProtocolArgs {
    /// sliding_window or didemo.
    #[arg(long, default_value = "sliding_window")]
    pub protocol: ProtocolKind,
    /// Window lengths in frames.
    #[arg(long, value_delimiter = ',', default_value = "128,256")]
    pub windows: Vec<u32>,
    /// Window stride as a fraction of the window length.
    #[arg(long, default_value_t = 0.5)]
    pub stride: f64,
    /// Score candidates by summed rather than mean attention.
    #[arg(long)]
    pub score_sum: bool,
}

impl ProtocolArgs {
    fn protocol(&self) -> Protocol {
        match self.protocol {
            ProtocolKind::SlidingWindow => Protocol::SlidingWindow {
                windows: self.windows.clone(),
                stride_fraction: self.stride,
            },
            ProtocolKind::Didemo => Protocol::Didemo,
        }
    }

    fn rule(&self) -> ScoreRule {
        if self.score_sum {
            ScoreRule::Sum
        } else {
            ScoreRule::Mean
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    #[arg(long, value_delimiter = ',', default_value = "0.3,0.5,0.7")]
    pub iou: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    pub k: Vec<usize>,
    /// Shuffled-score baseline trials (0 disables).
    #[arg(long, default_value_t = 5)]
    pub baseline_trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for report.json and report.csv; defaults to the
    /// checkpoint's directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LocalizeArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub query_id: String,
    #[arg(long, default_value_t = 5)]
    pub top: usize,
    /// Write the attention trace as JSON.
    #[arg(long)]
    pub dump_trace: Option<PathBuf>,
    /// Frame rate for the seconds column (display only).
    #[arg(long, default_value_t = 25.0)]
    pub fps: f64,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

/// A failure together with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_numeric() { EXIT_NUMERIC } else { EXIT_DATA },
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure {
            code: EXIT_DATA,
            message: format!("writing output: {e}"),
        }
    }
}

type CliResult = std::result::Result<(), Failure>;

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    match cmd {
        Command::Synth(a) => cmd_synth(&a, out),
        Command::Train(a) => cmd_train(&a, out, err),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Localize(a) => cmd_localize(&a, out),
        Command::Gradcheck(a) => cmd_gradcheck(&a, out),
    }
}

fn print_config<T: Serialize>(out: &mut dyn Write, config: &T, seed: u64) -> CliResult {
    let json = serde_json::to_string(config).expect("config serializes");
    writeln!(out, "config {json}")?;
    writeln!(out, "seed {seed}")?;
    Ok(())
}

fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> CliResult {
    let text = std::fs::read_to_string(&a.config).map_err(|e| Error::io(&a.config, e))?;
    let mut cfg: SyntheticConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: a.config.clone(),
        message: e.to_string(),
    })?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    print_config(out, &cfg, cfg.seed)?;
    let (_, stats) = generate_synthetic(&cfg, &a.out)?;
    let per_split: Vec<String> = stats
        .per_split
        .iter()
        .map(|(s, n)| format!("{s}={n}"))
        .collect();
    writeln!(
        out,
        "planted_moments {} videos {} per_split {} mean_length {:.4} noise_std {:.6}",
        stats.planted_moments,
        stats.videos,
        per_split.join(","),
        stats.mean_moment_length,
        stats.noise_std
    )?;
    writeln!(out, "wrote {}", a.out.display())?;
    Ok(())
}

fn cmd_train(a: &TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    let cfg = a.config();
    cfg.validate().map_err(|e| Failure::usage(e.to_string()))?;
    print_config(out, &cfg, cfg.seed)?;
    let ds = load_dataset(&a.data)?;
    let data = TrainingData::from_dataset(&ds);
    writeln!(
        out,
        "train_pairs {} val_pairs {} val_videos {}",
        data.train.len(),
        data.val.pairs.len(),
        data.val.videos.len()
    )?;
    let mut io_result = Ok(());
    let outcome = train(&data, &cfg, |rec| {
        let r = writeln!(
            out,
            "epoch {} lr {} batches {} mean_loss {:.6} val_recall_sum {:.6}",
            rec.epoch, rec.lr, rec.batches, rec.mean_loss, rec.val_recall_sum
        )
        .and_then(|_| writeln!(err, "epoch {} took {:.2}s", rec.epoch, rec.wall_time_secs));
        if io_result.is_ok() {
            io_result = r;
        }
    })?;
    io_result?;

    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    save_checkpoint(&outcome.best, &a.out.join("best.tgac"))?;
    save_checkpoint(&outcome.last, &a.out.join("last.tgac"))?;
    let log_path = a.out.join("runlog.json");
    let log = serde_json::to_string_pretty(&outcome.log).expect("run log serializes");
    std::fs::write(&log_path, log + "\n").map_err(|e| Error::io(&log_path, e))?;
    match outcome.log.best_epoch {
        Some(e) => writeln!(
            out,
            "best_epoch {e} val_recall_sum {:.6}",
            outcome.log.best_val_recall_sum.unwrap_or_default()
        )?,
        None => writeln!(out, "best_epoch none (initial parameters)")?,
    }
    writeln!(out, "wrote {}", a.out.display())?;
    Ok(())
}

#[derive(Serialize)]
struct EvalSettings<'a> {
    split: Split,
    protocol: &'a Protocol,
    score_rule: ScoreRule,
    iou: &'a [f64],
    k: &'a [usize],
    baseline_trials: usize,
}

fn print_metrics(out: &mut dyn Write, title: &str, m: &Metrics) -> CliResult {
    writeln!(out, "{title}")?;
    write!(out, "{m}")?;
    Ok(())
}

fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> CliResult {
    let cfg = EvalConfig {
        protocol: a.protocol.protocol(),
        ks: a.k.clone(),
        taus: a.iou.clone(),
        rule: a.protocol.rule(),
        baseline_trials: a.baseline_trials,
        seed: a.seed,
        retrieval: true,
    };
    if cfg.ks.contains(&0) || cfg.taus.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Failure::usage("--k must be positive and --iou must lie in [0, 1]"));
    }
    let settings = EvalSettings {
        split: a.split,
        protocol: &cfg.protocol,
        score_rule: cfg.rule,
        iou: &cfg.taus,
        k: &cfg.ks,
        baseline_trials: cfg.baseline_trials,
    };
    print_config(out, &settings, cfg.seed)?;
    let ds = load_dataset(&a.data)?;
    let params = load_checkpoint(&a.ckpt)?;
    let report = evaluate(&params, &ds, a.split, &cfg)?;

    print_metrics(out, "model", &report.metrics)?;
    if let Some(b) = &report.baseline {
        print_metrics(out, "shuffled-score baseline", b)?;
    }
    if let Some(r) = &report.retrieval {
        let t = r.text_to_video;
        writeln!(
            out,
            "retrieval text_to_video R@1 {} R@5 {} R@10 {} sum {}",
            t.r1,
            t.r5,
            t.r10,
            t.sum()
        )?;
        if let Some(v) = r.video_to_text {
            writeln!(
                out,
                "retrieval video_to_text R@1 {} R@5 {} R@10 {} sum {}",
                v.r1,
                v.r5,
                v.r10,
                v.sum()
            )?;
        }
    }
    let dir = match &a.out {
        Some(d) => d.clone(),
        None => a
            .ckpt
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(".")),
    };
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    report.write_json(&dir.join("report.json"))?;
    report.write_csv(&dir.join("report.csv"))?;
    writeln!(out, "wrote {}", dir.join("report.json").display())?;
    Ok(())
}

fn cmd_localize(a: &LocalizeArgs, out: &mut dyn Write) -> CliResult {
    if !(a.fps > 0.0) {
        return Err(Failure::usage("--fps must be positive"));
    }
    let protocol = a.protocol.protocol();
    #[derive(Serialize)]
    struct Settings<'a> {
        query_id: &'a str,
        protocol: &'a Protocol,
        score_rule: ScoreRule,
        top: usize,
        fps: f64,
    }
    let settings = Settings {
        query_id: &a.query_id,
        protocol: &protocol,
        score_rule: a.protocol.rule(),
        top: a.top,
        fps: a.fps,
    };
    print_config(out, &settings, 0)?;
    let ds = load_dataset(&a.data)?;
    let params = load_checkpoint(&a.ckpt)?;
    let (trace, ranked, unit_frames) = localize(&params, &ds, &a.query_id, &protocol, a.protocol.rule())?;
    writeln!(out, "query {} video {} units {}", trace.query_id, trace.video_id, trace.len())?;
    writeln!(out, "rank start_unit end_unit score start_s end_s")?;
    let secs = |u: usize| u as f64 * unit_frames as f64 / a.fps;
    for (i, c) in ranked.iter().take(a.top).enumerate() {
        writeln!(
            out,
            "{} {} {} {:.6} {:.2} {:.2}",
            i + 1,
            c.start,
            c.end,
            c.score,
            secs(c.start),
            secs(c.end)
        )?;
    }
    if let Some(path) = &a.dump_trace {
        let json = serde_json::to_string_pretty(&trace).expect("trace serializes");
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))?;
        writeln!(out, "wrote {}", path.display())?;
    }
    Ok(())
}

/// Dimensions of the model used by the pipeline gradient check.
pub const GRADCHECK_DIMS: ModelDims = ModelDims {
    vocab_size: 20,
    word_dim: 16,
    text_dim: 8,
    feature_dim: 12,
    joint_dim: 8,
};

/// Builds a small random model and a three-pair batch, then checks the
/// analytic gradient of the batch loss in 64-bit against central
/// differences for all parameter tensors.
pub fn pipeline_grad_check(seed: u64, tolerance: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::<f64>::init(&GRADCHECK_DIMS, &mut rng)?;
    // non-zero biases so every bias gradient is exercised away from symmetry
    for b in [
        &mut params.gru.bz,
        &mut params.gru.br,
        &mut params.gru.bh,
        &mut params.fc_b,
    ] {
        for x in b.data_mut() {
            *x = rng.random_range(-0.1..0.1);
        }
    }
    for x in params.emb.data_mut() {
        *x = rng.random_range(-0.5..0.5);
    }
    let videos: Vec<Tensor<f64>> = [5usize, 4, 6]
        .iter()
        .map(|&n| {
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..GRADCHECK_DIMS.feature_dim).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            Tensor::from_rows(&rows)
        })
        .collect::<Result<_>>()?;
    let tokens: Vec<Vec<usize>> = [4usize, 3, 5]
        .iter()
        .map(|&n| (0..n).map(|_| rng.random_range(0..GRADCHECK_DIMS.vocab_size)).collect())
        .collect();
    let ids = [("v0", "v0_q0"), ("v1", "v1_q0"), ("v2", "v2_q0")];
    let batch: Vec<BatchEntry<'_, f64>> = ids
        .iter()
        .zip(&tokens)
        .zip(&videos)
        .map(|((&(video_id, query_id), tokens), units)| BatchEntry {
            query_id,
            video_id,
            tokens,
            units,
        })
        .collect();
    let cfg = LossConfig {
        margin: 0.5,
        policy: NegativePolicy::ExcludeSameVideo,
    };
    let analytic = batch_forward(&batch, &params, &cfg, Dropout::<ChaCha8Rng>::Off)?;
    grad_check(
        |p: &ModelParams<f64>| batch_loss(&batch, p, &cfg),
        &params,
        &analytic.grads,
        &GradCheckConfig {
            tolerance,
            seed,
            ..GradCheckConfig::default()
        },
    )
}

fn cmd_gradcheck(a: &GradcheckArgs, out: &mut dyn Write) -> CliResult {
    if !(a.tolerance >= 0.0) {
        return Err(Failure::usage("--tolerance must be non-negative"));
    }
    #[derive(Serialize)]
    struct Settings {
        dims: ModelDims,
        pairs: usize,
        tolerance: f64,
    }
    print_config(
        out,
        &Settings {
            dims: GRADCHECK_DIMS,
            pairs: 3,
            tolerance: a.tolerance,
        },
        a.seed,
    )?;
    let report = pipeline_grad_check(a.seed, a.tolerance)?;
    write!(out, "{report}")?;
    if report.passed {
        writeln!(out, "gradcheck passed")?;
        Ok(())
    } else {
        let worst = report.worst().map(|t| t.name.clone()).unwrap_or_default();
        Err(Failure {
            code: EXIT_NUMERIC,
            message: format!("gradcheck failed; worst tensor {worst}"),
        })
    }
}
