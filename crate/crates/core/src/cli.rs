//! The `crowdfer` command line.
//!
//! Exit codes: 0 on success, 1 when a pipeline step fails (or a gradient
//! check exceeds its tolerance), 2 on usage errors. All randomness derives
//! from `--seed`: trial `i` uses `seed + i`, and within a trial the model
//! initialization and the training stream are separate ChaCha8 streams of
//! that seed. Majority labels break ties toward the lowest category index.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::augment::AffineParams;
use crate::dataio::{
    self, atomic_write, file_sha256, load_checkpoint_expecting, load_dataset, read_vote_rows,
    save_checkpoint, write_dataset_csv, write_metrics, CheckpointMeta, IngestOptions, RunMetrics,
    Split,
};
use crate::error::{Error, Result};
use crate::labels::{EmotionSet, LabelDistribution};
use crate::net::{gradient_check, GradCheckOptions, GradCheckReport, Tensor, ToyArch, VGG13_INPUT};
use crate::quality::{expand_counts, quality_curve, synth_votes, TaggerNoiseModel};
use crate::schemes::{draw_pld, SchemeKind, DEFAULT_ML_THRESHOLD};
use crate::synthetic::{self, SyntheticConfig};
use crate::trainer::{evaluate, run_trials, Architecture, PldRedraw, Splits, TrainConfig};

#[derive(Debug, Parser)]
#[command(
    name = "crowdfer",
    version,
    about = "Train classifiers on crowd-sourced label distributions"
)]
pub struct Cli {
    /// Cap on worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train under one scheme for several trials and report test accuracy.
    Train(TrainArgs),
    /// Evaluate a checkpoint against majority labels.
    Eval(EvalArgs),
    /// Turn vote counts into label distributions.
    Aggregate(AggregateArgs),
    /// Tagger count versus majority agreement, as TSV.
    QualityCurve(QualityArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic dataset CSV.
    SynthData(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Mv,
    Ml,
    Pld,
    Cel,
}

impl SchemeArg {
    fn resolve(self, threshold: f64) -> Result<SchemeKind> {
        match self {
            Self::Mv => Ok(SchemeKind::MajorityVote),
            Self::Ml => SchemeKind::multi_label(threshold),
            Self::Pld => Ok(SchemeKind::ProbabilisticDraw),
            Self::Cel => Ok(SchemeKind::CrossEntropy),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ArchArg {
    Vgg13,
    Toy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RedrawArg {
    Epoch,
    Visit,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    /// Comma-separated category names, in column order.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "neutral,happiness,surprise,sadness,anger,disgust,fear,contempt"
    )]
    pub emotions: Vec<String>,
    /// Vote counts at or below this value are reset to zero.
    #[arg(long, default_value_t = 1)]
    pub threshold: u32,
    /// Keep items whose votes are all rejected, using their raw votes.
    #[arg(long)]
    pub keep_unusable: bool,
}

impl LabelArgs {
    fn emotion_set(&self) -> Result<EmotionSet> {
        EmotionSet::new(self.emotions.iter().map(|s| s.trim().to_string()))
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset CSV.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "cel")]
    pub scheme: SchemeArg,
    /// Vote-share threshold for multi-label admission.
    #[arg(long, default_value_t = DEFAULT_ML_THRESHOLD)]
    pub ml_threshold: f64,
    #[arg(long, default_value_t = 5)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    /// Fraction of the epochs after which the learning rate is multiplied by `--lr-decay`.
    #[arg(long, default_value_t = 2.0 / 3.0)]
    pub lr_decay_at: f64,
    #[arg(long, default_value_t = 0.1)]
    pub lr_decay: f64,
    #[arg(long, value_enum, default_value = "vgg13")]
    pub arch: ArchArg,
    /// Convolution blocks of the toy architecture.
    #[arg(long, default_value_t = 2)]
    pub toy_blocks: usize,
    #[arg(long, default_value_t = 8)]
    pub toy_filters: usize,
    #[arg(long, default_value_t = 32)]
    pub toy_hidden: usize,
    /// Network input size (default 64 for vgg13, 16 for toy).
    #[arg(long)]
    pub image_size: Option<usize>,
    /// Source image size `WxH` when the CSV has no `# size=` line.
    #[arg(long, default_value = "48x48")]
    pub source_size: String,
    #[command(flatten)]
    pub labels: LabelArgs,
    /// Maximum rotation in degrees.
    #[arg(long, default_value_t = 15.0)]
    pub aug_rotate: f64,
    /// Maximum relative scale change.
    #[arg(long, default_value_t = 0.10)]
    pub aug_scale: f64,
    /// Maximum translation as a fraction of the image width.
    #[arg(long, default_value_t = 0.10)]
    pub aug_translate: f64,
    /// Random horizontal mirroring.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub aug_flip: bool,
    #[arg(long, value_enum, default_value = "epoch")]
    pub pld_redraw: RedrawArg,
    /// Output directory (default: runs/<unix-time>-seed<seed>).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, default_value = "48x48")]
    pub source_size: String,
    #[command(flatten)]
    pub labels: LabelArgs,
    #[arg(long, default_value_t = DEFAULT_ML_THRESHOLD)]
    pub ml_threshold: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    /// CSV with one vote-count column per category.
    #[arg(long)]
    pub votes: PathBuf,
    #[command(flatten)]
    pub labels: LabelArgs,
    /// Output CSV (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct QualityArgs {
    /// CSV with vote-count columns; each count expands into that many tags.
    #[arg(long, conflicts_with = "synthetic")]
    pub votes: Option<PathBuf>,
    /// Generate this many synthetic items instead of reading votes.
    #[arg(long)]
    pub synthetic: Option<usize>,
    /// Synthetic tagger error rate.
    #[arg(long, default_value_t = 0.3)]
    pub noise: f64,
    #[arg(long, default_value_t = 10)]
    pub taggers: usize,
    #[arg(long, default_value_t = 8)]
    pub classes: usize,
    #[arg(long, default_value_t = crate::quality::DEFAULT_RESAMPLES)]
    pub resamples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "neutral,happiness,surprise,sadness,anger,disgust,fear,contempt"
    )]
    pub emotions: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, value_enum, default_value = "cel")]
    pub scheme: SchemeArg,
    #[arg(long, default_value_t = DEFAULT_ML_THRESHOLD)]
    pub ml_threshold: f64,
    #[arg(long, value_enum, default_value = "toy")]
    pub arch: ArchArg,
    #[arg(long, default_value_t = 8)]
    pub input_size: usize,
    #[arg(long, default_value_t = 8)]
    pub classes: usize,
    #[arg(long, default_value_t = 1)]
    pub toy_blocks: usize,
    #[arg(long, default_value_t = 4)]
    pub toy_filters: usize,
    #[arg(long, default_value_t = 16)]
    pub toy_hidden: usize,
    /// Random (model, input, distribution) instances.
    #[arg(long, default_value_t = 5)]
    pub instances: usize,
    /// Coordinates checked per parameter tensor (all when omitted).
    #[arg(long)]
    pub coords: Option<usize>,
    #[arg(long, default_value_t = 1e-5)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub items: usize,
    #[arg(long, default_value_t = 16)]
    pub size: usize,
    #[arg(long, default_value_t = 8)]
    pub classes: usize,
    #[arg(long, default_value_t = 10)]
    pub taggers: usize,
    #[arg(long, default_value_t = 0.2)]
    pub noise: f64,
    #[arg(long, default_value_t = 0.15)]
    pub pixel_noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Everything needed to reproduce a run.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub seed: u64,
    pub version: &'static str,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub input_sha256: Option<String>,
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Parses `std::env::args` and runs. Returns the process exit code.
pub fn run() -> i32 {
    run_from(std::env::args_os())
}

pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .try_init();
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let echo: Vec<String> = args
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    match execute(cli, echo) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn execute(cli: Cli, echo: Vec<String>) -> Result<i32> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| match cli.command {
        Command::Train(a) => cmd_train(a, echo),
        Command::Eval(a) => cmd_eval(a),
        Command::Aggregate(a) => cmd_aggregate(a),
        Command::QualityCurve(a) => cmd_quality_curve(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::SynthData(a) => cmd_synth_data(a),
    })
}

fn parse_source_size(s: &str) -> Result<(usize, usize)> {
    dataio::parse_size(s)
        .ok_or_else(|| Error::Config(format!("cannot parse size `{s}`; expected WxH")))
}

pub fn cmd_train(a: TrainArgs, echo: Vec<String>) -> Result<i32> {
    let started = unix_now();
    let emotions = a.labels.emotion_set()?;
    let scheme = a.scheme.resolve(a.ml_threshold)?;
    let arch = match a.arch {
        ArchArg::Vgg13 => Architecture::Vgg13,
        ArchArg::Toy => Architecture::toy(ToyArch {
            blocks: a.toy_blocks,
            base_filters: a.toy_filters,
            hidden: a.toy_hidden,
        }),
    };
    let image_size = a.image_size.unwrap_or(match a.arch {
        ArchArg::Vgg13 => VGG13_INPUT,
        ArchArg::Toy => 16,
    });
    let ingest = IngestOptions {
        image_size,
        source_size: parse_source_size(&a.source_size)?,
        outlier_threshold: a.labels.threshold,
        keep_unusable: a.labels.keep_unusable,
    };
    let dataset = load_dataset(&a.data, &emotions, &ingest)?;
    let augment = AffineParams {
        max_rotation_deg: a.aug_rotate,
        max_scale_delta: a.aug_scale,
        max_translate: a.aug_translate * image_size as f64,
        flip_horizontal: a.aug_flip,
    };
    let config = TrainConfig {
        scheme,
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        momentum: a.momentum,
        lr_decay_at: a.lr_decay_at,
        lr_decay_factor: a.lr_decay,
        seed: a.seed,
        trials: a.trials,
        trial_seed_stride: 1,
        outlier_threshold: a.labels.threshold,
        augment: (augment != AffineParams::IDENTITY).then_some(augment),
        pld_redraw: match a.pld_redraw {
            RedrawArg::Epoch => PldRedraw::Epoch,
            RedrawArg::Visit => PldRedraw::Visit,
        },
        diagnostic_ml_threshold: a.ml_threshold,
    };
    config.validate()?;
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("runs/{started}-seed{}", a.seed)));
    fs::create_dir_all(&out)?;

    let splits = Splits::from_dataset(&dataset);
    let outcome = run_trials(&splits, &config, &arch)?;
    for t in &outcome.trials {
        let meta = CheckpointMeta {
            seed: t.seed,
            epoch: config.epochs,
            trial: t.trial,
            scheme: scheme.code().into(),
            emotions: emotions.names().to_vec(),
        };
        save_checkpoint(&t.model, &meta, out.join(format!("trial-{}.ckpt", t.trial)))?;
    }
    let metrics = RunMetrics::from_trials(&config, &arch, &emotions, &outcome);
    write_metrics(
        &metrics,
        &emotions,
        out.join("metrics.json"),
        out.join("confusion.csv"),
    )?;

    let manifest = RunManifest {
        command: "train".into(),
        args: echo,
        config: serde_json::json!({
            "train": config,
            "architecture": arch,
            "ingest": ingest,
            "ml_threshold": a.ml_threshold,
            "emotions": emotions.names(),
            "dataset_sha256": dataset.fingerprint(),
        }),
        seed: a.seed,
        version: env!("CARGO_PKG_VERSION"),
        started_unix: started,
        finished_unix: unix_now(),
        input_sha256: Some(file_sha256(&a.data)?),
    };
    atomic_write(
        &out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?.as_bytes(),
    )?;
    println!(
        "{} over {} trial(s): {} (per trial: {})",
        scheme.code(),
        config.trials,
        outcome.report.summary(),
        outcome
            .report
            .per_trial
            .iter()
            .map(|v| format!("{:.2}%", 100.0 * v))
            .collect::<Vec<_>>()
            .join(", ")
    );
    println!("outputs written to {}", out.display());
    Ok(0)
}

pub fn cmd_eval(a: EvalArgs) -> Result<i32> {
    let emotions = a.labels.emotion_set()?;
    let split: Split = a.split.parse()?;
    let (model, _) = {
        // Peek at the input size, then load with the full shape check.
        let (m, _) = dataio::load_checkpoint(&a.checkpoint)?;
        let shape = m.input_shape();
        load_checkpoint_expecting(&a.checkpoint, shape, emotions.len())?
    };
    let ingest = IngestOptions {
        image_size: model.input_shape()[1],
        source_size: parse_source_size(&a.source_size)?,
        outlier_threshold: a.labels.threshold,
        keep_unusable: a.labels.keep_unusable,
    };
    let dataset = load_dataset(&a.data, &emotions, &ingest)?;
    let report = evaluate(&model, &dataset.split(split), a.ml_threshold)?;
    let metrics = RunMetrics::from_eval(&emotions, &report);
    match &a.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            write_metrics(
                &metrics,
                &emotions,
                dir.join("metrics.json"),
                dir.join("confusion.csv"),
            )?;
        }
        None => io::stdout()
            .lock()
            .write_all(dataio::metrics_json(&metrics)?.as_bytes())?,
    }
    eprintln!(
        "{split} accuracy {:.4} over {} items",
        report.accuracy, report.examples
    );
    Ok(0)
}

/// Distribution CSV: `row,usage,<categories...>,majority`. `row` is the
/// 1-based data row of the input; dropped items do not appear.
pub fn aggregate_csv(path: &Path, labels: &LabelArgs) -> Result<String> {
    let emotions = labels.emotion_set()?;
    let (rows, _) = read_vote_rows(path, &emotions, false)?;
    let mut out = format!("row,usage,{},majority\n", emotions.names().join(","));
    let mut dropped = 0;
    for (i, row) in rows.iter().enumerate() {
        let dist = dataio::distribution_for(&row.votes, labels.threshold, labels.keep_unusable)
            .map_err(|e| Error::Csv {
                path: path.to_path_buf(),
                line: row.line,
                detail: e.to_string(),
            })?;
        let Some(dist) = dist else {
            dropped += 1;
            continue;
        };
        out.push_str(&format!(
            "{},{}",
            i + 1,
            row.split.map(|s| s.usage_token()).unwrap_or("")
        ));
        for p in dist.probs() {
            out.push_str(&format!(",{p}"));
        }
        out.push_str(&format!(",{}\n", emotions.names()[dist.majority_class()]));
    }
    if dropped > 0 {
        log::info!("dropped {dropped} unusable item(s)");
    }
    Ok(out)
}

fn write_or_print(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => atomic_write(p, text.as_bytes()),
        None => Ok(io::stdout().lock().write_all(text.as_bytes())?),
    }
}

pub fn cmd_aggregate(a: AggregateArgs) -> Result<i32> {
    let text = aggregate_csv(&a.votes, &a.labels)?;
    write_or_print(&a.out, &text)?;
    Ok(0)
}

pub fn cmd_quality_curve(a: QualityArgs) -> Result<i32> {
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let (items, classes) = match (&a.votes, a.synthetic) {
        (Some(path), _) => {
            let emotions = EmotionSet::new(a.emotions.iter().map(|s| s.trim().to_string()))?;
            let (rows, _) = read_vote_rows(path, &emotions, false)?;
            let items: Vec<Vec<usize>> = rows
                .iter()
                .map(|r| expand_counts(&r.votes))
                .filter(|t| !t.is_empty())
                .collect();
            (items, emotions.len())
        }
        (None, Some(n)) => {
            let noise = TaggerNoiseModel::symmetric(a.classes, a.noise)?;
            let labels: Vec<usize> = (0..n).map(|i| i % a.classes).collect();
            let mut tag_rng = ChaCha8Rng::seed_from_u64(a.seed);
            tag_rng.set_stream(1);
            (
                synth_votes(&labels, &noise, a.taggers, &mut tag_rng)?,
                a.classes,
            )
        }
        (None, None) => return Err(Error::Config("pass --votes or --synthetic".into())),
    };
    let curve = quality_curve(&items, classes, a.resamples, &mut rng)?;
    write_or_print(&a.out, &curve.to_tsv())?;
    Ok(0)
}

/// Runs `args.instances` seeded gradient checks and returns their reports.
pub fn gradcheck_reports(a: &GradcheckArgs) -> Result<Vec<GradCheckReport>> {
    use rand::Rng;
    let scheme = a.scheme.resolve(a.ml_threshold)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut reports = Vec::with_capacity(a.instances);
    for i in 0..a.instances {
        let model = match a.arch {
            ArchArg::Toy => ToyArch {
                blocks: a.toy_blocks,
                base_filters: a.toy_filters,
                hidden: a.toy_hidden,
            }
            .build(a.input_size, a.classes, &mut rng)?,
            ArchArg::Vgg13 => crate::net::build_vgg13(a.input_size, a.classes, &mut rng)?,
        };
        let n = a.input_size;
        let input = Tensor::image(n, n, (0..n * n).map(|_| rng.random::<f64>()).collect())?;
        // Fourth powers make the distributions peaky enough to admit classes under ML.
        let raw: Vec<f64> = (0..a.classes)
            .map(|_| rng.random::<f64>().powi(4))
            .collect();
        let sum: f64 = raw.iter().sum();
        let mut p: Vec<f64> = raw.iter().map(|v| v / sum).collect();
        let last: f64 = p[..a.classes - 1].iter().sum();
        p[a.classes - 1] = (1.0 - last).max(0.0);
        let dist = LabelDistribution::new(p)?;
        let drawn = scheme.needs_draw().then(|| draw_pld(&dist, &mut rng));
        let opts = GradCheckOptions {
            max_coords_per_tensor: a.coords,
            seed: a.seed.wrapping_add(i as u64),
            ..Default::default()
        };
        reports.push(gradient_check(
            &model,
            &input,
            &dist,
            scheme,
            drawn.as_ref(),
            &opts,
        )?);
    }
    Ok(reports)
}

pub fn cmd_gradcheck(a: GradcheckArgs) -> Result<i32> {
    let reports = gradcheck_reports(&a)?;
    let worst = reports
        .iter()
        .map(GradCheckReport::overall_max)
        .fold(0.0, f64::max);
    let summary = serde_json::json!({
        "scheme": a.scheme.resolve(a.ml_threshold)?.code(),
        "instances": reports.len(),
        "tolerance": a.tolerance,
        "max_rel_error": worst,
        "passed": worst < a.tolerance,
        "reports": reports,
    });
    writeln!(
        io::stdout().lock(),
        "{}",
        serde_json::to_string_pretty(&summary)?
    )?;
    Ok(if worst < a.tolerance { 0 } else { 1 })
}

pub fn cmd_synth_data(a: SynthArgs) -> Result<i32> {
    let cfg = SyntheticConfig {
        items: a.items,
        image_size: a.size,
        classes: a.classes,
        taggers: a.taggers,
        tagger_noise: a.noise,
        pixel_noise: a.pixel_noise,
        seed: a.seed,
        ..Default::default()
    };
    let data = synthetic::generate(&cfg)?;
    write_dataset_csv(&a.out, &data.dataset)?;
    eprintln!(
        "wrote {} items to {}",
        data.dataset.items.len(),
        a.out.display()
    );
    Ok(0)
}
