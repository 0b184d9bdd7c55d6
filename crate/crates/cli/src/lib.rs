//! The `avvp` command-line driver.
//!
//! Commands that produce artifacts first write a JSON [`RunManifest`]
//! holding their fully resolved arguments; `avvp rerun --manifest <file>`
//! replays it and reproduces the same bytes.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use avvp_core::datagen::{generate, load_dataset, save_dataset, Dataset, FloatEncoding, GenConfig};
use avvp_core::losses::{select_valid_pairs, total_loss, write_loss_log, LossConfig};
use avvp_core::metrics::{evaluate_labels, read_labels, write_labels, MetricReport, SegmentLabels};
use avvp_core::model::{forward, load_checkpoint, predict, save_checkpoint, Checkpoint, ModelConfig, ModelParams};
use avvp_core::teacher::{topk_mask, write_masks, MaskRule, TeacherState};
use avvp_core::tensor::{grad_check, GradCheckReport};
use avvp_core::trainer::{predict_labels, EvalOptions, MaskMode, Optimizer, TrainConfig, TrainState};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] avvp_core::Error),

    #[error("manifest {path}: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("gradient check failed: max relative error {error:e} exceeds tolerance {tolerance:e}")]
    GradCheck { error: f64, tolerance: f64 },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Core(avvp_core::Error::InvalidConfig(_)) => EXIT_USAGE,
            CliError::Core(e) if e.is_numerical() => EXIT_NUMERICAL,
            CliError::GradCheck { .. } => EXIT_NUMERICAL,
            _ => EXIT_DATA,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "avvp", version, about = "Weakly supervised audio-visual video parsing on synthetic data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    /// Generate a synthetic dataset.
    Generate(GenerateArgs),
    /// Train a student (and its EMA teacher) on a dataset.
    Train(TrainArgs),
    /// Score a checkpoint or a prediction file against segment ground truth.
    Eval(EvalArgs),
    /// Finite-difference check of the full training loss on a toy instance.
    Gradcheck(GradcheckArgs),
    /// Export the pseudo masks a checkpoint's teacher produces.
    Masks(MasksArgs),
    /// Replay a command from its manifest.
    Rerun(RerunArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskModeArg {
    Adaptive,
    Topk,
}

impl From<MaskModeArg> for MaskMode {
    fn from(m: MaskModeArg) -> MaskMode {
        match m {
            MaskModeArg::Adaptive => MaskMode::Adaptive,
            MaskModeArg::Topk => MaskMode::Topk,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodingArg {
    /// Shortest round-trip decimal text.
    Decimal,
    /// Raw IEEE-754 bit patterns in hex.
    Hex,
}

impl From<EncodingArg> for FloatEncoding {
    fn from(e: EncodingArg) -> FloatEncoding {
        match e {
            EncodingArg::Decimal => FloatEncoding::Decimal,
            EncodingArg::Hex => FloatEncoding::Hex,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct GenerateArgs {
    /// Number of videos.
    #[arg(long, default_value_t = 200)]
    pub videos: usize,
    /// Segments per video.
    #[arg(long = "T", default_value_t = 10)]
    pub segments: usize,
    /// Event classes.
    #[arg(long = "C", default_value_t = 5)]
    pub classes: usize,
    #[arg(long, default_value_t = 16)]
    pub audio_dim: usize,
    #[arg(long, default_value_t = 16)]
    pub visual_dim: usize,
    #[arg(long, default_value_t = 1)]
    pub min_events: usize,
    #[arg(long, default_value_t = 3)]
    pub max_events: usize,
    /// Shortest planted event, in segments.
    #[arg(long, default_value_t = 2)]
    pub min_len: usize,
    /// Longest planted event, in segments.
    #[arg(long, default_value_t = 6)]
    pub max_len: usize,
    /// Audio-only, visual-only and audio-visual event weights.
    #[arg(long, value_delimiter = ',', default_values_t = [0.3, 0.3, 0.4])]
    pub mixture: Vec<f64>,
    /// Feature noise scale σ.
    #[arg(long, default_value_t = 0.3)]
    pub noise: f64,
    /// Id of the first video; disjoint id ranges give disjoint splits
    /// sharing one set of class prototypes.
    #[arg(long, default_value_t = 0)]
    pub first_id: usize,
    #[arg(long, env = "AVVP_SEED", default_value_t = 1)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = EncodingArg::Decimal)]
    pub encoding: EncodingArg,
    /// Dataset file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the segment ground truth as a label file.
    #[arg(long)]
    pub labels_out: Option<PathBuf>,
    /// Manifest path [default: <out>.manifest.json]
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Dataset file.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    /// Seeds model init and the per-epoch visiting order.
    #[arg(long, env = "AVVP_SEED", default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    /// Use momentum SGD with this coefficient instead of plain SGD.
    #[arg(long)]
    pub momentum: Option<f64>,
    /// Drop the EMA teacher and its pseudo loss.
    #[arg(long)]
    pub no_ema: bool,
    /// Drop the cross-modal agreement loss.
    #[arg(long)]
    pub no_cma: bool,
    #[arg(long, value_enum, default_value_t = MaskModeArg::Adaptive)]
    pub mask_mode: MaskModeArg,
    /// EMA momentum α of the teacher.
    #[arg(long, default_value_t = 0.999)]
    pub alpha: f64,
    /// Adaptive mask scale γ on the per-class mean score.
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    /// Segments kept per class by the top-k mask.
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Audio confidence threshold τ_a for valid pairs.
    #[arg(long, default_value_t = 0.5)]
    pub tau_a: f64,
    /// Visual confidence threshold τ_v for valid pairs.
    #[arg(long, default_value_t = 0.5)]
    pub tau_v: f64,
    /// Epochs trained before the pseudo loss switches on.
    #[arg(long, default_value_t = 1)]
    pub warmup_epochs: usize,
    /// Regenerate teacher masks every this many epochs.
    #[arg(long, default_value_t = 1)]
    pub mask_refresh_epochs: usize,
    /// Let masks cover classes absent from the video label.
    #[arg(long)]
    pub no_label_gating: bool,
    /// Visit videos in file order every epoch.
    #[arg(long)]
    pub no_shuffle: bool,
    #[arg(long, default_value_t = 64)]
    pub d_model: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value = "avvp.ckpt")]
    pub checkpoint_out: PathBuf,
    /// Per-step loss log (CSV).
    #[arg(long, default_value = "avvp-log.csv")]
    pub log_out: PathBuf,
    /// Write the final teacher's masks for the training set.
    #[arg(long)]
    pub masks_out: Option<PathBuf>,
    /// Manifest path [default: <checkpoint-out>.manifest.json]
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["checkpoint", "predictions"])))]
pub struct EvalArgs {
    /// Dataset with segment ground truth.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint whose student is evaluated.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Label file of precomputed predictions.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Segment decision threshold.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Keep segment predictions of classes the video-level prediction rejects.
    #[arg(long)]
    pub no_video_gating: bool,
    /// IoU an event must exceed to count as detected.
    #[arg(long, default_value_t = 0.5)]
    pub iou: f64,
    /// Also write the report CSV here.
    #[arg(long)]
    pub csv_out: Option<PathBuf>,
    /// Write the binarized predictions as a label file.
    #[arg(long)]
    pub predictions_out: Option<PathBuf>,
    /// Write a run manifest here (none by default)
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct GradcheckArgs {
    /// Largest acceptable relative error.
    #[arg(long, default_value_t = 1e-5)]
    pub tolerance: f64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub epsilon: f64,
    /// Varies the toy instance.
    #[arg(long, env = "AVVP_SEED", default_value_t = 1)]
    pub seed: u64,
    /// Write a run manifest here (none by default)
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct MasksArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value_t = MaskModeArg::Adaptive)]
    pub mask_mode: MaskModeArg,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long)]
    pub no_label_gating: bool,
    /// Mask file to write; masks are printed when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write a run manifest here (none by default)
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct RerunArgs {
    /// Manifest written by an earlier generate, train, eval, gradcheck or masks run
    #[arg(long)]
    pub manifest: PathBuf,
}

/// Everything needed to reproduce one command's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub command: Command,
    /// The library-level configuration the arguments resolve to.
    pub config: serde_json::Value,
    pub artifacts: BTreeMap<String, PathBuf>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_manifest<C: Serialize>(
    path: &Path,
    seed: u64,
    command: &Command,
    config: &C,
    artifacts: &[(&str, &Path)],
) -> CliResult<()> {
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        command: command.clone(),
        config: serde_json::to_value(config).map_err(|source| CliError::Manifest {
            path: path.to_path_buf(),
            source,
        })?,
        artifacts: artifacts
            .iter()
            .map(|(k, p)| (k.to_string(), p.to_path_buf()))
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|source| CliError::Manifest {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn read_manifest(path: &Path) -> CliResult<RunManifest> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| CliError::Manifest {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                EXIT_USAGE
            } else {
                let _ = write!(out, "{text}");
                EXIT_OK
            };
        }
    };
    match execute(&cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: &Command, out: &mut dyn Write) -> CliResult<()> {
    match command {
        Command::Generate(a) => cmd_generate(a, command, out),
        Command::Train(a) => cmd_train(a, command, out),
        Command::Eval(a) => cmd_eval(a, command, out),
        Command::Gradcheck(a) => cmd_gradcheck(a, command, out),
        Command::Masks(a) => cmd_masks(a, command, out),
        Command::Rerun(a) => {
            let manifest = read_manifest(&a.manifest)?;
            if matches!(manifest.command, Command::Rerun(_)) {
                return Err(CliError::Usage("a manifest cannot replay another rerun".into()));
            }
            execute(&manifest.command, out)
        }
    }
}

fn say(out: &mut dyn Write, text: std::fmt::Arguments<'_>) -> CliResult<()> {
    out.write_fmt(text).map_err(io_err(Path::new("<stdout>")))
}

pub fn gen_config(a: &GenerateArgs) -> CliResult<GenConfig> {
    let mixture: [f64; 3] = a
        .mixture
        .as_slice()
        .try_into()
        .map_err(|_| CliError::Usage(format!("--mixture takes 3 weights, got {}", a.mixture.len())))?;
    let cfg = GenConfig {
        n_videos: a.videos,
        first_id: a.first_id,
        segments: a.segments,
        classes: a.classes,
        audio_dim: a.audio_dim,
        visual_dim: a.visual_dim,
        min_events: a.min_events,
        max_events: a.max_events,
        min_event_len: a.min_len,
        max_event_len: a.max_len,
        mixture,
        noise: a.noise,
        seed: a.seed,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_generate(a: &GenerateArgs, command: &Command, out: &mut dyn Write) -> CliResult<()> {
    let cfg = gen_config(a)?;
    let manifest = a.manifest.clone().unwrap_or_else(|| with_suffix(&a.out, ".manifest.json"));
    let mut artifacts = vec![("dataset", a.out.as_path())];
    if let Some(p) = &a.labels_out {
        artifacts.push(("labels", p));
    }
    write_manifest(&manifest, a.seed, command, &cfg, &artifacts)?;
    let ds = generate(&cfg)?;
    save_dataset(&ds, &a.out, a.encoding.into())?;
    if let Some(p) = &a.labels_out {
        write_labels(p, &ground_truth(&ds)?)?;
    }
    say(
        out,
        format_args!("wrote {} videos (T={}, C={}) to {}\n", ds.len(), ds.segments, ds.classes, a.out.display()),
    )
}

fn ground_truth(ds: &Dataset) -> CliResult<Vec<(String, SegmentLabels)>> {
    ds.videos
        .iter()
        .map(|v| {
            v.segment_gt
                .clone()
                .map(|gt| (v.id.clone(), gt))
                .ok_or_else(|| CliError::Core(avvp_core::Error::Mismatch(format!("video {} has no segment ground truth", v.id))))
        })
        .collect()
}

/// The library training configuration `a` resolves to for `data`.
pub fn train_config(a: &TrainArgs, data: &Dataset) -> CliResult<TrainConfig> {
    let mut cfg = TrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        optimizer: match a.momentum {
            Some(beta) => Optimizer::Momentum { beta },
            None => Optimizer::Sgd,
        },
        alpha: a.alpha,
        gamma: a.gamma,
        k: a.k,
        mask_mode: a.mask_mode.into(),
        tau_a: a.tau_a,
        tau_v: a.tau_v,
        enable_ema: !a.no_ema,
        enable_cma: !a.no_cma,
        seed: a.seed,
        shuffle: !a.no_shuffle,
        warmup_epochs: a.warmup_epochs,
        mask_refresh_epochs: a.mask_refresh_epochs,
        label_gating: !a.no_label_gating,
        model: ModelConfig {
            d_model: a.d_model,
            heads: a.heads,
            seed: a.seed,
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    };
    cfg.fit_to(data);
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(a: &TrainArgs, command: &Command, out: &mut dyn Write) -> CliResult<()> {
    let data = load_dataset(&a.data)?;
    let cfg = train_config(a, &data)?;
    let manifest = a
        .manifest
        .clone()
        .unwrap_or_else(|| with_suffix(&a.checkpoint_out, ".manifest.json"));
    let mut artifacts = vec![
        ("dataset", a.data.as_path()),
        ("checkpoint", a.checkpoint_out.as_path()),
        ("log", a.log_out.as_path()),
    ];
    if let Some(p) = &a.masks_out {
        artifacts.push(("masks", p));
    }
    write_manifest(&manifest, a.seed, command, &cfg, &artifacts)?;

    let mut state = TrainState::new(&cfg)?;
    for _ in 0..cfg.epochs {
        let summary = state.train_epoch(&data, &cfg)?;
        say(out, format_args!("{summary}\n"))?;
        out.flush().map_err(io_err(Path::new("<stdout>")))?;
    }
    save_checkpoint(
        &a.checkpoint_out,
        &Checkpoint {
            student: state.student.clone(),
            teacher: state.teacher.clone(),
        },
    )?;
    write_loss_log(&a.log_out, &state.history)?;
    if let Some(p) = &a.masks_out {
        let masks = state.refresh_masks(&data, &cfg)?;
        let records: Vec<_> = data.videos.iter().map(|v| v.id.clone()).zip(masks.iter().cloned()).collect();
        write_masks(p, &records)?;
    }
    say(
        out,
        format_args!(
            "trained {} steps; checkpoint {}, log {}\n",
            state.step,
            a.checkpoint_out.display(),
            a.log_out.display()
        ),
    )
}

fn cmd_eval(a: &EvalArgs, command: &Command, out: &mut dyn Write) -> CliResult<()> {
    let data = load_dataset(&a.data)?;
    let opts = EvalOptions {
        threshold: a.threshold,
        video_gating: !a.no_video_gating,
    };
    if let Some(m) = &a.manifest {
        let mut artifacts = vec![("dataset", a.data.as_path())];
        for (k, p) in [("csv", &a.csv_out), ("predictions", &a.predictions_out)] {
            if let Some(p) = p {
                artifacts.push((k, p));
            }
        }
        write_manifest(m, 0, command, &opts, &artifacts)?;
    }
    let preds = match (&a.checkpoint, &a.predictions) {
        (Some(ck), _) => {
            let ck = load_checkpoint(ck)?;
            predict_labels(&ck.student, &data, &opts)?
        }
        (None, Some(p)) => read_labels(p)?,
        (None, None) => return Err(CliError::Usage("pass --checkpoint or --predictions".into())),
    };
    let gts = ground_truth(&data)?;
    let by_id: BTreeMap<&str, &SegmentLabels> = preds.iter().map(|(id, l)| (id.as_str(), l)).collect();
    let mut pairs = Vec::with_capacity(gts.len());
    for (id, gt) in &gts {
        let pred = by_id
            .get(id.as_str())
            .ok_or_else(|| CliError::Core(avvp_core::Error::Mismatch(format!("no prediction for video {id}"))))?;
        pairs.push((*pred, gt));
    }
    let report = evaluate_labels(&pairs, a.iou)?;
    if let Some(p) = &a.predictions_out {
        write_labels(p, &preds)?;
    }
    let csv = report_csv(&report)?;
    if let Some(p) = &a.csv_out {
        std::fs::write(p, &csv).map_err(io_err(p))?;
    }
    say(out, format_args!("{}\n{}", report.to_table(), String::from_utf8_lossy(&csv)))
}

fn report_csv(report: &MetricReport) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    Ok(buf)
}

/// Outcome of the toy gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyCheck {
    pub report: GradCheckReport,
    pub mask_ones: usize,
    pub omega: usize,
}

/// Gradient check of the full loss (video BCE, pseudo loss and agreement
/// loss all active) on a 4-segment, 3-class, 8-dim video with a 16-wide
/// model.
///
/// The teacher is pulled halfway toward a second random init so its top-2
/// mask differs from the student's own ranking. Mask and valid pairs are
/// computed once and held fixed, as they are within a training step; pairs
/// use τ = 0.3, falling back to 0 if that selects nothing.
pub fn gradcheck_toy(seed: u64, epsilon: f64) -> avvp_core::Result<ToyCheck> {
    let data = generate(&GenConfig {
        n_videos: 1,
        segments: 4,
        classes: 3,
        audio_dim: 8,
        visual_dim: 8,
        min_events: 2,
        max_events: 3,
        seed,
        ..GenConfig::default()
    })?;
    let sample = &data.videos[0];
    let model = ModelConfig {
        segments: 4,
        classes: 3,
        audio_dim: 8,
        visual_dim: 8,
        d_model: 16,
        heads: 4,
        seed,
    };
    let student = ModelParams::init(&model)?;
    let mut teacher = TeacherState::new(&student, 0.5)?;
    teacher.ema_update(&ModelParams::init(&ModelConfig {
        seed: seed.wrapping_add(1),
        ..model.clone()
    })?)?;
    let mask = topk_mask(&teacher.predict(sample)?, 2, Some(&sample.video_label))?;
    let p = predict(&student, sample)?;
    let mut omega = select_valid_pairs(&p.p_audio, &p.p_visual, &sample.video_label, 0.3, 0.3)?;
    if omega.is_empty() {
        omega = select_valid_pairs(&p.p_audio, &p.p_visual, &sample.video_label, 0.0, 0.0)?;
    }
    let loss_cfg = LossConfig::default();
    let report = grad_check(student.values(), epsilon, |theta| {
        let params = ModelParams::from_values(&model, theta.to_vec())?;
        let mut out = forward(&params, sample)?;
        let (loss, r) = total_loss(&mut out, &sample.video_label, Some(&mask), Some(&omega), &loss_cfg)?;
        let grads = out.tape.backward(loss)?;
        Ok((r.l_total, out.param_gradient(&grads)))
    })?;
    Ok(ToyCheck {
        report,
        mask_ones: mask.count(),
        omega: omega.len(),
    })
}

fn cmd_gradcheck(a: &GradcheckArgs, command: &Command, out: &mut dyn Write) -> CliResult<()> {
    if let Some(m) = &a.manifest {
        write_manifest(m, a.seed, command, a, &[])?;
    }
    let check = gradcheck_toy(a.seed, a.epsilon)?;
    let r = &check.report;
    say(
        out,
        format_args!(
            "max relative error {:.3e} at coordinate {} of {} (mask ones {}, valid pairs {})\n",
            r.max_relative_error, r.worst_coordinate, r.coordinates, check.mask_ones, check.omega
        ),
    )?;
    if !(r.max_relative_error < a.tolerance) {
        return Err(CliError::GradCheck {
            error: r.max_relative_error,
            tolerance: a.tolerance,
        });
    }
    say(out, format_args!("ok: below tolerance {:e}\n", a.tolerance))
}

fn cmd_masks(a: &MasksArgs, command: &Command, out: &mut dyn Write) -> CliResult<()> {
    let rule = match a.mask_mode {
        MaskModeArg::Adaptive => MaskRule::AdaptiveThreshold { gamma: a.gamma },
        MaskModeArg::Topk => MaskRule::TopK { k: a.k },
    };
    rule.validate()?;
    if let Some(m) = &a.manifest {
        let mut artifacts = vec![("dataset", a.data.as_path()), ("checkpoint", a.checkpoint.as_path())];
        if let Some(p) = &a.out {
            artifacts.push(("masks", p));
        }
        write_manifest(m, 0, command, &rule, &artifacts)?;
    }
    let data = load_dataset(&a.data)?;
    let ck = load_checkpoint(&a.checkpoint)?;
    let mut records = Vec::with_capacity(data.len());
    for v in &data.videos {
        let gate = (!a.no_label_gating).then_some(v.video_label.as_slice());
        records.push((v.id.clone(), rule.apply(&ck.teacher.predict(v)?, gate)?));
    }
    match &a.out {
        Some(p) => {
            write_masks(p, &records)?;
            say(out, format_args!("wrote masks for {} videos to {}\n", records.len(), p.display()))
        }
        None => {
            for (id, m) in &records {
                say(out, format_args!("video {id} ({} ones)\n{}", m.count(), m.grid))?;
            }
            Ok(())
        }
    }
}
