//! Per-video training loop: student step, EMA teacher, cached pseudo masks.
//!
//! One optimizer step per video (batch size 1). Masks are regenerated from
//! the current teacher every `mask_refresh_epochs` epochs once warm-up is
//! over; the teacher is updated after every step. With `enable_ema` off the
//! teacher is never touched and the pseudo term is never built.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{Dataset, VideoSample};
use crate::error::{Error, Result};
use crate::losses::{avvp_loss, total_loss, LossConfig, LossReport, LossWeights};
use crate::metrics::{aggregate, binarize_predictions, gate_by_video, score_video, MetricReport, SegmentLabels};
use crate::model::{forward, predict, ModelConfig, ModelParams};
use crate::teacher::{MaskRule, PseudoMask, TeacherState};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Optimizer {
    Sgd,
    Momentum { beta: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    Adaptive,
    Topk,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub optimizer: Optimizer,
    pub alpha: f64,
    pub gamma: f64,
    pub k: usize,
    pub mask_mode: MaskMode,
    pub tau_a: f64,
    pub tau_v: f64,
    pub enable_ema: bool,
    pub enable_cma: bool,
    /// Seeds the per-epoch visiting order.
    pub seed: u64,
    pub shuffle: bool,
    /// Epochs trained without the pseudo term.
    pub warmup_epochs: usize,
    pub mask_refresh_epochs: usize,
    pub label_gating: bool,
    pub loss_weights: LossWeights,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            lr: 0.05,
            optimizer: Optimizer::Sgd,
            alpha: 0.999,
            gamma: 1.0,
            k: 3,
            mask_mode: MaskMode::Adaptive,
            tau_a: 0.5,
            tau_v: 0.5,
            enable_ema: true,
            enable_cma: true,
            seed: 1,
            shuffle: true,
            warmup_epochs: 1,
            mask_refresh_epochs: 1,
            label_gating: true,
            loss_weights: LossWeights::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidConfig(format!("learning rate must be finite and non-negative, got {}", self.lr)));
        }
        if let Optimizer::Momentum { beta } = self.optimizer {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::InvalidConfig(format!("momentum must lie in [0, 1), got {beta}")));
            }
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!("alpha must lie in [0, 1), got {}", self.alpha)));
        }
        if self.mask_refresh_epochs == 0 {
            return Err(Error::InvalidConfig("mask_refresh_epochs must be at least 1".into()));
        }
        self.mask_rule().validate()?;
        self.loss_config(true).validate()?;
        self.model.validate()
    }

    pub fn mask_rule(&self) -> MaskRule {
        match self.mask_mode {
            MaskMode::Adaptive => MaskRule::AdaptiveThreshold { gamma: self.gamma },
            MaskMode::Topk => MaskRule::TopK { k: self.k },
        }
    }

    fn loss_config(&self, pseudo: bool) -> LossConfig {
        LossConfig {
            enable_pseudo: pseudo,
            enable_cma: self.enable_cma,
            tau_a: self.tau_a,
            tau_v: self.tau_v,
            weights: self.loss_weights,
        }
    }

    /// Model dimensions taken from the dataset, keeping width, heads and seed.
    pub fn fit_to(&mut self, data: &Dataset) {
        self.model.segments = data.segments;
        self.model.classes = data.classes;
        self.model.audio_dim = data.audio_dim;
        self.model.visual_dim = data.visual_dim;
    }
}

/// Visiting order of epoch `epoch`; identity when shuffling is off.
pub fn epoch_order(seed: u64, epoch: usize, n: usize, shuffle: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
    }
    order
}

/// In-place parameter update; `velocity` is only used by momentum.
pub fn apply_update(optimizer: Optimizer, lr: f64, params: &mut [f64], grad: &[f64], velocity: &mut Vec<f64>) {
    match optimizer {
        Optimizer::Sgd => {
            for (p, g) in params.iter_mut().zip(grad) {
                *p -= lr * g;
            }
        }
        Optimizer::Momentum { beta } => {
            velocity.resize(params.len(), 0.0);
            for ((p, g), v) in params.iter_mut().zip(grad).zip(velocity.iter_mut()) {
                *v = beta * *v + g;
                *p -= lr * *v;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub steps: usize,
    pub mean_l_avvp: f64,
    pub mean_l_pseudo: f64,
    pub mean_l_cma: f64,
    pub mean_l_total: f64,
    pub pseudo_active: bool,
}

impl std::fmt::Display for EpochSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "epoch {:>3}  l_avvp {:.5}  l_pseudo {:.5}  l_cma {:.5}  l_total {:.5}",
            self.epoch, self.mean_l_avvp, self.mean_l_pseudo, self.mean_l_cma, self.mean_l_total
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub student: ModelParams,
    pub teacher: TeacherState,
    pub step: u64,
    pub epoch: usize,
    pub history: Vec<LossReport>,
    masks: Option<Vec<PseudoMask>>,
    masks_epoch: usize,
    velocity: Vec<f64>,
    teacher_accesses: u64,
}

impl TrainState {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let student = ModelParams::init(&config.model)?;
        Self::from_params(student, config)
    }

    pub fn from_params(student: ModelParams, config: &TrainConfig) -> Result<Self> {
        let teacher = TeacherState::new(&student, config.alpha)?;
        Ok(TrainState {
            student,
            teacher,
            step: 0,
            epoch: 0,
            history: Vec::new(),
            masks: None,
            masks_epoch: 0,
            velocity: Vec::new(),
            teacher_accesses: 0,
        })
    }

    /// Reads and writes of the teacher since construction.
    pub fn teacher_accesses(&self) -> u64 {
        self.teacher_accesses
    }

    /// Masks currently cached for the pseudo term, in dataset order.
    pub fn cached_masks(&self) -> Option<&[PseudoMask]> {
        self.masks.as_deref()
    }

    /// Regenerates every video's mask from the current teacher.
    pub fn refresh_masks(&mut self, data: &Dataset, config: &TrainConfig) -> Result<&[PseudoMask]> {
        let rule = config.mask_rule();
        let mut masks = Vec::with_capacity(data.len());
        for v in &data.videos {
            self.teacher_accesses += 1;
            let fused = self.teacher.predict(v)?;
            let gate = config.label_gating.then_some(v.video_label.as_slice());
            masks.push(rule.apply(&fused, gate)?);
        }
        self.masks_epoch = self.epoch;
        Ok(self.masks.insert(masks))
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        let c = self.student.config();
        let want = [c.segments, c.classes, c.audio_dim, c.visual_dim];
        let got = [data.segments, data.classes, data.audio_dim, data.visual_dim];
        if want != got {
            return Err(Error::ShapeMismatch {
                op: "train(dataset dims T, C, d_a, d_v)",
                lhs: want.to_vec(),
                rhs: got.to_vec(),
            });
        }
        Ok(())
    }

    pub fn train_epoch(&mut self, data: &Dataset, config: &TrainConfig) -> Result<EpochSummary> {
        self.check_data(data)?;
        let pseudo_active = config.enable_ema && self.epoch >= config.warmup_epochs;
        if pseudo_active
            && (self.masks.is_none() || self.epoch - self.masks_epoch >= config.mask_refresh_epochs)
        {
            self.refresh_masks(data, config)?;
        }
        let loss_config = config.loss_config(pseudo_active);
        let order = epoch_order(config.seed, self.epoch, data.len(), config.shuffle);
        let first = self.history.len();
        let masks = self.masks.take();
        let result = (|| -> Result<()> {
            for &i in &order {
                let mask = masks.as_ref().filter(|_| pseudo_active).map(|m| &m[i]);
                let report = self.step_on(&data.videos[i], mask, &loss_config, config)?;
                self.history.push(report);
            }
            Ok(())
        })();
        self.masks = masks;
        result?;
        self.epoch += 1;

        let rows = &self.history[first..];
        let n = rows.len().max(1) as f64;
        let mean = |f: fn(&LossReport) -> f64| rows.iter().map(f).sum::<f64>() / n;
        Ok(EpochSummary {
            epoch: self.epoch - 1,
            steps: rows.len(),
            mean_l_avvp: mean(|r| r.l_avvp),
            mean_l_pseudo: mean(|r| r.l_pseudo),
            mean_l_cma: mean(|r| r.l_cma),
            mean_l_total: mean(|r| r.l_total),
            pseudo_active,
        })
    }

    fn step_on(
        &mut self,
        video: &VideoSample,
        mask: Option<&PseudoMask>,
        loss_config: &LossConfig,
        config: &TrainConfig,
    ) -> Result<LossReport> {
        let mut out = forward(&self.student, video)?;
        let (loss, report) = total_loss(&mut out, &video.video_label, mask, None, loss_config)?;
        if !report.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.step,
                video: video.id.clone(),
                components: format!(
                    "l_avvp={} l_pseudo={} l_cma={} l_total={} |omega|={} |M|={}",
                    report.l_avvp, report.l_pseudo, report.l_cma, report.l_total, report.omega, report.mask_l1
                ),
            });
        }
        let grads = out.tape.backward(loss)?;
        let grad = out.param_gradient(&grads);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("gradient at step {} on video {}", self.step, video.id),
            });
        }
        apply_update(config.optimizer, config.lr, self.student.values_mut(), &grad, &mut self.velocity);
        if config.enable_ema {
            self.teacher_accesses += 1;
            self.teacher.ema_update(&self.student)?;
        }
        self.step += 1;
        Ok(report)
    }
}

/// Trains for `config.epochs` epochs, calling `on_epoch` after each.
pub fn train(
    data: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochSummary),
) -> Result<TrainState> {
    let mut state = TrainState::new(config)?;
    for _ in 0..config.epochs {
        let summary = state.train_epoch(data, config)?;
        on_epoch(&summary);
    }
    Ok(state)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub threshold: f64,
    /// Drop segment predictions of classes the video-level prediction rejects.
    pub video_gating: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            threshold: crate::metrics::DEFAULT_DECISION_THRESHOLD,
            video_gating: true,
        }
    }
}

/// Binarized student segment predictions for every video.
pub fn predict_labels(params: &ModelParams, data: &Dataset, opts: &EvalOptions) -> Result<Vec<(String, SegmentLabels)>> {
    data.videos
        .iter()
        .map(|v| {
            let p = predict(params, v)?;
            let mut labels = binarize_predictions(&p.p_audio, &p.p_visual, opts.threshold)?;
            if opts.video_gating {
                let video: Vec<bool> = p.p_video.iter().map(|&q| q >= opts.threshold).collect();
                labels = gate_by_video(&labels, &video)?;
            }
            Ok((v.id.clone(), labels))
        })
        .collect()
}

/// Student-only evaluation against segment ground truth.
pub fn evaluate(params: &ModelParams, data: &Dataset, opts: &EvalOptions) -> Result<MetricReport> {
    let preds = predict_labels(params, data, opts)?;
    let mut scores = Vec::with_capacity(preds.len());
    for ((_, pred), v) in preds.iter().zip(&data.videos) {
        let gt = v.segment_gt.as_ref().ok_or_else(|| {
            Error::invalid("evaluate", format!("video {} has no segment ground truth", v.id))
        })?;
        scores.push(score_video(pred, gt, crate::metrics::DEFAULT_IOU_THRESHOLD)?);
    }
    aggregate(&scores)
}

/// Mean video-level BCE of `params` over the dataset.
pub fn dataset_avvp_loss(params: &ModelParams, data: &Dataset) -> Result<f64> {
    let mut total = 0.0;
    for v in &data.videos {
        let mut out = forward(params, v)?;
        let l = avvp_loss(&mut out.tape, out.p_video, &v.video_label)?;
        total += out.tape.value(l).item()?;
    }
    Ok(total / data.len().max(1) as f64)
}
