//! Training objectives, recorded on the student's tape.
//!
//! * video-level BCE against the weak label,
//! * masked BCE pushing teacher-trusted segment–class cells of the fused
//!   student prediction toward 1, normalized by `‖M‖₁`,
//! * cross-modal agreement: mean cosine distance between refined audio and
//!   visual embeddings over the valid pairs `Ω`.
//!
//! The total is their sum. Empty masks and empty `Ω` contribute exactly 0.

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryGrid, ProbGrid};
use crate::model::{fuse_on_tape, ForwardOutput, PROB_EPS};
use crate::teacher::PseudoMask;
use crate::tensor::{Tape, Tensor, Var};

/// Added to the norm product in the cosine similarity.
pub const COSINE_EPS: f64 = 1e-12;

fn label_tensor(label: &[bool]) -> Tensor {
    Tensor::vector(label.iter().map(|&y| if y { 1.0 } else { 0.0 }).collect())
}

fn shape_error(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

/// `mean_c −[y_c ln p_c + (1 − y_c) ln(1 − p_c)]` with `p` clamped.
pub fn avvp_loss(tape: &mut Tape, p_video: Var, label: &[bool]) -> Result<Var> {
    let shape = tape.value(p_video).shape().to_vec();
    if shape != [label.len()] {
        return Err(shape_error("avvp_loss", &shape, &[label.len()]));
    }
    let p = tape.clamp(p_video, PROB_EPS, 1.0 - PROB_EPS);
    let y = tape.constant(label_tensor(label));
    let not_y = tape.constant(label_tensor(&label.iter().map(|y| !y).collect::<Vec<_>>()));
    let log_p = tape.ln(p);
    let neg_p = tape.mul_scalar(p, -1.0);
    let one_minus_p = tape.add_scalar(neg_p, 1.0);
    let log_q = tape.ln(one_minus_p);
    let pos = tape.mul(y, log_p)?;
    let neg = tape.mul(not_y, log_q)?;
    let ll = tape.add(pos, neg)?;
    let mean = tape.mean(ll);
    Ok(tape.mul_scalar(mean, -1.0))
}

/// `−(1/‖M‖₁) Σ M ln P̂`; a constant 0 when the mask is empty.
pub fn pseudo_loss(tape: &mut Tape, fused: Var, mask: &BinaryGrid) -> Result<Var> {
    let shape = tape.value(fused).shape().to_vec();
    let want = [mask.segments(), mask.classes()];
    if shape != want {
        return Err(shape_error("pseudo_loss", &shape, &want));
    }
    let count = mask.count_ones();
    if count == 0 {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let m = tape.constant(Tensor::new(want.to_vec(), mask.to_f64())?);
    let p = tape.clamp(fused, PROB_EPS, 1.0 - PROB_EPS);
    let log_p = tape.ln(p);
    let masked = tape.mul(m, log_p)?;
    let total = tape.sum(masked);
    Ok(tape.mul_scalar(total, -1.0 / count as f64))
}

/// Segment–class pairs confident in both modalities and present in the
/// video label, ordered by `(t, c)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidPairSet {
    pub pairs: Vec<(usize, usize)>,
    pub tau_a: f64,
    pub tau_v: f64,
}

impl ValidPairSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

pub fn select_valid_pairs(
    p_audio: &ProbGrid,
    p_visual: &ProbGrid,
    label: &[bool],
    tau_a: f64,
    tau_v: f64,
) -> Result<ValidPairSet> {
    if !p_audio.same_shape(p_visual) {
        return Err(shape_error(
            "select_valid_pairs",
            &[p_audio.segments(), p_audio.classes()],
            &[p_visual.segments(), p_visual.classes()],
        ));
    }
    if label.len() != p_audio.classes() {
        return Err(shape_error("select_valid_pairs(label)", &[p_audio.classes()], &[label.len()]));
    }
    let mut pairs = Vec::new();
    for t in 0..p_audio.segments() {
        for (c, &y) in label.iter().enumerate() {
            if y && p_audio.get(t, c) > tau_a && p_visual.get(t, c) > tau_v {
                pairs.push((t, c));
            }
        }
    }
    Ok(ValidPairSet { pairs, tau_a, tau_v })
}

/// `(1/|Ω|) Σ_{(t,c)∈Ω} (1 − cos(eᵃ_t, eᵛ_t))`; a constant 0 when `Ω` is empty.
pub fn cma_loss(tape: &mut Tape, emb_audio: Var, emb_visual: Var, omega: &ValidPairSet) -> Result<Var> {
    let (sa, sv) = (tape.value(emb_audio).shape().to_vec(), tape.value(emb_visual).shape().to_vec());
    if sa != sv || sa.len() != 2 {
        return Err(shape_error("cma_loss", &sa, &sv));
    }
    if omega.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let segments = sa[0];
    let mut weights = vec![0.0; segments];
    for &(t, _) in &omega.pairs {
        if t >= segments {
            return Err(Error::invalid("cma_loss", format!("pair segment {t} out of range 0..{segments}")));
        }
        weights[t] += 1.0;
    }
    let n = omega.len() as f64;
    weights.iter_mut().for_each(|w| *w /= n);

    let prod = tape.mul(emb_audio, emb_visual)?;
    let dot = tape.sum_axis(prod, 1)?;
    let na = tape.l2_norm(emb_audio, 1)?;
    let nv = tape.l2_norm(emb_visual, 1)?;
    let norms = tape.mul(na, nv)?;
    let denom = tape.add_scalar(norms, COSINE_EPS);
    let cosine = tape.div(dot, denom)?;
    let neg = tape.mul_scalar(cosine, -1.0);
    let distance = tape.add_scalar(neg, 1.0);
    let w = tape.constant(Tensor::matrix(segments, 1, weights)?);
    let weighted = tape.mul(w, distance)?;
    Ok(tape.sum(weighted))
}

/// Multipliers on each term. The tested contract is all ones.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub avvp: f64,
    pub pseudo: f64,
    pub cma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            avvp: 1.0,
            pseudo: 1.0,
            cma: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub enable_pseudo: bool,
    pub enable_cma: bool,
    pub tau_a: f64,
    pub tau_v: f64,
    #[serde(default)]
    pub weights: LossWeights,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            enable_pseudo: true,
            enable_cma: true,
            tau_a: 0.5,
            tau_v: 0.5,
            weights: LossWeights::default(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, tau) in [("tau_a", self.tau_a), ("tau_v", self.tau_v)] {
            if !(0.0..=1.0).contains(&tau) {
                return Err(Error::InvalidConfig(format!("{name} must lie in [0, 1], got {tau}")));
            }
        }
        let w = self.weights;
        if [w.avvp, w.pseudo, w.cma].iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidConfig("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_avvp: f64,
    pub l_pseudo: f64,
    pub l_cma: f64,
    pub l_total: f64,
    /// `|Ω|`
    pub omega: usize,
    /// `‖M‖₁`
    pub mask_l1: usize,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [self.l_avvp, self.l_pseudo, self.l_cma, self.l_total]
            .iter()
            .all(|v| v.is_finite())
    }
}

fn weighted(tape: &mut Tape, term: Var, weight: f64) -> Var {
    if weight == 1.0 {
        term
    } else {
        tape.mul_scalar(term, weight)
    }
}

/// Records the total loss on the forward tape.
///
/// Disabled terms are never built; their report entries stay 0. `omega`
/// overrides pair selection (which otherwise reads the current student
/// probabilities); either way `Ω` is a constant of the step.
pub fn total_loss(
    out: &mut ForwardOutput,
    label: &[bool],
    mask: Option<&PseudoMask>,
    omega: Option<&ValidPairSet>,
    config: &LossConfig,
) -> Result<(Var, LossReport)> {
    let mut report = LossReport::default();
    let l_avvp = avvp_loss(&mut out.tape, out.p_video, label)?;
    report.l_avvp = out.tape.value(l_avvp).item()?;
    let mut total = weighted(&mut out.tape, l_avvp, config.weights.avvp);

    if config.enable_pseudo {
        let mask = mask.ok_or_else(|| Error::invalid("total_loss", "pseudo term enabled without a mask"))?;
        let fused = fuse_on_tape(&mut out.tape, out.p_audio, out.p_visual)?;
        let l = pseudo_loss(&mut out.tape, fused, &mask.grid)?;
        report.l_pseudo = out.tape.value(l).item()?;
        report.mask_l1 = mask.count();
        let l = weighted(&mut out.tape, l, config.weights.pseudo);
        total = out.tape.add(total, l)?;
    }

    if config.enable_cma {
        let selected;
        let omega = match omega {
            Some(o) => o,
            None => {
                selected = select_valid_pairs(
                    &out.audio_probs(),
                    &out.visual_probs(),
                    label,
                    config.tau_a,
                    config.tau_v,
                )?;
                &selected
            }
        };
        let l = cma_loss(&mut out.tape, out.refined_audio, out.refined_visual, omega)?;
        report.l_cma = out.tape.value(l).item()?;
        report.omega = omega.len();
        let l = weighted(&mut out.tape, l, config.weights.cma);
        total = out.tape.add(total, l)?;
    }

    report.l_total = out.tape.value(total).item()?;
    Ok((total, report))
}

/// Per-step CSV training log.
pub struct LossLog<W: io::Write> {
    writer: csv::Writer<W>,
}

pub const LOSS_LOG_HEADER: [&str; 7] = ["step", "l_avvp", "l_pseudo", "l_cma", "l_total", "omega", "mask_l1"];

impl<W: io::Write> LossLog<W> {
    pub fn new(writer: W) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(writer);
        writer.write_record(LOSS_LOG_HEADER)?;
        Ok(LossLog { writer })
    }

    pub fn record(&mut self, step: u64, r: &LossReport) -> Result<()> {
        self.writer.write_record([
            step.to_string(),
            r.l_avvp.to_string(),
            r.l_pseudo.to_string(),
            r.l_cma.to_string(),
            r.l_total.to_string(),
            r.omega.to_string(),
            r.mask_l1.to_string(),
        ])?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.writer.flush().map_err(|e| Error::io("<loss log>", e))?;
        self.writer
            .into_inner()
            .map_err(|e| Error::io("<loss log>", io::Error::other(e.to_string())))
    }
}

pub fn write_loss_log(path: &Path, history: &[LossReport]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut log = LossLog::new(io::BufWriter::new(file))?;
    for (step, r) in history.iter().enumerate() {
        log.record(step as u64, r)?;
    }
    log.finish()?;
    Ok(())
}

pub fn read_loss_log(path: &Path) -> Result<Vec<LossReport>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.iter().ne(LOSS_LOG_HEADER) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("unexpected loss log header `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            message: format!("malformed {what}"),
        };
        let f = |k: usize| rec.get(k).and_then(|s| s.parse::<f64>().ok());
        let u = |k: usize| rec.get(k).and_then(|s| s.parse::<usize>().ok());
        out.push(LossReport {
            l_avvp: f(1).ok_or_else(|| bad("l_avvp"))?,
            l_pseudo: f(2).ok_or_else(|| bad("l_pseudo"))?,
            l_cma: f(3).ok_or_else(|| bad("l_cma"))?,
            l_total: f(4).ok_or_else(|| bad("l_total"))?,
            omega: u(5).ok_or_else(|| bad("omega"))?,
            mask_l1: u(6).ok_or_else(|| bad("mask_l1"))?,
        });
    }
    Ok(out)
}
