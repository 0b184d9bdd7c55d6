//! Student network: per-modality input projections, one block of multi-head
//! self-attention and one of cross-attention per modality (residual form, no
//! positional encoding), per-modality sigmoid classifiers, and MMIL pooling
//! of segment probabilities into a video-level prediction.
//!
//! MMIL pooling, per class `c` and modality `m`:
//!
//! ```text
//! a[m, ·, c] = softmax_t( E_m · W_time )[·, c]          segment attention
//! q[m, c]    = Σ_t a[m, t, c] · P_m[t, c]               pooled probability
//! g[m, c]    = Σ_t a[m, t, c] · (E_m · W_mod)[t, c]      pooled modality logit
//! w[·, c]    = softmax_m( g[·, c] )                      modality attention
//! P_video[c] = Σ_m w[m, c] · q[m, c]
//! ```
//!
//! Both attentions are normalized, so `P_video[c]` is a convex combination
//! of the segment probabilities feeding it.

mod checkpoint;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use params::{ModelConfig, ModelParams, ParamEntry, ParamLayout};

use crate::datagen::VideoSample;
use crate::error::{Error, Result};
use crate::grid::ProbGrid;
use crate::tensor::{Gradients, Tape, Tensor, Var};

/// Probabilities are clamped to `[PROB_EPS, 1 − PROB_EPS]`.
pub const PROB_EPS: f64 = 1e-7;

/// Tape handles of every parameter group, in layout order.
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub vars: Vec<Var>,
}

struct Linear {
    weight: Var,
    bias: Var,
}

struct Attention {
    query: Var,
    key: Var,
    value: Var,
    output: Var,
}

struct Net {
    input_audio: Linear,
    input_visual: Linear,
    self_audio: Attention,
    cross_audio: Attention,
    self_visual: Attention,
    cross_visual: Attention,
    head_audio: Linear,
    head_visual: Linear,
    time_attention: Var,
    modality_attention: Var,
}

impl Net {
    /// Unpacks handles in [`ParamLayout`] order.
    fn from_bound(bound: &BoundParams) -> Net {
        let mut it = bound.vars.iter().copied();
        let mut next = || it.next().expect("layout and bound params agree");
        let mut linear = || Linear {
            weight: next(),
            bias: next(),
        };
        let input_audio = linear();
        let input_visual = linear();
        let mut attention = || Attention {
            query: next(),
            key: next(),
            value: next(),
            output: next(),
        };
        let self_audio = attention();
        let cross_audio = attention();
        let self_visual = attention();
        let cross_visual = attention();
        let mut linear = || Linear {
            weight: next(),
            bias: next(),
        };
        let head_audio = linear();
        let head_visual = linear();
        Net {
            input_audio,
            input_visual,
            self_audio,
            cross_audio,
            self_visual,
            cross_visual,
            head_audio,
            head_visual,
            time_attention: next(),
            modality_attention: next(),
        }
    }
}

/// Everything a training step needs after the student forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub tape: Tape,
    pub params: BoundParams,
    /// T × d_model
    pub refined_audio: Var,
    /// T × d_model
    pub refined_visual: Var,
    /// T × C
    pub p_audio: Var,
    /// T × C
    pub p_visual: Var,
    /// C
    pub p_video: Var,
}

impl ForwardOutput {
    pub fn grid(&self, var: Var) -> ProbGrid {
        let t = self.tape.value(var);
        ProbGrid::new(t.rows(), t.cols(), t.data().to_vec()).expect("T × C tensor")
    }

    pub fn audio_probs(&self) -> ProbGrid {
        self.grid(self.p_audio)
    }

    pub fn visual_probs(&self) -> ProbGrid {
        self.grid(self.p_visual)
    }

    pub fn video_probs(&self) -> Vec<f64> {
        self.tape.value(self.p_video).data().to_vec()
    }

    /// Gradient with respect to every parameter, flattened in layout order.
    pub fn param_gradient(&self, grads: &Gradients) -> Vec<f64> {
        self.params
            .vars
            .iter()
            .flat_map(|&v| grads.wrt(&self.tape, v))
            .collect()
    }
}

/// Tape-free snapshot of a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub refined_audio: Tensor,
    pub refined_visual: Tensor,
    pub p_audio: ProbGrid,
    pub p_visual: ProbGrid,
    pub p_video: Vec<f64>,
}

pub fn bind_params(tape: &mut Tape, params: &ModelParams) -> BoundParams {
    let vars = params
        .layout()
        .entries()
        .iter()
        .map(|e| tape.leaf(params.group_tensor(e)))
        .collect();
    BoundParams { vars }
}

fn check_sample(config: &ModelConfig, sample: &VideoSample) -> Result<()> {
    let fail = |what: &str, lhs: Vec<usize>, rhs: Vec<usize>| {
        Err(Error::ShapeMismatch {
            op: match what {
                "audio" => "forward(audio features)",
                "visual" => "forward(visual features)",
                _ => "forward(video label)",
            },
            lhs,
            rhs,
        })
    };
    let want_a = vec![config.segments, config.audio_dim];
    let want_v = vec![config.segments, config.visual_dim];
    if sample.audio.shape() != want_a.as_slice() {
        return fail("audio", sample.audio.shape().to_vec(), want_a);
    }
    if sample.visual.shape() != want_v.as_slice() {
        return fail("visual", sample.visual.shape().to_vec(), want_v);
    }
    if sample.video_label.len() != config.classes {
        return fail("label", vec![sample.video_label.len()], vec![config.classes]);
    }
    if !sample.audio.is_finite() || !sample.visual.is_finite() {
        return Err(Error::NonFinite {
            context: format!("input features of video {}", sample.id),
        });
    }
    Ok(())
}

fn linear(tape: &mut Tape, x: Var, layer: &Linear) -> Result<Var> {
    let xw = tape.matmul(x, layer.weight)?;
    tape.add(xw, layer.bias)
}

/// Multi-head scaled dot-product attention of `queries` over `keys_values`.
fn attention(tape: &mut Tape, queries: Var, keys_values: Var, w: &Attention, heads: usize) -> Result<Var> {
    let q = tape.matmul(queries, w.query)?;
    let k = tape.matmul(keys_values, w.key)?;
    let v = tape.matmul(keys_values, w.value)?;
    let d_model = tape.value(q).cols();
    let head_dim = d_model / heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice(q, 1, h * head_dim, head_dim)?;
        let kh = tape.slice(k, 1, h * head_dim, head_dim)?;
        let vh = tape.slice(v, 1, h * head_dim, head_dim)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.mul_scalar(scores, scale);
        let weights = tape.softmax(scores, 1)?;
        outs.push(tape.matmul(weights, vh)?);
    }
    let joined = if heads == 1 { outs[0] } else { tape.concat(&outs, 1)? };
    tape.matmul(joined, w.output)
}

/// Residual self- plus cross-attention refinement of both modalities.
pub fn han_forward(
    tape: &mut Tape,
    bound: &BoundParams,
    config: &ModelConfig,
    audio: Var,
    visual: Var,
) -> Result<(Var, Var)> {
    let net = Net::from_bound(bound);
    let h_a = linear(tape, audio, &net.input_audio)?;
    let h_v = linear(tape, visual, &net.input_visual)?;

    let self_a = attention(tape, h_a, h_a, &net.self_audio, config.heads)?;
    let cross_a = attention(tape, h_a, h_v, &net.cross_audio, config.heads)?;
    let self_v = attention(tape, h_v, h_v, &net.self_visual, config.heads)?;
    let cross_v = attention(tape, h_v, h_a, &net.cross_visual, config.heads)?;

    let out_a = tape.add(h_a, self_a)?;
    let out_a = tape.add(out_a, cross_a)?;
    let out_v = tape.add(h_v, self_v)?;
    let out_v = tape.add(out_v, cross_v)?;
    Ok((out_a, out_v))
}

/// Segment probabilities per modality and the pooled video prediction.
pub fn mmil_pool(
    tape: &mut Tape,
    bound: &BoundParams,
    refined_audio: Var,
    refined_visual: Var,
) -> Result<(Var, Var, Var)> {
    let net = Net::from_bound(bound);
    let mut pooled = Vec::with_capacity(2);
    let mut modality_logits = Vec::with_capacity(2);
    let mut probs = Vec::with_capacity(2);
    for (emb, head) in [
        (refined_audio, &net.head_audio),
        (refined_visual, &net.head_visual),
    ] {
        let logits = linear(tape, emb, head)?;
        let p = tape.sigmoid(logits);
        let p = tape.clamp(p, PROB_EPS, 1.0 - PROB_EPS);

        let time_logits = tape.matmul(emb, net.time_attention)?;
        let time_weights = tape.softmax(time_logits, 0)?;
        let weighted_p = tape.mul(time_weights, p)?;
        pooled.push(tape.sum_axis(weighted_p, 0)?);

        let mod_logits = tape.matmul(emb, net.modality_attention)?;
        let weighted_logits = tape.mul(time_weights, mod_logits)?;
        modality_logits.push(tape.sum_axis(weighted_logits, 0)?);
        probs.push(p);
    }
    let g = tape.concat(&modality_logits, 0)?;
    let w = tape.softmax(g, 0)?;
    let q = tape.concat(&pooled, 0)?;
    let wq = tape.mul(w, q)?;
    let video = tape.sum_axis(wq, 0)?;
    let classes = tape.value(video).cols();
    let video = tape.reshape(video, &[classes])?;
    Ok((probs[0], probs[1], video))
}

/// Student forward pass recorded on a fresh tape.
pub fn forward(params: &ModelParams, sample: &VideoSample) -> Result<ForwardOutput> {
    let config = params.config();
    check_sample(config, sample)?;
    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, params);
    let audio = tape.constant(sample.audio.clone());
    let visual = tape.constant(sample.visual.clone());
    let (refined_audio, refined_visual) = han_forward(&mut tape, &bound, config, audio, visual)?;
    let (p_audio, p_visual, p_video) = mmil_pool(&mut tape, &bound, refined_audio, refined_visual)?;
    Ok(ForwardOutput {
        tape,
        params: bound,
        refined_audio,
        refined_visual,
        p_audio,
        p_visual,
        p_video,
    })
}

/// Forward pass whose tape is discarded; no gradient state survives.
pub fn predict(params: &ModelParams, sample: &VideoSample) -> Result<Prediction> {
    let out = forward(params, sample)?;
    Ok(Prediction {
        refined_audio: out.tape.value(out.refined_audio).clone(),
        refined_visual: out.tape.value(out.refined_visual).clone(),
        p_audio: out.audio_probs(),
        p_visual: out.visual_probs(),
        p_video: out.video_probs(),
    })
}

/// Elementwise mean of two probability grids.
pub fn fuse_probs(a: &ProbGrid, b: &ProbGrid) -> Result<ProbGrid> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch {
            op: "fuse_probs",
            lhs: vec![a.segments(), a.classes()],
            rhs: vec![b.segments(), b.classes()],
        });
    }
    let values = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| 0.5 * (x + y))
        .collect();
    ProbGrid::new(a.segments(), a.classes(), values)
}

/// Fused student prediction on the tape: `(P_a + P_v) / 2`.
pub fn fuse_on_tape(tape: &mut Tape, p_audio: Var, p_visual: Var) -> Result<Var> {
    let sum = tape.add(p_audio, p_visual)?;
    Ok(tape.mul_scalar(sum, 0.5))
}
