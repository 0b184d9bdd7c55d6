//! Synthetic videos with planted audio, visual and audio-visual events.
//!
//! Each class owns one prototype direction per modality. A segment's feature
//! vector is the sum of the prototypes of the classes active in it for that
//! modality, plus isotropic Gaussian noise of scale `noise`. The prototypes
//! depend only on the seed; each video draws from its own ChaCha stream
//! keyed by its id, so any sub-range of ids can be generated independently.

mod io;

pub use io::{load_dataset, save_dataset, FloatEncoding};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::BinaryGrid;
use crate::metrics::SegmentLabels;
use crate::tensor::Tensor;

/// One video: segment features for both modalities and its labels.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoSample {
    pub id: String,
    /// T × d_a
    pub audio: Tensor,
    /// T × d_v
    pub visual: Tensor,
    /// Weak label used for training.
    pub video_label: Vec<bool>,
    /// Segment-level ground truth; only evaluation reads it.
    pub segment_gt: Option<SegmentLabels>,
}

impl VideoSample {
    pub fn segments(&self) -> usize {
        self.audio.rows()
    }

    pub fn classes(&self) -> usize {
        self.video_label.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Error::Mismatch(format!("video {}: {msg}", self.id));
        if self.audio.rank() != 2 || self.visual.rank() != 2 {
            return Err(bad("features must be matrices".into()));
        }
        if self.audio.rows() != self.visual.rows() {
            return Err(bad(format!(
                "audio has {} segments, visual has {}",
                self.audio.rows(),
                self.visual.rows()
            )));
        }
        if let Some(gt) = &self.segment_gt {
            if gt.segments() != self.segments() || gt.classes() != self.classes() {
                return Err(bad("segment labels do not match feature/label dims".into()));
            }
            if gt.video_label() != self.video_label {
                return Err(bad("video label is not the OR of its segment labels".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub segments: usize,
    pub classes: usize,
    pub audio_dim: usize,
    pub visual_dim: usize,
    pub videos: Vec<VideoSample>,
}

impl Dataset {
    pub fn new(
        segments: usize,
        classes: usize,
        audio_dim: usize,
        visual_dim: usize,
        videos: Vec<VideoSample>,
    ) -> Result<Self> {
        for v in &videos {
            v.validate()?;
            if v.segments() != segments
                || v.classes() != classes
                || v.audio.cols() != audio_dim
                || v.visual.cols() != visual_dim
            {
                return Err(Error::Mismatch(format!(
                    "video {} does not match dataset dims T={segments} C={classes} d_a={audio_dim} d_v={visual_dim}",
                    v.id
                )));
            }
        }
        Ok(Dataset {
            segments,
            classes,
            audio_dim,
            visual_dim,
            videos,
        })
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    AudioOnly,
    VisualOnly,
    AudioVisual,
}

impl EventKind {
    pub fn audible(self) -> bool {
        matches!(self, EventKind::AudioOnly | EventKind::AudioVisual)
    }

    pub fn visible(self) -> bool {
        matches!(self, EventKind::VisualOnly | EventKind::AudioVisual)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PlantedEvent {
    pub class: usize,
    pub onset: usize,
    pub offset: usize,
    pub kind: EventKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_videos: usize,
    /// Id of the first generated video; lets a held-out split share the
    /// training split's prototypes.
    pub first_id: usize,
    pub segments: usize,
    pub classes: usize,
    pub audio_dim: usize,
    pub visual_dim: usize,
    pub min_events: usize,
    pub max_events: usize,
    pub min_event_len: usize,
    pub max_event_len: usize,
    /// Sampling weights for audio-only, visual-only and audio-visual events.
    pub mixture: [f64; 3],
    pub noise: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_videos: 200,
            first_id: 0,
            segments: 10,
            classes: 5,
            audio_dim: 16,
            visual_dim: 16,
            min_events: 1,
            max_events: 3,
            min_event_len: 2,
            max_event_len: 6,
            mixture: [0.3, 0.3, 0.4],
            noise: 0.3,
            seed: 1,
        }
    }
}

const PLACEMENT_ATTEMPTS: usize = 32;
const PROTOTYPE_STREAM: u64 = u64::MAX;

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.segments == 0 || self.classes == 0 {
            return fail("segments and classes must be at least 1");
        }
        if self.audio_dim == 0 || self.visual_dim == 0 {
            return fail("feature dims must be at least 1");
        }
        if self.min_events > self.max_events {
            return fail("min_events exceeds max_events");
        }
        if self.min_event_len == 0 || self.min_event_len > self.max_event_len {
            return fail("event length range must satisfy 1 <= min <= max");
        }
        if self.mixture.iter().any(|w| !(*w >= 0.0)) {
            return fail("mixture weights must be non-negative");
        }
        if (self.mixture.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return fail("mixture weights must sum to 1");
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return fail("noise must be finite and non-negative");
        }
        Ok(())
    }

    /// Audio and visual class prototypes used by [`generate`].
    pub fn prototypes(&self) -> (Tensor, Tensor) {
        (
            prototypes(self.seed, self.classes, self.audio_dim, AUDIO_SALT),
            prototypes(self.seed, self.classes, self.visual_dim, VISUAL_SALT),
        )
    }

    fn event_len_range(&self) -> (usize, usize) {
        let hi = self.max_event_len.min(self.segments);
        (self.min_event_len.min(hi), hi)
    }
}

/// Class prototypes: rows of a `classes × dim` matrix with unit norm,
/// mutually orthogonal whenever `classes ≤ dim`.
fn prototypes(seed: u64, classes: usize, dim: usize, modality_salt: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ modality_salt);
    rng.set_stream(PROTOTYPE_STREAM);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(classes);
    while rows.len() < classes {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        if rows.len() < dim {
            for r in &rows {
                let dot: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(r).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-6 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        rows.push(v);
    }
    Tensor::matrix(classes, dim, rows.concat()).expect("classes × dim")
}

const AUDIO_SALT: u64 = 0xa0d1_0000_0000_0001;
const VISUAL_SALT: u64 = 0x0515_0000_0000_0002;

pub fn generate(config: &GenConfig) -> Result<Dataset> {
    Ok(generate_with_events(config)?.0)
}

/// Like [`generate`], also returning the events planted in each video.
pub fn generate_with_events(config: &GenConfig) -> Result<(Dataset, Vec<Vec<PlantedEvent>>)> {
    config.validate()?;
    let (audio_protos, visual_protos) = config.prototypes();

    let mut videos = Vec::with_capacity(config.n_videos);
    let mut all_events = Vec::with_capacity(config.n_videos);
    for i in 0..config.n_videos {
        let id = config.first_id + i;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(id as u64);
        let events = plant_events(config, &mut rng);
        let (audio_gt, visual_gt) = event_grids(config, &events);
        let audio = render(&audio_gt, &audio_protos, config.noise, &mut rng);
        let visual = render(&visual_gt, &visual_protos, config.noise, &mut rng);
        let gt = SegmentLabels::new(audio_gt, visual_gt)?;
        videos.push(VideoSample {
            id: format!("vid{id:05}"),
            audio,
            visual,
            video_label: gt.video_label(),
            segment_gt: Some(gt),
        });
        all_events.push(events);
    }
    let ds = Dataset::new(
        config.segments,
        config.classes,
        config.audio_dim,
        config.visual_dim,
        videos,
    )?;
    Ok((ds, all_events))
}

fn sample_kind(mixture: &[f64; 3], rng: &mut impl Rng) -> EventKind {
    let u: f64 = rng.random();
    if u < mixture[0] {
        EventKind::AudioOnly
    } else if u < mixture[0] + mixture[1] {
        EventKind::VisualOnly
    } else {
        EventKind::AudioVisual
    }
}

/// Two events of one class collide in a modality they share if their spans
/// overlap or touch, since merging runs could not tell them apart.
fn collides(a: &PlantedEvent, b: &PlantedEvent) -> bool {
    let shares_modality = (a.kind.audible() && b.kind.audible()) || (a.kind.visible() && b.kind.visible());
    a.class == b.class && shares_modality && a.onset <= b.offset && b.onset <= a.offset
}

fn plant_events(config: &GenConfig, rng: &mut impl Rng) -> Vec<PlantedEvent> {
    let n = rng.random_range(config.min_events..=config.max_events);
    let (min_len, max_len) = config.event_len_range();
    let mut events: Vec<PlantedEvent> = Vec::with_capacity(n);
    for _ in 0..n {
        for _ in 0..PLACEMENT_ATTEMPTS {
            let len = rng.random_range(min_len..=max_len);
            let onset = rng.random_range(0..=config.segments - len);
            let candidate = PlantedEvent {
                class: rng.random_range(0..config.classes),
                onset,
                offset: onset + len,
                kind: sample_kind(&config.mixture, rng),
            };
            if events.iter().all(|e| !collides(e, &candidate)) {
                events.push(candidate);
                break;
            }
        }
    }
    events
}

fn event_grids(config: &GenConfig, events: &[PlantedEvent]) -> (BinaryGrid, BinaryGrid) {
    let mut audio = BinaryGrid::zeros(config.segments, config.classes);
    let mut visual = BinaryGrid::zeros(config.segments, config.classes);
    for e in events {
        for t in e.onset..e.offset {
            if e.kind.audible() {
                audio.set(t, e.class, true);
            }
            if e.kind.visible() {
                visual.set(t, e.class, true);
            }
        }
    }
    (audio, visual)
}

fn render(gt: &BinaryGrid, protos: &Tensor, noise: f64, rng: &mut impl Rng) -> Tensor {
    let dim = protos.cols();
    let mut data = Vec::with_capacity(gt.segments() * dim);
    for t in 0..gt.segments() {
        for k in 0..dim {
            let signal: f64 = (0..gt.classes())
                .filter(|&c| gt.get(t, c))
                .map(|c| protos.at(c, k))
                .sum();
            let eps: f64 = StandardNormal.sample(rng);
            data.push(signal + noise * eps);
        }
    }
    Tensor::matrix(gt.segments(), dim, data).expect("T × d")
}
