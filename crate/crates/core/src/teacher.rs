//! EMA teacher and the segment-level pseudo masks derived from it.
//!
//! The teacher is a copy of the student whose parameters track the student
//! as an exponential moving average: `θ′ ← α·θ′ + (1 − α)·θ`. Its fused
//! audio/visual predictions are turned into binary masks of trusted
//! segment–class pairs, either by a per-class adaptive threshold
//! (`τ_c = γ · mean_t P̃[t, c]`, keep `P̃ ≥ τ_c`) or by keeping the `k`
//! highest-scoring segments of each class.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::VideoSample;
use crate::error::{Error, Result};
use crate::grid::{BinaryGrid, ProbGrid};
use crate::model::{fuse_probs, predict, ModelParams};
use crate::textio::{read_file, write_file, LineReader};

#[derive(Clone, Debug, PartialEq)]
pub struct TeacherState {
    params: ModelParams,
    alpha: f64,
    update_count: u64,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidConfig(format!(
            "EMA momentum must lie in [0, 1), got {alpha}"
        )));
    }
    Ok(())
}

impl TeacherState {
    /// Starts the teacher as an exact copy of the student.
    pub fn new(student: &ModelParams, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(TeacherState {
            params: student.clone(),
            alpha,
            update_count: 0,
        })
    }

    pub fn restore(params: ModelParams, alpha: f64, update_count: u64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(TeacherState {
            params,
            alpha,
            update_count,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn update_count(&self) -> u64 {
        self.update_count
    }

    pub fn ema_update(&mut self, student: &ModelParams) -> Result<()> {
        if !self.params.same_layout(student) {
            return Err(Error::ShapeMismatch {
                op: "ema_update",
                lhs: vec![self.params.len()],
                rhs: vec![student.len()],
            });
        }
        let a = self.alpha;
        for (t, &s) in self.params.values_mut().iter_mut().zip(student.values()) {
            *t = a * *t + (1.0 - a) * s;
        }
        self.update_count += 1;
        Ok(())
    }

    /// Fused teacher prediction `(P̃_a + P̃_v) / 2`.
    pub fn predict(&self, sample: &VideoSample) -> Result<ProbGrid> {
        let p = predict(&self.params, sample)?;
        fuse_probs(&p.p_audio, &p.p_visual)
    }
}

/// How a mask was produced.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskRule {
    AdaptiveThreshold { gamma: f64 },
    TopK { k: usize },
}

impl MaskRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            MaskRule::AdaptiveThreshold { gamma } if !(gamma > 0.0) || !gamma.is_finite() => Err(
                Error::InvalidConfig(format!("gamma must be positive, got {gamma}")),
            ),
            MaskRule::TopK { k: 0 } => Err(Error::InvalidConfig("k must be at least 1".into())),
            _ => Ok(()),
        }
    }

    /// Applies the rule. With `label` given, classes absent from the video
    /// label are masked out entirely.
    pub fn apply(&self, scores: &ProbGrid, label: Option<&[bool]>) -> Result<PseudoMask> {
        match *self {
            MaskRule::AdaptiveThreshold { gamma } => adaptive_threshold_mask(scores, gamma, label),
            MaskRule::TopK { k } => topk_mask(scores, k, label),
        }
    }

    fn describe(&self) -> String {
        match self {
            MaskRule::AdaptiveThreshold { gamma } => format!("adaptive gamma={gamma}"),
            MaskRule::TopK { k } => format!("topk k={k}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoMask {
    pub grid: BinaryGrid,
    pub rule: MaskRule,
}

impl PseudoMask {
    /// `‖M‖₁`
    pub fn count(&self) -> usize {
        self.grid.count_ones()
    }
}

fn check_label(scores: &ProbGrid, label: Option<&[bool]>) -> Result<()> {
    match label {
        Some(l) if l.len() != scores.classes() => Err(Error::ShapeMismatch {
            op: "pseudo_mask(label)",
            lhs: vec![scores.classes()],
            rhs: vec![l.len()],
        }),
        _ => Ok(()),
    }
}

fn class_enabled(label: Option<&[bool]>, c: usize) -> bool {
    label.is_none_or(|l| l[c])
}

pub fn adaptive_threshold_mask(scores: &ProbGrid, gamma: f64, label: Option<&[bool]>) -> Result<PseudoMask> {
    let rule = MaskRule::AdaptiveThreshold { gamma };
    rule.validate()?;
    if scores.segments() == 0 {
        return Err(Error::invalid("adaptive_threshold_mask", "video has no segments"));
    }
    check_label(scores, label)?;
    let (t_len, classes) = (scores.segments(), scores.classes());
    let mut grid = BinaryGrid::zeros(t_len, classes);
    for c in 0..classes {
        if !class_enabled(label, c) {
            continue;
        }
        let mean = (0..t_len).map(|t| scores.get(t, c)).sum::<f64>() / t_len as f64;
        let tau = gamma * mean;
        for t in 0..t_len {
            if scores.get(t, c) >= tau {
                grid.set(t, c, true);
            }
        }
    }
    Ok(PseudoMask { grid, rule })
}

/// Keeps the `min(k, T)` highest scores per enabled class; equal scores go
/// to the earlier segment.
pub fn topk_mask(scores: &ProbGrid, k: usize, label: Option<&[bool]>) -> Result<PseudoMask> {
    let rule = MaskRule::TopK { k };
    rule.validate()?;
    check_label(scores, label)?;
    let (t_len, classes) = (scores.segments(), scores.classes());
    let mut grid = BinaryGrid::zeros(t_len, classes);
    let mut order: Vec<usize> = Vec::with_capacity(t_len);
    for c in 0..classes {
        if !class_enabled(label, c) {
            continue;
        }
        order.clear();
        order.extend(0..t_len);
        order.sort_by(|&a, &b| scores.get(b, c).total_cmp(&scores.get(a, c)).then(a.cmp(&b)));
        for &t in order.iter().take(k) {
            grid.set(t, c, true);
        }
    }
    Ok(PseudoMask { grid, rule })
}

const MASKS_MAGIC: &str = "avvp-masks";
const MASKS_VERSION: u32 = 1;

/// One block per video: `video <id> <T> <C> <rule>` followed by T rows of C
/// `0`/`1` characters.
pub fn write_masks(path: &Path, masks: &[(String, PseudoMask)]) -> Result<()> {
    let mut out = format!("{MASKS_MAGIC} v{MASKS_VERSION}\n");
    for (id, m) in masks {
        let _ = writeln!(
            out,
            "video {id} {} {} {}",
            m.grid.segments(),
            m.grid.classes(),
            m.rule.describe()
        );
        out.push_str(&m.grid.to_string());
    }
    write_file(path, out.as_bytes())
}

pub fn read_masks(path: &Path) -> Result<Vec<(String, PseudoMask)>> {
    let text = read_file(path)?;
    let mut r = LineReader::new(path, &text);
    let header = r.next("header")?;
    if header != format!("{MASKS_MAGIC} v{MASKS_VERSION}") {
        return Err(r.error("not a mask file"));
    }
    let mut out = Vec::new();
    while let Some(line) = r.peek_next() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 || f[0] != "video" {
            return Err(r.error("expected `video <id> <T> <C> <rule> <param>`"));
        }
        let segments: usize = r.parse(f[2], "segment count")?;
        let classes: usize = r.parse(f[3], "class count")?;
        let rule = match (f[4], f[5].split_once('=')) {
            ("adaptive", Some(("gamma", g))) => MaskRule::AdaptiveThreshold {
                gamma: r.parse(g, "gamma")?,
            },
            ("topk", Some(("k", k))) => MaskRule::TopK {
                k: r.parse(k, "k")?,
            },
            _ => return Err(r.error(format!("unknown mask rule `{} {}`", f[4], f[5]))),
        };
        let id = f[1].to_string();
        let grid = r.grid(segments, classes, "mask")?;
        out.push((id, PseudoMask { grid, rule }));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn column(values: &[f64]) -> ProbGrid {
        ProbGrid::new(values.len(), 1, values.to_vec()).unwrap()
    }

    fn small_params(seed: u64) -> ModelParams {
        ModelParams::init(&ModelConfig {
            d_model: 8,
            heads: 2,
            seed,
            ..ModelConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn ema_arithmetic() {
        let cfg = ModelConfig {
            d_model: 4,
            heads: 1,
            ..ModelConfig::default()
        };
        let zeros = ModelParams::from_values(&cfg, vec![0.0; ModelParams::init(&cfg).unwrap().len()]).unwrap();
        let ones = ModelParams::from_values(&cfg, vec![1.0; zeros.len()]).unwrap();
        let mut t = TeacherState::new(&zeros, 0.9).unwrap();
        t.ema_update(&ones).unwrap();
        assert!(t.params().values().iter().all(|&v| (v - 0.1).abs() < 1e-15));
        assert_eq!(t.update_count(), 1);

        let mut t = TeacherState::new(&small_params(1), 0.0).unwrap();
        let target = small_params(2);
        t.ema_update(&target).unwrap();
        assert_eq!(t.params().values(), target.values());
    }

    #[test]
    fn ema_rejects_bad_alpha_and_layout() {
        let p = small_params(1);
        assert!(TeacherState::new(&p, 1.0).is_err());
        assert!(TeacherState::new(&p, -0.1).is_err());
        let other = ModelParams::init(&ModelConfig::default()).unwrap();
        let mut t = TeacherState::new(&p, 0.5).unwrap();
        assert!(t.ema_update(&other).is_err());
        assert_eq!(t.update_count(), 0);
    }

    #[test]
    fn adaptive_examples() {
        let m = adaptive_threshold_mask(&column(&[0.1, 0.2, 0.3, 0.4]), 1.0, Some(&[true])).unwrap();
        assert_eq!(m.grid.column(0), vec![false, false, true, true]);
        let m = adaptive_threshold_mask(&column(&[0.3; 4]), 1.0, Some(&[true])).unwrap();
        assert_eq!(m.count(), 4);
        let m = adaptive_threshold_mask(&column(&[0.1, 0.9, 0.3, 0.4]), 1.0, Some(&[false])).unwrap();
        assert_eq!(m.count(), 0);
        let m = adaptive_threshold_mask(&column(&[0.1, 0.9]), 1.0, None).unwrap();
        assert_eq!(m.count(), 1);
    }

    #[test]
    fn adaptive_errors() {
        let empty = ProbGrid::new(0, 2, vec![]).unwrap();
        assert!(adaptive_threshold_mask(&empty, 1.0, None).is_err());
        assert!(adaptive_threshold_mask(&column(&[0.5]), 0.0, None).is_err());
        assert!(adaptive_threshold_mask(&column(&[0.5]), 1.0, Some(&[true, false])).is_err());
    }

    #[test]
    fn topk_examples() {
        let m = topk_mask(&column(&[0.9, 0.1, 0.8]), 2, Some(&[true])).unwrap();
        assert_eq!(m.grid.column(0), vec![true, false, true]);
        let m = topk_mask(&column(&[0.9, 0.1, 0.8]), 5, Some(&[true])).unwrap();
        assert_eq!(m.count(), 3);
        let m = topk_mask(&column(&[0.5, 0.5, 0.2]), 1, Some(&[true])).unwrap();
        assert_eq!(m.grid.column(0), vec![true, false, false]);
        let m = topk_mask(&column(&[0.5, 0.5, 0.2]), 1, Some(&[false])).unwrap();
        assert_eq!(m.count(), 0);
        assert!(topk_mask(&column(&[0.5]), 0, None).is_err());
    }

    #[test]
    fn teacher_matches_student_when_equal() {
        let student = small_params(4);
        let teacher = TeacherState::new(&student, 0.99).unwrap();
        let ds = crate::datagen::generate(&crate::datagen::GenConfig {
            n_videos: 1,
            ..Default::default()
        })
        .unwrap();
        let s = &ds.videos[0];
        let p = predict(&student, s).unwrap();
        let fused = fuse_probs(&p.p_audio, &p.p_visual).unwrap();
        assert_eq!(teacher.predict(s).unwrap(), fused);
    }

    #[test]
    fn mask_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        let scores = ProbGrid::from_rows(&[&[0.9, 0.2], &[0.1, 0.7], &[0.5, 0.6]]).unwrap();
        let masks = vec![
            ("a".to_string(), topk_mask(&scores, 2, Some(&[true, false])).unwrap()),
            ("b".to_string(), adaptive_threshold_mask(&scores, 1.5, None).unwrap()),
        ];
        write_masks(&path, &masks).unwrap();
        assert_eq!(read_masks(&path).unwrap(), masks);
    }
}
