//! Segment-level and event-level F1 for audio, visual and audio-visual
//! events, with the Type@AV and Event@AV aggregates.
//!
//! Per-video F1 scores are averaged across videos. A video with neither
//! predicted nor ground-truth positives of a type scores 1 for that type.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{BinaryGrid, ProbGrid};
use crate::textio::{read_file, write_file, LineReader};

pub const DEFAULT_DECISION_THRESHOLD: f64 = 0.5;
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Audio,
    Visual,
    AudioVisual,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Audio, Modality::Visual, Modality::AudioVisual];
}

/// Per-modality segment labels. The audio-visual grid is always derived as
/// the elementwise AND of the other two.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentLabels {
    audio: BinaryGrid,
    visual: BinaryGrid,
}

impl SegmentLabels {
    pub fn new(audio: BinaryGrid, visual: BinaryGrid) -> Result<Self> {
        if !audio.same_shape(&visual) {
            return Err(Error::ShapeMismatch {
                op: "segment_labels",
                lhs: vec![audio.segments(), audio.classes()],
                rhs: vec![visual.segments(), visual.classes()],
            });
        }
        Ok(SegmentLabels { audio, visual })
    }

    pub fn empty(segments: usize, classes: usize) -> Self {
        SegmentLabels {
            audio: BinaryGrid::zeros(segments, classes),
            visual: BinaryGrid::zeros(segments, classes),
        }
    }

    pub fn audio(&self) -> &BinaryGrid {
        &self.audio
    }

    pub fn visual(&self) -> &BinaryGrid {
        &self.visual
    }

    pub fn audio_visual(&self) -> BinaryGrid {
        self.audio
            .and(&self.visual)
            .expect("audio and visual grids share a shape")
    }

    pub fn grid(&self, modality: Modality) -> BinaryGrid {
        match modality {
            Modality::Audio => self.audio.clone(),
            Modality::Visual => self.visual.clone(),
            Modality::AudioVisual => self.audio_visual(),
        }
    }

    pub fn segments(&self) -> usize {
        self.audio.segments()
    }

    pub fn classes(&self) -> usize {
        self.audio.classes()
    }

    /// Video-level label: class active in any segment of either modality.
    pub fn video_label(&self) -> Vec<bool> {
        (0..self.classes())
            .map(|c| self.audio.any_in_class(c) || self.visual.any_in_class(c))
            .collect()
    }
}

/// Half-open `[onset, offset)` run of positive segments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EventSpan {
    pub class: usize,
    pub onset: usize,
    pub offset: usize,
    pub modality: Modality,
}

impl EventSpan {
    pub fn len(&self) -> usize {
        self.offset - self.onset
    }

    pub fn is_empty(&self) -> bool {
        self.offset == self.onset
    }
}

/// 1 where `p ≥ threshold`.
pub fn binarize(p: &ProbGrid, threshold: f64) -> BinaryGrid {
    let cells = p.values().iter().map(|&v| v >= threshold).collect();
    BinaryGrid::new(p.segments(), p.classes(), cells).expect("shape carried over")
}

pub fn binarize_predictions(audio: &ProbGrid, visual: &ProbGrid, threshold: f64) -> Result<SegmentLabels> {
    SegmentLabels::new(binarize(audio, threshold), binarize(visual, threshold))
}

/// Clears every class whose video-level prediction is off, in both
/// modalities.
pub fn gate_by_video(labels: &SegmentLabels, video: &[bool]) -> Result<SegmentLabels> {
    if video.len() != labels.classes() {
        return Err(Error::ShapeMismatch {
            op: "gate_by_video",
            lhs: vec![labels.classes()],
            rhs: vec![video.len()],
        });
    }
    let gate = |g: &BinaryGrid| {
        let mut out = g.clone();
        for t in 0..g.segments() {
            for (c, &on) in video.iter().enumerate() {
                if !on {
                    out.set(t, c, false);
                }
            }
        }
        out
    };
    SegmentLabels::new(gate(labels.audio()), gate(labels.visual()))
}

/// Maximal runs of `true` become spans.
pub fn merge_events(column: &[bool], class: usize, modality: Modality) -> Vec<EventSpan> {
    let mut spans = Vec::new();
    let mut onset = None;
    for (t, &on) in column.iter().enumerate() {
        match (on, onset) {
            (true, None) => onset = Some(t),
            (false, Some(s)) => {
                spans.push(EventSpan {
                    class,
                    onset: s,
                    offset: t,
                    modality,
                });
                onset = None;
            }
            _ => {}
        }
    }
    if let Some(s) = onset {
        spans.push(EventSpan {
            class,
            onset: s,
            offset: column.len(),
            modality,
        });
    }
    spans
}

/// Inverse of [`merge_events`] for a column of length `segments`.
pub fn spans_to_column(spans: &[EventSpan], segments: usize) -> Vec<bool> {
    let mut column = vec![false; segments];
    for s in spans {
        column[s.onset..s.offset].iter_mut().for_each(|c| *c = true);
    }
    column
}

/// All event spans of a grid, class by class.
pub fn grid_events(grid: &BinaryGrid, modality: Modality) -> Vec<EventSpan> {
    (0..grid.classes())
        .flat_map(|c| merge_events(&grid.column(c), c, modality))
        .collect()
}

/// Intersection over union of the segment index sets.
pub fn span_iou(a: &EventSpan, b: &EventSpan) -> f64 {
    let inter = a.offset.min(b.offset).saturating_sub(a.onset.max(b.onset));
    let union = a.len() + b.len() - inter;
    if union == 0 {
        return 0.0;
    }
    inter as f64 / union as f64
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
}

impl Counts {
    /// `2TP / (2TP + FP + FN)`, or 1 when nothing was predicted or expected.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.true_pos + self.false_pos + self.false_neg;
        if denom == 0 {
            return 1.0;
        }
        (2 * self.true_pos) as f64 / denom as f64
    }
}

impl std::ops::Add for Counts {
    type Output = Counts;
    fn add(self, rhs: Counts) -> Counts {
        Counts {
            true_pos: self.true_pos + rhs.true_pos,
            false_pos: self.false_pos + rhs.false_pos,
            false_neg: self.false_neg + rhs.false_neg,
        }
    }
}

pub fn segment_counts(pred: &BinaryGrid, gt: &BinaryGrid) -> Result<Counts> {
    if !pred.same_shape(gt) {
        return Err(Error::ShapeMismatch {
            op: "segment_counts",
            lhs: vec![pred.segments(), pred.classes()],
            rhs: vec![gt.segments(), gt.classes()],
        });
    }
    let mut counts = Counts::default();
    for (&p, &g) in pred.cells().iter().zip(gt.cells()) {
        match (p, g) {
            (true, true) => counts.true_pos += 1,
            (true, false) => counts.false_pos += 1,
            (false, true) => counts.false_neg += 1,
            (false, false) => {}
        }
    }
    Ok(counts)
}

pub fn segment_f1(pred: &SegmentLabels, gt: &SegmentLabels, modality: Modality) -> Result<f64> {
    Ok(segment_counts(&pred.grid(modality), &gt.grid(modality))?.f1())
}

/// One-to-one matching within each (class, modality) group: candidate pairs
/// with IoU above the threshold are taken greedily in descending IoU order.
pub fn event_counts(pred: &[EventSpan], gt: &[EventSpan], iou_threshold: f64) -> Counts {
    let mut candidates = Vec::new();
    for (pi, p) in pred.iter().enumerate() {
        for (gi, g) in gt.iter().enumerate() {
            if p.class != g.class || p.modality != g.modality {
                continue;
            }
            let iou = span_iou(p, g);
            if iou > iou_threshold {
                candidates.push((iou, pi, gi));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut pred_used = vec![false; pred.len()];
    let mut gt_used = vec![false; gt.len()];
    let mut true_pos = 0;
    for (_, pi, gi) in candidates {
        if !pred_used[pi] && !gt_used[gi] {
            pred_used[pi] = true;
            gt_used[gi] = true;
            true_pos += 1;
        }
    }
    Counts {
        true_pos,
        false_pos: pred.len() - true_pos,
        false_neg: gt.len() - true_pos,
    }
}

pub fn event_f1(pred: &[EventSpan], gt: &[EventSpan], iou_threshold: f64) -> f64 {
    event_counts(pred, gt, iou_threshold).f1()
}

/// The five numbers reported at one evaluation level, each in `[0, 1]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LevelScores {
    pub audio: f64,
    pub visual: f64,
    pub audio_visual: f64,
    pub type_av: f64,
    pub event_av: f64,
}

impl LevelScores {
    fn from_counts(a: Counts, v: Counts, av: Counts) -> Self {
        let (fa, fv, fav) = (a.f1(), v.f1(), av.f1());
        LevelScores {
            audio: fa,
            visual: fv,
            audio_visual: fav,
            type_av: (fa + fv + fav) / 3.0,
            event_av: (a + v).f1(),
        }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [
            self.audio,
            self.visual,
            self.audio_visual,
            self.type_av,
            self.event_av,
        ]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VideoScores {
    pub segment: LevelScores,
    pub event: LevelScores,
}

pub fn score_video(pred: &SegmentLabels, gt: &SegmentLabels, iou_threshold: f64) -> Result<VideoScores> {
    let mut seg = [Counts::default(); 3];
    let mut evt = [Counts::default(); 3];
    for (i, m) in Modality::ALL.into_iter().enumerate() {
        let (pg, gg) = (pred.grid(m), gt.grid(m));
        seg[i] = segment_counts(&pg, &gg)?;
        evt[i] = event_counts(&grid_events(&pg, m), &grid_events(&gg, m), iou_threshold);
    }
    Ok(VideoScores {
        segment: LevelScores::from_counts(seg[0], seg[1], seg[2]),
        event: LevelScores::from_counts(evt[0], evt[1], evt[2]),
    })
}

/// Video-averaged segment- and event-level scores.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub segment: LevelScores,
    pub event: LevelScores,
    pub videos: usize,
}

pub const REPORT_COLUMNS: [&str; 5] = ["A", "V", "AV", "Type@AV", "Event@AV"];

pub fn aggregate(scores: &[VideoScores]) -> Result<MetricReport> {
    if scores.is_empty() {
        return Err(Error::invalid("aggregate", "no videos to evaluate"));
    }
    let n = scores.len() as f64;
    let mean = |f: &dyn Fn(&VideoScores) -> LevelScores| {
        let mut acc = [0.0; 5];
        for s in scores {
            for (a, v) in acc.iter_mut().zip(f(s).as_array()) {
                *a += v;
            }
        }
        LevelScores {
            audio: acc[0] / n,
            visual: acc[1] / n,
            audio_visual: acc[2] / n,
            type_av: acc[3] / n,
            event_av: acc[4] / n,
        }
    };
    Ok(MetricReport {
        segment: mean(&|s| s.segment),
        event: mean(&|s| s.event),
        videos: scores.len(),
    })
}

/// Scores every (prediction, ground truth) pair and averages.
pub fn evaluate_labels(pairs: &[(&SegmentLabels, &SegmentLabels)], iou_threshold: f64) -> Result<MetricReport> {
    let scores = pairs
        .iter()
        .map(|(p, g)| score_video(p, g, iou_threshold))
        .collect::<Result<Vec<_>>>()?;
    aggregate(&scores)
}

impl MetricReport {
    /// Aligned percentage table, one row per level.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<10}", "level");
        for c in REPORT_COLUMNS {
            let _ = write!(out, "{c:>10}");
        }
        out.push('\n');
        for (name, level) in [("segment", &self.segment), ("event", &self.event)] {
            let _ = write!(out, "{name:<10}");
            for v in level.as_array() {
                let _ = write!(out, "{:>10.1}", 100.0 * v);
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["level"];
        header.extend(REPORT_COLUMNS);
        w.write_record(&header)?;
        for (name, level) in [("segment", &self.segment), ("event", &self.event)] {
            let mut row = vec![name.to_string()];
            row.extend(level.as_array().iter().map(|v| format!("{:.4}", 100.0 * v)));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

const LABELS_MAGIC: &str = "avvp-labels";
const LABELS_VERSION: u32 = 1;

/// Writes per-video A, V and derived AV grids.
pub fn write_labels(path: &Path, records: &[(String, SegmentLabels)]) -> Result<()> {
    let mut out = format!("{LABELS_MAGIC} v{LABELS_VERSION}\n");
    for (id, labels) in records {
        let _ = writeln!(out, "video {id} {} {}", labels.segments(), labels.classes());
        for (tag, grid) in [
            ("A", labels.audio.clone()),
            ("V", labels.visual.clone()),
            ("AV", labels.audio_visual()),
        ] {
            out.push_str(tag);
            out.push('\n');
            out.push_str(&grid.to_string());
        }
    }
    write_file(path, out.as_bytes())
}

pub fn read_labels(path: &Path) -> Result<Vec<(String, SegmentLabels)>> {
    let text = read_file(path)?;
    let mut r = LineReader::new(path, &text);
    let header = r.next("header")?;
    let expected = format!("{LABELS_MAGIC} v{LABELS_VERSION}");
    if header != expected {
        return match header.strip_prefix(&format!("{LABELS_MAGIC} v")) {
            Some(v) => Err(Error::Version {
                found: r.parse(v, "version")?,
                expected: LABELS_VERSION,
            }),
            None => Err(r.error(format!("expected header `{expected}`"))),
        };
    }
    let mut records = Vec::new();
    while let Some(line) = r.peek_next() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 || fields[0] != "video" {
            return Err(r.error("expected `video <id> <T> <C>`"));
        }
        let id = fields[1].to_string();
        let segments: usize = r.parse(fields[2], "segment count")?;
        let classes: usize = r.parse(fields[3], "class count")?;
        r.keyword("A")?;
        let audio = r.grid(segments, classes, "audio grid")?;
        r.keyword("V")?;
        let visual = r.grid(segments, classes, "visual grid")?;
        r.keyword("AV")?;
        let av = r.grid(segments, classes, "audio-visual grid")?;
        let labels = SegmentLabels::new(audio, visual)?;
        if labels.audio_visual() != av {
            return Err(r.error(format!("video {id}: AV grid is not the AND of A and V")));
        }
        records.push((id, labels));
    }
    Ok(records)
}
