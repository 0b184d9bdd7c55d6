//! Self-describing line-oriented dataset files.
//!
//! ```text
//! avvp-dataset v1
//! videos 2 segments 10 classes 5 d_a 16 d_v 16 encoding decimal
//! video vid00000
//! label 01001
//! gt present          (or `gt absent`, in which case A/V grids are omitted)
//! A
//! <T rows of C 0/1 characters>
//! V
//! <T rows>
//! audio
//! <T rows of d_a floats>
//! visual
//! <T rows of d_v floats>
//! ```
//!
//! `decimal` floats use the shortest representation that parses back to the
//! same bits; `hex` floats are the 16-digit IEEE-754 bit pattern. Both
//! round-trip exactly.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Dataset, VideoSample};
use crate::error::{Error, Result};
use crate::metrics::SegmentLabels;
use crate::tensor::Tensor;
use crate::textio::{read_file, write_file, LineReader};

const MAGIC: &str = "avvp-dataset";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FloatEncoding {
    #[default]
    Decimal,
    Hex,
}

impl FloatEncoding {
    fn as_str(self) -> &'static str {
        match self {
            FloatEncoding::Decimal => "decimal",
            FloatEncoding::Hex => "hex",
        }
    }

    fn write(self, out: &mut String, v: f64) {
        match self {
            FloatEncoding::Decimal => {
                let _ = write!(out, "{v}");
            }
            FloatEncoding::Hex => {
                let _ = write!(out, "{:016x}", v.to_bits());
            }
        }
    }

    fn parse(self, s: &str) -> Option<f64> {
        match self {
            FloatEncoding::Decimal => s.parse().ok(),
            FloatEncoding::Hex if s.len() == 16 => u64::from_str_radix(s, 16).ok().map(f64::from_bits),
            FloatEncoding::Hex => None,
        }
    }
}

impl FromStr for FloatEncoding {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "decimal" => Ok(FloatEncoding::Decimal),
            "hex" => Ok(FloatEncoding::Hex),
            other => Err(format!("unknown float encoding `{other}`")),
        }
    }
}

pub fn save_dataset(dataset: &Dataset, path: &Path, encoding: FloatEncoding) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC} v{VERSION}");
    let _ = writeln!(
        out,
        "videos {} segments {} classes {} d_a {} d_v {} encoding {}",
        dataset.len(),
        dataset.segments,
        dataset.classes,
        dataset.audio_dim,
        dataset.visual_dim,
        encoding.as_str()
    );
    for v in &dataset.videos {
        let _ = writeln!(out, "video {}", v.id);
        let label: String = v.video_label.iter().map(|&b| if b { '1' } else { '0' }).collect();
        let _ = writeln!(out, "label {label}");
        match &v.segment_gt {
            Some(gt) => {
                out.push_str("gt present\nA\n");
                out.push_str(&gt.audio().to_string());
                out.push_str("V\n");
                out.push_str(&gt.visual().to_string());
            }
            None => out.push_str("gt absent\n"),
        }
        for (tag, feats) in [("audio", &v.audio), ("visual", &v.visual)] {
            out.push_str(tag);
            out.push('\n');
            for t in 0..feats.rows() {
                for (k, &x) in feats.row(t).iter().enumerate() {
                    if k > 0 {
                        out.push(' ');
                    }
                    encoding.write(&mut out, x);
                }
                out.push('\n');
            }
        }
    }
    write_file(path, out.as_bytes())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = read_file(path)?;
    let mut r = LineReader::new(path, &text);

    let header = r.next("header")?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(MAGIC) {
        return Err(r.error(format!("not a dataset file (expected `{MAGIC}` header)")));
    }
    let version = parts
        .next()
        .and_then(|v| v.strip_prefix('v'))
        .ok_or_else(|| r.error("missing version"))?;
    let version: u32 = r.parse(version, "version")?;
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            expected: VERSION,
        });
    }

    let dims = r.keyword("videos")?;
    if dims.len() != 11 {
        return Err(r.error("expected `videos N segments T classes C d_a A d_v V encoding E`"));
    }
    let n: usize = r.parse(dims[0], "video count")?;
    let sizes: Vec<usize> = r.keyed(&dims[1..9], &["segments", "classes", "d_a", "d_v"])?;
    let (segments, classes, audio_dim, visual_dim) = (sizes[0], sizes[1], sizes[2], sizes[3]);
    if dims[9] != "encoding" {
        return Err(r.error("expected `encoding`"));
    }
    let encoding: FloatEncoding = dims[10].parse().map_err(|e: String| r.error(e))?;

    let mut videos = Vec::with_capacity(n);
    for _ in 0..n {
        let id = r.keyword("video")?;
        if id.len() != 1 {
            return Err(r.error("expected `video <id>`"));
        }
        let id = id[0].to_string();
        let label = r.keyword("label")?;
        if label.len() != 1 || label[0].len() != classes {
            return Err(r.error(format!("expected a label of {classes} 0/1 characters")));
        }
        let video_label = label[0]
            .chars()
            .map(|ch| match ch {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(r.error(format!("invalid label character {ch:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;

        let gt_flag = r.keyword("gt")?;
        let segment_gt = match gt_flag.as_slice() {
            ["present"] => {
                r.keyword("A")?;
                let audio = r.grid(segments, classes, "audio labels")?;
                r.keyword("V")?;
                let visual = r.grid(segments, classes, "visual labels")?;
                Some(SegmentLabels::new(audio, visual)?)
            }
            ["absent"] => None,
            _ => return Err(r.error("expected `gt present` or `gt absent`")),
        };

        r.keyword("audio")?;
        let audio = read_features(&mut r, segments, audio_dim, encoding, "audio")?;
        r.keyword("visual")?;
        let visual = read_features(&mut r, segments, visual_dim, encoding, "visual")?;

        let sample = VideoSample {
            id,
            audio,
            visual,
            video_label,
            segment_gt,
        };
        sample.validate().map_err(|e| r.error(e.to_string()))?;
        videos.push(sample);
    }
    if let Some(extra) = r.peek_next() {
        return Err(r.error(format!("trailing content after {n} videos: `{extra}`")));
    }
    Dataset::new(segments, classes, audio_dim, visual_dim, videos)
}

fn read_features(
    r: &mut LineReader<'_>,
    segments: usize,
    dim: usize,
    encoding: FloatEncoding,
    what: &str,
) -> Result<Tensor> {
    let mut data = Vec::with_capacity(segments * dim);
    for _ in 0..segments {
        let line = r.next(what)?;
        let before = data.len();
        for field in line.split_whitespace() {
            let v = encoding
                .parse(field)
                .ok_or_else(|| r.error(format!("invalid {what} value `{field}`")))?;
            data.push(v);
        }
        if data.len() - before != dim {
            return Err(r.error(format!(
                "{what} row has {} values, expected {dim}",
                data.len() - before
            )));
        }
    }
    Tensor::matrix(segments, dim, data)
}
