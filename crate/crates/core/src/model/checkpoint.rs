//! Binary checkpoint holding the student and teacher parameter vectors.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic "AVVPCKPT" | version u32
//! segments classes audio_dim visual_dim d_model heads seed   (u64 each)
//! group count u32, then per group: name len u32, name bytes, rank u32, dims u64…
//! element count u64
//! student values  f64 × count
//! teacher alpha f64 | teacher update count u64 | teacher values f64 × count
//! ```

use std::path::Path;

use super::{ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::teacher::TeacherState;

const MAGIC: &[u8; 8] = b"AVVPCKPT";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub student: ModelParams,
    pub teacher: TeacherState,
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let bytes = encode(checkpoint);
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|err| match err {
        DecodeError::Version(found) => Error::Version {
            found,
            expected: VERSION,
        },
        DecodeError::Malformed { offset, message } => Error::Corrupt {
            path: path.to_path_buf(),
            offset,
            message,
        },
        DecodeError::Invalid(e) => e,
    })
}

pub(crate) fn encode(ck: &Checkpoint) -> Vec<u8> {
    let cfg = ck.student.config();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [
        cfg.segments,
        cfg.classes,
        cfg.audio_dim,
        cfg.visual_dim,
        cfg.d_model,
        cfg.heads,
    ] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    out.extend_from_slice(&cfg.seed.to_le_bytes());
    let entries = ck.student.layout().entries();
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
        for &d in &e.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
    }
    out.extend_from_slice(&(ck.student.len() as u64).to_le_bytes());
    for v in ck.student.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&ck.teacher.alpha().to_le_bytes());
    out.extend_from_slice(&ck.teacher.update_count().to_le_bytes());
    for v in ck.teacher.params().values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

enum DecodeError {
    Version(u32),
    Malformed { offset: usize, message: String },
    Invalid(Error),
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], DecodeError> {
        if self.bytes.len() - self.pos < n {
            return Err(DecodeError::Malformed {
                offset: self.pos,
                message: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self, what: &str) -> Result<usize, DecodeError> {
        let v = self.u64(what)?;
        usize::try_from(v).map_err(|_| self.malformed(format!("{what} {v} out of range")))
    }

    fn f64(&mut self, what: &str) -> Result<f64, DecodeError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn malformed(&self, message: String) -> DecodeError {
        DecodeError::Malformed {
            offset: self.pos,
            message,
        }
    }
}

fn decode(bytes: &[u8]) -> Result<Checkpoint, DecodeError> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8, "magic")? != MAGIC {
        return Err(DecodeError::Malformed {
            offset: 0,
            message: "not a checkpoint file".into(),
        });
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(DecodeError::Version(version));
    }
    let config = ModelConfig {
        segments: c.usize("segments")?,
        classes: c.usize("classes")?,
        audio_dim: c.usize("audio_dim")?,
        visual_dim: c.usize("visual_dim")?,
        d_model: c.usize("d_model")?,
        heads: c.usize("heads")?,
        seed: c.u64("seed")?,
    };
    config.validate().map_err(DecodeError::Invalid)?;
    let expected = super::ParamLayout::new(&config);

    let groups = c.u32("group count")? as usize;
    if groups != expected.entries().len() {
        return Err(c.malformed(format!(
            "{groups} parameter groups, expected {}",
            expected.entries().len()
        )));
    }
    for e in expected.entries() {
        let name_len = c.u32("group name length")? as usize;
        let name = c.take(name_len, "group name")?;
        if name != e.name.as_bytes() {
            return Err(c.malformed(format!(
                "group `{}` where `{}` was expected",
                String::from_utf8_lossy(name),
                e.name
            )));
        }
        let rank = c.u32("group rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.usize("group dim")?);
        }
        if shape != e.shape {
            return Err(c.malformed(format!("group `{}` has shape {shape:?}, expected {:?}", e.name, e.shape)));
        }
    }
    let count = c.usize("element count")?;
    if count != expected.len() {
        return Err(c.malformed(format!("{count} elements, expected {}", expected.len())));
    }
    let mut student = Vec::with_capacity(count);
    for _ in 0..count {
        student.push(c.f64("student values")?);
    }
    let alpha = c.f64("teacher alpha")?;
    let updates = c.u64("teacher update count")?;
    let mut teacher = Vec::with_capacity(count);
    for _ in 0..count {
        teacher.push(c.f64("teacher values")?);
    }
    if c.pos != bytes.len() {
        return Err(c.malformed(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    let student = ModelParams::from_values(&config, student).map_err(DecodeError::Invalid)?;
    let teacher_params = ModelParams::from_values(&config, teacher).map_err(DecodeError::Invalid)?;
    let teacher = TeacherState::restore(teacher_params, alpha, updates).map_err(DecodeError::Invalid)?;
    Ok(Checkpoint { student, teacher })
}
