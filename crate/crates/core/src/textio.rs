//! Line cursor with positioned parse errors for the text file formats.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::grid::BinaryGrid;

pub(crate) struct LineReader<'a> {
    path: PathBuf,
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> LineReader<'a> {
    pub fn new(path: &Path, text: &'a str) -> Self {
        LineReader {
            path: path.to_path_buf(),
            lines: text.lines().enumerate(),
            line: 0,
        }
    }

    pub fn error(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line: self.line,
            message: message.into(),
        }
    }

    /// Next non-empty line, or `None` at end of input.
    pub fn peek_next(&mut self) -> Option<&'a str> {
        for (i, line) in self.lines.by_ref() {
            self.line = i + 1;
            let trimmed = line.trim();
            if !trimmed.is_empty() {
                return Some(trimmed);
            }
        }
        None
    }

    pub fn next(&mut self, what: &str) -> Result<&'a str> {
        self.peek_next().ok_or_else(|| {
            Error::Parse {
                path: self.path.clone(),
                line: self.line + 1,
                message: format!("unexpected end of file, expected {what}"),
            }
        })
    }

    /// Next line, which must start with `keyword`; returns the remaining fields.
    pub fn keyword(&mut self, keyword: &str) -> Result<Vec<&'a str>> {
        let line = self.next(keyword)?;
        let mut fields = line.split_whitespace();
        match fields.next() {
            Some(k) if k == keyword => Ok(fields.collect()),
            Some(k) => Err(self.error(format!("expected `{keyword}`, found `{k}`"))),
            None => Err(self.error(format!("expected `{keyword}`"))),
        }
    }

    pub fn parse<T: FromStr>(&self, field: &str, what: &str) -> Result<T> {
        field
            .parse()
            .map_err(|_| self.error(format!("invalid {what}: `{field}`")))
    }

    /// `key value key value ...` pairs in fixed order.
    pub fn keyed<T: FromStr>(&self, fields: &[&str], keys: &[&str]) -> Result<Vec<T>> {
        if fields.len() != keys.len() * 2 {
            return Err(self.error(format!("expected fields {keys:?}")));
        }
        keys.iter()
            .enumerate()
            .map(|(i, key)| {
                if fields[2 * i] != *key {
                    return Err(self.error(format!(
                        "expected `{key}`, found `{}`",
                        fields[2 * i]
                    )));
                }
                self.parse(fields[2 * i + 1], key)
            })
            .collect()
    }

    pub fn grid(&mut self, segments: usize, classes: usize, what: &str) -> Result<BinaryGrid> {
        let mut rows = Vec::with_capacity(segments);
        for _ in 0..segments {
            let row = self.next(what)?;
            if row.len() != classes || !row.bytes().all(|b| b == b'0' || b == b'1') {
                return Err(self.error(format!(
                    "{what}: expected {classes} characters of 0/1, found `{row}`"
                )));
            }
            rows.push(row);
        }
        BinaryGrid::from_strs(&rows).map_err(|e| self.error(e.to_string()))
    }
}

pub(crate) fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}
