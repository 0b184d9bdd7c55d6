//! Segment × class matrices shared by the model, teacher, losses and metrics.

use std::fmt;

use crate::error::{Error, Result};

/// T×C probabilities for one modality or a fused score.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbGrid {
    segments: usize,
    classes: usize,
    values: Vec<f64>,
}

impl ProbGrid {
    pub fn new(segments: usize, classes: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != segments * classes {
            return Err(Error::invalid(
                "prob_grid",
                format!(
                    "{segments}×{classes} grid needs {} values, got {}",
                    segments * classes,
                    values.len()
                ),
            ));
        }
        Ok(ProbGrid {
            segments,
            classes,
            values,
        })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let classes = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != classes) {
            return Err(Error::invalid("prob_grid", "ragged rows"));
        }
        ProbGrid::new(rows.len(), classes, rows.concat())
    }

    pub fn segments(&self) -> usize {
        self.segments
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, t: usize, c: usize) -> f64 {
        self.values[t * self.classes + c]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.segments).map(|t| self.get(t, c)).collect()
    }

    pub fn same_shape(&self, other: &ProbGrid) -> bool {
        self.segments == other.segments && self.classes == other.classes
    }
}

/// T×C binary matrix: labels, predictions and pseudo masks.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryGrid {
    segments: usize,
    classes: usize,
    cells: Vec<bool>,
}

impl BinaryGrid {
    pub fn zeros(segments: usize, classes: usize) -> Self {
        BinaryGrid {
            segments,
            classes,
            cells: vec![false; segments * classes],
        }
    }

    pub fn new(segments: usize, classes: usize, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != segments * classes {
            return Err(Error::invalid(
                "binary_grid",
                format!(
                    "{segments}×{classes} grid needs {} cells, got {}",
                    segments * classes,
                    cells.len()
                ),
            ));
        }
        Ok(BinaryGrid {
            segments,
            classes,
            cells,
        })
    }

    /// Parses rows such as `["0110", "1000"]`.
    pub fn from_strs(rows: &[&str]) -> Result<Self> {
        let classes = rows.first().map_or(0, |r| r.len());
        let mut cells = Vec::with_capacity(rows.len() * classes);
        for row in rows {
            if row.len() != classes {
                return Err(Error::invalid("binary_grid", "ragged rows"));
            }
            for ch in row.chars() {
                match ch {
                    '0' => cells.push(false),
                    '1' => cells.push(true),
                    other => {
                        return Err(Error::invalid(
                            "binary_grid",
                            format!("unexpected character {other:?}"),
                        ))
                    }
                }
            }
        }
        BinaryGrid::new(rows.len(), classes, cells)
    }

    pub fn segments(&self) -> usize {
        self.segments
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, t: usize, c: usize) -> bool {
        self.cells[t * self.classes + c]
    }

    pub fn set(&mut self, t: usize, c: usize, value: bool) {
        self.cells[t * self.classes + c] = value;
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn column(&self, c: usize) -> Vec<bool> {
        (0..self.segments).map(|t| self.get(t, c)).collect()
    }

    /// Number of set cells (the L1 norm of the 0/1 matrix).
    pub fn count_ones(&self) -> usize {
        self.cells.iter().filter(|&&b| b).count()
    }

    pub fn column_count(&self, c: usize) -> usize {
        (0..self.segments).filter(|&t| self.get(t, c)).count()
    }

    /// True where any segment of class `c` is set.
    pub fn any_in_class(&self, c: usize) -> bool {
        (0..self.segments).any(|t| self.get(t, c))
    }

    pub fn same_shape(&self, other: &BinaryGrid) -> bool {
        self.segments == other.segments && self.classes == other.classes
    }

    pub fn and(&self, other: &BinaryGrid) -> Result<BinaryGrid> {
        self.zip_with("and", other, |a, b| a && b)
    }

    pub fn or(&self, other: &BinaryGrid) -> Result<BinaryGrid> {
        self.zip_with("or", other, |a, b| a || b)
    }

    fn zip_with(
        &self,
        op: &'static str,
        other: &BinaryGrid,
        f: impl Fn(bool, bool) -> bool,
    ) -> Result<BinaryGrid> {
        if !self.same_shape(other) {
            return Err(Error::ShapeMismatch {
                op,
                lhs: vec![self.segments, self.classes],
                rhs: vec![other.segments, other.classes],
            });
        }
        let cells = self
            .cells
            .iter()
            .zip(&other.cells)
            .map(|(&a, &b)| f(a, b))
            .collect();
        BinaryGrid::new(self.segments, self.classes, cells)
    }

    /// Cells as 0.0 / 1.0.
    pub fn to_f64(&self) -> Vec<f64> {
        self.cells.iter().map(|&b| f64::from(u8::from(b))).collect()
    }
}

/// T lines of C `0`/`1` characters.
impl fmt::Display for BinaryGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in 0..self.segments {
            let row: String = (0..self.classes)
                .map(|c| if self.get(t, c) { '1' } else { '0' })
                .collect();
            writeln!(f, "{row}")?;
        }
        Ok(())
    }
}
