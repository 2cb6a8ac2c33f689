//! Binary slice × biomarker label matrices.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LabelError {
    #[error("{len} labels cannot fill a {rows}x{cols} matrix")]
    ValueCount { rows: usize, cols: usize, len: usize },
    #[error("label at index {index} is {value}, expected 0 or 1")]
    NonBinary { index: usize, value: String },
}

/// `S × B` matrix of `{0, 1}` entries, row-major. Row `s` is slice `s`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelMatrix {
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

impl LabelMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<u8>) -> Result<Self, LabelError> {
        if rows * cols != data.len() {
            return Err(LabelError::ValueCount { rows, cols, len: data.len() });
        }
        if let Some((index, v)) = data.iter().enumerate().find(|(_, v)| **v > 1) {
            return Err(LabelError::NonBinary { index, value: v.to_string() });
        }
        Ok(Self { rows, cols, data })
    }

    /// Accepts only exact `0.0` and `1.0`; soft labels are rejected.
    pub fn from_f64(rows: usize, cols: usize, values: &[f64]) -> Result<Self, LabelError> {
        let mut data = Vec::with_capacity(values.len());
        for (index, &v) in values.iter().enumerate() {
            if v == 0.0 {
                data.push(0);
            } else if v == 1.0 {
                data.push(1);
            } else {
                return Err(LabelError::NonBinary { index, value: v.to_string() });
            }
        }
        Self::new(rows, cols, data)
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self, LabelError> {
        let cols = rows.first().map_or(0, Vec::len);
        let data: Vec<u8> = rows.iter().flatten().copied().collect();
        Self::new(rows.len(), cols, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0; rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.cols + c] == 1
    }

    pub fn set(&mut self, r: usize, c: usize, value: bool) {
        self.data[r * self.cols + c] = u8::from(value);
    }

    pub fn row(&self, r: usize) -> &[u8] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<u8> {
        (0..self.rows).map(|r| self.data[r * self.cols + c]).collect()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> LabelMatrix {
        let data = rows.iter().flat_map(|&r| self.row(r).iter().copied()).collect();
        LabelMatrix { rows: rows.len(), cols: self.cols, data }
    }

    pub fn reversed_rows(&self) -> LabelMatrix {
        let order: Vec<usize> = (0..self.rows).rev().collect();
        self.select_rows(&order)
    }

    pub fn positives(&self) -> usize {
        self.data.iter().map(|&v| usize::from(v)).sum()
    }
}
