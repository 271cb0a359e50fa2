//! Dense row-major timeseries matrix shared by the pipeline stages.

use serde::{Deserialize, Serialize};

/// A `rows x cols` matrix of timesteps by channels, stored row-major.
///
/// Row `t` is the sensor snapshot at timestep `t`; column `c` is one channel
/// over time. Windowed gestures are `200 x 6`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TimeSeries {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        TimeSeries {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds from a closure `f(row, col)`.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        TimeSeries { rows, cols, data }
    }

    /// Wraps an existing row-major buffer. Panics if the length is wrong.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "buffer length must be rows*cols");
        TimeSeries { rows, cols, data }
    }

    /// Single-channel series from a slice.
    pub fn from_column(values: &[f64]) -> Self {
        TimeSeries {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.cols + col] = value;
    }

    /// One timestep as a contiguous slice of channels.
    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    /// Copies one channel out as a contiguous vector.
    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, col)).collect()
    }

    /// Overwrites one channel from a slice of length `rows`.
    pub fn set_column(&mut self, col: usize, values: &[f64]) {
        assert_eq!(values.len(), self.rows);
        for (r, &v) in values.iter().enumerate() {
            self.set(r, col, v);
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &TimeSeries) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Channel-major copy (`cols` vectors of length `rows`), the layout the
    /// differentiable models consume.
    pub fn to_channel_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                out.push(self.get(r, c));
            }
        }
        out
    }

    /// Inverse of [`TimeSeries::to_channel_major`].
    pub fn from_channel_major(rows: usize, cols: usize, data: &[f64]) -> Self {
        assert_eq!(data.len(), rows * cols);
        TimeSeries::from_fn(rows, cols, |r, c| data[c * rows + r])
    }
}
