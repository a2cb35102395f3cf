use alloc::vec;
use alloc::vec::Vec;

use super::Real;

/// Channel-last (`[y][x][c]`) feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3<T> {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor3<T> {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Tensor3 {
            width,
            height,
            channels,
            data: vec![T::zero(); width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<T>) -> Option<Self> {
        (data.len() == width * height * channels).then_some(Tensor3 {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn cells(&self) -> usize {
        self.width * self.height
    }

    pub fn cell(&self, x: usize, y: usize) -> &[T] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn cell_mut(&mut self, x: usize, y: usize) -> &mut [T] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    pub fn row(&self, cell: usize) -> &[T] {
        &self.data[cell * self.channels..(cell + 1) * self.channels]
    }

    /// Per-cell flag: any non-zero channel.
    pub fn nonzero_cells(&self) -> Vec<bool> {
        if self.channels == 0 {
            return vec![false; self.cells()];
        }
        self.data
            .chunks_exact(self.channels)
            .map(|r| r.iter().any(|v| !v.is_zero()))
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor3<U> {
        Tensor3 {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

/// Single-channel `width x height` map, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap<T> {
    pub width: usize,
    pub height: usize,
    pub values: Vec<T>,
}

impl<T: Real> ScoreMap<T> {
    pub fn zeros(width: usize, height: usize) -> Self {
        ScoreMap {
            width,
            height,
            values: vec![T::zero(); width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> T {
        self.values[y * self.width + x]
    }
}
