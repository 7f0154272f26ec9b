//! Style descriptors of a single feature map.
//!
//! Positions are flattened row-major (`p = y * w + x`), giving `F` of shape
//! `(h*w, c)`. The style matrix is `F Fᵀ` (position × position); the Gram
//! matrix is `Fᵀ F` (channel × channel). Neither is normalized here.

use shufa_autograd::tensor::{matmul_at, matmul_bt};

use crate::error::{Result, ShufaError};

/// One feature map stored channels-first (`c`, `h`, `w`).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
    pub layer_index: usize,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>, layer_index: usize) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(ShufaError::Invalid("feature map dimensions must be positive".into()));
        }
        if data.len() != channels * height * width {
            return Err(ShufaError::Invalid(format!(
                "feature map data has {} values, expected {}",
                data.len(),
                channels * height * width
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
            layer_index,
        })
    }

    /// From an interleaved `h × w × c` buffer.
    pub fn from_hwc(height: usize, width: usize, channels: usize, hwc: &[f64], layer_index: usize) -> Result<Self> {
        if hwc.len() != height * width * channels {
            return Err(ShufaError::Invalid("hwc buffer size mismatch".into()));
        }
        let p = height * width;
        let mut data = vec![0.0; hwc.len()];
        for pos in 0..p {
            for ch in 0..channels {
                data[ch * p + pos] = hwc[pos * channels + ch];
            }
        }
        Self::new(channels, height, width, data, layer_index)
    }

    pub fn positions(&self) -> usize {
        self.height * self.width
    }

    /// Feature vector at flattened position `p`.
    pub fn at(&self, p: usize) -> Vec<f64> {
        (0..self.channels)
            .map(|c| self.data[c * self.positions() + p])
            .collect()
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// Square symmetric matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleMatrixValue {
    pub n: usize,
    pub m: Vec<f64>,
    pub layer_index: usize,
}

impl StyleMatrixValue {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[i * self.n + j]
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.m.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// `max |m - mᵀ|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in i + 1..self.n {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }
}

/// `F Fᵀ`, shape `(h*w) × (h*w)`.
pub fn style_matrix(f: &FeatureMap) -> StyleMatrixValue {
    let p = f.positions();
    // data is Fᵀ stored (c, p); Fᵀᵀ Fᵀ
    let m = matmul_at(&f.data, &f.data, p, f.channels, p);
    StyleMatrixValue {
        n: p,
        m,
        layer_index: f.layer_index,
    }
}

/// `Fᵀ F`, shape `c × c`.
pub fn gram_matrix(f: &FeatureMap) -> StyleMatrixValue {
    let p = f.positions();
    let m = matmul_bt(&f.data, &f.data, f.channels, p, f.channels);
    StyleMatrixValue {
        n: f.channels,
        m,
        layer_index: f.layer_index,
    }
}
