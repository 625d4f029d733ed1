//! Spatial folding of kernels and singular-value extraction.
//!
//! A kernel `[I][O][H][W]` is folded to an `I × O` matrix by averaging each
//! `H × W` plane. The spectrum of that matrix is computed with a one-sided
//! (Hestenes) Jacobi SVD, which only needs the singular values and is accurate
//! to machine precision at the sizes convolution layers reach.
//!
//! Note on naming: the scoring literature calls these values "eigenvalues";
//! they are the singular values of the folded matrix.

use serde::{Deserialize, Serialize};

use crate::archive::WeightTensor;
use crate::error::{Error, Result};

/// Default relative cutoff below which singular values are reported as zero.
pub const DEFAULT_TOLERANCE: f64 = 1e-10;

const MAX_SWEEPS: usize = 80;

/// Dense row-major `rows × cols` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldedMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FoldedMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::validation(
                "matrix",
                format!("extents must be at least 1, got {rows}x{cols}"),
            ));
        }
        if data.len() != rows * cols {
            return Err(Error::validation(
                "matrix",
                format!(
                    "{rows}x{cols} needs {} values, got {}",
                    rows * cols,
                    data.len()
                ),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("matrix", "contains a non-finite value"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(
        rows: usize,
        cols: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self::new(rows, cols, data)
    }

    #[must_use]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[must_use]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[must_use]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[must_use]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[must_use]
    pub fn transpose(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                data.push(self.get(r, c));
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    /// Spectrum size `p = min(rows, cols)`.
    #[must_use]
    pub fn rank_bound(&self) -> usize {
        self.rows.min(self.cols)
    }
}

/// Averages every `H × W` plane of `tensor`, producing its `I × O` matrix.
///
/// The mean is signed; opposite-signed taps may cancel.
#[must_use]
pub fn fold_hw(tensor: &WeightTensor) -> FoldedMatrix {
    let shape = tensor.shape();
    let plane = shape.plane();
    let data: Vec<f64> = tensor
        .data()
        .chunks_exact(plane)
        .map(|taps| {
            if plane == 1 {
                taps[0]
            } else {
                taps.iter().sum::<f64>() / plane as f64
            }
        })
        .collect();
    FoldedMatrix {
        rows: shape.in_channels,
        cols: shape.out_channels,
        data,
    }
}

/// Singular values of one layer, sorted non-increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpectrum {
    pub layer_index: usize,
    singular_values: Vec<f64>,
}

impl LayerSpectrum {
    pub fn new(layer_index: usize, singular_values: Vec<f64>) -> Result<Self> {
        let subject = || format!("spectrum of layer {layer_index}");
        if singular_values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::validation(
                subject(),
                "singular values must be finite and non-negative",
            ));
        }
        if singular_values.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::validation(
                subject(),
                "singular values must be non-increasing",
            ));
        }
        Ok(Self {
            layer_index,
            singular_values,
        })
    }

    #[must_use]
    pub fn with_layer_index(mut self, layer_index: usize) -> Self {
        self.layer_index = layer_index;
        self
    }

    #[must_use]
    pub fn values(&self) -> &[f64] {
        &self.singular_values
    }

    /// Spectrum size `p_l`.
    #[must_use]
    pub fn count(&self) -> usize {
        self.singular_values.len()
    }

    #[must_use]
    pub fn max(&self) -> f64 {
        self.singular_values.first().copied().unwrap_or(0.0)
    }

    #[must_use]
    pub fn min(&self) -> f64 {
        self.singular_values.last().copied().unwrap_or(0.0)
    }
}

/// Computes the `min(rows, cols)` singular values of `matrix`.
///
/// Values at or below `tolerance · σ_max` are reported as exactly zero so that
/// rank-deficient inputs have an exact null spectrum. The returned spectrum is
/// tagged with layer index 0; use [`LayerSpectrum::with_layer_index`] to
/// relabel it.
pub fn singular_values(matrix: &FoldedMatrix, tolerance: f64) -> Result<LayerSpectrum> {
    if !(tolerance.is_finite() && tolerance > 0.0) {
        return Err(Error::validation(
            "tolerance",
            format!("must be positive and finite, got {tolerance}"),
        ));
    }
    if matrix.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("matrix", "contains a non-finite value"));
    }

    let mut values = jacobi_column_norms(matrix);
    values.sort_by(|a, b| b.total_cmp(a));
    let cutoff = tolerance * values[0];
    for v in &mut values {
        if *v <= cutoff {
            *v = 0.0;
        }
    }
    LayerSpectrum::new(0, values)
}

/// One-sided Jacobi: orthogonalize the columns of the tall orientation of the
/// matrix by plane rotations; the final column norms are the singular values.
fn jacobi_column_norms(matrix: &FoldedMatrix) -> Vec<f64> {
    // Tall orientation: `m >= n`, stored column-major so each column is contiguous.
    let (m, n, mut cols) = if matrix.rows >= matrix.cols {
        let t = matrix.transpose();
        (matrix.rows, matrix.cols, t.data)
    } else {
        (matrix.cols, matrix.rows, matrix.data.clone())
    };

    // Power-of-two prescale keeps squared norms in range and is exact.
    let peak = cols.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if peak == 0.0 {
        return vec![0.0; n];
    }
    let scale = 2f64.powi(-(peak.log2().ceil() as i32));
    for v in &mut cols {
        *v *= scale;
    }

    let threshold = m as f64 * f64::EPSILON;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let (head, tail) = cols.split_at_mut(q * m);
                let cp = &mut head[p * m..(p + 1) * m];
                let cq = &mut tail[..m];
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for (x, y) in cp.iter().zip(cq.iter()) {
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if gamma == 0.0 || gamma.abs() <= threshold * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
                    let (xp, yq) = (*x, *y);
                    *x = c * xp - s * yq;
                    *y = s * xp + c * yq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    cols.chunks_exact(m)
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt() / scale)
        .collect()
}
