//! Spectrum normalization, entropy and the per-layer AFIE score.
//!
//! A spectrum is min-max scaled to `[0, 1]`, passed through a softmax, and
//! the Shannon entropy (in nats) of the result is the layer's total entropy
//! `K_l`. Dividing by the filter count gives `AFIE_l = K_l / c_l`.

use serde::{Deserialize, Serialize};

use crate::archive::TensorArchive;
use crate::error::{Error, Result};
use crate::spectral::{fold_hw, singular_values, LayerSpectrum, DEFAULT_TOLERANCE};

/// Spectra whose spread `s_max − s_min` is within this fraction of `s_max`
/// are treated as flat. Exactly equal values always qualify.
pub const DEGENERATE_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedSpectrum {
    pub layer_index: usize,
    pub probs: Vec<f64>,
    /// Set when the flat-spectrum rule produced a uniform distribution.
    pub degenerate: bool,
}

/// Min-max scales the spectrum then applies a softmax.
///
/// Flat spectra (including all-zero and single-value ones) cannot be min-max
/// scaled and map to the uniform distribution instead.
pub fn normalize_spectrum(spectrum: &LayerSpectrum) -> Result<NormalizedSpectrum> {
    let values = spectrum.values();
    let p = values.len();
    if p == 0 {
        return Err(Error::validation(
            format!("spectrum of layer {}", spectrum.layer_index),
            "empty spectrum",
        ));
    }
    let (hi, lo) = (spectrum.max(), spectrum.min());
    let spread = hi - lo;
    if p == 1 || spread <= DEGENERATE_RTOL * hi {
        return Ok(NormalizedSpectrum {
            layer_index: spectrum.layer_index,
            probs: vec![1.0 / p as f64; p],
            degenerate: true,
        });
    }

    // Scaled values lie in [0, 1], so exp() cannot overflow; shift by the max anyway.
    let scaled: Vec<f64> = values.iter().map(|s| (s - lo) / spread).collect();
    let top = scaled.iter().copied().fold(f64::MIN, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|x| (x - top).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(NormalizedSpectrum {
        layer_index: spectrum.layer_index,
        probs: exps.into_iter().map(|e| e / total).collect(),
        degenerate: false,
    })
}

/// Shannon entropy `−Σ p ln p` in nats; zero-probability terms contribute 0.
///
/// A degenerate (uniform) spectrum returns `ln p` exactly.
#[must_use]
pub fn entropy(norm: &NormalizedSpectrum) -> f64 {
    let cap = (norm.probs.len() as f64).ln();
    if norm.degenerate {
        return cap;
    }
    let h: f64 = norm
        .probs
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| -p * p.ln())
        .sum();
    // Near-uniform inputs can land a few ulps outside [0, ln p].
    h.clamp(0.0, cap)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AfieScore {
    pub layer_index: usize,
    /// `K_l` in nats.
    pub total_entropy: f64,
    /// `c_l`, the layer's output-channel count.
    pub filter_count: usize,
    pub afie: f64,
    /// `p_l`, the spectrum length.
    pub spectrum_size: usize,
}

pub fn afie_for_layer(spectrum: &LayerSpectrum, filter_count: usize) -> Result<AfieScore> {
    if filter_count == 0 {
        return Err(Error::validation(
            format!("layer {}", spectrum.layer_index),
            "filter count must be at least 1",
        ));
    }
    let k = entropy(&normalize_spectrum(spectrum)?);
    Ok(AfieScore {
        layer_index: spectrum.layer_index,
        total_entropy: k,
        filter_count,
        afie: k / filter_count as f64,
        spectrum_size: spectrum.count(),
    })
}

/// Per-layer scores for a whole model, in layer order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AfieReport {
    pub scores: Vec<AfieScore>,
    pub max_afie: f64,
    /// Lowest layer index attaining `max_afie`.
    pub argmax_layer: usize,
}

impl AfieReport {
    pub fn from_scores(scores: Vec<AfieScore>) -> Result<Self> {
        let mut best: Option<(usize, f64)> = None;
        for (i, s) in scores.iter().enumerate() {
            if !s.afie.is_finite() {
                return Err(Error::validation(
                    format!("layer {}", s.layer_index),
                    format!("non-finite AFIE {}", s.afie),
                ));
            }
            if best.is_none_or(|(_, b)| s.afie > b) {
                best = Some((i, s.afie));
            }
        }
        let (argmax_layer, max_afie) =
            best.ok_or_else(|| Error::validation("report", "no layers"))?;
        Ok(Self {
            scores,
            max_afie,
            argmax_layer,
        })
    }

    /// Builds a report from externally supplied AFIE values, for example
    /// published per-layer scores. `K_l` is back-filled as `AFIE_l · c_l`.
    pub fn from_afie_values(
        afie: &[f64],
        filters: &[usize],
        spectrum_sizes: &[usize],
    ) -> Result<Self> {
        if afie.len() != filters.len() || afie.len() != spectrum_sizes.len() {
            return Err(Error::validation(
                "AFIE override",
                format!("{} values for {} layers", afie.len(), filters.len()),
            ));
        }
        let scores = afie
            .iter()
            .zip(filters)
            .zip(spectrum_sizes)
            .enumerate()
            .map(|(l, ((a, c), p))| AfieScore {
                layer_index: l,
                total_entropy: a * *c as f64,
                filter_count: *c,
                afie: *a,
                spectrum_size: *p,
            })
            .collect();
        Self::from_scores(scores)
    }

    #[must_use]
    pub fn afie_values(&self) -> Vec<f64> {
        self.scores.iter().map(|s| s.afie).collect()
    }

    #[must_use]
    pub fn filter_counts(&self) -> Vec<usize> {
        self.scores.iter().map(|s| s.filter_count).collect()
    }
}

/// Scores every kernel in `archive`, in archive order.
pub fn report(archive: &TensorArchive) -> Result<AfieReport> {
    let scores = archive
        .tensors()
        .iter()
        .enumerate()
        .map(|(l, t)| {
            let spectrum = singular_values(&fold_hw(t), DEFAULT_TOLERANCE)?.with_layer_index(l);
            afie_for_layer(&spectrum, t.filter_count())
        })
        .collect::<Result<Vec<_>>>()?;
    AfieReport::from_scores(scores)
}
