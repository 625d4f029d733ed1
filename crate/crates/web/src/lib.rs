//! Browser bindings for the AFIE planner.
//!
//! Each exported function takes plain numbers and returns a JSON string, so
//! the page needs no generated glue beyond `wasm-bindgen`'s own. The pure
//! functions behind the exports return `Result<String, String>` and are
//! tested natively.

use afie_core::allocator::{AllocationInput, DEFAULT_MIN_KEEP};
use afie_core::pruner::removal_count;
use afie_core::spectral::DEFAULT_TOLERANCE;
use afie_core::{
    afie_for_layer, entropy, fold_hw, normalize_spectrum, singular_values, solve, KernelShape,
    LayerSpectrum, WeightTensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Filter counts of the thirteen VGG-16 convolution layers.
pub const VGG16_WIDTHS: [usize; 13] = [
    64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512,
];

/// Published per-layer AFIE values for VGG-16 after one training epoch.
pub const VGG16_AFIE: [f64; 13] = [
    0.016, 0.064, 0.032, 0.038, 0.019, 0.022, 0.011, 0.012, 0.012, 0.012, 0.012, 0.012, 0.012,
];

fn spectrum_summary(spectrum: &LayerSpectrum, filters: usize) -> Result<Value, String> {
    let norm = normalize_spectrum(spectrum).map_err(|e| e.to_string())?;
    let score = afie_for_layer(spectrum, filters).map_err(|e| e.to_string())?;
    Ok(json!({
        "singular_values": spectrum.values(),
        "probs": norm.probs,
        "degenerate": norm.degenerate,
        "entropy": entropy(&norm),
        "max_entropy": (spectrum.count() as f64).ln(),
        "filters": filters,
        "afie": score.afie,
    }))
}

/// Scores a hand-entered spectrum. Values are sorted descending first, so
/// the caller may list them in any order.
pub fn analyze_spectrum_json(values: &[f64], filters: usize) -> Result<String, String> {
    if values.is_empty() {
        return Err("enter at least one singular value".into());
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let spectrum = LayerSpectrum::new(0, sorted).map_err(|e| e.to_string())?;
    Ok(spectrum_summary(&spectrum, filters)?.to_string())
}

/// Allocates per-layer ratios and the filter counts they remove.
pub fn allocate_json(
    afie: &[f64],
    filters: &[usize],
    ratio: f64,
    ceiling: f64,
) -> Result<String, String> {
    let input =
        AllocationInput::new(afie.to_vec(), filters.to_vec(), ratio).with_clamp_ceiling(ceiling);
    let result = solve(&input).map_err(|e| e.to_string())?;
    let removed: Vec<usize> = result
        .ratios
        .iter()
        .zip(filters)
        .map(|(&r, &c)| removal_count(r, c, DEFAULT_MIN_KEEP))
        .collect();
    let total: usize = filters.iter().sum();
    let removed_total: usize = removed.iter().sum();
    Ok(json!({
        "ratios": result.ratios,
        "removed": removed,
        "clamped": result.clamped,
        "lambda_min": result.lambda_min,
        "iterations": result.iterations,
        "infeasible_tight": result.infeasible_tight,
        "target_budget": input.target_filters(),
        "removed_total": removed_total,
        "achieved_ratio": removed_total as f64 / total as f64,
    })
    .to_string())
}

/// Generates a 3×3 layer whose folded matrix has column scales `decay^o`, then
/// runs it through fold, SVD and scoring. `decay` near 1 gives a flat
/// spectrum (high entropy); small values concentrate energy in a few
/// directions (low entropy).
pub fn synthetic_layer_json(
    inputs: usize,
    outputs: usize,
    decay: f64,
    seed: u64,
) -> Result<String, String> {
    if !(decay > 0.0 && decay <= 1.0) {
        return Err(format!("decay must lie in (0, 1], got {decay}"));
    }
    let shape = KernelShape::new(inputs, outputs, 3, 3);
    let len = shape.checked_len().ok_or("kernel too large")?;
    if inputs == 0 || outputs == 0 || len > 1 << 20 {
        return Err(format!("unsupported layer size {inputs}x{outputs}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: Vec<f64> = (0..inputs * outputs)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let data: Vec<f64> = (0..len)
        .map(|k| {
            let io = k / shape.plane();
            base[io] * decay.powi((io % outputs) as i32) * (1.0 + 0.2 * rng.random_range(-1.0..1.0))
        })
        .collect();
    let tensor = WeightTensor::new("synthetic", shape, data).map_err(|e| e.to_string())?;
    let spectrum =
        singular_values(&fold_hw(&tensor), DEFAULT_TOLERANCE).map_err(|e| e.to_string())?;
    Ok(spectrum_summary(&spectrum, outputs)?.to_string())
}

/// Layer widths and published AFIE values for the VGG-16 preset.
pub fn vgg16_preset_json() -> String {
    json!({ "filters": VGG16_WIDTHS, "afie": VGG16_AFIE }).to_string()
}

#[wasm_bindgen]
pub fn analyze_spectrum(values: Vec<f64>, filters: u32) -> Result<String, JsValue> {
    analyze_spectrum_json(&values, filters as usize).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn allocate(
    afie: Vec<f64>,
    filters: Vec<u32>,
    ratio: f64,
    ceiling: f64,
) -> Result<String, JsValue> {
    let filters: Vec<usize> = filters.into_iter().map(|c| c as usize).collect();
    allocate_json(&afie, &filters, ratio, ceiling).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn synthetic_layer(
    inputs: u32,
    outputs: u32,
    decay: f64,
    seed: u32,
) -> Result<String, JsValue> {
    synthetic_layer_json(inputs as usize, outputs as usize, decay, u64::from(seed))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn vgg16_preset() -> String {
    vgg16_preset_json()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: Result<String, String>) -> Value {
        serde_json::from_str(&s.unwrap()).unwrap()
    }

    #[test]
    fn two_value_spectrum_matches_closed_form() {
        let v = parse(analyze_spectrum_json(&[1.0, 2.0], 2));
        let e = std::f64::consts::E;
        let k = (1.0 + e).ln() - e / (1.0 + e);
        assert!((v["entropy"].as_f64().unwrap() - k).abs() < 1e-12);
        assert!((v["afie"].as_f64().unwrap() - k / 2.0).abs() < 1e-12);
        assert_eq!(v["singular_values"], json!([2.0, 1.0]));
    }

    #[test]
    fn bad_spectrum_is_reported() {
        assert!(analyze_spectrum_json(&[], 4).is_err());
        assert!(analyze_spectrum_json(&[1.0, -1.0], 4).is_err());
        assert!(analyze_spectrum_json(&[1.0], 0).is_err());
    }

    #[test]
    fn vgg_preset_allocation_keeps_conv2_lightest() {
        let v = parse(allocate_json(&VGG16_AFIE, &VGG16_WIDTHS, 0.65, 0.99));
        let ratios: Vec<f64> = serde_json::from_value(v["ratios"].clone()).unwrap();
        assert!((ratios[1] - 0.1384).abs() < 0.02);
        let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(ratios[1], min);
        let achieved = v["achieved_ratio"].as_f64().unwrap();
        assert!(achieved <= 0.65 && achieved > 0.64);
    }

    #[test]
    fn infeasible_allocation_is_an_error() {
        let err = allocate_json(&[1.0, 1.0], &[4, 4], 0.995, 0.99).unwrap_err();
        assert!(err.contains("0.99"), "{err}");
    }

    #[test]
    fn decay_lowers_entropy() {
        let flat = parse(synthetic_layer_json(16, 16, 1.0, 1));
        let steep = parse(synthetic_layer_json(16, 16, 0.5, 1));
        assert!(steep["entropy"].as_f64().unwrap() < flat["entropy"].as_f64().unwrap());
        assert_eq!(flat["singular_values"].as_array().unwrap().len(), 16);
    }

    #[test]
    fn synthetic_layer_is_seeded() {
        assert_eq!(
            synthetic_layer_json(5, 7, 0.8, 9),
            synthetic_layer_json(5, 7, 0.8, 9)
        );
        assert!(synthetic_layer_json(5, 7, 0.0, 9).is_err());
        assert!(synthetic_layer_json(0, 7, 0.5, 9).is_err());
    }
}
