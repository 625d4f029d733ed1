//! Acceptance criteria. Each test prints one `[PASS]`/`[FAIL]` line to stderr
//! (outside the test harness capture) and then asserts.

mod common;

use std::io::Write;
use std::time::{Duration, Instant};

use afie_core::allocator::{BUDGET_TOLERANCE, PROPORTIONALITY_TOLERANCE};
use afie_core::oracles::{gram_eigenvalues, random_orthogonal};
use afie_core::spectral::DEFAULT_TOLERANCE;
use afie_core::{
    entropy, normalize_spectrum, report, singular_values, solve, AllocationInput, FoldedMatrix,
    KernelShape, LayerSpectrum, PruningPlan, TensorArchive, TopologyDescriptor, WeightTensor,
};
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

fn verdict(id: u8, title: &str, failures: &[String], elapsed: Duration, budget: Duration) {
    let timing_ok = elapsed < budget;
    let pass = failures.is_empty() && timing_ok;
    let line = format!(
        "[{}] criterion {id}: {title} ({:.3}s, limit {:.0}s)\n",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs_f64()
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    for f in failures.iter().take(10) {
        let _ = std::io::stderr().write_all(format!("    {f}\n").as_bytes());
    }
    assert!(
        failures.is_empty(),
        "criterion {id}: {} failure(s)",
        failures.len()
    );
    assert!(
        timing_ok,
        "criterion {id}: took {elapsed:?}, limit {budget:?}"
    );
}

// ── 1. VGG-16 ratio reproduction via AFIE override ─────────────────────────

#[test]
fn criterion_1_vgg16_ratios_from_override() {
    let dir = tempfile::tempdir().unwrap();
    let archive = save(dir.path(), "vgg16.ata", &vgg16_stub());
    let ov = save_json(dir.path(), "afie.json", &json!(VGG16_AFIE));
    let plan_path = dir.path().join("plan.json");

    let start = Instant::now();
    let out = afie(&[
        "plan",
        "--archive",
        s(&archive),
        "--ratio",
        "0.65",
        "--afie-override",
        s(&ov),
        "--out",
        s(&plan_path),
    ]);
    let elapsed = start.elapsed();

    let mut failures = Vec::new();
    if code(&out) != 0 {
        failures.push(format!("plan exited {}: {}", code(&out), stderr(&out)));
    } else {
        let plan = PruningPlan::from_json(&std::fs::read_to_string(&plan_path).unwrap()).unwrap();
        let ratios: Vec<f64> = plan.per_layer.iter().map(|l| l.ratio).collect();
        let tol = 0.02;
        let mut expect = |label: &str, got: f64, want: f64| {
            if (got - want).abs() > tol {
                failures.push(format!("{label}: {got:.4} vs published {want:.4} (±{tol})"));
            }
        };
        expect("Conv2", ratios[1], 0.1384);
        expect("Conv3", ratios[2], 0.2768);
        expect("Conv4", ratios[3], 0.2366);
        for (l, r) in ratios.iter().enumerate().skip(7) {
            expect(&format!("Conv{}", l + 1), *r, 0.734);
        }
        let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        if ratios[1] != min {
            failures.push(format!(
                "Conv2 ratio {} is not the minimum {min}",
                ratios[1]
            ));
        }
        let _ = std::io::stderr().write_all(
            format!(
                "    ratios: {}\n",
                ratios
                    .iter()
                    .map(|r| format!("{r:.4}"))
                    .collect::<Vec<_>>()
                    .join(" ")
            )
            .as_bytes(),
        );
    }
    verdict(
        1,
        "VGG-16 per-layer ratios from published AFIE",
        &failures,
        elapsed,
        Duration::from_secs(1),
    );
}

// ── 2. Budget conservation ─────────────────────────────────────────────────

#[test]
fn criterion_2_budget_conservation() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut failures = Vec::new();
    let mut clamped_instances = 0;
    let start = Instant::now();
    for case in 0..1000 {
        let n = rng.random_range(1..=64);
        // Log-uniform AFIE over four decades so that clamping is common.
        let afie: Vec<f64> = (0..n)
            .map(|_| 10f64.powf(rng.random_range(-4.0..0.0)))
            .collect();
        let filters: Vec<usize> = (0..n).map(|_| rng.random_range(1..=512)).collect();
        let ratio = rng.random_range(0.01..0.98);
        let input = AllocationInput::new(afie, filters, ratio);
        let r = match solve(&input) {
            Ok(r) => r,
            Err(e) => {
                failures.push(format!("case {case}: {e}"));
                continue;
            }
        };
        if !r.clamped.is_empty() {
            clamped_instances += 1;
        }
        let budget = r.continuous_budget(&input.filters);
        if (budget - input.target_filters()).abs() > BUDGET_TOLERANCE {
            failures.push(format!(
                "case {case}: Σλc = {budget}, target {}",
                input.target_filters()
            ));
        }
        let anchor = r.lambda_min * input.afie.iter().copied().fold(0.0, f64::max);
        for l in (0..n).filter(|l| !r.clamped.contains(l)) {
            let p = r.ratios[l] * input.afie[l];
            if (p - anchor).abs() > PROPORTIONALITY_TOLERANCE {
                failures.push(format!(
                    "case {case} layer {l}: λ·AFIE = {p}, expected {anchor}"
                ));
            }
        }
        if r.iterations > n {
            failures.push(format!(
                "case {case}: {} clamp iterations for {n} layers",
                r.iterations
            ));
        }
    }
    let elapsed = start.elapsed();
    let _ = std::io::stderr().write_all(
        format!("    {clamped_instances}/1000 instances exercised clamping\n").as_bytes(),
    );
    verdict(
        2,
        "budget conservation, proportionality, clamp fixpoint",
        &failures,
        elapsed,
        Duration::from_secs(10),
    );
}

// ── 3. SVD oracle equivalence ──────────────────────────────────────────────

#[test]
fn criterion_3_svd_matches_gram_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut failures = Vec::new();
    let start = Instant::now();
    for case in 0..1000 {
        let (r, c) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let ternary = case % 2 == 0;
        let m = FoldedMatrix::from_fn(r, c, |_, _| {
            if ternary {
                f64::from(rng.random_range(-1i8..=1))
            } else {
                rng.random_range(-1.0..1.0)
            }
        })
        .unwrap();
        let got = singular_values(&m, DEFAULT_TOLERANCE).unwrap();
        let eig = gram_eigenvalues(&m);
        let scale = got.max() * got.max();
        for (k, (sv, l)) in got.values().iter().zip(&eig).enumerate() {
            if (sv * sv - l).abs() > 1e-9 * scale.max(f64::MIN_POSITIVE) {
                failures.push(format!(
                    "case {case} ({r}x{c}) σ{k}² = {} vs λ = {l}",
                    sv * sv
                ));
            }
        }
        if got.count() != r.min(c) {
            failures.push(format!("case {case}: {} values for {r}x{c}", got.count()));
        }
    }
    verdict(
        3,
        "singular values match MᵀM eigenvalue oracle",
        &failures,
        start.elapsed(),
        Duration::from_secs(30),
    );
}

// ── 4. AFIE stability surrogate ────────────────────────────────────────────

fn layer_afie(name: &str, shape: KernelShape, data: Vec<f64>) -> f64 {
    let t = WeightTensor::new(name, shape, data).unwrap();
    report(&TensorArchive::new(vec![t], None).unwrap())
        .unwrap()
        .scores[0]
        .afie
}

/// Applies `Q · P · R` to every `(h, w)` plane of a `[I][O][H][W]` kernel.
fn rotate_planes(shape: KernelShape, data: &[f64], q: &FoldedMatrix, r: &FoldedMatrix) -> Vec<f64> {
    let (ni, no, plane) = (shape.in_channels, shape.out_channels, shape.plane());
    let at = |i: usize, o: usize, k: usize| data[(i * no + o) * plane + k];
    let mut out = vec![0.0; data.len()];
    for k in 0..plane {
        for i in 0..ni {
            for o in 0..no {
                let mut acc = 0.0;
                for a in 0..ni {
                    let qa = q.get(i, a);
                    for b in 0..no {
                        acc += qa * at(a, b, k) * r.get(b, o);
                    }
                }
                out[(i * no + o) * plane + k] = acc;
            }
        }
    }
    out
}

#[test]
fn criterion_4_afie_stability() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut failures = Vec::new();
    let start = Instant::now();
    let mut layers = 0;
    while layers < 100 {
        let shape = KernelShape::new(rng.random_range(2..=12), rng.random_range(2..=12), 3, 3);
        let data: Vec<f64> = (0..shape.len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let t = WeightTensor::new("probe", shape, data.clone()).unwrap();
        let folded = afie_core::fold_hw(&t);
        let spectrum = singular_values(&folded, DEFAULT_TOLERANCE).unwrap();
        if normalize_spectrum(&spectrum).unwrap().degenerate {
            continue;
        }
        layers += 1;
        let base = layer_afie("probe", shape, data.clone());

        for alpha in [1e-6, 0.01, 0.37, 3.0, 250.0, 1e6] {
            let scaled = layer_afie("probe", shape, data.iter().map(|v| v * alpha).collect());
            if (scaled - base).abs() > 1e-12 {
                failures.push(format!("scale {alpha}: {scaled} vs {base}"));
            }
        }

        let q = random_orthogonal(shape.in_channels, &mut rng);
        let r = random_orthogonal(shape.out_channels, &mut rng);
        let rotated = layer_afie("probe", shape, rotate_planes(shape, &data, &q, &r));
        if (rotated - base).abs() > 1e-9 {
            failures.push(format!("orthogonal: {rotated} vs {base}"));
        }

        let mut perm: Vec<usize> = (0..shape.out_channels).collect();
        for i in (1..perm.len()).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let plane = shape.plane();
        let mut permuted = vec![0.0; data.len()];
        for i in 0..shape.in_channels {
            for (o, &src) in perm.iter().enumerate() {
                let from = (i * shape.out_channels + src) * plane;
                let to = (i * shape.out_channels + o) * plane;
                permuted[to..to + plane].copy_from_slice(&data[from..from + plane]);
            }
        }
        let shuffled = layer_afie("probe", shape, permuted);
        if (shuffled - base).abs() > 1e-9 {
            failures.push(format!("permutation: {shuffled} vs {base}"));
        }

        let delta: Vec<f64> = (0..data.len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let k = norm(&data) / norm(&delta);
        for eps in [1e-4, 1e-3] {
            let moved: Vec<f64> = data
                .iter()
                .zip(&delta)
                .map(|(m, d)| m + eps * k * d)
                .collect();
            let shifted = layer_afie("probe", shape, moved);
            if (shifted - base).abs() > 10.0 * eps {
                failures.push(format!(
                    "perturbation ε={eps}: |Δ| = {}",
                    (shifted - base).abs()
                ));
            }
        }
    }
    verdict(
        4,
        "AFIE invariant to scale, rotation, filter order; continuous under perturbation",
        &failures,
        start.elapsed(),
        Duration::from_secs(30),
    );
}

// ── 5. Entropy bounds and closed forms ─────────────────────────────────────

#[test]
fn criterion_5_entropy_bounds_and_closed_forms() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut failures = Vec::new();
    let start = Instant::now();
    for case in 0..2000 {
        let p = rng.random_range(1..=64);
        let spread = 10f64.powf(rng.random_range(-3.0..3.0));
        let mut values: Vec<f64> = (0..p)
            .map(|_| {
                if rng.random_bool(0.1) {
                    0.0
                } else {
                    rng.random_range(0.0..spread)
                }
            })
            .collect();
        if case % 10 == 0 {
            values.iter_mut().for_each(|v| *v = spread);
        }
        values.sort_by(|a, b| b.total_cmp(a));
        let spectrum = LayerSpectrum::new(0, values).unwrap();
        let norm = normalize_spectrum(&spectrum).unwrap();
        let k = entropy(&norm);
        let cap = (p as f64).ln();
        if !(0.0..=cap).contains(&k) {
            failures.push(format!("case {case}: K = {k} outside [0, ln {p}]"));
        }
        if norm.degenerate && k != cap {
            failures.push(format!("case {case}: flat spectrum K = {k}, ln p = {cap}"));
        }
    }
    for p in [1usize, 2, 3, 4, 7, 64, 512] {
        let flat = LayerSpectrum::new(0, vec![0.75; p]).unwrap();
        let k = entropy(&normalize_spectrum(&flat).unwrap());
        if k != (p as f64).ln() {
            failures.push(format!("uniform p={p}: K = {k}"));
        }
    }
    // Closed form for the spectrum [2, 1]: probabilities e/(1+e), 1/(1+e) give
    // K = ln(1 + e) − e/(1 + e).
    let e = std::f64::consts::E;
    let oracle = (1.0 + e).ln() - e / (1.0 + e);
    let k = entropy(&normalize_spectrum(&LayerSpectrum::new(0, vec![2.0, 1.0]).unwrap()).unwrap());
    if (k - 0.582203).abs() > 1e-5 || (k - oracle).abs() > 1e-12 {
        failures.push(format!("[2, 1]: K = {k}, oracle {oracle}"));
    }
    verdict(
        5,
        "entropy bounds, uniform maximum, [2,1] closed form",
        &failures,
        start.elapsed(),
        Duration::from_secs(30),
    );
}

// ── 6. End-to-end determinism and surgery safety ───────────────────────────

#[test]
fn criterion_6_prune_determinism_and_surgery() {
    let dir = tempfile::tempdir().unwrap();
    let source = chain_fixture(6);
    let input = save(dir.path(), "chain.ata", &source);
    let ratio = 0.3;
    let start = Instant::now();
    let mut failures = Vec::new();

    let mut runs = Vec::new();
    for run in 0..2 {
        let out_path = dir.path().join(format!("pruned{run}.ata"));
        let out = afie(&[
            "prune",
            "--archive",
            s(&input),
            "--ratio",
            "0.3",
            "--seed",
            "42",
            "--out",
            s(&out_path),
            "--format",
            "json",
        ]);
        if code(&out) != 0 {
            failures.push(format!("run {run} exited {}: {}", code(&out), stderr(&out)));
            break;
        }
        let plan_bytes =
            std::fs::read(dir.path().join(format!("pruned{run}.ata.plan.json"))).unwrap();
        let archive_bytes = std::fs::read(&out_path).unwrap();
        let stats: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
        runs.push((plan_bytes, archive_bytes, stats));
    }

    if runs.len() == 2 {
        if runs[0].0 != runs[1].0 {
            failures.push("plan files differ between runs".into());
        }
        if runs[0].1 != runs[1].1 {
            failures.push("pruned archives differ between runs".into());
        }
        let plan = PruningPlan::from_json(std::str::from_utf8(&runs[0].0).unwrap()).unwrap();
        let pruned = TensorArchive::from_bytes(&runs[0].1).unwrap();

        let kept0 = &plan.per_layer[0].kept_indices;
        let kept1 = &plan.per_layer[1].kept_indices;
        let (s0, s1) = (&source.tensors()[0], &source.tensors()[1]);
        let (p0, p1) = (&pruned.tensors()[0], &pruned.tensors()[1]);
        if p0.shape().out_channels != p1.shape().in_channels {
            failures.push("chain extents inconsistent after surgery".into());
        }
        if p0.shape() != KernelShape::new(3, kept0.len(), 3, 3)
            || p1.shape() != KernelShape::new(kept0.len(), kept1.len(), 3, 3)
        {
            failures.push(format!(
                "unexpected shapes {:?} {:?}",
                p0.shape(),
                p1.shape()
            ));
        }
        let mut mismatches = 0;
        for i in 0..3 {
            for (no, &o) in kept0.iter().enumerate() {
                for h in 0..3 {
                    for w in 0..3 {
                        mismatches += usize::from(
                            p0.at(i, no, h, w).to_bits() != s0.at(i, o, h, w).to_bits(),
                        );
                    }
                }
            }
        }
        for (ni, &i) in kept0.iter().enumerate() {
            for (no, &o) in kept1.iter().enumerate() {
                for h in 0..3 {
                    for w in 0..3 {
                        mismatches += usize::from(
                            p1.at(ni, no, h, w).to_bits() != s1.at(i, o, h, w).to_bits(),
                        );
                    }
                }
            }
        }
        if mismatches > 0 {
            failures.push(format!(
                "{mismatches} surviving weights differ from their source"
            ));
        }

        let achieved = runs[0].2["achieved_global_ratio"].as_f64().unwrap();
        let p_star = (s0.filter_count() + s1.filter_count()) as f64;
        let lower = ratio - 2.0 / p_star;
        if !(lower - 1e-12..=ratio + 1e-12).contains(&achieved) {
            failures.push(format!(
                "achieved ratio {achieved} outside [{lower}, {ratio}]"
            ));
        }
        let kept_total = kept0.len() + kept1.len();
        if (1.0 - kept_total as f64 / p_star - achieved).abs() > 1e-12 {
            failures.push("stats disagree with plan kept sets".into());
        }
    }
    verdict(
        6,
        "prune is deterministic and surgery preserves surviving weights",
        &failures,
        start.elapsed(),
        Duration::from_secs(30),
    );
}

// ── 7. ATA round-trip and NaN rejection ────────────────────────────────────

#[test]
fn criterion_7_archive_round_trip_and_nan_rejection() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut failures = Vec::new();
    let start = Instant::now();
    for case in 0..100 {
        let n = rng.random_range(1..=6);
        let mut prev_out = rng.random_range(1..=8);
        let chain = rng.random_bool(0.5);
        let tensors: Vec<WeightTensor> = (0..n)
            .map(|l| {
                let i = if chain {
                    prev_out
                } else {
                    rng.random_range(1..=8)
                };
                let o = rng.random_range(1..=8);
                prev_out = o;
                let shape =
                    KernelShape::new(i, o, rng.random_range(1..=3), rng.random_range(1..=3));
                // Arbitrary finite bit patterns, including subnormals and negative zero.
                let data = (0..shape.len())
                    .map(|_| loop {
                        let v = f64::from_bits(rng.random::<u64>());
                        if v.is_finite() {
                            break v;
                        }
                    })
                    .collect();
                WeightTensor::new(format!("layer.{l}.weight"), shape, data).unwrap()
            })
            .collect();
        let names = tensors.iter().map(|t| t.name().to_owned()).collect();
        let topology = chain.then(|| TopologyDescriptor::chain(names));
        let archive = TensorArchive::new(tensors, topology).unwrap();
        let bytes = archive.to_bytes().unwrap();
        match TensorArchive::from_bytes(&bytes) {
            Ok(back) => {
                if back != archive {
                    failures.push(format!("case {case}: round trip changed the archive"));
                }
                if back.to_bytes().unwrap() != bytes {
                    failures.push(format!("case {case}: re-encoding is not byte-identical"));
                }
            }
            Err(e) => failures.push(format!("case {case}: {e}")),
        }

        // Poison one value of a random tensor directly in the payload.
        let victim = rng.random_range(0..n);
        let before: usize = archive.tensors()[..victim]
            .iter()
            .map(|t| t.shape().len())
            .sum();
        let slot = before + rng.random_range(0..archive.tensors()[victim].shape().len());
        let payload_start = bytes.len()
            - 8 * archive
                .tensors()
                .iter()
                .map(|t| t.shape().len())
                .sum::<usize>();
        let mut poisoned = bytes.clone();
        let at = payload_start + 8 * slot;
        let bad = if rng.random_bool(0.5) {
            f64::NAN
        } else {
            f64::INFINITY
        };
        poisoned[at..at + 8].copy_from_slice(&bad.to_le_bytes());
        let name = archive.tensors()[victim].name();
        match TensorArchive::from_bytes(&poisoned) {
            Ok(_) => failures.push(format!("case {case}: non-finite payload accepted")),
            Err(e) if !e.to_string().contains(name) => {
                failures.push(format!("case {case}: error does not name '{name}': {e}"))
            }
            Err(_) => {}
        }
    }
    verdict(
        7,
        "ATA write/read is bitwise lossless; NaN/Inf rejected by tensor name",
        &failures,
        start.elapsed(),
        Duration::from_secs(30),
    );
}
