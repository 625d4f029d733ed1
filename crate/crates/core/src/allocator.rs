//! Per-layer pruning ratios under a global filter budget.
//!
//! Ratios are inversely proportional to AFIE: `λ_l = λ_min · AFIE_max / AFIE_l`,
//! with `λ_min` chosen so that `Σ λ_l c_l = λ* · Σ c_l`. Solving that
//! constraint for `λ_min` gives
//!
//! ```text
//! λ_min = λ* · p* / Σ_l (AFIE_max / AFIE_l) · c_l
//! ```
//!
//! (The commonly quoted closed form `Σ_l λ* p* AFIE_l / (AFIE_max p_l)` does not
//! satisfy the constraint it is derived from; the form above does.)
//!
//! Layers whose ratio reaches the clamp ceiling are pinned there and `λ_min`
//! is re-solved over the remaining layers against the residual budget until
//! the clamped set stops growing.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_CLAMP_CEILING: f64 = 0.99;
pub const DEFAULT_MIN_KEEP: usize = 1;

/// Budget conservation slack, in filters.
pub const BUDGET_TOLERANCE: f64 = 0.5;
/// Proportionality slack on `λ_l · AFIE_l`.
pub const PROPORTIONALITY_TOLERANCE: f64 = 1e-10;

/// Slack used when flooring `λ_l · c_l` so that products such as
/// `0.7 · 10 = 6.999999999999999` integerize to the intended count.
pub(crate) const FLOOR_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationInput {
    pub afie: Vec<f64>,
    pub filters: Vec<usize>,
    pub global_ratio: f64,
    pub clamp_ceiling: f64,
    pub min_keep: usize,
}

impl AllocationInput {
    /// Input with the default ceiling (0.99) and `min_keep` (1).
    #[must_use]
    pub fn new(afie: Vec<f64>, filters: Vec<usize>, global_ratio: f64) -> Self {
        Self {
            afie,
            filters,
            global_ratio,
            clamp_ceiling: DEFAULT_CLAMP_CEILING,
            min_keep: DEFAULT_MIN_KEEP,
        }
    }

    #[must_use]
    pub fn with_clamp_ceiling(mut self, ceiling: f64) -> Self {
        self.clamp_ceiling = ceiling;
        self
    }

    #[must_use]
    pub fn with_min_keep(mut self, min_keep: usize) -> Self {
        self.min_keep = min_keep;
        self
    }

    /// `p*`, the model's total filter count.
    #[must_use]
    pub fn total_filters(&self) -> usize {
        self.filters.iter().sum()
    }

    /// `λ* · p*`, in filters.
    #[must_use]
    pub fn target_filters(&self) -> f64 {
        self.global_ratio * self.total_filters() as f64
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Err(Error::validation("allocation input", reason));
        if self.afie.is_empty() {
            return fail("no layers".into());
        }
        if self.afie.len() != self.filters.len() {
            return fail(format!(
                "{} AFIE values for {} filter counts",
                self.afie.len(),
                self.filters.len()
            ));
        }
        if !(self.global_ratio > 0.0 && self.global_ratio < 1.0) {
            return fail(format!("global ratio {} outside (0, 1)", self.global_ratio));
        }
        if !(self.clamp_ceiling > 0.0 && self.clamp_ceiling <= 1.0) {
            return fail(format!(
                "clamp ceiling {} outside (0, 1]",
                self.clamp_ceiling
            ));
        }
        if self.min_keep == 0 {
            return fail("min_keep must be at least 1".into());
        }
        if let Some(l) = self.filters.iter().position(|c| *c == 0) {
            return fail(format!("layer {l} has no filters"));
        }
        if let Some(l) = self.afie.iter().position(|a| !a.is_finite() || *a < 0.0) {
            return fail(format!("layer {l} has invalid AFIE {}", self.afie[l]));
        }
        if self.afie.iter().all(|a| *a == 0.0) {
            return fail("every layer has zero AFIE".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationResult {
    pub ratios: Vec<f64>,
    pub lambda_min: f64,
    /// Layers pinned at the clamp ceiling, ascending.
    pub clamped: Vec<usize>,
    /// `Σ floor(λ_l · c_l)`.
    pub achieved_budget: usize,
    /// `round(λ* · p*)`.
    pub target_budget: usize,
    /// Solve passes until the clamped set stopped growing.
    pub iterations: usize,
    /// The clamped layers alone met or exceeded the budget, so every
    /// unclamped layer was left at ratio 0.
    pub infeasible_tight: bool,
}

impl AllocationResult {
    #[must_use]
    pub fn continuous_budget(&self, filters: &[usize]) -> f64 {
        self.ratios
            .iter()
            .zip(filters)
            .map(|(r, c)| r * *c as f64)
            .sum()
    }
}

/// Number of filters a ratio removes from a layer of `filter_count` filters,
/// before the `min_keep` floor is applied.
#[must_use]
pub fn floor_count(ratio: f64, filter_count: usize) -> usize {
    let x = ratio * filter_count as f64;
    ((x + FLOOR_SLACK).floor().max(0.0) as usize).min(filter_count)
}

pub fn solve(input: &AllocationInput) -> Result<AllocationResult> {
    input.validate()?;
    let ceiling = input.clamp_ceiling;
    if input.global_ratio > ceiling {
        return Err(Error::Infeasible {
            requested: input.global_ratio,
            max_achievable: ceiling,
        });
    }

    let n = input.afie.len();
    let afie_max = input.afie.iter().copied().fold(0.0, f64::max);
    let target = input.target_filters();

    // Zero-AFIE layers would get an unbounded ratio; pin them up front.
    let mut clamped: BTreeSet<usize> = (0..n).filter(|l| input.afie[*l] == 0.0).collect();
    let mut ratios = vec![0.0; n];
    let mut lambda_min = 0.0;
    let mut iterations = 0;
    let mut infeasible_tight = false;

    loop {
        iterations += 1;
        let clamped_load: f64 = clamped
            .iter()
            .map(|l| ceiling * input.filters[*l] as f64)
            .sum();
        let residual = target - clamped_load;
        let free: Vec<usize> = (0..n).filter(|l| !clamped.contains(l)).collect();
        if free.is_empty() {
            break;
        }
        if residual <= 0.0 {
            infeasible_tight = true;
            lambda_min = 0.0;
            for l in &free {
                ratios[*l] = 0.0;
            }
            break;
        }
        let weight: f64 = free
            .iter()
            .map(|l| afie_max / input.afie[*l] * input.filters[*l] as f64)
            .sum();
        lambda_min = residual / weight;
        let mut grew = false;
        for l in free {
            let r = lambda_min * afie_max / input.afie[l];
            if r >= ceiling {
                clamped.insert(l);
                grew = true;
            } else {
                ratios[l] = r;
            }
        }
        if !grew {
            break;
        }
    }
    for l in &clamped {
        ratios[*l] = ceiling;
    }

    let achieved_budget = ratios
        .iter()
        .zip(&input.filters)
        .map(|(r, c)| floor_count(*r, *c))
        .sum();
    Ok(AllocationResult {
        ratios,
        lambda_min,
        clamped: clamped.into_iter().collect(),
        achieved_budget,
        target_budget: target.round() as usize,
        iterations,
        infeasible_tight,
    })
}

// ── Independent checks ──────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    LayerCount {
        expected: usize,
        actual: usize,
    },
    InvalidRatio {
        layer: usize,
        ratio: f64,
    },
    CeilingExceeded {
        layer: usize,
        ratio: f64,
        ceiling: f64,
    },
    ClampedBelowCeiling {
        layer: usize,
        ratio: f64,
        ceiling: f64,
    },
    BudgetConservation {
        target: f64,
        actual: f64,
    },
    Proportionality {
        layer: usize,
        expected: f64,
        actual: f64,
    },
    OrderingInverted {
        lower_afie: usize,
        higher_afie: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::LayerCount { expected, actual } => {
                write!(f, "expected {expected} layer ratios, found {actual}")
            }
            Self::InvalidRatio { layer, ratio } => {
                write!(f, "layer {layer}: invalid ratio {ratio}")
            }
            Self::CeilingExceeded {
                layer,
                ratio,
                ceiling,
            } => write!(f, "layer {layer}: ratio {ratio} exceeds ceiling {ceiling}"),
            Self::ClampedBelowCeiling {
                layer,
                ratio,
                ceiling,
            } => write!(
                f,
                "layer {layer}: marked clamped but ratio {ratio} != ceiling {ceiling}"
            ),
            Self::BudgetConservation { target, actual } => write!(
                f,
                "budget: layers remove {actual:.6} filters, target is {target:.6}"
            ),
            Self::Proportionality {
                layer,
                expected,
                actual,
            } => write!(
                f,
                "layer {layer}: ratio {actual} breaks proportionality (expected {expected})"
            ),
            Self::OrderingInverted {
                lower_afie,
                higher_afie,
            } => write!(
                f,
                "layer {lower_afie} has lower AFIE than layer {higher_afie} but a smaller ratio"
            ),
        }
    }
}

/// Re-checks a result against its input without re-running the solve.
#[must_use]
pub fn verify(input: &AllocationInput, result: &AllocationResult) -> Vec<Violation> {
    let n = input.afie.len();
    let mut out = Vec::new();
    if result.ratios.len() != n || input.filters.len() != n {
        out.push(Violation::LayerCount {
            expected: n,
            actual: result.ratios.len(),
        });
        return out;
    }
    let ceiling = input.clamp_ceiling;
    let clamped: BTreeSet<usize> = result.clamped.iter().copied().collect();

    for (l, r) in result.ratios.iter().enumerate() {
        if !r.is_finite() || *r < 0.0 {
            out.push(Violation::InvalidRatio {
                layer: l,
                ratio: *r,
            });
        } else if *r > ceiling {
            out.push(Violation::CeilingExceeded {
                layer: l,
                ratio: *r,
                ceiling,
            });
        }
    }
    for l in &clamped {
        if let Some(r) = result.ratios.get(*l) {
            if *r < ceiling {
                out.push(Violation::ClampedBelowCeiling {
                    layer: *l,
                    ratio: *r,
                    ceiling,
                });
            }
        }
    }

    if !result.infeasible_tight {
        let target = input.target_filters();
        let actual = result.continuous_budget(&input.filters);
        if (actual - target).abs() > BUDGET_TOLERANCE {
            out.push(Violation::BudgetConservation { target, actual });
        }

        let afie_max = input.afie.iter().copied().fold(0.0, f64::max);
        let anchor = result.lambda_min * afie_max;
        for l in (0..n).filter(|l| !clamped.contains(l)) {
            let actual = result.ratios[l] * input.afie[l];
            if (actual - anchor).abs() > PROPORTIONALITY_TOLERANCE {
                out.push(Violation::Proportionality {
                    layer: l,
                    expected: anchor / input.afie[l],
                    actual: result.ratios[l],
                });
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| input.afie[*a].total_cmp(&input.afie[*b]));
    for pair in order.windows(2) {
        let (lo, hi) = (pair[0], pair[1]);
        if input.afie[lo] < input.afie[hi] && result.ratios[lo] + 1e-12 < result.ratios[hi] {
            out.push(Violation::OrderingInverted {
                lower_afie: lo,
                higher_afie: hi,
            });
        }
    }
    out
}
