//! Filter masks, chain weight surgery and plan accounting.
//!
//! Filters within a layer are treated as equally important, so the filters to
//! remove are drawn uniformly at random. Each layer draws from its own ChaCha
//! stream keyed by `(seed, layer_index)`, which makes a plan independent of
//! the order in which layers are processed.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::allocator::{floor_count, AllocationInput, AllocationResult};
use crate::archive::{KernelShape, TensorArchive, WeightTensor};
use crate::error::{Error, Result};
use crate::metric::AfieReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerPlan {
    pub name: String,
    pub filter_count: usize,
    pub ratio: f64,
    pub removed_count: usize,
    pub removed_indices: Vec<usize>,
    pub kept_indices: Vec<usize>,
}

impl LayerPlan {
    /// Builds a layer plan from an explicit removal set.
    pub fn from_removed(
        name: impl Into<String>,
        filter_count: usize,
        ratio: f64,
        removed: impl IntoIterator<Item = usize>,
    ) -> Self {
        let removed: BTreeSet<usize> = removed.into_iter().collect();
        let kept = (0..filter_count).filter(|i| !removed.contains(i)).collect();
        Self {
            name: name.into(),
            filter_count,
            ratio,
            removed_count: removed.len(),
            removed_indices: removed.into_iter().collect(),
            kept_indices: kept,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruningPlan {
    pub seed: u64,
    pub global_ratio: f64,
    pub per_layer: Vec<LayerPlan>,
    pub afie_report: AfieReport,
}

impl PruningPlan {
    /// Canonical JSON encoding; identical plans encode to identical bytes.
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("bad plan: {e}")))
    }
}

/// `min(floor(ratio · c), c − min_keep)`.
#[must_use]
pub fn removal_count(ratio: f64, filter_count: usize, min_keep: usize) -> usize {
    floor_count(ratio, filter_count).min(filter_count.saturating_sub(min_keep))
}

/// Draws the removed and kept index sets for one layer, both sorted.
#[must_use]
pub fn layer_masks(
    seed: u64,
    layer_index: usize,
    filter_count: usize,
    removed_count: usize,
) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(layer_index as u64);
    let mut removed = rand::seq::index::sample(&mut rng, filter_count, removed_count).into_vec();
    removed.sort_unstable();
    let drop: BTreeSet<usize> = removed.iter().copied().collect();
    let kept = (0..filter_count).filter(|i| !drop.contains(i)).collect();
    (removed, kept)
}

/// Turns per-layer ratios into concrete filter masks.
pub fn make_plan(
    archive: &TensorArchive,
    report: &AfieReport,
    input: &AllocationInput,
    result: &AllocationResult,
    seed: u64,
) -> Result<PruningPlan> {
    let n = archive.len();
    if result.ratios.len() != n || report.scores.len() != n {
        return Err(Error::validation(
            "plan",
            format!(
                "archive has {n} layers, allocation has {}, report has {}",
                result.ratios.len(),
                report.scores.len()
            ),
        ));
    }
    let per_layer = archive
        .tensors()
        .iter()
        .zip(&result.ratios)
        .enumerate()
        .map(|(l, (t, ratio))| {
            let c = t.filter_count();
            let k = removal_count(*ratio, c, input.min_keep);
            let (removed, kept) = layer_masks(seed, l, c, k);
            LayerPlan {
                name: t.name().to_owned(),
                filter_count: c,
                ratio: *ratio,
                removed_count: k,
                removed_indices: removed,
                kept_indices: kept,
            }
        })
        .collect();
    Ok(PruningPlan {
        seed,
        global_ratio: input.global_ratio,
        per_layer,
        afie_report: report.clone(),
    })
}

// ── Plan auditing ───────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlanIssue {
    LayerCount {
        archive: usize,
        plan: usize,
    },
    NameMismatch {
        layer: usize,
        archive: String,
        plan: String,
    },
    FilterCountMismatch {
        layer: usize,
        archive: usize,
        plan: usize,
    },
    IndexOutOfRange {
        layer: usize,
        index: usize,
    },
    NotSorted {
        layer: usize,
    },
    Overlap {
        layer: usize,
        index: usize,
    },
    Incomplete {
        layer: usize,
        missing: usize,
    },
    RemovedCountMismatch {
        layer: usize,
        declared: usize,
        expected: usize,
        actual: usize,
    },
    TooFewKept {
        layer: usize,
        kept: usize,
        min_keep: usize,
    },
    NotReproducible {
        layer: usize,
    },
}

impl fmt::Display for PlanIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::LayerCount { archive, plan } => {
                write!(f, "plan has {plan} layers, archive has {archive}")
            }
            Self::NameMismatch {
                layer,
                archive,
                plan,
            } => write!(f, "layer {layer}: plan names '{plan}', archive has '{archive}'"),
            Self::FilterCountMismatch {
                layer,
                archive,
                plan,
            } => write!(f, "layer {layer}: plan says {plan} filters, archive has {archive}"),
            Self::IndexOutOfRange { layer, index } => {
                write!(f, "layer {layer}: filter index {index} out of range")
            }
            Self::NotSorted { layer } => write!(f, "layer {layer}: index sets are not strictly ascending"),
            Self::Overlap { layer, index } => {
                write!(f, "layer {layer}: filter {index} is both kept and removed")
            }
            Self::Incomplete { layer, missing } => {
                write!(f, "layer {layer}: filter {missing} is neither kept nor removed")
            }
            Self::RemovedCountMismatch {
                layer,
                declared,
                expected,
                actual,
            } => write!(
                f,
                "layer {layer}: removed_count {declared}, ratio implies {expected}, {actual} indices listed"
            ),
            Self::TooFewKept {
                layer,
                kept,
                min_keep,
            } => write!(f, "layer {layer}: keeps {kept} filters, minimum is {min_keep}"),
            Self::NotReproducible { layer } => write!(
                f,
                "layer {layer}: masks differ from those regenerated from the plan seed"
            ),
        }
    }
}

/// Structural and determinism checks of `plan` against `archive`.
#[must_use]
pub fn audit_plan(plan: &PruningPlan, archive: &TensorArchive, min_keep: usize) -> Vec<PlanIssue> {
    let mut issues = Vec::new();
    if plan.per_layer.len() != archive.len() {
        issues.push(PlanIssue::LayerCount {
            archive: archive.len(),
            plan: plan.per_layer.len(),
        });
        return issues;
    }
    for (l, (lp, t)) in plan.per_layer.iter().zip(archive.tensors()).enumerate() {
        if lp.name != t.name() {
            issues.push(PlanIssue::NameMismatch {
                layer: l,
                archive: t.name().to_owned(),
                plan: lp.name.clone(),
            });
        }
        let c = t.filter_count();
        if lp.filter_count != c {
            issues.push(PlanIssue::FilterCountMismatch {
                layer: l,
                archive: c,
                plan: lp.filter_count,
            });
            continue;
        }
        let before = issues.len();
        issues.extend(mask_issues(l, lp));
        let expected = removal_count(lp.ratio, c, min_keep);
        if lp.removed_count != expected || lp.removed_indices.len() != expected {
            issues.push(PlanIssue::RemovedCountMismatch {
                layer: l,
                declared: lp.removed_count,
                expected,
                actual: lp.removed_indices.len(),
            });
        }
        if lp.kept_indices.len() < min_keep.min(c) {
            issues.push(PlanIssue::TooFewKept {
                layer: l,
                kept: lp.kept_indices.len(),
                min_keep,
            });
        }
        if issues.len() == before {
            let (removed, kept) = layer_masks(plan.seed, l, c, expected);
            if removed != lp.removed_indices || kept != lp.kept_indices {
                issues.push(PlanIssue::NotReproducible { layer: l });
            }
        }
    }
    issues
}

fn mask_issues(layer: usize, lp: &LayerPlan) -> Vec<PlanIssue> {
    let mut out = Vec::new();
    let c = lp.filter_count;
    for set in [&lp.removed_indices, &lp.kept_indices] {
        if set.windows(2).any(|w| w[0] >= w[1]) {
            out.push(PlanIssue::NotSorted { layer });
        }
        if let Some(&index) = set.iter().find(|i| **i >= c) {
            out.push(PlanIssue::IndexOutOfRange { layer, index });
        }
    }
    let removed: BTreeSet<usize> = lp.removed_indices.iter().copied().collect();
    let kept: BTreeSet<usize> = lp.kept_indices.iter().copied().collect();
    if let Some(&index) = removed.intersection(&kept).next() {
        out.push(PlanIssue::Overlap { layer, index });
    }
    if let Some(missing) = (0..c).find(|i| !removed.contains(i) && !kept.contains(i)) {
        out.push(PlanIssue::Incomplete { layer, missing });
    }
    out
}

// ── Surgery ─────────────────────────────────────────────────────────────────

/// Output-channel indices kept per layer, and input-channel indices kept per
/// layer when the archive has a chain topology.
fn surviving_channels(
    archive: &TensorArchive,
    plan: &PruningPlan,
) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    let issues: Vec<PlanIssue> = audit_structure(plan, archive);
    if let Some(first) = issues.first() {
        return Err(Error::validation("plan", first.to_string()));
    }
    let mut inputs: Vec<Vec<usize>> = archive
        .tensors()
        .iter()
        .map(|t| (0..t.shape().in_channels).collect())
        .collect();
    if let Some(topo) = archive.topology().filter(|t| t.chain) {
        let position: HashMap<&str, usize> = archive
            .tensors()
            .iter()
            .enumerate()
            .map(|(l, t)| (t.name(), l))
            .collect();
        for pair in topo.layers.windows(2) {
            let (a, b) = (position[pair[0].as_str()], position[pair[1].as_str()]);
            inputs[b] = plan.per_layer[a].kept_indices.clone();
        }
    }
    Ok(plan
        .per_layer
        .iter()
        .zip(inputs)
        .map(|(lp, ins)| (lp.kept_indices.clone(), ins))
        .collect())
}

/// Mask checks that surgery depends on; ratio and seed provenance are not
/// required to cut weights.
fn audit_structure(plan: &PruningPlan, archive: &TensorArchive) -> Vec<PlanIssue> {
    if plan.per_layer.len() != archive.len() {
        return vec![PlanIssue::LayerCount {
            archive: archive.len(),
            plan: plan.per_layer.len(),
        }];
    }
    let mut out = Vec::new();
    for (l, (lp, t)) in plan.per_layer.iter().zip(archive.tensors()).enumerate() {
        if lp.name != t.name() {
            out.push(PlanIssue::NameMismatch {
                layer: l,
                archive: t.name().to_owned(),
                plan: lp.name.clone(),
            });
        }
        if lp.filter_count != t.filter_count() {
            out.push(PlanIssue::FilterCountMismatch {
                layer: l,
                archive: t.filter_count(),
                plan: lp.filter_count,
            });
            continue;
        }
        out.extend(mask_issues(l, lp));
        if lp.kept_indices.is_empty() {
            out.push(PlanIssue::TooFewKept {
                layer: l,
                kept: 0,
                min_keep: 1,
            });
        }
    }
    out
}

/// Deletes pruned output channels from every layer and the matching input
/// channels from each chain successor. Surviving values are copied verbatim.
pub fn apply_plan(archive: &TensorArchive, plan: &PruningPlan) -> Result<TensorArchive> {
    match archive.topology() {
        Some(t) if t.chain => {}
        Some(_) => {
            return Err(Error::UnsupportedTopology(
                "topology is not a chain; weight surgery needs chain connectivity".into(),
            ))
        }
        None => {
            return Err(Error::UnsupportedTopology(
                "archive carries no topology; weight surgery needs a chain".into(),
            ))
        }
    }
    let channels = surviving_channels(archive, plan)?;
    let tensors = archive
        .tensors()
        .iter()
        .zip(channels)
        .map(|(t, (outs, ins))| slice_tensor(t, &ins, &outs))
        .collect::<Result<Vec<_>>>()?;
    TensorArchive::new(tensors, archive.topology().cloned())
}

fn slice_tensor(t: &WeightTensor, ins: &[usize], outs: &[usize]) -> Result<WeightTensor> {
    let s = t.shape();
    let plane = s.plane();
    let mut data = Vec::with_capacity(ins.len() * outs.len() * plane);
    for &i in ins {
        for &o in outs {
            let start = t.offset(i, o, 0, 0);
            data.extend_from_slice(&t.data()[start..start + plane]);
        }
    }
    WeightTensor::new(
        t.name(),
        KernelShape::new(ins.len(), outs.len(), s.height, s.width),
        data,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStats {
    pub params_before: usize,
    pub params_after: usize,
    pub filters_before: usize,
    pub filters_after: usize,
    pub achieved_global_ratio: f64,
}

/// Parameter and filter counts before and after the plan, convolution kernels only.
///
/// Input extents shrink only along chain links, mirroring [`apply_plan`].
pub fn plan_stats(plan: &PruningPlan, archive: &TensorArchive) -> Result<PlanStats> {
    let channels = surviving_channels(archive, plan)?;
    let params_before = archive.tensors().iter().map(|t| t.shape().len()).sum();
    let params_after = archive
        .tensors()
        .iter()
        .zip(&channels)
        .map(|(t, (outs, ins))| ins.len() * outs.len() * t.shape().plane())
        .sum();
    let filters_before: usize = archive
        .tensors()
        .iter()
        .map(WeightTensor::filter_count)
        .sum();
    let filters_after: usize = channels.iter().map(|(outs, _)| outs.len()).sum();
    Ok(PlanStats {
        params_before,
        params_after,
        filters_before,
        filters_after,
        achieved_global_ratio: 1.0 - filters_after as f64 / filters_before as f64,
    })
}
