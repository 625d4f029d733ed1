//! Training-free filter pruning planner for convolutional networks.
//!
//! Each convolutional layer is scored by its Average Filter Information
//! Entropy (AFIE): the kernel is folded over its spatial extents, the
//! singular-value spectrum of the folded matrix is normalized into a
//! probability distribution, and the entropy of that distribution is divided
//! by the layer's filter count. Layers with a low AFIE carry less information
//! per filter and receive a proportionally higher pruning ratio under a
//! global filter budget.
//!
//! The pipeline is split into independent stages:
//!
//! - [`archive`]: reader/writer for the ATA weight snapshot format.
//! - [`spectral`]: spatial folding and singular values.
//! - [`metric`]: spectrum normalization, entropy and per-layer AFIE.
//! - [`allocator`]: per-layer ratio allocation with clamping.
//! - [`pruner`]: seeded filter masks, chain weight surgery and statistics.

pub mod allocator;
pub mod archive;
mod error;
pub mod metric;
#[cfg(any(test, feature = "oracles"))]
pub mod oracles;
pub mod pruner;
pub mod spectral;

pub use allocator::{solve, verify, AllocationInput, AllocationResult, Violation};
pub use archive::{
    read_archive, write_archive, KernelShape, TensorArchive, TopologyDescriptor, WeightTensor,
};
pub use error::{Error, Result};
pub use metric::{
    afie_for_layer, entropy, normalize_spectrum, report, AfieReport, AfieScore, NormalizedSpectrum,
};
pub use pruner::{apply_plan, make_plan, plan_stats, LayerPlan, PlanStats, PruningPlan};
pub use spectral::{fold_hw, singular_values, FoldedMatrix, LayerSpectrum};
