//! Sparsity and structured channel pruning with the rollback loop.

mod engine;
mod plan;
mod sparsity;
mod stats;
mod surgery;

pub use engine::{
    prune_loop, prune_loop_observed, prune_sweep, AccuracyThreshold, PruneConfig, PruneTrace,
    StopReason, TraceBaseline, TraceRecord,
};
pub use plan::{identify_redundant_channels, PrunePlan};
pub use sparsity::apply_sparsity_pruning;
pub use stats::{collect_activation_stats, ActivationStats};
pub use surgery::apply_structured_pruning;
