//! UCLF network: topology, parameters, forward pass and checkpoints.

mod checkpoint;
mod spec;
mod state;

pub use checkpoint::{decode, encode, load_model, save_model, write_atomic, FORMAT_VERSION, MAGIC};
pub use spec::{BlockKind, BlockSpec, LayerKind, LayerRef, NetworkSpec, StageSpec};
pub use state::{BlockVars, ModelState, NetworkVars};

/// Builds the default UCLF network at `width_scale` (in `(0, 1]`).
pub fn build_default_uclf(width_scale: f64, seed: u64) -> crate::Result<ModelState> {
    ModelState::build_default_uclf(width_scale, seed)
}
