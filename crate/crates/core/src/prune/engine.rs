use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::plan::identify_redundant_channels;
use super::sparsity::apply_sparsity_pruning;
use super::stats::collect_activation_stats;
use super::surgery::apply_structured_pruning;
use crate::codec::Sample;
use crate::error::{Error, Result};
use crate::metrics::time_inference;
use crate::model::{LayerKind, LayerRef, ModelState};
use crate::train::{evaluate_psnr, fine_tune};

/// Minimum validation PSNR a pruned model must keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracyThreshold {
    /// dB
    Absolute(f64),
    /// dB below the unpruned model's PSNR
    MaxDrop(f64),
}

impl AccuracyThreshold {
    pub fn resolve(self, baseline_psnr: f64) -> f64 {
        match self {
            AccuracyThreshold::Absolute(at) => at,
            AccuracyThreshold::MaxDrop(drop) => baseline_psnr - drop,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    pub st: f64,
    pub ct: f64,
    pub at: AccuracyThreshold,
    pub pt: f64,
    pub train_epochs: usize,
    pub lr: f32,
    pub batch_size: usize,
    pub seed: u64,
    /// Hard cap on attempts.
    pub max_sweeps: usize,
    /// Inference-time repeats per attempt; 0 records every time as 0.
    pub timing_repeats: usize,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig {
            st: 0.8,
            ct: 0.001,
            at: AccuracyThreshold::MaxDrop(0.1),
            pt: 0.9,
            train_epochs: 2,
            lr: 1e-3,
            batch_size: 4,
            seed: 0,
            max_sweeps: 50,
            timing_repeats: 1,
        }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..1.0).contains(&self.st) {
            return bad(format!("st must lie in [0, 1), got {}", self.st));
        }
        if !(self.ct >= 0.0) {
            return bad(format!("ct must be >= 0, got {}", self.ct));
        }
        if !(0.0..=1.0).contains(&self.pt) {
            return bad(format!("pt must lie in [0, 1], got {}", self.pt));
        }
        match self.at {
            AccuracyThreshold::MaxDrop(d) if !(d >= 0.0) => {
                return bad(format!("max_drop must be >= 0, got {d}"))
            }
            AccuracyThreshold::Absolute(a) if a.is_nan() => return bad("at is NaN".into()),
            _ => {}
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.max_sweeps == 0 {
            return bad("max_sweeps must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    AccuracyBelowThreshold,
    RatioBelowThreshold,
    NoProgress,
    MaxSweeps,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::AccuracyBelowThreshold => "accuracy_below_threshold",
            StopReason::RatioBelowThreshold => "ratio_below_threshold",
            StopReason::NoProgress => "no_progress",
            StopReason::MaxSweeps => "max_sweeps",
        }
    }
}

/// One pruning attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub params: usize,
    pub psnr_db: f64,
    pub infer_time_s: f64,
    pub removed: BTreeMap<LayerRef, usize>,
    pub accepted: bool,
}

impl TraceRecord {
    pub fn removed_channels(&self) -> usize {
        self.removed.values().sum()
    }
}

/// The unpruned model's numbers, plotted as attempt 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceBaseline {
    pub params: usize,
    pub psnr_db: f64,
    pub infer_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneTrace {
    pub baseline: TraceBaseline,
    pub threshold_db: f64,
    pub records: Vec<TraceRecord>,
    pub stop: Option<StopReason>,
}

impl PruneTrace {
    pub fn attempts(&self) -> usize {
        self.records.len()
    }

    pub fn accepted(&self) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(|r| r.accepted)
    }
}

fn measure(model: &ModelState, validation: &[Sample], repeats: usize) -> Result<f64> {
    if repeats == 0 {
        return Ok(0.0);
    }
    Ok(time_inference(model, validation, repeats)?.median_s)
}

/// One full pass over the prunable layers: for each layer in order, magnitude
/// sparsity, fresh activation statistics, identification and removal.
/// Masks stay on the model. Returns the per-layer removed-channel counts.
pub fn prune_sweep(
    model: &ModelState,
    cfg: &PruneConfig,
    validation: &[Sample],
) -> Result<(ModelState, BTreeMap<LayerRef, usize>)> {
    let mut current = model.clone();
    let mut removed = BTreeMap::new();
    for (si, stage) in model.spec.stages.iter().enumerate() {
        for bi in 0..stage.blocks.len() {
            for kind in LayerKind::ALL {
                let layer = LayerRef {
                    stage: si,
                    block: bi,
                    kind,
                };
                if !current.spec.block(si, bi).is_prunable(kind) {
                    continue;
                }
                apply_sparsity_pruning(current.layer_weight_mut(layer), cfg.st)?;
                let stats = collect_activation_stats(&current, validation)?.only(layer);
                let plan = identify_redundant_channels(&stats, cfg.ct);
                if plan.is_empty() {
                    continue;
                }
                current = apply_structured_pruning(&current, &plan)?;
                for (l, n) in plan.counts() {
                    *removed.entry(l).or_insert(0) += n;
                }
            }
        }
    }
    Ok((current, removed))
}

/// Iterative prune / fine-tune loop with rollback.
///
/// Each attempt starts from the last accepted model. An attempt is accepted
/// when it removed at least one channel, keeps validation PSNR at or above
/// the threshold and keeps `params / params(original) >= 1 - pt`. The first
/// attempt that fails any of these ends the loop, and the last accepted model
/// (the original if none) is returned.
pub fn prune_loop(
    original: &ModelState,
    cfg: &PruneConfig,
    train: &[Sample],
    validation: &[Sample],
) -> Result<(ModelState, PruneTrace)> {
    prune_loop_observed(original, cfg, train, validation, |_| {})
}

pub fn prune_loop_observed(
    original: &ModelState,
    cfg: &PruneConfig,
    train: &[Sample],
    validation: &[Sample],
    mut on_attempt: impl FnMut(&TraceRecord),
) -> Result<(ModelState, PruneTrace)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let original_params = original.count_parameters();
    let baseline_psnr = evaluate_psnr(original, validation)?;
    let threshold_db = cfg.at.resolve(baseline_psnr);
    let mut trace = PruneTrace {
        baseline: TraceBaseline {
            params: original_params,
            psnr_db: baseline_psnr,
            infer_time_s: measure(original, validation, cfg.timing_repeats)?,
        },
        threshold_db,
        records: Vec::new(),
        stop: None,
    };
    let mut accepted = original.clone();
    for iteration in 1..=cfg.max_sweeps {
        let (swept, removed) = prune_sweep(&accepted, cfg, validation)?;
        let seed = cfg.seed.wrapping_add(iteration as u64);
        let (candidate, _) = fine_tune(&swept, train, cfg.train_epochs, cfg.lr, cfg.batch_size, seed)?;
        let psnr_db = evaluate_psnr(&candidate, validation)?;
        let params = candidate.count_parameters();
        let ratio = params as f64 / original_params as f64;
        let verdict = if psnr_db < threshold_db {
            Some(StopReason::AccuracyBelowThreshold)
        } else if ratio < 1.0 - cfg.pt {
            Some(StopReason::RatioBelowThreshold)
        } else if removed.is_empty() {
            Some(StopReason::NoProgress)
        } else {
            None
        };
        let record = TraceRecord {
            iteration,
            params,
            psnr_db,
            infer_time_s: measure(&candidate, validation, cfg.timing_repeats)?,
            removed,
            accepted: verdict.is_none(),
        };
        on_attempt(&record);
        trace.records.push(record);
        if let Some(reason) = verdict {
            trace.stop = Some(reason);
            return Ok((accepted, trace));
        }
        accepted = candidate;
    }
    trace.stop = Some(StopReason::MaxSweeps);
    Ok((accepted, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NetworkSpec;
    use crate::rng::Prng;
    use crate::tensor::Tensor;

    fn data(n: usize, seed: u64) -> Vec<Sample> {
        let mut rng = Prng::new(seed);
        (0..n)
            .map(|_| {
                let original = Tensor::rand_uniform([1, 1, 8, 8], 0.2, 0.8, &mut rng);
                let noise = Tensor::randn([1, 1, 8, 8], 0.03, &mut rng);
                Sample {
                    degraded: crate::ops::add(&original, &noise).unwrap(),
                    original,
                    qp: 22,
                }
            })
            .collect()
    }

    fn model() -> ModelState {
        ModelState::build(NetworkSpec::default_uclf(0.125, 8).unwrap(), &mut Prng::new(2))
    }

    fn cfg() -> PruneConfig {
        PruneConfig {
            train_epochs: 1,
            timing_repeats: 0,
            max_sweeps: 3,
            ..PruneConfig::default()
        }
    }

    #[test]
    fn unattainable_accuracy_returns_original() {
        let m = model();
        let c = PruneConfig {
            at: AccuracyThreshold::Absolute(f64::INFINITY),
            ..cfg()
        };
        let (p, trace) = prune_loop(&m, &c, &data(4, 1), &data(2, 2)).unwrap();
        assert_eq!(p, m);
        assert_eq!(trace.attempts(), 1);
        assert!(!trace.records[0].accepted);
        assert_eq!(trace.stop, Some(StopReason::AccuracyBelowThreshold));
    }

    #[test]
    fn zero_pt_returns_original() {
        let m = model();
        let c = PruneConfig {
            pt: 0.0,
            at: AccuracyThreshold::Absolute(f64::NEG_INFINITY),
            ..cfg()
        };
        let (p, trace) = prune_loop(&m, &c, &data(4, 1), &data(2, 2)).unwrap();
        assert_eq!(p, m);
        assert_eq!(trace.accepted().count(), 0);
    }

    #[test]
    fn sweep_leaves_masked_weights_at_zero() {
        let m = model();
        let (p, _) = prune_sweep(&m, &cfg(), &data(2, 3)).unwrap();
        for l in p.spec.prunable_layers() {
            let w = p.layer_weight(l);
            assert!(w.masked_count() > 0, "{l}");
            for (v, k) in w.value.data().iter().zip(w.sparsity_mask.data()) {
                assert!(*k != 0.0 || *v == 0.0);
            }
        }
        p.check_invariants().unwrap();
    }

    #[test]
    fn rejects_invalid_config() {
        for c in [
            PruneConfig { st: 1.0, ..cfg() },
            PruneConfig { ct: -1.0, ..cfg() },
            PruneConfig { pt: 1.5, ..cfg() },
            PruneConfig { batch_size: 0, ..cfg() },
        ] {
            assert!(matches!(c.validate(), Err(Error::Config(_))));
        }
    }
}
