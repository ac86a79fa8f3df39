//! MAE/Adam training and validation scoring.

use crate::adam::{Adam, AdamConfig};
use crate::autodiff::Tape;
use crate::codec::Sample;
use crate::error::{Error, Result};
use crate::metrics::psnr_tensors;
use crate::model::ModelState;
use crate::rng::Prng;
use crate::tensor::Tensor;

/// Batch size used for inference-only passes.
const EVAL_BATCH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f32,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            lr: 1e-3,
            batch_size: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_mae: f64,
    pub val_psnr: f64,
}

fn batch(samples: &[&Sample]) -> Result<(Tensor, Tensor)> {
    let deg: Vec<&Tensor> = samples.iter().map(|s| &s.degraded).collect();
    let orig: Vec<&Tensor> = samples.iter().map(|s| &s.original).collect();
    Ok((Tensor::stack(&deg)?, Tensor::stack(&orig)?))
}

/// Runs the model over `samples` in fixed order; one output per sample.
pub fn predict(model: &ModelState, samples: &[Sample]) -> Result<Vec<Tensor>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (x, _) = batch(&refs)?;
        let y = model.forward(&x)?;
        for i in 0..chunk.len() {
            let s = y.select(0, &[i])?;
            out.push(s);
        }
    }
    Ok(out)
}

/// Mean per-sample PSNR (peak 1.0) of the model output, clamped to `[0, 1]`,
/// against the originals.
pub fn evaluate_psnr(model: &ModelState, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Config("validation set is empty".into()));
    }
    let outputs = predict(model, samples)?;
    let mut total = 0.0;
    for (y, s) in outputs.iter().zip(samples) {
        total += psnr_tensors(&y.map(|v| v.clamp(0.0, 1.0)), &s.original)?;
    }
    Ok(total / samples.len() as f64)
}

/// Mean per-sample PSNR of the unfiltered (degraded) inputs.
pub fn degraded_psnr(samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Config("validation set is empty".into()));
    }
    let mut total = 0.0;
    for s in samples {
        total += psnr_tensors(&s.degraded, &s.original)?;
    }
    Ok(total / samples.len() as f64)
}

/// Mean MAE over `samples` without updating anything.
pub fn evaluate_mae(model: &ModelState, samples: &[Sample]) -> Result<f64> {
    let outputs = predict(model, samples)?;
    let mut total = 0.0;
    for (y, s) in outputs.iter().zip(samples) {
        total += crate::ops::mae_loss(y, &s.original)? as f64;
    }
    Ok(total / samples.len().max(1) as f64)
}

/// One pass over `samples` in a seeded shuffled order. Returns the
/// sample-weighted mean training loss.
pub fn train_epoch(
    model: &mut ModelState,
    opt: &mut Adam,
    samples: &[Sample],
    batch_size: usize,
    rng: &mut Prng,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    rng.shuffle(&mut order);
    let mut total = 0.0;
    for idx in order.chunks(batch_size) {
        let refs: Vec<&Sample> = idx.iter().map(|&i| &samples[i]).collect();
        let (x, target) = batch(&refs)?;
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let tv = tape.constant(target);
        let out = model.forward_tape(&mut tape, xv)?.output;
        let loss = tape.mae(out, tv)?;
        let loss_value = tape.value(loss).data()[0];
        if !loss_value.is_finite() {
            return Err(Error::Numeric(format!("non-finite training loss {loss_value}")));
        }
        tape.backward(loss, model)?;
        opt.step(model)?;
        total += loss_value as f64 * idx.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Re-trains a copy of `model`; the input is never modified, so a numeric
/// failure leaves the caller with the pre-fine-tune model.
///
/// Optimizer moments restart from zero. Returns the updated model and its
/// final training loss (with `epochs == 0`, the current training MAE).
pub fn fine_tune(
    model: &ModelState,
    train: &[Sample],
    epochs: usize,
    lr: f32,
    batch_size: usize,
    seed: u64,
) -> Result<(ModelState, f64)> {
    if epochs == 0 {
        return Ok((model.clone(), evaluate_mae(model, train)?));
    }
    let mut tuned = model.clone();
    tuned.reset_optimizer_state();
    let mut opt = Adam::new(AdamConfig {
        lr,
        ..AdamConfig::default()
    });
    let mut rng = Prng::new(seed);
    let mut loss = f64::NAN;
    for _ in 0..epochs {
        loss = train_epoch(&mut tuned, &mut opt, train, batch_size, &mut rng)?;
    }
    Ok((tuned, loss))
}

/// Baseline training. Returns the checkpoint with the best validation PSNR
/// (the initial weights count as epoch 0) and one log row per epoch.
pub fn train_model(
    model: &ModelState,
    train: &[Sample],
    validation: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(ModelState, Vec<EpochLog>)> {
    let mut current = model.clone();
    current.reset_optimizer_state();
    let mut best = current.clone();
    let mut best_psnr = evaluate_psnr(&current, validation)?;
    let mut opt = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut rng = Prng::new(cfg.seed);
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let train_mae = train_epoch(&mut current, &mut opt, train, cfg.batch_size, &mut rng)?;
        let val_psnr = evaluate_psnr(&current, validation)?;
        let log = EpochLog {
            epoch,
            train_mae,
            val_psnr,
        };
        on_epoch(&log);
        logs.push(log);
        if val_psnr > best_psnr {
            best_psnr = val_psnr;
            best = current.clone();
        }
    }
    Ok((best, logs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NetworkSpec;

    fn fixture(n: usize, seed: u64) -> Vec<Sample> {
        let mut rng = Prng::new(seed);
        (0..n)
            .map(|_| {
                let original = Tensor::rand_uniform([1, 1, 8, 8], 0.2, 0.8, &mut rng);
                let noise = Tensor::randn([1, 1, 8, 8], 0.05, &mut rng);
                let degraded = crate::ops::add(&original, &noise).unwrap();
                Sample {
                    degraded,
                    original,
                    qp: 22,
                }
            })
            .collect()
    }

    fn tiny_model(seed: u64) -> ModelState {
        let spec = NetworkSpec::default_uclf(0.125, 8).unwrap();
        ModelState::build(spec, &mut Prng::new(seed))
    }

    #[test]
    fn zero_epochs_is_noop() {
        let m = tiny_model(1);
        let data = fixture(4, 2);
        let (tuned, _) = fine_tune(&m, &data, 0, 1e-3, 2, 0).unwrap();
        assert_eq!(tuned, m);
    }

    #[test]
    fn masked_weights_survive_fine_tuning() {
        let mut m = tiny_model(3);
        for p in m.params.iter_mut().step_by(2) {
            p.sparsity_mask.data_mut()[0] = 0.0;
            p.apply_mask();
        }
        let data = fixture(4, 4);
        let (tuned, _) = fine_tune(&m, &data, 3, 1e-3, 2, 0).unwrap();
        for p in tuned.params.iter().step_by(2) {
            assert_eq!(p.value.data()[0], 0.0);
        }
        assert_ne!(tuned.params, m.params);
    }

    #[test]
    fn training_is_deterministic() {
        let m = tiny_model(5);
        let data = fixture(6, 6);
        let a = fine_tune(&m, &data, 2, 1e-3, 4, 11).unwrap();
        let b = fine_tune(&m, &data, 2, 1e-3, 4, 11).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1.to_bits(), b.1.to_bits());
    }

    #[test]
    fn empty_validation_is_config_error() {
        assert!(matches!(
            evaluate_psnr(&tiny_model(1), &[]),
            Err(Error::Config(_))
        ));
    }
}
