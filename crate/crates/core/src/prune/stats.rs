use std::collections::BTreeMap;

use crate::autodiff::Tape;
use crate::codec::Sample;
use crate::error::{Error, Result};
use crate::model::{LayerKind, LayerRef, ModelState};
use crate::tensor::Tensor;

const STATS_BATCH: usize = 8;

/// Per prunable layer, the mean absolute activation of each channel over a
/// validation set. Conv channels average over samples and positions; dense
/// units over samples.
///
/// The activation read is the layer's post-activation output: ReLU for conv1
/// and dense1, sigmoid for dense2. conv2 has no nonlinearity, so its raw
/// output is used before the dense2 scale is applied.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActivationStats {
    pub layers: BTreeMap<LayerRef, Vec<f64>>,
}

impl ActivationStats {
    pub fn get(&self, layer: LayerRef) -> Option<&[f64]> {
        self.layers.get(&layer).map(Vec::as_slice)
    }

    /// Restricts the stats to one layer.
    pub fn only(&self, layer: LayerRef) -> ActivationStats {
        ActivationStats {
            layers: self
                .layers
                .get(&layer)
                .map(|v| BTreeMap::from([(layer, v.clone())]))
                .unwrap_or_default(),
        }
    }
}

fn accumulate_abs(sums: &mut [f64], t: &Tensor) {
    let [n, c, h, w] = t.shape();
    let hw = h * w;
    for s in 0..n {
        for (ch, plane) in t.sample(s).chunks_exact(hw).enumerate().take(c) {
            sums[ch] += plane.iter().map(|v| v.abs() as f64).sum::<f64>();
        }
    }
}

pub fn collect_activation_stats(model: &ModelState, validation: &[Sample]) -> Result<ActivationStats> {
    if validation.is_empty() {
        return Err(Error::Config("validation set is empty".into()));
    }
    let layers = model.spec.prunable_layers();
    let mut sums: BTreeMap<LayerRef, Vec<f64>> = layers
        .iter()
        .map(|&l| {
            let c = model.spec.block(l.stage, l.block).channels(l.kind);
            (l, vec![0.0; c])
        })
        .collect();
    let mut positions: BTreeMap<LayerKind, usize> = BTreeMap::new();
    for chunk in validation.chunks(STATS_BATCH) {
        let inputs: Vec<&Tensor> = chunk.iter().map(|s| &s.degraded).collect();
        let x = Tensor::stack(&inputs)?;
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let vars = model.forward_tape(&mut tape, xv)?;
        for &l in &layers {
            let t = tape.value(vars.blocks[l.stage][l.block].get(l.kind));
            accumulate_abs(sums.get_mut(&l).expect("layer registered"), t);
        }
        for kind in LayerKind::ALL {
            let t = tape.value(vars.blocks[0][0].get(kind));
            *positions.entry(kind).or_default() += t.n() * t.h() * t.w();
        }
    }
    let layers = sums
        .into_iter()
        .map(|(l, v)| {
            let count = positions[&l.kind] as f64;
            (l, v.into_iter().map(|s| s / count).collect())
        })
        .collect();
    Ok(ActivationStats { layers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Prng;

    fn samples(n: usize, seed: u64) -> Vec<Sample> {
        let mut rng = Prng::new(seed);
        (0..n)
            .map(|_| {
                let t = Tensor::rand_uniform([1, 1, 12, 12], 0.0, 1.0, &mut rng);
                Sample {
                    degraded: t.clone(),
                    original: t,
                    qp: 22,
                }
            })
            .collect()
    }

    #[test]
    fn dead_conv1_channel_has_zero_stat() {
        let mut m = ModelState::build_default_uclf(0.25, 1).unwrap();
        let l = LayerRef {
            stage: 1,
            block: 0,
            kind: LayerKind::Conv1,
        };
        for i in 0..16 * 9 {
            m.layer_weight_mut(l).value.data_mut()[3 * 16 * 9 + i] = 0.0;
        }
        m.layer_bias_mut(l).value.data_mut()[3] = 0.0;
        let stats = collect_activation_stats(&m, &samples(3, 2)).unwrap();
        let v = stats.get(l).unwrap();
        assert_eq!(v.len(), 24);
        assert_eq!(v[3], 0.0);
        assert!(v.iter().all(|&s| s >= 0.0));
    }

    #[test]
    fn order_invariant() {
        let m = ModelState::build_default_uclf(0.25, 1).unwrap();
        let mut data = samples(10, 3);
        let a = collect_activation_stats(&m, &data).unwrap();
        data.reverse();
        let b = collect_activation_stats(&m, &data).unwrap();
        for (l, va) in &a.layers {
            for (x, y) in va.iter().zip(b.get(*l).unwrap()) {
                assert!((x - y).abs() <= 1e-9 * x.abs().max(1e-12), "{l}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn empty_set_is_config_error() {
        let m = ModelState::build_default_uclf(0.25, 1).unwrap();
        assert!(matches!(
            collect_activation_stats(&m, &[]),
            Err(Error::Config(_))
        ));
    }
}
