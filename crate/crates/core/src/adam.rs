use crate::error::{Error, Result};
use crate::param::{ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update at step `t` (1-based), followed by
/// re-applying each parameter's sparsity mask.
///
/// All gradients are checked before anything is written, so a non-finite
/// gradient leaves every parameter untouched.
pub fn adam_step<S: ParamStore + ?Sized>(store: &mut S, cfg: &AdamConfig, t: u64) -> Result<()> {
    if t == 0 {
        return Err(Error::State("adam step counter starts at 1".into()));
    }
    for i in 0..store.param_count() {
        if let Some(p) = store.param_mut(ParamId(i)) {
            if !p.gradient.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite gradient in parameter {i}; step aborted"
                )));
            }
        }
    }
    let b1 = cfg.beta1 as f64;
    let b2 = cfg.beta2 as f64;
    let bc1 = 1.0 - b1.powi(t as i32);
    let bc2 = 1.0 - b2.powi(t as i32);
    let lr = cfg.lr as f64;
    let eps = cfg.eps as f64;
    for i in 0..store.param_count() {
        let Some(p) = store.param_mut(ParamId(i)) else { continue };
        let g = p.gradient.data();
        let m = p.adam_m.data_mut();
        for (m, &g) in m.iter_mut().zip(g) {
            *m = (b1 * *m as f64 + (1.0 - b1) * g as f64) as f32;
        }
        let v = p.adam_v.data_mut();
        for (v, &g) in v.iter_mut().zip(g) {
            *v = (b2 * *v as f64 + (1.0 - b2) * (g as f64) * (g as f64)) as f32;
        }
        let (m, v) = (p.adam_m.data(), p.adam_v.data());
        for ((x, &m), &v) in p.value.data_mut().iter_mut().zip(m).zip(v) {
            let mhat = m as f64 / bc1;
            let vhat = v as f64 / bc2;
            *x = (*x as f64 - lr * mhat / (vhat.sqrt() + eps)) as f32;
        }
        p.apply_mask();
    }
    Ok(())
}

/// Stateful wrapper that owns the step counter.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam { config, t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step<S: ParamStore + ?Sized>(&mut self, store: &mut S) -> Result<()> {
        adam_step(store, &self.config, self.t + 1)?;
        self.t += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::Parameter;
    use crate::tensor::Tensor;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut ps = vec![Parameter::new(Tensor::vector(&[0.5, -0.25, 2.0]))];
        ps[0].gradient = Tensor::vector(&[0.3, -4.0, 1e-3]);
        let cfg = AdamConfig::default();
        adam_step(&mut ps, &cfg, 1).unwrap();
        let expected = [0.5 - 1e-3, -0.25 + 1e-3, 2.0 - 1e-3];
        for (v, e) in ps[0].value.data().iter().zip(expected) {
            assert!((v - e).abs() < 1e-6, "{v} vs {e}");
        }
    }

    #[test]
    fn zero_gradient_leaves_value() {
        let mut ps = vec![Parameter::new(Tensor::vector(&[0.5, -0.25]))];
        adam_step(&mut ps, &AdamConfig::default(), 1).unwrap();
        assert_eq!(ps[0].value.data(), &[0.5, -0.25]);
    }

    #[test]
    fn masked_weight_stays_zero() {
        let mask = Tensor::vector(&[0.0, 1.0]);
        let mut ps = vec![Parameter::with_mask(Tensor::vector(&[0.7, 0.7]), mask).unwrap()];
        let mut opt = Adam::new(AdamConfig::default());
        for _ in 0..5 {
            ps[0].gradient = Tensor::vector(&[5.0, 5.0]);
            opt.step(&mut ps).unwrap();
        }
        assert_eq!(ps[0].value.data()[0], 0.0);
        assert!(ps[0].value.data()[1] < 0.7);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut ps = vec![
            Parameter::new(Tensor::vector(&[1.0])),
            Parameter::new(Tensor::vector(&[1.0])),
        ];
        ps[0].gradient = Tensor::vector(&[1.0]);
        ps[1].gradient = Tensor::vector(&[f32::NAN]);
        let err = adam_step(&mut ps, &AdamConfig::default(), 1).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
        assert_eq!(ps[0].value.data(), &[1.0]);
        assert_eq!(ps[0].adam_m.data(), &[0.0]);
    }
}
