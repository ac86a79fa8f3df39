use crate::error::Result;
use crate::tensor::Tensor;

/// A learnable tensor with its gradient, Adam moments and sparsity mask.
///
/// Mask entries are exactly 0.0 or 1.0; a 0 marks a weight removed by
/// magnitude pruning. Masked weights are held at exactly zero by the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub value: Tensor,
    pub gradient: Tensor,
    pub adam_m: Tensor,
    pub adam_v: Tensor,
    pub sparsity_mask: Tensor,
}

impl Parameter {
    pub fn new(value: Tensor) -> Self {
        let shape = value.shape();
        Parameter {
            value,
            gradient: Tensor::zeros(shape),
            adam_m: Tensor::zeros(shape),
            adam_v: Tensor::zeros(shape),
            sparsity_mask: Tensor::full(shape, 1.0),
        }
    }

    pub fn with_mask(value: Tensor, mask: Tensor) -> Result<Self> {
        value.expect_same_shape(&mask, "Parameter::with_mask")?;
        let mut p = Parameter::new(value);
        p.sparsity_mask = mask;
        p.apply_mask();
        Ok(p)
    }

    pub fn shape(&self) -> [usize; 4] {
        self.value.shape()
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.gradient.data_mut().fill(0.0);
    }

    /// `value <- value * mask`.
    pub fn apply_mask(&mut self) {
        let mask = self.sparsity_mask.data();
        for (v, &m) in self.value.data_mut().iter_mut().zip(mask) {
            if m == 0.0 {
                *v = 0.0;
            }
        }
    }

    pub fn masked_count(&self) -> usize {
        self.sparsity_mask.data().iter().filter(|&&m| m == 0.0).count()
    }

    /// Restricts every per-element tensor to `keep` along `axis`.
    pub fn select(&self, axis: usize, keep: &[usize]) -> Result<Parameter> {
        Ok(Parameter {
            value: self.value.select(axis, keep)?,
            gradient: self.gradient.select(axis, keep)?,
            adam_m: self.adam_m.select(axis, keep)?,
            adam_v: self.adam_v.select(axis, keep)?,
            sparsity_mask: self.sparsity_mask.select(axis, keep)?,
        })
    }
}

/// Stable handle of a parameter inside a model's canonical parameter order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Anything that can resolve [`ParamId`]s to mutable parameters.
pub trait ParamStore {
    fn param_count(&self) -> usize;
    fn param_mut(&mut self, id: ParamId) -> Option<&mut Parameter>;
}

impl ParamStore for [Parameter] {
    fn param_count(&self) -> usize {
        self.len()
    }

    fn param_mut(&mut self, id: ParamId) -> Option<&mut Parameter> {
        self.get_mut(id.0)
    }
}

impl ParamStore for Vec<Parameter> {
    fn param_count(&self) -> usize {
        self.len()
    }

    fn param_mut(&mut self, id: ParamId) -> Option<&mut Parameter> {
        self.get_mut(id.0)
    }
}
