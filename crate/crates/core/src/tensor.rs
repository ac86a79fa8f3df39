use std::fmt;

use crate::error::{dim_err, Result};
use crate::rng::Prng;

/// Rank-4 `f32` array in `(n, c, h, w)` row-major order.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f32>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl Tensor {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: [usize; 4], value: f32) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(dim_err!(
                "shape {:?} needs {} values, got {}",
                shape,
                expected,
                data.len()
            ));
        }
        Ok(Tensor { shape, data })
    }

    /// Convenience for a 1-D vector stored as `[1, len, 1, 1]`.
    pub fn vector(values: &[f32]) -> Self {
        Tensor {
            shape: [1, values.len(), 1, 1],
            data: values.to_vec(),
        }
    }

    pub fn scalar(value: f32) -> Self {
        Tensor {
            shape: [1, 1, 1, 1],
            data: vec![value],
        }
    }

    pub fn randn(shape: [usize; 4], std: f32, rng: &mut Prng) -> Self {
        let len = shape.iter().product();
        let data = (0..len).map(|_| rng.normal() * std).collect();
        Tensor { shape, data }
    }

    pub fn rand_uniform(shape: [usize; 4], lo: f32, hi: f32, rng: &mut Prng) -> Self {
        let len = shape.iter().product();
        let data = (0..len).map(|_| rng.uniform(lo, hi)).collect();
        Tensor { shape, data }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn n(&self) -> usize {
        self.shape[0]
    }

    pub fn c(&self) -> usize {
        self.shape[1]
    }

    pub fn h(&self) -> usize {
        self.shape[2]
    }

    pub fn w(&self) -> usize {
        self.shape[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape[1] + c) * self.shape[2] + y) * self.shape[3] + x
    }

    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(n, c, y, x)]
    }

    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, value: f32) {
        let i = self.index(n, c, y, x);
        self.data[i] = value;
    }

    pub fn reshape(mut self, shape: [usize; 4]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(dim_err!("cannot reshape {:?} to {:?}", self.shape, shape));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f32> {
        self.expect_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }

    pub(crate) fn expect_same_shape(&self, other: &Tensor, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(dim_err!(
                "{op}: shape {:?} does not match {:?}",
                self.shape,
                other.shape
            ));
        }
        Ok(())
    }

    /// Keeps only the listed indices along `axis`, in the given order.
    pub fn select(&self, axis: usize, keep: &[usize]) -> Result<Tensor> {
        assert!(axis < 4);
        let extent = self.shape[axis];
        if let Some(&bad) = keep.iter().find(|&&i| i >= extent) {
            return Err(dim_err!("index {bad} out of range for axis {axis} (extent {extent})"));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut shape = self.shape;
        shape[axis] = keep.len();
        let mut data = Vec::with_capacity(outer * keep.len() * inner);
        for o in 0..outer {
            for &k in keep {
                let start = (o * extent + k) * inner;
                data.extend_from_slice(&self.data[start..start + inner]);
            }
        }
        Ok(Tensor { shape, data })
    }

    /// Flat view of sample `n` (all channels and positions).
    pub fn sample(&self, n: usize) -> &[f32] {
        let len = self.shape[1] * self.shape[2] * self.shape[3];
        &self.data[n * len..(n + 1) * len]
    }

    /// Stacks single-sample tensors along the batch axis.
    pub fn stack(items: &[&Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| dim_err!("cannot stack zero tensors"))?;
        let [_, c, h, w] = first.shape;
        let mut n = 0;
        let mut data = Vec::new();
        for t in items {
            if t.shape[1..] != [c, h, w] {
                return Err(dim_err!("stack: {:?} vs {:?}", t.shape, first.shape));
            }
            n += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor {
            shape: [n, c, h, w],
            data,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::from_vec([1, 2, 2, 2], vec![0.0; 7]).is_err());
        assert!(Tensor::from_vec([1, 2, 2, 2], vec![0.0; 8]).is_ok());
    }

    #[test]
    fn select_channels() {
        let t = Tensor::from_vec([1, 3, 1, 2], vec![0., 1., 10., 11., 20., 21.]).unwrap();
        let s = t.select(1, &[2, 0]).unwrap();
        assert_eq!(s.shape(), [1, 2, 1, 2]);
        assert_eq!(s.data(), &[20., 21., 0., 1.]);
        assert!(t.select(1, &[3]).is_err());
    }

    #[test]
    fn index_is_row_major() {
        let t = Tensor::zeros([2, 3, 4, 5]);
        assert_eq!(t.index(1, 2, 3, 4), t.len() - 1);
        assert_eq!(t.index(0, 0, 1, 0), 5);
    }
}
