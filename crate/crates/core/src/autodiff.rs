//! Tape-based reverse-mode differentiation over the fixed op set the network
//! needs. A [`Tape`] records every forward op as a node; [`Tape::backward`]
//! walks the nodes in reverse and writes `d loss / d value` into the
//! parameters the tape read from.

use crate::error::{Error, Result};
use crate::ops;
use crate::param::{ParamId, ParamStore, Parameter};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    Conv2d { input: Var, weights: Var, bias: Var },
    Dense { input: Var, weights: Var, bias: Var },
    Relu(Var),
    Sigmoid(Var),
    GlobalAvgPool(Var),
    ChannelScale { features: Var, scale: Var },
    Add(Var, Var),
    Concat(Var, Var),
    IndexAdd { base: Var, update: Var, indices: Vec<usize> },
    Mae { prediction: Var, target: Var },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Records a tensor that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Records a parameter read. The value is copied onto the tape.
    pub fn param(&mut self, id: ParamId, param: &Parameter) -> Var {
        self.push(param.value.clone(), Op::Param(id), true)
    }

    pub fn conv2d(&mut self, input: Var, weights: Var, bias: Var) -> Result<Var> {
        let out = ops::conv2d(self.value(input), self.value(weights), self.value(bias))?;
        let rg = self.rg(input) || self.rg(weights) || self.rg(bias);
        Ok(self.push(out, Op::Conv2d { input, weights, bias }, rg))
    }

    pub fn dense(&mut self, input: Var, weights: Var, bias: Var) -> Result<Var> {
        let out = ops::dense(self.value(input), self.value(weights), self.value(bias))?;
        let rg = self.rg(input) || self.rg(weights) || self.rg(bias);
        Ok(self.push(out, Op::Dense { input, weights, bias }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = ops::relu(self.value(x));
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = ops::sigmoid(self.value(x));
        let rg = self.rg(x);
        self.push(out, Op::Sigmoid(x), rg)
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let out = ops::global_avg_pool(self.value(x));
        let rg = self.rg(x);
        self.push(out, Op::GlobalAvgPool(x), rg)
    }

    pub fn channel_scale(&mut self, features: Var, scale: Var) -> Result<Var> {
        let out = ops::channel_scale(self.value(features), self.value(scale))?;
        let rg = self.rg(features) || self.rg(scale);
        Ok(self.push(out, Op::ChannelScale { features, scale }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::add(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::concat_channels(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Concat(a, b), rg))
    }

    pub fn index_add_channels(&mut self, base: Var, update: Var, indices: &[usize]) -> Result<Var> {
        let out = ops::index_add_channels(self.value(base), self.value(update), indices)?;
        let rg = self.rg(base) || self.rg(update);
        let op = Op::IndexAdd {
            base,
            update,
            indices: indices.to_vec(),
        };
        Ok(self.push(out, op, rg))
    }

    pub fn mae(&mut self, prediction: Var, target: Var) -> Result<Var> {
        let loss = ops::mae_loss(self.value(prediction), self.value(target))?;
        let rg = self.rg(prediction) || self.rg(target);
        Ok(self.push(Tensor::scalar(loss), Op::Mae { prediction, target }, rg))
    }

    /// Back-propagates from the scalar `loss` node.
    ///
    /// Every parameter in `store` has its gradient overwritten: parameters not
    /// reachable from `loss` get zeros. Gradients are multiplied by the
    /// parameter's sparsity mask.
    pub fn backward<S: ParamStore + ?Sized>(&self, loss: Var, store: &mut S) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::State("backward called on an empty tape".into()));
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::State(format!(
                "loss node {} not recorded on this tape ({} nodes)",
                loss.0,
                self.nodes.len()
            )));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::State("backward requires a scalar loss node".into()));
        }
        for i in 0..store.param_count() {
            if let Some(p) = store.param_mut(ParamId(i)) {
                p.zero_grad();
            }
        }

        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    let p = store.param_mut(*id).ok_or_else(|| {
                        Error::State(format!("parameter {:?} missing from store", id))
                    })?;
                    p.gradient.expect_same_shape(&g, "backward")?;
                    for ((dst, &src), &m) in p
                        .gradient
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(p.sparsity_mask.data())
                    {
                        *dst += src * m;
                    }
                }
                Op::Conv2d {
                    input,
                    weights,
                    bias,
                } => {
                    let cg = ops::conv2d_backward(
                        self.value(*input),
                        self.value(*weights),
                        &g,
                        self.rg(*input),
                    );
                    self.accumulate(&mut grads, *input, cg.input);
                    self.accumulate(&mut grads, *weights, cg.weights);
                    self.accumulate(&mut grads, *bias, cg.bias);
                }
                Op::Dense {
                    input,
                    weights,
                    bias,
                } => {
                    let (gi, gw, gb) =
                        ops::dense_backward(self.value(*input), self.value(*weights), &g);
                    self.accumulate(&mut grads, *input, gi);
                    self.accumulate(&mut grads, *weights, gw);
                    self.accumulate(&mut grads, *bias, gb);
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let data = g
                        .data()
                        .iter()
                        .zip(xv.data())
                        .map(|(&gv, &v)| if v > 0.0 { gv } else { 0.0 })
                        .collect();
                    self.accumulate(&mut grads, *x, Tensor::from_vec(g.shape(), data)?);
                }
                Op::Sigmoid(x) => {
                    let data = g
                        .data()
                        .iter()
                        .zip(node.value.data())
                        .map(|(&gv, &s)| gv * s * (1.0 - s))
                        .collect();
                    self.accumulate(&mut grads, *x, Tensor::from_vec(g.shape(), data)?);
                }
                Op::GlobalAvgPool(x) => {
                    let shape = self.value(*x).shape();
                    let hw = shape[2] * shape[3];
                    let inv = 1.0 / hw as f32;
                    let mut out = Tensor::zeros(shape);
                    for (plane, &gv) in out.data_mut().chunks_exact_mut(hw).zip(g.data()) {
                        plane.fill(gv * inv);
                    }
                    self.accumulate(&mut grads, *x, out);
                }
                Op::ChannelScale { features, scale } => {
                    let f = self.value(*features);
                    let s = self.value(*scale);
                    let hw = f.h() * f.w();
                    if self.rg(*features) {
                        self.accumulate(&mut grads, *features, ops::channel_scale(&g, s)?);
                    }
                    if self.rg(*scale) {
                        let data = g
                            .data()
                            .chunks_exact(hw)
                            .zip(f.data().chunks_exact(hw))
                            .map(|(gp, fp)| {
                                gp.iter()
                                    .zip(fp)
                                    .map(|(&a, &b)| a as f64 * b as f64)
                                    .sum::<f64>() as f32
                            })
                            .collect();
                        self.accumulate(&mut grads, *scale, Tensor::from_vec(s.shape(), data)?);
                    }
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, *a, g.clone());
                    self.accumulate(&mut grads, *b, g);
                }
                Op::Concat(a, b) => {
                    let ca = self.value(*a).c();
                    let cb = self.value(*b).c();
                    let ia: Vec<usize> = (0..ca).collect();
                    let ib: Vec<usize> = (ca..ca + cb).collect();
                    self.accumulate(&mut grads, *a, g.select(1, &ia)?);
                    self.accumulate(&mut grads, *b, g.select(1, &ib)?);
                }
                Op::IndexAdd {
                    base,
                    update,
                    indices,
                } => {
                    if self.rg(*update) {
                        self.accumulate(&mut grads, *update, g.select(1, indices)?);
                    }
                    self.accumulate(&mut grads, *base, g);
                }
                Op::Mae { prediction, target } => {
                    let p = self.value(*prediction);
                    let t = self.value(*target);
                    let up = g.data()[0];
                    let gp = ops::mae_backward(p, t, up);
                    if self.rg(*target) {
                        self.accumulate(&mut grads, *target, gp.map(|v| -v));
                    }
                    self.accumulate(&mut grads, *prediction, gp);
                }
            }
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], var: Var, g: Tensor) {
        if !self.rg(var) {
            return;
        }
        match &mut grads[var.0] {
            Some(existing) => {
                for (d, s) in existing.data_mut().iter_mut().zip(g.data()) {
                    *d += s;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_on_empty_tape_is_state_error() {
        let tape = Tape::new();
        let mut params: Vec<Parameter> = Vec::new();
        assert!(matches!(
            tape.backward(Var(0), &mut params),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn detached_prediction_gives_zero_gradients() {
        let mut params = vec![Parameter::new(Tensor::full([1, 2, 1, 1], 0.7))];
        params[0].gradient = Tensor::full([1, 2, 1, 1], 3.0);
        let mut tape = Tape::new();
        let _w = tape.param(ParamId(0), &params[0]);
        let p = tape.constant(Tensor::vector(&[1.0, 2.0]));
        let t = tape.constant(Tensor::vector(&[0.0, 0.0]));
        let loss = tape.mae(p, t).unwrap();
        tape.backward(loss, &mut params).unwrap();
        assert!(params[0].gradient.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn dense_gradient_hand_computed() {
        // loss = |w0*x0 + w1*x1 + b - t|, prediction above target -> dL/dw = x
        let mut params = vec![
            Parameter::new(Tensor::from_vec([1, 2, 1, 1], vec![1.0, 1.0]).unwrap()),
            Parameter::new(Tensor::vector(&[0.0])),
        ];
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec([1, 2, 1, 1], vec![2.0, 3.0]).unwrap());
        let w = tape.param(ParamId(0), &params[0]);
        let b = tape.param(ParamId(1), &params[1]);
        let y = tape.dense(x, w, b).unwrap();
        let t = tape.constant(Tensor::vector(&[0.0]).reshape([1, 1, 1, 1]).unwrap());
        let loss = tape.mae(y, t).unwrap();
        tape.backward(loss, &mut params).unwrap();
        assert_eq!(params[0].gradient.data(), &[2.0, 3.0]);
        assert_eq!(params[1].gradient.data(), &[1.0]);
    }

    #[test]
    fn masked_gradient_is_zero() {
        let mask = Tensor::from_vec([1, 2, 1, 1], vec![0.0, 1.0]).unwrap();
        let value = Tensor::from_vec([1, 2, 1, 1], vec![1.0, 1.0]).unwrap();
        let mut params = vec![
            Parameter::with_mask(value, mask).unwrap(),
            Parameter::new(Tensor::vector(&[0.0])),
        ];
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec([1, 2, 1, 1], vec![2.0, 3.0]).unwrap());
        let w = tape.param(ParamId(0), &params[0]);
        let b = tape.param(ParamId(1), &params[1]);
        let y = tape.dense(x, w, b).unwrap();
        let t = tape.constant(Tensor::zeros([1, 1, 1, 1]));
        let loss = tape.mae(y, t).unwrap();
        tape.backward(loss, &mut params).unwrap();
        assert_eq!(params[0].gradient.data(), &[0.0, 3.0]);
    }
}
