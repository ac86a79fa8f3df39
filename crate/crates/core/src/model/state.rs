use crate::autodiff::{Tape, Var};
use crate::error::{dim_err, Error, Result};
use crate::param::{ParamId, ParamStore, Parameter};
use crate::rng::Prng;
use crate::tensor::Tensor;

use super::spec::{BlockSpec, LayerKind, LayerRef, NetworkSpec};

/// Std-dev multiplier for the tail conv; keeps the initial residual small.
const TAIL_INIT_GAIN: f32 = 0.1;

/// Parameters of a UCLF network plus its topology and pruning history.
///
/// Parameters are stored flat in canonical order: head (w, b); then per stage
/// every block's conv1, conv2, dense1, dense2 (w, b each), followed by the
/// stage's transition conv if any; finally the tail (w, b).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub spec: NetworkSpec,
    pub params: Vec<Parameter>,
    pub prune_history: Vec<String>,
}

/// Tape handles of the activations inside one block.
#[derive(Debug, Clone, Copy)]
pub struct BlockVars {
    /// ReLU(conv1)
    pub conv1: Var,
    /// conv2 output before channel scaling
    pub conv2: Var,
    /// ReLU(dense1)
    pub dense1: Var,
    /// sigmoid(dense2), the per-channel scale
    pub dense2: Var,
    pub output: Var,
}

impl BlockVars {
    pub fn get(&self, kind: LayerKind) -> Var {
        match kind {
            LayerKind::Conv1 => self.conv1,
            LayerKind::Conv2 => self.conv2,
            LayerKind::Dense1 => self.dense1,
            LayerKind::Dense2 => self.dense2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NetworkVars {
    pub output: Var,
    pub blocks: Vec<Vec<BlockVars>>,
}

fn he_init(shape: [usize; 4], gain: f32, rng: &mut Prng) -> Tensor {
    let fan_in = shape[1] * shape[2] * shape[3];
    let std = gain * (2.0 / fan_in as f32).sqrt();
    Tensor::randn(shape, std, rng)
}

fn layer_pair(
    (w, b): ([usize; 4], [usize; 4]),
    gain: f32,
    rng: &mut Prng,
) -> [Parameter; 2] {
    [
        Parameter::new(he_init(w, gain, rng)),
        Parameter::new(Tensor::zeros(b)),
    ]
}

impl ModelState {
    /// Builds the default UCLF at `width_scale` with 48x48 training patches.
    pub fn build_default_uclf(width_scale: f64, seed: u64) -> Result<Self> {
        let spec = NetworkSpec::default_uclf(width_scale, 48)?;
        Ok(Self::build(spec, &mut Prng::new(seed)))
    }

    /// He-normal weights, zero biases.
    pub fn build(spec: NetworkSpec, rng: &mut Prng) -> Self {
        let mut params = Vec::new();
        params.extend(layer_pair(spec.head_shapes(), 1.0, rng));
        for (si, stage) in spec.stages.iter().enumerate() {
            for block in &stage.blocks {
                for kind in LayerKind::ALL {
                    params.extend(layer_pair(block.layer_shapes(kind, stage.width), 1.0, rng));
                }
            }
            if spec.has_transition(si) {
                params.extend(layer_pair(spec.transition_shapes(si), 1.0, rng));
            }
        }
        params.extend(layer_pair(spec.tail_shapes(), TAIL_INIT_GAIN, rng));
        ModelState {
            spec,
            params,
            prune_history: Vec::new(),
        }
    }

    /// Index of the first parameter of block `(stage, block)`.
    fn block_base(&self, stage: usize, block: usize) -> usize {
        let mut base = 2;
        for (si, s) in self.spec.stages.iter().enumerate() {
            if si == stage {
                return base + 8 * block;
            }
            base += 8 * s.blocks.len();
            if self.spec.has_transition(si) {
                base += 2;
            }
        }
        panic!("stage {stage} out of range");
    }

    pub fn head_ids(&self) -> (ParamId, ParamId) {
        (ParamId(0), ParamId(1))
    }

    pub fn transition_ids(&self, stage: usize) -> Option<(ParamId, ParamId)> {
        if !self.spec.has_transition(stage) {
            return None;
        }
        let base = self.block_base(stage, self.spec.stages[stage].blocks.len());
        Some((ParamId(base), ParamId(base + 1)))
    }

    pub fn tail_ids(&self) -> (ParamId, ParamId) {
        let n = self.params.len();
        (ParamId(n - 2), ParamId(n - 1))
    }

    pub fn layer_ids(&self, layer: LayerRef) -> (ParamId, ParamId) {
        let base = self.block_base(layer.stage, layer.block);
        let off = match layer.kind {
            LayerKind::Conv1 => 0,
            LayerKind::Conv2 => 2,
            LayerKind::Dense1 => 4,
            LayerKind::Dense2 => 6,
        };
        (ParamId(base + off), ParamId(base + off + 1))
    }

    pub fn param(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn layer_weight(&self, layer: LayerRef) -> &Parameter {
        &self.params[self.layer_ids(layer).0 .0]
    }

    pub fn layer_weight_mut(&mut self, layer: LayerRef) -> &mut Parameter {
        let id = self.layer_ids(layer).0;
        &mut self.params[id.0]
    }

    pub fn layer_bias_mut(&mut self, layer: LayerRef) -> &mut Parameter {
        let id = self.layer_ids(layer).1;
        &mut self.params[id.0]
    }

    /// Weight + bias element count over all layers. Masked (zeroed) weights
    /// still count: sparsity does not shrink the model.
    pub fn count_parameters(&self) -> usize {
        self.params.iter().map(Parameter::len).sum()
    }

    /// Checks topology invariants and that every tensor shape follows `spec`.
    pub fn check_invariants(&self) -> Result<()> {
        self.spec.validate()?;
        let mut expected = vec![self.spec.head_shapes()];
        for (si, stage) in self.spec.stages.iter().enumerate() {
            for block in &stage.blocks {
                for kind in LayerKind::ALL {
                    expected.push(block.layer_shapes(kind, stage.width));
                }
            }
            if self.spec.has_transition(si) {
                expected.push(self.spec.transition_shapes(si));
            }
        }
        expected.push(self.spec.tail_shapes());
        if expected.len() * 2 != self.params.len() {
            return Err(Error::State(format!(
                "spec implies {} parameter tensors, model holds {}",
                expected.len() * 2,
                self.params.len()
            )));
        }
        for (i, (w, b)) in expected.into_iter().enumerate() {
            for (j, shape) in [w, b].into_iter().enumerate() {
                let p = &self.params[2 * i + j];
                if p.shape() != shape
                    || p.gradient.shape() != shape
                    || p.adam_m.shape() != shape
                    || p.adam_v.shape() != shape
                    || p.sparsity_mask.shape() != shape
                {
                    return Err(Error::State(format!(
                        "parameter {} has shape {:?}, spec expects {:?}",
                        2 * i + j,
                        p.shape(),
                        shape
                    )));
                }
            }
        }
        Ok(())
    }

    fn read(&self, tape: &mut Tape, (w, b): (ParamId, ParamId)) -> (Var, Var) {
        (tape.param(w, self.param(w)), tape.param(b, self.param(b)))
    }

    /// Records one block on `tape`.
    pub fn block_forward_tape(
        &self,
        tape: &mut Tape,
        stage: usize,
        block: usize,
        x: Var,
    ) -> Result<BlockVars> {
        let width = self.spec.stages[stage].width;
        let spec: &BlockSpec = self.spec.block(stage, block);
        if tape.value(x).c() != width {
            return Err(dim_err!(
                "block s{}b{} expects {} input channels, got {}",
                stage + 1,
                block,
                width,
                tape.value(x).c()
            ));
        }
        let layer = |kind| LayerRef { stage, block, kind };
        let (w1, b1) = self.read(tape, self.layer_ids(layer(LayerKind::Conv1)));
        let (w2, b2) = self.read(tape, self.layer_ids(layer(LayerKind::Conv2)));
        let (wd1, bd1) = self.read(tape, self.layer_ids(layer(LayerKind::Dense1)));
        let (wd2, bd2) = self.read(tape, self.layer_ids(layer(LayerKind::Dense2)));

        let pre1 = tape.conv2d(x, w1, b1)?;
        let conv1 = tape.relu(pre1);
        let conv2 = tape.conv2d(conv1, w2, b2)?;
        let pooled = tape.global_avg_pool(conv2);
        let pre_d1 = tape.dense(pooled, wd1, bd1)?;
        let dense1 = tape.relu(pre_d1);
        let pre_d2 = tape.dense(dense1, wd2, bd2)?;
        let dense2 = tape.sigmoid(pre_d2);
        let scaled = tape.channel_scale(conv2, dense2)?;
        let output = if spec.is_residual() {
            tape.index_add_channels(x, scaled, &spec.residual_channels)?
        } else {
            scaled
        };
        Ok(BlockVars {
            conv1,
            conv2,
            dense1,
            dense2,
            output,
        })
    }

    /// Records the whole network: `x + tail(stages(head(x)))`.
    pub fn forward_tape(&self, tape: &mut Tape, x: Var) -> Result<NetworkVars> {
        if tape.value(x).c() != 1 {
            return Err(dim_err!(
                "network input must be single-channel, got {} channels",
                tape.value(x).c()
            ));
        }
        let (hw, hb) = self.read(tape, self.head_ids());
        let h = tape.conv2d(x, hw, hb)?;
        let mut h = tape.relu(h);
        let mut blocks = Vec::with_capacity(self.spec.stages.len());
        for si in 0..self.spec.stages.len() {
            let mut stage_vars = Vec::new();
            for bi in 0..self.spec.stages[si].blocks.len() {
                let vars = self.block_forward_tape(tape, si, bi, h)?;
                h = vars.output;
                stage_vars.push(vars);
            }
            blocks.push(stage_vars);
            if let Some(ids) = self.transition_ids(si) {
                let (tw, tb) = self.read(tape, ids);
                let t = tape.conv2d(h, tw, tb)?;
                h = tape.relu(t);
            }
        }
        let (tw, tb) = self.read(tape, self.tail_ids());
        let residual = tape.conv2d(h, tw, tb)?;
        let output = tape.add(x, residual)?;
        Ok(NetworkVars { output, blocks })
    }

    /// Restored output for a `[n, 1, h, w]` batch.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let vars = self.forward_tape(&mut tape, xv)?;
        Ok(tape.value(vars.output).clone())
    }

    /// Runs a single block on `x` (which must have the stage width).
    pub fn block_forward(&self, stage: usize, block: usize, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let vars = self.block_forward_tape(&mut tape, stage, block, xv)?;
        Ok(tape.value(vars.output).clone())
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(Parameter::zero_grad);
    }

    pub fn reset_optimizer_state(&mut self) {
        for p in &mut self.params {
            p.adam_m.data_mut().fill(0.0);
            p.adam_v.data_mut().fill(0.0);
        }
    }
}

impl ParamStore for ModelState {
    fn param_count(&self) -> usize {
        self.params.len()
    }

    fn param_mut(&mut self, id: ParamId) -> Option<&mut Parameter> {
        self.params.get_mut(id.0)
    }
}
