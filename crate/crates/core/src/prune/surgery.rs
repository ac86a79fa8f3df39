use std::collections::BTreeSet;

use super::plan::{partner, PrunePlan};
use crate::error::{Error, Result};
use crate::model::{LayerKind, LayerRef, ModelState};

fn keep_list(width: usize, removed: &BTreeSet<usize>) -> Vec<usize> {
    (0..width).filter(|i| !removed.contains(i)).collect()
}

fn validate(model: &ModelState, plan: &PrunePlan) -> Result<()> {
    for (layer, removed) in &plan.removals {
        let Some(stage) = model.spec.stages.get(layer.stage) else {
            return Err(Error::Plan(format!("{layer}: no such stage")));
        };
        let Some(block) = stage.blocks.get(layer.block) else {
            return Err(Error::Plan(format!("{layer}: no such block")));
        };
        if removed.is_empty() {
            continue;
        }
        if !block.is_prunable(layer.kind) {
            return Err(Error::Plan(format!("{layer} is not prunable")));
        }
        let width = block.channels(layer.kind);
        if let Some(&i) = removed.iter().find(|&&i| i >= width) {
            return Err(Error::Plan(format!(
                "{layer}: channel {i} does not exist (layer has {width})"
            )));
        }
        if removed.len() >= width {
            return Err(Error::Plan(format!("{layer}: plan would remove every channel")));
        }
        if let Some(kind) = partner(layer.kind) {
            let other = LayerRef { kind, ..*layer };
            if plan.removals.get(&other) != Some(removed) {
                return Err(Error::Plan(format!(
                    "{layer}: plan is not closed under the conv2/dense2 coupling"
                )));
            }
        }
    }
    Ok(())
}

fn slice(model: &mut ModelState, layer: LayerRef, axis: usize, keep: &[usize], bias: bool) -> Result<()> {
    let (w, b) = model.layer_ids(layer);
    model.params[w.0] = model.params[w.0].select(axis, keep)?;
    if bias {
        // biases are stored as [1, c, 1, 1]
        model.params[b.0] = model.params[b.0].select(1, keep)?;
    }
    Ok(())
}

/// Physically removes the planned channels and every slice that depends on
/// them. Returns a new model; `model` is left untouched.
///
/// * conv1 `c`: conv1 filter `c` and bias, conv2 input slice `c`.
/// * conv2 `j` (with dense2 `j`): conv2 filter and bias, dense1 input column,
///   dense2 row and bias, and entry `j` of the residual index set, so the
///   affected block-input channel passes through unchanged.
/// * dense1 `u`: dense1 row and bias, dense2 input column `u`.
pub fn apply_structured_pruning(model: &ModelState, plan: &PrunePlan) -> Result<ModelState> {
    validate(model, plan)?;
    let mut out = model.clone();
    let mut summary = Vec::new();
    for (&layer, removed) in &plan.removals {
        if removed.is_empty() || layer.kind == LayerKind::Dense2 {
            continue;
        }
        let at = |kind| LayerRef { kind, ..layer };
        let block = out.spec.stages[layer.stage].blocks[layer.block].clone();
        let keep = keep_list(block.channels(layer.kind), removed);
        match layer.kind {
            LayerKind::Conv1 => {
                slice(&mut out, layer, 0, &keep, true)?;
                slice(&mut out, at(LayerKind::Conv2), 1, &keep, false)?;
            }
            LayerKind::Conv2 => {
                slice(&mut out, layer, 0, &keep, true)?;
                slice(&mut out, at(LayerKind::Dense1), 1, &keep, false)?;
                slice(&mut out, at(LayerKind::Dense2), 0, &keep, true)?;
            }
            LayerKind::Dense1 => {
                slice(&mut out, layer, 0, &keep, true)?;
                slice(&mut out, at(LayerKind::Dense2), 1, &keep, false)?;
            }
            LayerKind::Dense2 => unreachable!(),
        }
        let spec = &mut out.spec.stages[layer.stage].blocks[layer.block];
        match layer.kind {
            LayerKind::Conv1 => spec.c1 = keep.len(),
            LayerKind::Conv2 => {
                spec.c2 = keep.len();
                spec.d2 = keep.len();
                spec.residual_channels = keep.iter().map(|&k| spec.residual_channels[k]).collect();
            }
            LayerKind::Dense1 => spec.d1 = keep.len(),
            LayerKind::Dense2 => unreachable!(),
        }
        summary.push(format!("{layer}-{}", removed.len()));
    }
    if !summary.is_empty() {
        out.prune_history.push(summary.join(" "));
    }
    out.check_invariants()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Prng;
    use crate::tensor::Tensor;

    fn layer(stage: usize, block: usize, kind: LayerKind) -> LayerRef {
        LayerRef { stage, block, kind }
    }

    fn plan_of(entries: &[(LayerRef, &[usize])]) -> PrunePlan {
        let mut p = PrunePlan::default();
        for (l, c) in entries {
            p.remove(*l, c.iter().copied());
        }
        p
    }

    #[test]
    fn conv1_removal_matches_closed_form_delta() {
        let m = ModelState::build_default_uclf(0.25, 3).unwrap();
        let l = layer(1, 2, LayerKind::Conv1);
        let pruned = apply_structured_pruning(&m, &plan_of(&[(l, &[5])])).unwrap();
        let width = m.spec.stages[1].width;
        let c2 = m.spec.block(1, 2).c2;
        // one conv1 filter + its bias + one 3x3 input slice of every conv2 filter
        let delta = width * 9 + 1 + c2 * 9;
        assert_eq!(m.count_parameters() - pruned.count_parameters(), delta);
        assert_eq!(pruned.layer_weight(layer(1, 2, LayerKind::Conv2)).shape()[1], m.spec.block(1, 2).c1 - 1);
        assert_eq!(m.spec.block(1, 2).c1, 24, "input model untouched");
    }

    #[test]
    fn conv2_removal_keeps_block_width_and_passes_through() {
        let m = ModelState::build_default_uclf(1.0, 4).unwrap();
        let l = layer(1, 0, LayerKind::Conv2);
        let removed = [3usize, 10, 40, 63];
        let pruned = apply_structured_pruning(&m, &plan_of(&[(l, &removed)])).unwrap();
        let spec = pruned.spec.block(1, 0);
        assert_eq!((spec.c2, spec.d2), (60, 60));
        assert!(removed.iter().all(|j| !spec.residual_channels.contains(j)));
        let x = Tensor::randn([1, 64, 6, 6], 1.0, &mut Prng::new(9));
        let y = pruned.block_forward(1, 0, &x).unwrap();
        assert_eq!(y.c(), 64);
        for &j in &removed {
            for p in 0..36 {
                assert_eq!(y.data()[j * 36 + p], x.data()[j * 36 + p]);
            }
        }
    }

    #[test]
    fn zeroed_dense1_unit_is_function_preserving() {
        let mut m = ModelState::build_default_uclf(0.25, 5).unwrap();
        let l = layer(2, 2, LayerKind::Dense1);
        let ci = m.layer_weight(l).shape()[1];
        m.layer_weight_mut(l).value.data_mut()[ci..2 * ci].fill(0.0);
        m.layer_bias_mut(l).value.data_mut()[1] = 0.0;
        let pruned = apply_structured_pruning(&m, &plan_of(&[(l, &[1])])).unwrap();
        let x = Tensor::rand_uniform([2, 1, 16, 16], 0.0, 1.0, &mut Prng::new(1));
        let diff = m.forward(&x).unwrap().max_abs_diff(&pruned.forward(&x).unwrap()).unwrap();
        assert!(diff <= 1e-5, "{diff}");
    }

    #[test]
    fn rejects_bad_plans() {
        let m = ModelState::build_default_uclf(0.25, 3).unwrap();
        let c1 = layer(0, 0, LayerKind::Conv1);
        let all: Vec<usize> = (0..m.spec.block(0, 0).c1).collect();
        for plan in [
            plan_of(&[(c1, &[99])]),
            plan_of(&[(c1, &all)]),
            plan_of(&[(layer(0, 0, LayerKind::Conv2), &[0])]),
            plan_of(&[(layer(7, 0, LayerKind::Conv1), &[0])]),
        ] {
            assert!(matches!(apply_structured_pruning(&m, &plan), Err(Error::Plan(_))), "{plan:?}");
        }
        let mut unclosed = PrunePlan::default();
        unclosed
            .removals
            .insert(layer(1, 0, LayerKind::Conv2), BTreeSet::from([1]));
        assert!(matches!(apply_structured_pruning(&m, &unclosed), Err(Error::Plan(_))));
    }

    #[test]
    fn empty_plan_is_identity() {
        let m = ModelState::build_default_uclf(0.25, 3).unwrap();
        assert_eq!(apply_structured_pruning(&m, &PrunePlan::default()).unwrap(), m);
    }
}
