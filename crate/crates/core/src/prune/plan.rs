use std::collections::{BTreeMap, BTreeSet};

use super::stats::ActivationStats;
use crate::model::{LayerKind, LayerRef};

/// Channels to delete, keyed by layer. Dependent slices (consumer inputs,
/// the residual index set) follow from these during surgery.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PrunePlan {
    pub removals: BTreeMap<LayerRef, BTreeSet<usize>>,
}

impl PrunePlan {
    pub fn is_empty(&self) -> bool {
        self.removals.values().all(BTreeSet::is_empty)
    }

    pub fn total(&self) -> usize {
        self.removals.values().map(BTreeSet::len).sum()
    }

    /// Removed-channel count per layer, coupled partners included.
    pub fn counts(&self) -> BTreeMap<LayerRef, usize> {
        self.removals
            .iter()
            .filter(|(_, s)| !s.is_empty())
            .map(|(l, s)| (*l, s.len()))
            .collect()
    }

    /// Adds `channels` of `layer`, coupling conv2 and dense2 together.
    pub fn remove(&mut self, layer: LayerRef, channels: impl IntoIterator<Item = usize>) {
        let channels: Vec<usize> = channels.into_iter().collect();
        self.removals.entry(layer).or_default().extend(&channels);
        if let Some(kind) = partner(layer.kind) {
            let other = LayerRef { kind, ..layer };
            self.removals.entry(other).or_default().extend(&channels);
        }
    }
}

/// conv2 output channel `j` and dense2 output `j` are multiplied together,
/// so they can only disappear as a pair.
pub(crate) fn partner(kind: LayerKind) -> Option<LayerKind> {
    match kind {
        LayerKind::Conv2 => Some(LayerKind::Dense2),
        LayerKind::Dense2 => Some(LayerKind::Conv2),
        _ => None,
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn below(values: &[f64], ct: f64) -> BTreeSet<usize> {
    let mut marked: BTreeSet<usize> = (0..values.len()).filter(|&i| values[i] < ct).collect();
    if !values.is_empty() && marked.len() == values.len() {
        marked.remove(&argmax(values));
    }
    marked
}

/// Marks every channel whose statistic is below `ct`, keeping the strongest
/// channel of a layer when all of them fall below. The result is closed
/// under the conv2/dense2 coupling; if the union of a coupled pair would
/// empty the block, the channel with the largest conv2 statistic survives.
pub fn identify_redundant_channels(stats: &ActivationStats, ct: f64) -> PrunePlan {
    let mut plan = PrunePlan::default();
    for (&layer, values) in &stats.layers {
        plan.remove(layer, below(values, ct));
    }
    let coupled: Vec<LayerRef> = plan
        .removals
        .keys()
        .copied()
        .filter(|l| l.kind == LayerKind::Conv2)
        .collect();
    for conv2 in coupled {
        let dense2 = LayerRef {
            kind: LayerKind::Dense2,
            ..conv2
        };
        let width = stats
            .get(conv2)
            .or_else(|| stats.get(dense2))
            .map_or(0, <[f64]>::len);
        if width > 0 && plan.removals[&conv2].len() >= width {
            let keep = stats
                .get(conv2)
                .or_else(|| stats.get(dense2))
                .map(argmax)
                .unwrap_or(0);
            for l in [conv2, dense2] {
                plan.removals.get_mut(&l).unwrap().remove(&keep);
            }
        }
    }
    plan.removals.retain(|_, s| !s.is_empty());
    plan
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(kind: LayerKind) -> LayerRef {
        LayerRef {
            stage: 1,
            block: 2,
            kind,
        }
    }

    fn stats(entries: &[(LayerKind, &[f64])]) -> ActivationStats {
        ActivationStats {
            layers: entries.iter().map(|(k, v)| (layer(*k), v.to_vec())).collect(),
        }
    }

    #[test]
    fn marks_below_threshold_only() {
        let plan = identify_redundant_channels(&stats(&[(LayerKind::Conv1, &[0.0005, 0.5, 0.002])]), 0.001);
        assert_eq!(plan.removals[&layer(LayerKind::Conv1)], BTreeSet::from([0]));
        assert_eq!(plan.total(), 1);
    }

    #[test]
    fn all_above_is_empty() {
        let plan = identify_redundant_channels(&stats(&[(LayerKind::Dense1, &[0.1, 0.2])]), 0.001);
        assert!(plan.is_empty());
    }

    #[test]
    fn keeps_argmax_when_all_below() {
        let plan = identify_redundant_channels(&stats(&[(LayerKind::Conv1, &[1e-5, 3e-4, 2e-4])]), 0.001);
        assert_eq!(plan.removals[&layer(LayerKind::Conv1)], BTreeSet::from([0, 2]));
    }

    #[test]
    fn coupling_closure() {
        let plan = identify_redundant_channels(&stats(&[(LayerKind::Dense2, &[0.5, 1e-4, 0.5])]), 0.001);
        assert_eq!(plan.removals[&layer(LayerKind::Conv2)], BTreeSet::from([1]));
        assert_eq!(plan.removals[&layer(LayerKind::Dense2)], BTreeSet::from([1]));
    }

    #[test]
    fn coupled_union_never_empties_block() {
        let plan = identify_redundant_channels(
            &stats(&[
                (LayerKind::Conv2, &[1e-4, 0.5, 0.3]),
                (LayerKind::Dense2, &[0.5, 1e-4, 1e-4]),
            ]),
            0.001,
        );
        assert_eq!(plan.removals[&layer(LayerKind::Conv2)], BTreeSet::from([0, 2]));
        assert_eq!(plan.removals[&layer(LayerKind::Dense2)], BTreeSet::from([0, 2]));
    }
}
