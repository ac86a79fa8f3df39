use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Residual,
    NonResidual,
}

/// The four layers inside a block that pruning can address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv1,
    Conv2,
    Dense1,
    Dense2,
}

impl LayerKind {
    pub const ALL: [LayerKind; 4] = [
        LayerKind::Conv1,
        LayerKind::Conv2,
        LayerKind::Dense1,
        LayerKind::Dense2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv1 => "conv1",
            LayerKind::Conv2 => "conv2",
            LayerKind::Dense1 => "dense1",
            LayerKind::Dense2 => "dense2",
        }
    }
}

/// Addresses one prunable layer: `(stage, block, layer)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LayerRef {
    pub stage: usize,
    pub block: usize,
    pub kind: LayerKind,
}

impl std::fmt::Display for LayerRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "s{}b{}.{}", self.stage + 1, self.block, self.kind.name())
    }
}

impl std::str::FromStr for LayerRef {
    type Err = Error;

    /// Parses the display form, e.g. `s2b0.conv1`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("invalid layer name {s:?} (expected e.g. s2b0.conv1)"));
        let (pos, kind) = s.split_once('.').ok_or_else(bad)?;
        let kind = LayerKind::ALL
            .into_iter()
            .find(|k| k.name() == kind)
            .ok_or_else(bad)?;
        let (stage, block) = pos
            .strip_prefix('s')
            .and_then(|r| r.split_once('b'))
            .ok_or_else(bad)?;
        let stage: usize = stage.parse().map_err(|_| bad())?;
        let block: usize = block.parse().map_err(|_| bad())?;
        if stage == 0 {
            return Err(bad());
        }
        Ok(LayerRef {
            stage: stage - 1,
            block,
            kind,
        })
    }
}

/// Channel budget of one generalized block.
///
/// `residual_channels` is the index set J: surviving conv2 channel `k` is
/// added onto block-input channel `residual_channels[k]`. It is empty for
/// non-residual blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub c1: usize,
    pub c2: usize,
    pub d1: usize,
    pub d2: usize,
    pub prunable_c1: bool,
    pub prunable_c2: bool,
    pub prunable_d1: bool,
    pub prunable_d2: bool,
    #[serde(default)]
    pub residual_channels: Vec<usize>,
}

impl BlockSpec {
    pub fn residual(width: usize, c1: usize, d1: usize) -> Self {
        BlockSpec {
            kind: BlockKind::Residual,
            c1,
            c2: width,
            d1,
            d2: width,
            prunable_c1: true,
            prunable_c2: true,
            prunable_d1: true,
            prunable_d2: true,
            residual_channels: (0..width).collect(),
        }
    }

    /// Non-residual blocks keep conv2/dense2 at the stage width.
    pub fn non_residual(width: usize, c1: usize, d1: usize) -> Self {
        BlockSpec {
            kind: BlockKind::NonResidual,
            c1,
            c2: width,
            d1,
            d2: width,
            prunable_c1: true,
            prunable_c2: false,
            prunable_d1: true,
            prunable_d2: false,
            residual_channels: Vec::new(),
        }
    }

    pub fn is_residual(&self) -> bool {
        self.kind == BlockKind::Residual
    }

    pub fn channels(&self, kind: LayerKind) -> usize {
        match kind {
            LayerKind::Conv1 => self.c1,
            LayerKind::Conv2 => self.c2,
            LayerKind::Dense1 => self.d1,
            LayerKind::Dense2 => self.d2,
        }
    }

    pub fn is_prunable(&self, kind: LayerKind) -> bool {
        match kind {
            LayerKind::Conv1 => self.prunable_c1,
            LayerKind::Conv2 => self.prunable_c2,
            LayerKind::Dense1 => self.prunable_d1,
            LayerKind::Dense2 => self.prunable_d2,
        }
    }

    /// Weight and bias shapes of `kind` for a block fed `width` channels.
    pub fn layer_shapes(&self, kind: LayerKind, width: usize) -> ([usize; 4], [usize; 4]) {
        match kind {
            LayerKind::Conv1 => ([self.c1, width, 3, 3], [1, self.c1, 1, 1]),
            LayerKind::Conv2 => ([self.c2, self.c1, 3, 3], [1, self.c2, 1, 1]),
            LayerKind::Dense1 => ([self.d1, self.c2, 1, 1], [1, self.d1, 1, 1]),
            LayerKind::Dense2 => ([self.d2, self.d1, 1, 1], [1, self.d2, 1, 1]),
        }
    }

    pub fn param_count(&self, width: usize) -> usize {
        LayerKind::ALL
            .iter()
            .map(|&k| {
                let (w, b) = self.layer_shapes(k, width);
                w.iter().product::<usize>() + b.iter().product::<usize>()
            })
            .sum()
    }

    pub fn validate(&self, width: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.c1 == 0 || self.c2 == 0 || self.d1 == 0 || self.d2 == 0 {
            return bad(format!("block has an empty layer: {self:?}"));
        }
        if self.d2 != self.c2 {
            return bad(format!("d2 ({}) must equal c2 ({})", self.d2, self.c2));
        }
        match self.kind {
            BlockKind::Residual => {
                if self.c2 > width {
                    return bad(format!("residual c2 {} exceeds input width {width}", self.c2));
                }
                if self.residual_channels.len() != self.c2 {
                    return bad(format!(
                        "residual index set has {} entries for c2 = {}",
                        self.residual_channels.len(),
                        self.c2
                    ));
                }
                if self.residual_channels.windows(2).any(|w| w[0] >= w[1])
                    || self.residual_channels.iter().any(|&j| j >= width)
                {
                    return bad("residual index set must be strictly increasing and < width".into());
                }
            }
            BlockKind::NonResidual => {
                if self.c2 != width {
                    return bad(format!(
                        "non-residual block must output stage width {width}, has c2 = {}",
                        self.c2
                    ));
                }
                if self.prunable_c2 || self.prunable_d2 || !self.residual_channels.is_empty() {
                    return bad("non-residual conv2/dense2 are not prunable".into());
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub width: usize,
    pub blocks: Vec<BlockSpec>,
}

/// Topology of a UCLF network.
///
/// Fixed (never pruned) layers: head conv `1 -> stages[0].width`, a transition
/// conv after stage `i` whenever `stages[i].width != stages[i+1].width`, and
/// a tail conv `last width -> 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub width_scale: f64,
    pub patch_size: usize,
    pub stages: Vec<StageSpec>,
}

fn scaled(channels: usize, scale: f64) -> usize {
    ((channels as f64 * scale).ceil() as usize).max(1)
}

impl NetworkSpec {
    /// Prunable budgets at full width, stage widths 32/64/64.
    pub fn default_uclf(width_scale: f64, patch_size: usize) -> Result<Self> {
        if !(width_scale > 0.0 && width_scale <= 1.0) {
            return Err(Error::Config(format!(
                "width_scale must lie in (0, 1], got {width_scale}"
            )));
        }
        let s = |c| scaled(c, width_scale);
        let (w1, w2, w3) = (s(32), s(64), s(64));
        let stage1 = StageSpec {
            width: w1,
            blocks: vec![
                BlockSpec::non_residual(w1, s(48), s(8)),
                BlockSpec::non_residual(w1, s(48), s(8)),
                BlockSpec::residual(w1, s(48), s(8)),
            ],
        };
        let stage2 = StageSpec {
            width: w2,
            blocks: (0..5).map(|_| BlockSpec::residual(w2, s(96), s(16))).collect(),
        };
        let stage3 = StageSpec {
            width: w3,
            blocks: vec![
                BlockSpec::non_residual(w3, s(48), s(8)),
                BlockSpec::non_residual(w3, s(48), s(8)),
                BlockSpec::residual(w3, s(96), s(16)),
            ],
        };
        let spec = NetworkSpec {
            width_scale,
            patch_size,
            stages: vec![stage1, stage2, stage3],
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.len() != 3 {
            return Err(Error::Config(format!(
                "UCLF has three stages, got {}",
                self.stages.len()
            )));
        }
        for stage in &self.stages {
            if stage.width == 0 {
                return Err(Error::Config("stage width must be positive".into()));
            }
            for block in &stage.blocks {
                block.validate(stage.width)?;
            }
        }
        Ok(())
    }

    pub fn has_transition(&self, stage: usize) -> bool {
        stage + 1 < self.stages.len() && self.stages[stage].width != self.stages[stage + 1].width
    }

    pub fn head_shapes(&self) -> ([usize; 4], [usize; 4]) {
        let w = self.stages[0].width;
        ([w, 1, 3, 3], [1, w, 1, 1])
    }

    pub fn transition_shapes(&self, stage: usize) -> ([usize; 4], [usize; 4]) {
        let (a, b) = (self.stages[stage].width, self.stages[stage + 1].width);
        ([b, a, 3, 3], [1, b, 1, 1])
    }

    pub fn tail_shapes(&self) -> ([usize; 4], [usize; 4]) {
        let w = self.stages.last().expect("validated spec").width;
        ([1, w, 3, 3], [1, 1, 1, 1])
    }

    /// Every prunable layer in network order.
    pub fn prunable_layers(&self) -> Vec<LayerRef> {
        let mut out = Vec::new();
        for (si, stage) in self.stages.iter().enumerate() {
            for (bi, block) in stage.blocks.iter().enumerate() {
                for kind in LayerKind::ALL {
                    if block.is_prunable(kind) {
                        out.push(LayerRef {
                            stage: si,
                            block: bi,
                            kind,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn block(&self, stage: usize, block: usize) -> &BlockSpec {
        &self.stages[stage].blocks[block]
    }

    /// Closed-form parameter total (weights + biases of every layer).
    pub fn param_count(&self) -> usize {
        let size = |(w, b): ([usize; 4], [usize; 4])| {
            w.iter().product::<usize>() + b.iter().product::<usize>()
        };
        let mut total = size(self.head_shapes()) + size(self.tail_shapes());
        for (si, stage) in self.stages.iter().enumerate() {
            total += stage
                .blocks
                .iter()
                .map(|b| b.param_count(stage.width))
                .sum::<usize>();
            if self.has_transition(si) {
                total += size(self.transition_shapes(si));
            }
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_width_budgets() {
        let spec = NetworkSpec::default_uclf(1.0, 48).unwrap();
        let budgets = |s: usize, b: usize| {
            let blk = spec.block(s, b);
            (blk.c1, blk.c2, blk.d1, blk.d2)
        };
        assert_eq!(spec.stages[0].width, 32);
        assert_eq!(budgets(0, 0), (48, 32, 8, 32));
        assert_eq!(budgets(0, 2), (48, 32, 8, 32));
        for b in 0..5 {
            assert_eq!(budgets(1, b), (96, 64, 16, 64));
        }
        assert_eq!(budgets(2, 1), (48, 64, 8, 64));
        assert_eq!(budgets(2, 2), (96, 64, 16, 64));
        assert!(!spec.block(0, 0).prunable_c2 && !spec.block(0, 0).prunable_d2);
        assert!(spec.has_transition(0) && !spec.has_transition(1));
    }

    #[test]
    fn rejects_bad_scale() {
        assert!(matches!(
            NetworkSpec::default_uclf(0.0, 48),
            Err(Error::Config(_))
        ));
        assert!(NetworkSpec::default_uclf(-1.0, 48).is_err());
        assert!(NetworkSpec::default_uclf(1.5, 48).is_err());
    }

    #[test]
    fn quarter_width_is_ceiling() {
        let spec = NetworkSpec::default_uclf(0.25, 48).unwrap();
        let b = spec.block(1, 0);
        assert_eq!((b.c1, b.c2, b.d1, b.d2), (24, 16, 4, 16));
        let b = spec.block(0, 0);
        assert_eq!((b.c1, b.d1), (12, 2));
        let tiny = NetworkSpec::default_uclf(0.01, 48).unwrap();
        assert_eq!(tiny.block(0, 0).d1, 1);
    }

    #[test]
    fn validation_catches_uncoupled_dense2() {
        let mut spec = NetworkSpec::default_uclf(0.25, 48).unwrap();
        spec.stages[1].blocks[0].d2 -= 1;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn layer_names_round_trip() {
        let l = LayerRef {
            stage: 1,
            block: 4,
            kind: LayerKind::Dense2,
        };
        assert_eq!(l.to_string(), "s2b4.dense2");
        assert_eq!("s2b4.dense2".parse::<LayerRef>().unwrap(), l);
        for bad in ["s0b1.conv1", "s1b1.conv9", "x", "s1.conv1"] {
            assert!(bad.parse::<LayerRef>().is_err(), "{bad}");
        }
    }
}
