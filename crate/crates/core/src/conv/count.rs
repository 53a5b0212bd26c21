use serde::{Deserialize, Serialize};

use super::winograd::TILE_IN;
use super::{ConvSpec, LayerWindows, OpType, Stage, WinogradConfig, KERNEL};

/// Ops of one `(stage, op_type)` class within a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCount {
    pub stage: Stage,
    pub op_type: OpType,
    pub ops: u64,
    /// Sum of exposed bit widths.
    pub bits: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerOpCounts {
    pub layer_id: usize,
    pub counts: Vec<OpCount>,
    /// Output elements of the conv layer (neurons).
    pub neurons: u64,
}

impl LayerOpCounts {
    pub fn ops(&self) -> u64 {
        self.counts.iter().map(|c| c.ops).sum()
    }

    pub fn bits(&self) -> u64 {
        self.counts.iter().map(|c| c.bits).sum()
    }

    pub fn ops_of(&self, op_type: OpType) -> u64 {
        self.counts.iter().filter(|c| c.op_type == op_type).map(|c| c.ops).sum()
    }

    pub fn ops_in(&self, stage: Stage) -> u64 {
        self.counts.iter().filter(|c| c.stage == stage).map(|c| c.ops).sum()
    }

    fn push(&mut self, stage: Stage, op_type: OpType, ops: u64, width: u8) {
        if ops > 0 {
            self.counts.push(OpCount {
                stage,
                op_type,
                ops,
                bits: ops * width as u64,
            });
        }
    }
}

pub(crate) fn count_direct(
    layer_id: usize,
    spec: &ConvSpec,
    batch: usize,
    ho: usize,
    wo: usize,
    win: &LayerWindows,
) -> LayerOpCounts {
    let macs = (batch * spec.out_channels * ho * wo * spec.in_channels * KERNEL * KERNEL) as u64;
    let mut out = LayerOpCounts {
        layer_id,
        counts: Vec::new(),
        neurons: (batch * spec.out_channels * ho * wo) as u64,
    };
    out.push(Stage::DirectMac, OpType::Mul, macs, win.mul.width);
    out.push(Stage::DirectMac, OpType::Add, macs, win.add.width);
    out
}

pub(crate) fn count_winograd(
    layer_id: usize,
    spec: &ConvSpec,
    cfg: &WinogradConfig,
    batch: usize,
    ho: usize,
    wo: usize,
    win: &LayerWindows,
) -> LayerOpCounts {
    let (ty, tx) = WinogradConfig::tiles(ho, wo);
    let tiles = (batch * ty * tx) as u64;
    let (c, k) = (spec.in_channels as u64, spec.out_channels as u64);
    let elems = (TILE_IN * TILE_IN) as u64;
    let mut out = LayerOpCounts {
        layer_id,
        counts: Vec::new(),
        neurons: (batch * spec.out_channels * ho * wo) as u64,
    };
    if cfg.emit_filter_transform {
        out.push(Stage::WgFilterTf, OpType::Add, k * c * 42, win.data_add.width);
    }
    out.push(Stage::WgInputTf, OpType::Add, tiles * c * 32, win.data_add.width);
    out.push(Stage::WgEwmul, OpType::Mul, tiles * k * c * elems, win.mul.width);
    out.push(Stage::WgChannelSum, OpType::Add, tiles * k * c * elems, win.add.width);
    out.push(Stage::WgInverseTf, OpType::Add, tiles * k * 24, win.add.width);
    out
}
