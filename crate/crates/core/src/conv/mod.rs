//! Direct and Winograd F(2x2,3x3) convolution over [`QTensor`], with every primitive
//! multiply and add routed through an [`OpHook`].
//!
//! Op ids are assigned in emission order, so the canonical execution order of each
//! engine *is* the op address space used for injection and segmentation.

mod count;
mod direct;
mod winograd;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qtensor::{sign_extend, BitWidth, QTensor, QuantParams};

pub use count::{LayerOpCounts, OpCount};
pub use direct::{conv_direct, direct_accumulators};
pub use winograd::{conv_winograd, WinogradConfig, AT, BT, G2};

pub(crate) use count::{count_direct, count_winograd};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    #[default]
    Direct,
    Winograd,
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Engine::Direct => "direct",
            Engine::Winograd => "winograd",
        })
    }
}

impl FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "direct" | "standard" => Ok(Engine::Direct),
            "winograd" | "wg" => Ok(Engine::Winograd),
            other => Err(Error::Config(format!("unknown engine '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpType {
    Mul,
    Add,
}

impl OpType {
    pub const ALL: [OpType; 2] = [OpType::Mul, OpType::Add];
}

impl fmt::Display for OpType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OpType::Mul => "mul",
            OpType::Add => "add",
        })
    }
}

impl FromStr for OpType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mul" => Ok(OpType::Mul),
            "add" => Ok(OpType::Add),
            other => Err(Error::Config(format!("unknown op type '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    DirectMac,
    WgInputTf,
    WgFilterTf,
    WgEwmul,
    WgChannelSum,
    WgInverseTf,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::DirectMac,
        Stage::WgInputTf,
        Stage::WgFilterTf,
        Stage::WgEwmul,
        Stage::WgChannelSum,
        Stage::WgInverseTf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::DirectMac => "direct_mac",
            Stage::WgInputTf => "wg_input_tf",
            Stage::WgFilterTf => "wg_filter_tf",
            Stage::WgEwmul => "wg_ewmul",
            Stage::WgChannelSum => "wg_channel_sum",
            Stage::WgInverseTf => "wg_inverse_tf",
        }
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown stage '{s}'")))
    }
}

/// One primitive operation of an inference, as seen by a hook.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpRecord {
    pub op_id: u64,
    pub layer_id: u32,
    pub op_type: OpType,
    pub stage: Stage,
    /// Number of result bits exposed to faults.
    pub bit_width: u8,
    /// Register bit at which the exposed window starts.
    pub lsb: u8,
}

impl OpRecord {
    /// XOR mask over the wide result for window-relative bit positions in `mask`.
    #[inline]
    pub fn widen_mask(&self, mask: u64) -> i64 {
        (mask << self.lsb) as i64
    }
}

/// Instrumentation callback for primitive ops and conv-layer outputs.
///
/// `on_op` receives the exact integer result of an op and returns the value the
/// datapath continues with.
pub trait OpHook {
    fn on_op(&mut self, op: &OpRecord, value: i64) -> i64;

    /// Called once per conv layer after requantization. `neuron_base` is the global
    /// index of the first element of `out` within the inference.
    fn on_conv_output(&mut self, _layer_id: usize, _neuron_base: u64, _out: &mut QTensor) {}
}

/// Fault-free hook.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoFaults;

impl OpHook for NoFaults {
    #[inline]
    fn on_op(&mut self, _op: &OpRecord, value: i64) -> i64 {
        value
    }
}

impl<F: FnMut(&OpRecord, i64) -> i64> OpHook for F {
    #[inline]
    fn on_op(&mut self, op: &OpRecord, value: i64) -> i64 {
        self(op, value)
    }
}

/// How many result bits of an op are exposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WidthRule {
    ModelBits,
    DoubleModelBits,
    Fixed(u32),
}

impl WidthRule {
    fn bits(self, bw: BitWidth) -> u32 {
        match self {
            WidthRule::ModelBits => bw.bits(),
            WidthRule::DoubleModelBits => 2 * bw.bits(),
            WidthRule::Fixed(n) => n,
        }
    }
}

/// Where the exposed window sits inside the wide result register.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    /// Accumulation-path ops expose bits starting at the layer's requantization point
    /// (the output LSB of the direct datapath); transform ops on activations or weights
    /// start at bit 0 of their data format.
    RequantPoint,
    /// Every window starts at bit 0 of the register.
    RegisterLsb,
}

/// Per-op exposed bit window convention.
///
/// The default exposes MUL products at twice the model width and ADD results at the
/// model width, aligned to the requantization point. Winograd accumulation values carry
/// the exact x4 filter-transform scaling inside the same register layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exposure {
    pub mul: WidthRule,
    pub add: WidthRule,
    pub alignment: Alignment,
}

impl Default for Exposure {
    fn default() -> Self {
        Self {
            mul: WidthRule::DoubleModelBits,
            add: WidthRule::ModelBits,
            alignment: Alignment::RequantPoint,
        }
    }
}

impl Exposure {
    /// Model width for both op types, at the register LSB.
    pub fn uniform() -> Self {
        Self {
            mul: WidthRule::ModelBits,
            add: WidthRule::ModelBits,
            alignment: Alignment::RegisterLsb,
        }
    }

    pub(crate) fn windows(&self, bw: BitWidth, requant_shift: i32) -> LayerWindows {
        let acc_bits = bw.accumulator_bits();
        let acc_lsb = match self.alignment {
            Alignment::RequantPoint => requant_shift.max(0) as u32,
            Alignment::RegisterLsb => 0,
        }
        .min(acc_bits - 1);
        let make = |rule: WidthRule, lsb: u32| Window {
            width: rule.bits(bw).clamp(1, acc_bits - lsb) as u8,
            lsb: lsb as u8,
        };
        LayerWindows {
            mul: make(self.mul, acc_lsb),
            add: make(self.add, acc_lsb),
            data_add: make(self.add, 0),
            acc_bits,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Window {
    pub width: u8,
    pub lsb: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct LayerWindows {
    pub mul: Window,
    pub add: Window,
    /// ADDs of the Winograd input and filter transforms.
    pub data_add: Window,
    pub acc_bits: u32,
}

/// Emits ops to a hook, assigning dense op ids across an inference.
pub struct OpContext<'h, H: OpHook + ?Sized> {
    hook: &'h mut H,
    next_op_id: u64,
    layer_id: u32,
    exposure: Exposure,
}

impl<'h, H: OpHook + ?Sized> OpContext<'h, H> {
    pub fn new(hook: &'h mut H, exposure: Exposure) -> Self {
        Self {
            hook,
            next_op_id: 0,
            layer_id: 0,
            exposure,
        }
    }

    pub fn set_layer(&mut self, layer_id: usize) {
        self.layer_id = layer_id as u32;
    }

    pub fn layer_id(&self) -> usize {
        self.layer_id as usize
    }

    /// Number of ops emitted so far (the next op id).
    pub fn ops_emitted(&self) -> u64 {
        self.next_op_id
    }

    pub fn exposure(&self) -> Exposure {
        self.exposure
    }

    pub fn hook(&mut self) -> &mut H {
        self.hook
    }

    #[inline]
    pub(crate) fn emit(&mut self, stage: Stage, op_type: OpType, win: Window, acc_bits: u32, value: i64) -> i64 {
        let rec = OpRecord {
            op_id: self.next_op_id,
            layer_id: self.layer_id,
            op_type,
            stage,
            bit_width: win.width,
            lsb: win.lsb,
        };
        self.next_op_id += 1;
        sign_extend(self.hook.on_op(&rec, value), acc_bits)
    }
}

/// A 3x3 convolution layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub padding: usize,
    pub stride: usize,
    /// `K,C,3,3`.
    pub weights: QTensor,
    /// Per output channel, in accumulator units (input scale x weight scale).
    pub bias: Option<Vec<i64>>,
}

pub const KERNEL: usize = 3;

impl ConvSpec {
    pub fn validate(&self) -> Result<()> {
        let expected = [self.out_channels, self.in_channels, KERNEL, KERNEL];
        if self.weights.shape() != expected {
            return Err(Error::Shape(format!(
                "conv weights have shape {:?}, expected {expected:?}",
                self.weights.shape()
            )));
        }
        if self.stride == 0 {
            return Err(Error::UnsupportedConv("stride must be at least 1".into()));
        }
        if let Some(b) = &self.bias {
            if b.len() != self.out_channels {
                return Err(Error::Shape(format!(
                    "bias has {} entries for {} output channels",
                    b.len(),
                    self.out_channels
                )));
            }
        }
        Ok(())
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (hp, wp) = (h + 2 * self.padding, w + 2 * self.padding);
        if hp < KERNEL || wp < KERNEL {
            return Err(Error::Shape(format!(
                "input {h}x{w} with padding {} is smaller than the kernel",
                self.padding
            )));
        }
        Ok(((hp - KERNEL) / self.stride + 1, (wp - KERNEL) / self.stride + 1))
    }

    fn check_input(&self, input: &QTensor) -> Result<[usize; 4]> {
        self.validate()?;
        if input.shape().len() != 4 {
            return Err(Error::Shape(format!(
                "conv input must be N,C,H,W, got {:?}",
                input.shape()
            )));
        }
        let dims = input.dims4();
        if dims[1] != self.in_channels {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {}",
                self.in_channels, dims[1]
            )));
        }
        if input.bit_width() != self.weights.bit_width() {
            return Err(Error::Config(format!(
                "input is {} but weights are {}",
                input.bit_width(),
                self.weights.bit_width()
            )));
        }
        Ok(dims)
    }

    /// Requantization shift `log2(s_out / (s_in * s_w))` for power-of-two scales.
    pub fn requant_shift(&self, input: QuantParams, output: QuantParams) -> Result<i32> {
        requant_shift(input, self.weights.qparams(), output)
    }
}

pub(crate) fn requant_shift(input: QuantParams, weights: QuantParams, output: QuantParams) -> Result<i32> {
    match (input.scale_log2(), weights.scale_log2(), output.scale_log2()) {
        (Some(i), Some(w), Some(o)) => Ok(o - i - w),
        _ => Err(Error::Config("requantization requires power-of-two scales".into())),
    }
}

#[inline]
pub(crate) fn padded_at(input: &QTensor, n: usize, c: usize, y: isize, x: isize) -> i64 {
    let [_, _, h, w] = input.dims4();
    if y < 0 || x < 0 || y as usize >= h || x as usize >= w {
        0
    } else {
        input.at4(n, c, y as usize, x as usize) as i64
    }
}
