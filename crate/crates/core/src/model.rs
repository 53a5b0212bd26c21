//! Network definition and the layer-by-layer executor.
//!
//! Only conv layers are instrumented; ReLU, flatten and linear layers run fault-free.

use serde::{Deserialize, Serialize};

use crate::conv::{
    conv_direct, conv_winograd, count_direct, count_winograd, requant_shift, ConvSpec, Engine, Exposure, LayerOpCounts,
    OpContext, OpHook, OpType, Stage, WinogradConfig,
};
use crate::error::{Error, Result};
use crate::mitigation::{ClampMode, RangeProfile};
use crate::qtensor::{requantize, BitWidth, QTensor, QuantParams};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub spec: ConvSpec,
    pub output: QuantParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    pub in_features: usize,
    pub out_features: usize,
    /// `out_features, in_features`.
    pub weights: QTensor,
    pub bias: Option<Vec<i64>>,
    pub output: QuantParams,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(ConvLayer),
    Relu,
    /// ReLU followed by a saturating clamp to `[min, max]`.
    ConstrainedRelu {
        min: i32,
        max: i32,
    },
    Flatten,
    Linear(LinearLayer),
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv3x3",
            Layer::Relu => "relu",
            Layer::ConstrainedRelu { .. } => "constrained_relu",
            Layer::Flatten => "flatten",
            Layer::Linear(_) => "linear",
        }
    }

    fn is_activation(&self) -> bool {
        matches!(self, Layer::Relu | Layer::ConstrainedRelu { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelDef {
    pub name: String,
    pub bit_width: BitWidth,
    /// Engine used when a caller does not pick one.
    pub engine: Engine,
    /// `C,H,W` of one sample.
    pub input_shape: [usize; 3],
    pub input_qparams: QuantParams,
    pub layers: Vec<Layer>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Spatial(usize, usize, usize),
    Flat(usize),
}

impl ModelDef {
    /// Check that shapes, bit widths and scales chain end to end and that every conv
    /// can run on `engine`.
    pub fn validate_for(&self, engine: Engine) -> Result<()> {
        let [c, h, w] = self.input_shape;
        let mut shape = Shape::Spatial(c, h, w);
        let mut qp = self.input_qparams;
        if qp.bit_width != self.bit_width {
            return Err(Error::Config("input bit width differs from model".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            let ctx = |msg: String| Error::Shape(format!("layer {i} ({}): {msg}", layer.kind()));
            match layer {
                Layer::Conv(conv) => {
                    let Shape::Spatial(c, h, w) = shape else {
                        return Err(ctx("conv after flatten".into()));
                    };
                    conv.spec.validate()?;
                    if conv.spec.in_channels != c {
                        return Err(ctx(format!(
                            "expects {} input channels, previous layer yields {c}",
                            conv.spec.in_channels
                        )));
                    }
                    self.check_bits(i, conv.spec.weights.bit_width(), conv.output)?;
                    requant_shift(qp, conv.spec.weights.qparams(), conv.output)?;
                    if engine == Engine::Winograd && conv.spec.stride != 1 {
                        return Err(Error::UnsupportedConv(format!(
                            "layer {i}: stride {} conv cannot run on the winograd engine",
                            conv.spec.stride
                        )));
                    }
                    let (ho, wo) = conv.spec.output_hw(h, w)?;
                    shape = Shape::Spatial(conv.spec.out_channels, ho, wo);
                    qp = conv.output;
                }
                Layer::Relu => {}
                Layer::ConstrainedRelu { min, max } => {
                    if min > max {
                        return Err(ctx(format!("min {min} > max {max}")));
                    }
                }
                Layer::Flatten => {
                    if let Shape::Spatial(c, h, w) = shape {
                        shape = Shape::Flat(c * h * w);
                    }
                }
                Layer::Linear(lin) => {
                    let Shape::Flat(f) = shape else {
                        return Err(ctx("linear layer needs a flatten before it".into()));
                    };
                    if lin.in_features != f || lin.weights.shape() != [lin.out_features, f] {
                        return Err(ctx(format!(
                            "weights {:?} do not match {f} input features",
                            lin.weights.shape()
                        )));
                    }
                    if lin.bias.as_ref().is_some_and(|b| b.len() != lin.out_features) {
                        return Err(ctx("bias length mismatch".into()));
                    }
                    self.check_bits(i, lin.weights.bit_width(), lin.output)?;
                    requant_shift(qp, lin.weights.qparams(), lin.output)?;
                    shape = Shape::Flat(lin.out_features);
                    qp = lin.output;
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_for(self.engine)
    }

    fn check_bits(&self, i: usize, w: BitWidth, out: QuantParams) -> Result<()> {
        if w != self.bit_width || out.bit_width != self.bit_width {
            return Err(Error::Config(format!(
                "layer {i} mixes bit widths; model is {}",
                self.bit_width
            )));
        }
        Ok(())
    }

    pub fn conv_layer_ids(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| matches!(l, Layer::Conv(_)).then_some(i))
            .collect()
    }

    pub fn sample_shape(&self) -> Vec<usize> {
        let [c, h, w] = self.input_shape;
        vec![1, c, h, w]
    }
}

/// Summary of the op address space of one inference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpStreamSummary {
    pub engine: Engine,
    pub layers: Vec<LayerOpCounts>,
}

impl OpStreamSummary {
    /// `M`: total primitive ops of one inference.
    pub fn total_ops(&self) -> u64 {
        self.layers.iter().map(|l| l.ops()).sum()
    }

    pub fn total_bits(&self) -> u64 {
        self.layers.iter().map(|l| l.bits()).sum()
    }

    pub fn total_of(&self, op_type: OpType) -> u64 {
        self.layers.iter().map(|l| l.ops_of(op_type)).sum()
    }

    pub fn total_in(&self, stage: Stage) -> u64 {
        self.layers.iter().map(|l| l.ops_in(stage)).sum()
    }

    pub fn total_neurons(&self) -> u64 {
        self.layers.iter().map(|l| l.neurons).sum()
    }

    pub fn layer(&self, layer_id: usize) -> Option<&LayerOpCounts> {
        self.layers.iter().find(|l| l.layer_id == layer_id)
    }
}

/// Execution settings shared by every inference of a campaign.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ExecConfig {
    pub engine: Engine,
    #[serde(default)]
    pub exposure: Exposure,
    #[serde(default)]
    pub winograd: WinogradConfig,
}

impl ExecConfig {
    pub fn new(engine: Engine) -> Self {
        Self {
            engine,
            ..Default::default()
        }
    }
}

/// Op counts per conv layer without executing any arithmetic.
pub fn enumerate_ops(model: &ModelDef, cfg: &ExecConfig) -> Result<OpStreamSummary> {
    model.validate_for(cfg.engine)?;
    let [_, mut h, mut w] = model.input_shape;
    let mut qp = model.input_qparams;
    let mut layers = Vec::new();
    for (i, layer) in model.layers.iter().enumerate() {
        if let Layer::Conv(conv) = layer {
            let shift = conv.spec.requant_shift(qp, conv.output)?;
            let win = cfg.exposure.windows(model.bit_width, shift);
            let (ho, wo) = conv.spec.output_hw(h, w)?;
            layers.push(match cfg.engine {
                Engine::Direct => count_direct(i, &conv.spec, 1, ho, wo, &win),
                Engine::Winograd => count_winograd(i, &conv.spec, &cfg.winograd, 1, ho, wo, &win),
            });
            (h, w, qp) = (ho, wo, conv.output);
        }
    }
    Ok(OpStreamSummary {
        engine: cfg.engine,
        layers,
    })
}

/// Where an observed tensor was taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tap {
    /// Conv output after requantization (and neuron-level injection, if any).
    ConvOutput,
    /// Activation output of a conv layer: after its ReLU and any range clamp.
    Activation,
}

/// Runs a model one sample at a time.
#[derive(Debug, Clone)]
pub struct Executor<'m> {
    model: &'m ModelDef,
    cfg: ExecConfig,
    clamp: Option<(RangeProfile, ClampMode)>,
}

impl<'m> Executor<'m> {
    pub fn new(model: &'m ModelDef, cfg: ExecConfig) -> Result<Self> {
        model.validate_for(cfg.engine)?;
        Ok(Self {
            model,
            cfg,
            clamp: None,
        })
    }

    /// Clamp every conv activation to its profiled range.
    pub fn with_clamp(mut self, profile: RangeProfile, mode: ClampMode) -> Result<Self> {
        for id in self.model.conv_layer_ids() {
            profile.range(id)?;
        }
        self.clamp = Some((profile, mode));
        Ok(self)
    }

    pub fn model(&self) -> &ModelDef {
        self.model
    }

    pub fn config(&self) -> &ExecConfig {
        &self.cfg
    }

    pub fn run<H: OpHook + ?Sized>(&self, input: &QTensor, hook: &mut H) -> Result<QTensor> {
        self.run_observed(input, hook, &mut |_, _, _| {})
    }

    pub fn run_observed<H: OpHook + ?Sized>(
        &self,
        input: &QTensor,
        hook: &mut H,
        observe: &mut dyn FnMut(Tap, usize, &QTensor),
    ) -> Result<QTensor> {
        let mut x = self.prepare_input(input)?;
        let mut ctx = OpContext::new(hook, self.cfg.exposure);
        let mut neuron_base = 0u64;
        let mut pending: Option<usize> = None;
        let layers = &self.model.layers;
        for (i, layer) in layers.iter().enumerate() {
            match layer {
                Layer::Conv(conv) => {
                    ctx.set_layer(i);
                    let mut y = match self.cfg.engine {
                        Engine::Direct => conv_direct(&x, &conv.spec, conv.output, &mut ctx)?,
                        Engine::Winograd => conv_winograd(&x, &conv.spec, conv.output, &self.cfg.winograd, &mut ctx)?,
                    };
                    ctx.hook().on_conv_output(i, neuron_base, &mut y);
                    neuron_base += y.len() as u64;
                    observe(Tap::ConvOutput, i, &y);
                    x = y;
                    pending = Some(i);
                }
                Layer::Relu => x.map_in_place(|v| v.max(0) as i64),
                Layer::ConstrainedRelu { min, max } => {
                    let (lo, hi) = (*min as i64, *max as i64);
                    x.map_in_place(|v| (v.max(0) as i64).clamp(lo, hi))
                }
                Layer::Flatten => {
                    let len = x.len();
                    x = x.reshape(vec![1, len])?;
                }
                Layer::Linear(lin) => x = linear(&x, lin)?,
            }
            if let Some(id) = pending {
                let next_is_act = layers.get(i + 1).is_some_and(Layer::is_activation);
                if !(matches!(layer, Layer::Conv(_)) && next_is_act) {
                    if let Some((profile, mode)) = &self.clamp {
                        profile.apply_in_place(&mut x, id, *mode)?;
                    }
                    observe(Tap::Activation, id, &x);
                    pending = None;
                }
            }
        }
        Ok(x)
    }

    fn prepare_input(&self, input: &QTensor) -> Result<QTensor> {
        let want = self.model.sample_shape();
        if input.len() != want.iter().product::<usize>() || !(input.shape() == want || input.shape() == &want[1..]) {
            return Err(Error::Shape(format!(
                "model expects input {want:?}, got {:?}",
                input.shape()
            )));
        }
        if input.qparams() != self.model.input_qparams {
            return Err(Error::Config(
                "input quantization differs from the model's input qparams".into(),
            ));
        }
        input.clone().reshape(want)
    }
}

fn linear(x: &QTensor, lin: &LinearLayer) -> Result<QTensor> {
    let shift = requant_shift(x.qparams(), lin.weights.qparams(), lin.output)?;
    let xs = x.data();
    let ws = lin.weights.data();
    let out = (0..lin.out_features)
        .map(|j| {
            let row = &ws[j * lin.in_features..(j + 1) * lin.in_features];
            let acc: i64 = row.iter().zip(xs).map(|(&w, &v)| w as i64 * v as i64).sum();
            let bias = lin.bias.as_ref().map_or(0, |b| b[j]);
            requantize(acc + bias, shift, lin.output.bit_width)
        })
        .collect();
    QTensor::new(vec![1, lin.out_features], out, lin.output)
}

/// Index of the largest element; the lowest index wins ties.
pub fn top1(output: &QTensor) -> usize {
    let mut best = 0;
    for (i, &v) in output.data().iter().enumerate() {
        if v > output.data()[best] {
            best = i;
        }
    }
    best
}
