use super::{ConvSpec, OpContext, OpHook, OpType, Stage, KERNEL};
use crate::error::Result;
use crate::qtensor::{requantize, QTensor, QuantParams};

/// Standard convolution (cross-correlation) of `input` (`N,C,H,W`).
///
/// Every multiply-accumulate emits a MUL followed by an ADD, in the order
/// batch, output channel, output row, output column, input channel, kernel row,
/// kernel column. Taps that fall into the zero padding still execute.
pub fn conv_direct<H: OpHook + ?Sized>(
    input: &QTensor,
    spec: &ConvSpec,
    out_qp: QuantParams,
    ctx: &mut OpContext<'_, H>,
) -> Result<QTensor> {
    let [n, _, h, w] = spec.check_input(input)?;
    let shift = spec.requant_shift(input.qparams(), out_qp)?;
    let (ho, wo) = spec.output_hw(h, w)?;
    let win = ctx.exposure().windows(out_qp.bit_width, shift);
    let k = spec.out_channels;

    let mut out = Vec::with_capacity(n * k * ho * wo);
    for b in 0..n {
        let plane = Padded::new(input, spec, b);
        for oc in 0..k {
            let bias = spec.bias.as_ref().map_or(0, |v| v[oc]);
            for oy in 0..ho {
                for ox in 0..wo {
                    let acc = plane.mac_window(spec, oc, oy, ox, |p, acc| {
                        let p = ctx.emit(Stage::DirectMac, OpType::Mul, win.mul, win.acc_bits, p);
                        ctx.emit(Stage::DirectMac, OpType::Add, win.add, win.acc_bits, acc + p)
                    });
                    out.push(requantize(acc + bias, shift, out_qp.bit_width));
                }
            }
        }
    }
    QTensor::new(vec![n, k, ho, wo], out, out_qp)
}

/// Fault-free accumulator values (before bias and requantization), `N,K,Ho,Wo` order.
pub fn direct_accumulators(input: &QTensor, spec: &ConvSpec) -> Result<Vec<i64>> {
    let [n, _, h, w] = spec.check_input(input)?;
    let (ho, wo) = spec.output_hw(h, w)?;
    let mut out = Vec::with_capacity(n * spec.out_channels * ho * wo);
    for b in 0..n {
        let plane = Padded::new(input, spec, b);
        for oc in 0..spec.out_channels {
            for oy in 0..ho {
                for ox in 0..wo {
                    out.push(plane.mac_window(spec, oc, oy, ox, |p, acc| acc + p));
                }
            }
        }
    }
    Ok(out)
}

/// One batch element with the zero border materialised.
struct Padded {
    data: Vec<i64>,
    h: usize,
    w: usize,
}

impl Padded {
    fn new(input: &QTensor, spec: &ConvSpec, b: usize) -> Self {
        let [_, c, h, w] = input.dims4();
        let p = spec.padding;
        let (hp, wp) = (h + 2 * p, w + 2 * p);
        let mut data = vec![0i64; c * hp * wp];
        let src = &input.data()[b * c * h * w..(b + 1) * c * h * w];
        for ch in 0..c {
            for y in 0..h {
                let row = &src[(ch * h + y) * w..(ch * h + y + 1) * w];
                let dst = (ch * hp + y + p) * wp + p;
                for (d, &v) in data[dst..dst + w].iter_mut().zip(row) {
                    *d = v as i64;
                }
            }
        }
        Self { data, h: hp, w: wp }
    }

    #[inline]
    fn mac_window(
        &self,
        spec: &ConvSpec,
        oc: usize,
        oy: usize,
        ox: usize,
        mut mac: impl FnMut(i64, i64) -> i64,
    ) -> i64 {
        let taps = spec.in_channels * KERNEL * KERNEL;
        let wts = &spec.weights.data()[oc * taps..(oc + 1) * taps];
        let (y0, x0) = (oy * spec.stride, ox * spec.stride);
        let mut acc = 0i64;
        for c in 0..spec.in_channels {
            let base = c * self.h * self.w;
            for ky in 0..KERNEL {
                let row = &self.data[base + (y0 + ky) * self.w + x0..][..KERNEL];
                let wrow = &wts[(c * KERNEL + ky) * KERNEL..][..KERNEL];
                for kx in 0..KERNEL {
                    acc = mac(row[kx] * wrow[kx] as i64, acc);
                }
            }
        }
        acc
    }
}
