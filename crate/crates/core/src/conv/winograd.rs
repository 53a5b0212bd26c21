//! Winograd F(2x2,3x3): `Y = A^T [ sum_c (G g G^T) . (B^T d B) ] A`.
//!
//! `G` has halves, so filters are transformed with `2G` instead, which keeps every
//! value an exact integer. The transform-domain accumulator therefore holds 4x the
//! direct accumulator, and requantization shifts by two extra bits. Fault-free output
//! is bit-exact with [`conv_direct`](super::conv_direct).

use serde::{Deserialize, Serialize};

use super::{padded_at, ConvSpec, LayerWindows, OpContext, OpHook, OpType, Stage};
use crate::error::{Error, Result};
use crate::qtensor::{requantize, QTensor, QuantParams};

/// Input transform `B^T`.
pub const BT: [[i64; 4]; 4] = [[1, 0, -1, 0], [0, 1, 1, 0], [0, -1, 1, 0], [0, 1, 0, -1]];
/// Filter transform scaled by two (`2G`).
pub const G2: [[i64; 3]; 4] = [[2, 0, 0], [1, 1, 1], [1, -1, 1], [0, 0, 2]];
/// Output transform `A^T`.
pub const AT: [[i64; 4]; 2] = [[1, 1, 1, 0], [0, 1, -1, -1]];

/// Output tile edge.
pub const TILE_OUT: usize = 2;
/// Input tile edge, `m + r - 1`.
pub const TILE_IN: usize = 4;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WinogradConfig {
    /// Emit the 42 ADDs of each `(2G) g (2G)^T` filter transform as ops of the
    /// inference. Off by default: filter transforms are normally computed offline.
    #[serde(default)]
    pub emit_filter_transform: bool,
}

impl WinogradConfig {
    /// Number of tiles covering an output plane; odd sizes are padded up.
    pub fn tiles(ho: usize, wo: usize) -> (usize, usize) {
        (ho.div_ceil(TILE_OUT), wo.div_ceil(TILE_OUT))
    }
}

pub fn conv_winograd<H: OpHook + ?Sized>(
    input: &QTensor,
    spec: &ConvSpec,
    out_qp: QuantParams,
    cfg: &WinogradConfig,
    ctx: &mut OpContext<'_, H>,
) -> Result<QTensor> {
    if spec.stride != 1 {
        return Err(Error::UnsupportedConv(format!(
            "winograd F(2x2,3x3) needs stride 1, got {}",
            spec.stride
        )));
    }
    let [n, c_in, h, w] = spec.check_input(input)?;
    let shift = spec.requant_shift(input.qparams(), out_qp)?;
    let (ho, wo) = spec.output_hw(h, w)?;
    let win = ctx.exposure().windows(out_qp.bit_width, shift);
    let k_out = spec.out_channels;
    let (ty_n, tx_n) = WinogradConfig::tiles(ho, wo);
    let pad = spec.padding as isize;

    let u = filter_transforms(spec, cfg.emit_filter_transform.then_some(&win), ctx);

    let mut out = vec![0i32; n * k_out * ho * wo];
    let mut v = vec![[0i64; 16]; c_in];
    let mut prods = vec![[0i64; 16]; k_out * c_in];
    let mut sums = vec![[0i64; 16]; k_out];
    for b in 0..n {
        for ty in 0..ty_n {
            for tx in 0..tx_n {
                let (y0, x0) = ((ty * TILE_OUT) as isize - pad, (tx * TILE_OUT) as isize - pad);
                for (c, vc) in v.iter_mut().enumerate() {
                    let mut d = [0i64; 16];
                    for i in 0..TILE_IN {
                        for j in 0..TILE_IN {
                            d[i * 4 + j] = padded_at(input, b, c, y0 + i as isize, x0 + j as isize);
                        }
                    }
                    *vc = input_transform(&d, &win, ctx);
                }
                for k in 0..k_out {
                    for c in 0..c_in {
                        let (uk, vc) = (&u[k * c_in + c], &v[c]);
                        let pk = &mut prods[k * c_in + c];
                        for e in 0..16 {
                            pk[e] = ctx.emit(Stage::WgEwmul, OpType::Mul, win.mul, win.acc_bits, uk[e] * vc[e]);
                        }
                    }
                }
                for (k, sk) in sums.iter_mut().enumerate() {
                    *sk = [0; 16];
                    for c in 0..c_in {
                        let pk = &prods[k * c_in + c];
                        for e in 0..16 {
                            sk[e] = ctx.emit(Stage::WgChannelSum, OpType::Add, win.add, win.acc_bits, sk[e] + pk[e]);
                        }
                    }
                }
                for (k, sk) in sums.iter().enumerate() {
                    let y = inverse_transform(sk, &win, ctx);
                    let bias4 = 4 * spec.bias.as_ref().map_or(0, |bv| bv[k]);
                    for a in 0..TILE_OUT {
                        for bb in 0..TILE_OUT {
                            let (oy, ox) = (ty * TILE_OUT + a, tx * TILE_OUT + bb);
                            if oy < ho && ox < wo {
                                out[((b * k_out + k) * ho + oy) * wo + ox] =
                                    requantize(y[a * 2 + bb] + bias4, shift + 2, out_qp.bit_width);
                            }
                        }
                    }
                }
            }
        }
    }
    QTensor::new(vec![n, k_out, ho, wo], out, out_qp)
}

/// `(2G) g (2G)^T` for every `(k, c)`, optionally emitting its ADDs.
fn filter_transforms<H: OpHook + ?Sized>(
    spec: &ConvSpec,
    emit: Option<&LayerWindows>,
    ctx: &mut OpContext<'_, H>,
) -> Vec<[i64; 16]> {
    let wts = &spec.weights;
    let mut add = |a: i64, b: i64| match emit {
        Some(win) => ctx.emit(Stage::WgFilterTf, OpType::Add, win.data_add, win.acc_bits, a + b),
        None => a + b,
    };
    let mut out = Vec::with_capacity(spec.out_channels * spec.in_channels);
    for k in 0..spec.out_channels {
        for c in 0..spec.in_channels {
            let g = |i: usize, j: usize| wts.at4(k, c, i, j) as i64;
            // (2G) g : 4x3
            let mut t = [[0i64; 3]; 4];
            #[allow(clippy::needless_range_loop)]
            for j in 0..3 {
                t[0][j] = add(g(0, j), g(0, j));
                let s = add(g(0, j), g(1, j));
                t[1][j] = add(s, g(2, j));
                let s = add(g(0, j), -g(1, j));
                t[2][j] = add(s, g(2, j));
                t[3][j] = add(g(2, j), g(2, j));
            }
            // (...) (2G)^T : 4x4
            let mut u = [0i64; 16];
            for i in 0..4 {
                u[i * 4] = add(t[i][0], t[i][0]);
                let s = add(t[i][0], t[i][1]);
                u[i * 4 + 1] = add(s, t[i][2]);
                let s = add(t[i][0], -t[i][1]);
                u[i * 4 + 2] = add(s, t[i][2]);
                u[i * 4 + 3] = add(t[i][2], t[i][2]);
            }
            out.push(u);
        }
    }
    out
}

/// `B^T d B`: 16 ADDs for the row pass, 16 for the column pass.
#[inline]
fn input_transform<H: OpHook + ?Sized>(d: &[i64; 16], win: &LayerWindows, ctx: &mut OpContext<'_, H>) -> [i64; 16] {
    let mut add = |v: i64| ctx.emit(Stage::WgInputTf, OpType::Add, win.data_add, win.acc_bits, v);
    let mut t = [0i64; 16];
    for j in 0..4 {
        let (d0, d1, d2, d3) = (d[j], d[4 + j], d[8 + j], d[12 + j]);
        t[j] = d0 - d2;
        t[4 + j] = d1 + d2;
        t[8 + j] = d2 - d1;
        t[12 + j] = d1 - d3;
    }
    // Emit in row-major order of the intermediate.
    for x in t.iter_mut() {
        *x = add(*x);
    }
    let mut v = [0i64; 16];
    for i in 0..4 {
        let (t0, t1, t2, t3) = (t[i * 4], t[i * 4 + 1], t[i * 4 + 2], t[i * 4 + 3]);
        v[i * 4] = add(t0 - t2);
        v[i * 4 + 1] = add(t1 + t2);
        v[i * 4 + 2] = add(t2 - t1);
        v[i * 4 + 3] = add(t1 - t3);
    }
    v
}

/// `A^T M A`: two ADDs per element of the 2x4 intermediate, two per output.
#[inline]
fn inverse_transform<H: OpHook + ?Sized>(m: &[i64; 16], win: &LayerWindows, ctx: &mut OpContext<'_, H>) -> [i64; 4] {
    let mut add = |v: i64| ctx.emit(Stage::WgInverseTf, OpType::Add, win.add, win.acc_bits, v);
    let mut t = [[0i64; 4]; 2];
    for j in 0..4 {
        let s = add(m[j] + m[4 + j]);
        t[0][j] = add(s + m[8 + j]);
        let s = add(m[4 + j] - m[8 + j]);
        t[1][j] = add(s - m[12 + j]);
    }
    let mut y = [0i64; 4];
    for a in 0..2 {
        let s = add(t[a][0] + t[a][1]);
        y[a * 2] = add(s + t[a][2]);
        let s = add(t[a][1] - t[a][2]);
        y[a * 2 + 1] = add(s - t[a][3]);
    }
    y
}
