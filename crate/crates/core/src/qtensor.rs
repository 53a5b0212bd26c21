//! Fixed-point tensors and the integer arithmetic semantics shared by every engine.
//!
//! Values are symmetric, per-tensor quantized: `real = int * scale`, two's complement
//! at 8 or 16 bits. Arithmetic happens in a widened accumulator (32 bits for int8
//! models, 64 bits for int16 models) and is only narrowed at requantization, which
//! rounds half away from zero and saturates.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum BitWidth {
    Int8,
    Int16,
}

impl BitWidth {
    pub const fn bits(self) -> u32 {
        match self {
            BitWidth::Int8 => 8,
            BitWidth::Int16 => 16,
        }
    }

    pub const fn min_value(self) -> i64 {
        -(1i64 << (self.bits() - 1))
    }

    pub const fn max_value(self) -> i64 {
        (1i64 << (self.bits() - 1)) - 1
    }

    /// Width of the accumulator used for every primitive op of a model at this precision.
    pub const fn accumulator_bits(self) -> u32 {
        match self {
            BitWidth::Int8 => 32,
            BitWidth::Int16 => 64,
        }
    }

    pub fn contains(self, v: i64) -> bool {
        v >= self.min_value() && v <= self.max_value()
    }

    pub fn saturate(self, v: i64) -> i32 {
        v.clamp(self.min_value(), self.max_value()) as i32
    }

    /// Size of one element in the on-disk blob format.
    pub const fn bytes(self) -> usize {
        (self.bits() / 8) as usize
    }
}

impl TryFrom<u32> for BitWidth {
    type Error = Error;

    fn try_from(bits: u32) -> Result<Self> {
        match bits {
            8 => Ok(BitWidth::Int8),
            16 => Ok(BitWidth::Int16),
            other => Err(Error::Config(format!("bit width must be 8 or 16, got {other}"))),
        }
    }
}

impl From<BitWidth> for u32 {
    fn from(bw: BitWidth) -> u32 {
        bw.bits()
    }
}

impl fmt::Display for BitWidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "int{}", self.bits())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub bit_width: BitWidth,
    pub scale: f64,
}

impl QuantParams {
    pub fn new(bit_width: BitWidth, scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Config(format!(
                "quantization scale must be positive and finite, got {scale}"
            )));
        }
        Ok(Self { bit_width, scale })
    }

    /// Power-of-two scale `2^exp`.
    pub fn pow2(bit_width: BitWidth, exp: i32) -> Self {
        Self {
            bit_width,
            scale: 2f64.powi(exp),
        }
    }

    /// Smallest power-of-two scale whose representable range covers `max_abs`.
    pub fn covering(bit_width: BitWidth, max_abs: f64) -> Self {
        if !(max_abs.is_finite() && max_abs > 0.0) {
            return Self::pow2(bit_width, 0);
        }
        let qmax = bit_width.max_value() as f64;
        let mut exp = (max_abs / qmax).log2().ceil() as i32;
        // log2 is not exact near powers of two; settle on the smallest exponent that fits.
        while max_abs / 2f64.powi(exp - 1) <= qmax {
            exp -= 1;
        }
        while max_abs / 2f64.powi(exp) > qmax {
            exp += 1;
        }
        Self::pow2(bit_width, exp)
    }

    /// `Some(e)` when the scale is exactly `2^e`.
    pub fn scale_log2(&self) -> Option<i32> {
        let e = self.scale.log2().round() as i32;
        (2f64.powi(e) == self.scale).then_some(e)
    }

    pub fn quantize_value(&self, value: f64) -> i32 {
        let q = (value / self.scale).round();
        if q.is_nan() {
            return 0;
        }
        let q = q.clamp(self.bit_width.min_value() as f64, self.bit_width.max_value() as f64);
        q as i32
    }

    pub fn dequantize_value(&self, q: i32) -> f64 {
        q as f64 * self.scale
    }
}

/// Integer tensor at a fixed bit width. Immutable once built; engines produce new tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct QTensor {
    shape: Vec<usize>,
    data: Vec<i32>,
    qparams: QuantParams,
}

impl QTensor {
    pub fn new(shape: Vec<usize>, data: Vec<i32>, qparams: QuantParams) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} holds {len} elements but {} were given",
                data.len()
            )));
        }
        let bw = qparams.bit_width;
        if let Some(bad) = data.iter().find(|&&v| !bw.contains(v as i64)) {
            return Err(Error::Config(format!("value {bad} is not representable as {bw}")));
        }
        Ok(Self { shape, data, qparams })
    }

    pub fn zeros(shape: Vec<usize>, qparams: QuantParams) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0; len],
            qparams,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[i32] {
        &self.data
    }

    pub fn qparams(&self) -> QuantParams {
        self.qparams
    }

    pub fn bit_width(&self) -> BitWidth {
        self.qparams.bit_width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dequantize(&self) -> Vec<f64> {
        self.data.iter().map(|&q| self.qparams.dequantize_value(q)).collect()
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != self.data.len() {
            return Err(Error::Shape(format!("cannot reshape {:?} into {shape:?}", self.shape)));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Elementwise in-place update; the closure result is saturated to the bit width.
    pub fn map_in_place(&mut self, mut f: impl FnMut(i32) -> i64) {
        let bw = self.qparams.bit_width;
        for v in &mut self.data {
            *v = bw.saturate(f(*v));
        }
    }

    /// Replace one element. The value must already be representable.
    pub(crate) fn data_mut(&mut self) -> &mut [i32] {
        &mut self.data
    }

    /// 4-D accessor for `N,C,H,W` (or `K,C,R,S`) tensors.
    #[inline]
    pub fn at4(&self, n: usize, c: usize, h: usize, w: usize) -> i32 {
        let [_, cs, hs, ws] = self.dims4();
        self.data[((n * cs + c) * hs + h) * ws + w]
    }

    pub fn dims4(&self) -> [usize; 4] {
        match self.shape.as_slice() {
            &[n, c, h, w] => [n, c, h, w],
            &[c, h, w] => [1, c, h, w],
            other => panic!("expected a 3-D or 4-D tensor, got shape {other:?}"),
        }
    }
}

pub fn quantize(values: &[f64], shape: Vec<usize>, qp: QuantParams) -> Result<QTensor> {
    let data = values.iter().map(|&v| qp.quantize_value(v)).collect();
    QTensor::new(shape, data, qp)
}

/// XOR the given bit positions of a two's-complement value of `bit_width` bits.
pub fn flip_bits(x: i32, bit_width: BitWidth, positions: &[u32]) -> Result<i32> {
    let bits = bit_width.bits();
    let mut mask = 0u32;
    for &p in positions {
        if p >= bits {
            return Err(Error::InvalidBitPosition {
                position: p,
                bit_width: bits,
            });
        }
        mask ^= 1 << p;
    }
    Ok(sign_extend(x as i64 ^ mask as i64, bits) as i32)
}

/// Reinterpret the low `bits` bits of `v` as a two's-complement number.
#[inline]
pub fn sign_extend(v: i64, bits: u32) -> i64 {
    if bits >= 64 {
        v
    } else {
        let s = 64 - bits;
        (v << s) >> s
    }
}

/// Narrow an accumulator value to an output element: divide by `2^shift` rounding half
/// away from zero (or multiply for negative shifts), then saturate.
pub fn requantize(acc: i64, shift: i32, bw: BitWidth) -> i32 {
    let acc = acc as i128;
    let q = if shift > 0 {
        let half = 1i128 << (shift - 1);
        let mag = (acc.abs() + half) >> shift;
        if acc < 0 {
            -mag
        } else {
            mag
        }
    } else {
        let up = (-shift).min(64) as u32;
        acc.checked_mul(1i128 << up)
            .unwrap_or(if acc < 0 { i128::MIN } else { i128::MAX })
    };
    q.clamp(bw.min_value() as i128, bw.max_value() as i128) as i32
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q8() -> QuantParams {
        QuantParams::pow2(BitWidth::Int8, -6)
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(q8().quantize_value(0.0), 0);
        assert_eq!(QuantParams::pow2(BitWidth::Int16, 3).quantize_value(0.0), 0);
        let t = quantize(&[-1.0, 1.0], vec![2], q8()).unwrap();
        assert_eq!(t.data(), &[-64, 64]);
        assert_eq!(q8().quantize_value(10.0), 127);
        assert_eq!(q8().quantize_value(-10.0), -128);
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        let qp = QuantParams::pow2(BitWidth::Int8, 0);
        assert_eq!(qp.quantize_value(2.5), 3);
        assert_eq!(qp.quantize_value(-2.5), -3);
        assert_eq!(requantize(5, 1, BitWidth::Int8), 3);
        assert_eq!(requantize(-5, 1, BitWidth::Int8), -3);
        assert_eq!(requantize(-4, 1, BitWidth::Int8), -2);
        assert_eq!(requantize(3, -2, BitWidth::Int8), 12);
        assert_eq!(requantize(1 << 40, 2, BitWidth::Int16), 32767);
        assert_eq!(requantize(i64::MIN, 0, BitWidth::Int16), -32768);
    }

    #[test]
    fn flip_examples() {
        assert_eq!(flip_bits(0, BitWidth::Int8, &[7]).unwrap(), -128);
        assert_eq!(flip_bits(5, BitWidth::Int8, &[1]).unwrap(), 7);
        assert_eq!(flip_bits(5, BitWidth::Int8, &[]).unwrap(), 5);
        assert_eq!(flip_bits(3, BitWidth::Int8, &[7]).unwrap(), -125);
        assert_eq!(flip_bits(0, BitWidth::Int16, &[15]).unwrap(), -32768);
    }

    #[test]
    fn flip_rejects_out_of_range_position() {
        let err = flip_bits(1, BitWidth::Int8, &[8]).unwrap_err();
        assert!(matches!(
            err,
            Error::InvalidBitPosition {
                position: 8,
                bit_width: 8
            }
        ));
    }

    #[test]
    fn covering_scale_is_smallest_power_of_two() {
        let qp = QuantParams::covering(BitWidth::Int8, 1.0);
        // 1.0 / 2^-7 = 128 > 127, so 2^-6 is the smallest fit.
        assert_eq!(qp.scale_log2(), Some(-6));
        let qp = QuantParams::covering(BitWidth::Int8, 127.0);
        assert_eq!(qp.scale_log2(), Some(0));
        // 0.5 / 2^-16 = 32768 > 32767.
        let qp = QuantParams::covering(BitWidth::Int16, 0.5);
        assert_eq!(qp.scale_log2(), Some(-15));
        assert_eq!(QuantParams::covering(BitWidth::Int8, 0.0).scale_log2(), Some(0));
    }

    #[test]
    fn tensor_validation() {
        assert!(QTensor::new(vec![2, 2], vec![0; 3], q8()).is_err());
        assert!(QTensor::new(vec![1], vec![200], q8()).is_err());
        assert!(QuantParams::new(BitWidth::Int8, 0.0).is_err());
        assert!(BitWidth::try_from(12).is_err());
    }

    proptest! {
        #[test]
        fn flip_is_an_involution(x in -128i32..=127, mask in 0u32..256) {
            let pos: Vec<u32> = (0..8).filter(|b| mask >> b & 1 == 1).collect();
            let once = flip_bits(x, BitWidth::Int8, &pos).unwrap();
            prop_assert!(BitWidth::Int8.contains(once as i64));
            prop_assert_eq!(flip_bits(once, BitWidth::Int8, &pos).unwrap(), x);
        }

        #[test]
        fn flip_is_an_involution_int16(x in -32768i32..=32767, mask in 0u32..65536) {
            let pos: Vec<u32> = (0..16).filter(|b| mask >> b & 1 == 1).collect();
            let once = flip_bits(x, BitWidth::Int16, &pos).unwrap();
            prop_assert_eq!(flip_bits(once, BitWidth::Int16, &pos).unwrap(), x);
        }

        #[test]
        fn quantize_is_monotone(a in -300.0f64..300.0, b in -300.0f64..300.0, e in -10i32..4) {
            let qp = QuantParams::pow2(BitWidth::Int8, e);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(qp.quantize_value(lo) <= qp.quantize_value(hi));
        }

        #[test]
        fn dequantize_error_is_bounded(x in -2.0f64..2.0) {
            let qp = QuantParams::pow2(BitWidth::Int16, -12);
            let lim = qp.bit_width.max_value() as f64 * qp.scale;
            let clamped = x.clamp(-lim - qp.scale, lim);
            let back = qp.dequantize_value(qp.quantize_value(x));
            prop_assert!((back - clamped).abs() <= qp.scale / 2.0 + 1e-12);
        }
    }
}
