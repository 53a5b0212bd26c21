//! Constrained activations: profile fault-free activation ranges per conv layer, then
//! suppress out-of-range values at inference.
//!
//! Ranges are taken at the activation output of each conv layer (after its ReLU when
//! one follows), which is also where the clamp is applied.

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::conv::NoFaults;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{ExecConfig, Executor, ModelDef, Tap};
use crate::qtensor::QTensor;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClampMode {
    /// Saturate to the violated bound.
    #[default]
    Clamp,
    /// Replace out-of-range values with zero.
    Zero,
}

impl FromStr for ClampMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "clamp" => Ok(ClampMode::Clamp),
            "zero" => Ok(ClampMode::Zero),
            other => Err(Error::Config(format!("unknown clamp mode '{other}'"))),
        }
    }
}

/// Per conv layer `(min, max)` in the integer domain.
///
/// Serializes as `{"<layer_id>": [min, max], ...}`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RangeProfile {
    layers: BTreeMap<usize, (i32, i32)>,
}

impl RangeProfile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn range(&self, layer_id: usize) -> Result<(i32, i32)> {
        self.layers
            .get(&layer_id)
            .copied()
            .ok_or_else(|| Error::Config(format!("range profile has no entry for layer {layer_id}")))
    }

    pub fn layers(&self) -> impl Iterator<Item = (usize, (i32, i32))> + '_ {
        self.layers.iter().map(|(&k, &v)| (k, v))
    }

    /// Widen the stored range of `layer_id` to include every value of `values`.
    pub fn observe(&mut self, layer_id: usize, values: &[i32]) {
        let Some(lo) = values.iter().copied().min() else {
            return;
        };
        let hi = values.iter().copied().max().unwrap_or(lo);
        self.layers
            .entry(layer_id)
            .and_modify(|r| *r = (r.0.min(lo), r.1.max(hi)))
            .or_insert((lo, hi));
    }

    /// Union of two profiles.
    pub fn merge(&mut self, other: &RangeProfile) {
        for (id, (lo, hi)) in other.layers() {
            self.observe(id, &[lo, hi]);
        }
    }

    pub(crate) fn apply_in_place(&self, t: &mut QTensor, layer_id: usize, mode: ClampMode) -> Result<()> {
        let (lo, hi) = self.range(layer_id)?;
        let (lo, hi) = (lo as i64, hi as i64);
        match mode {
            ClampMode::Clamp => t.map_in_place(|v| (v as i64).clamp(lo, hi)),
            ClampMode::Zero => t.map_in_place(|v| {
                let v = v as i64;
                if v < lo || v > hi {
                    0
                } else {
                    v
                }
            }),
        }
        Ok(())
    }
}

/// Exact per-layer min/max of fault-free activations over every profiling sample.
pub fn profile_ranges(model: &ModelDef, dataset: &Dataset, cfg: &ExecConfig) -> Result<RangeProfile> {
    if dataset.is_empty() {
        return Err(Error::Config("profiling set is empty".into()));
    }
    let exec = Executor::new(model, *cfg)?;
    let mut profile = RangeProfile::new();
    for sample in dataset.samples() {
        exec.run_observed(sample, &mut NoFaults, &mut |tap, id, t| {
            if tap == Tap::Activation {
                profile.observe(id, t.data());
            }
        })?;
    }
    Ok(profile)
}

pub fn apply_constrained_activation(
    layer_output: &QTensor,
    profile: &RangeProfile,
    layer_id: usize,
    mode: ClampMode,
) -> Result<QTensor> {
    let mut out = layer_output.clone();
    profile.apply_in_place(&mut out, layer_id, mode)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qtensor::{BitWidth, QuantParams};

    fn tensor(vals: &[i32]) -> QTensor {
        QTensor::new(vec![vals.len()], vals.to_vec(), QuantParams::pow2(BitWidth::Int8, -4)).unwrap()
    }

    fn profile(lo: i32, hi: i32) -> RangeProfile {
        let mut p = RangeProfile::new();
        p.observe(3, &[lo, hi]);
        p
    }

    #[test]
    fn in_range_is_identity() {
        let t = tensor(&[0, 5, 40, 12]);
        let out = apply_constrained_activation(&t, &profile(0, 40), 3, ClampMode::Clamp).unwrap();
        assert_eq!(out, t);
        let out = apply_constrained_activation(&t, &profile(0, 40), 3, ClampMode::Zero).unwrap();
        assert_eq!(out, t);
    }

    #[test]
    fn clamp_and_zero_modes() {
        let t = tensor(&[120, 7, -3]);
        let c = apply_constrained_activation(&t, &profile(0, 40), 3, ClampMode::Clamp).unwrap();
        assert_eq!(c.data(), &[40, 7, 0]);
        let z = apply_constrained_activation(&t, &profile(0, 40), 3, ClampMode::Zero).unwrap();
        assert_eq!(z.data(), &[0, 7, 0]);
    }

    #[test]
    fn missing_layer_is_config_error() {
        let err = apply_constrained_activation(&tensor(&[1]), &profile(0, 1), 9, ClampMode::Clamp).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn merge_takes_union() {
        let mut a = RangeProfile::new();
        a.observe(0, &[-3, 10]);
        a.observe(2, &[0, 4]);
        let mut b = RangeProfile::new();
        b.observe(0, &[-7, 6]);
        b.observe(2, &[1, 9]);
        a.merge(&b);
        assert_eq!(a.range(0).unwrap(), (-7, 10));
        assert_eq!(a.range(2).unwrap(), (0, 9));
    }

    #[test]
    fn json_is_a_plain_layer_map() {
        let mut p = RangeProfile::new();
        p.observe(0, &[0, 93]);
        p.observe(2, &[0, 41]);
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, r#"{"0":[0,93],"2":[0,41]}"#);
        assert_eq!(serde_json::from_str::<RangeProfile>(&s).unwrap(), p);
    }
}
