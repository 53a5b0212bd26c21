//! Fine-grained TMR: segment the op stream, rank segments by how much accuracy keeping
//! each one fault-free buys, protect the best prefix until a target accuracy is met.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analyze::{vulnerability, Evaluator, Subject, VulnReport};
use crate::conv::{Engine, OpRecord, OpType};
use crate::error::{Error, Result};
use crate::inject::{FaultHook, InjectionConfig, OpRanges};
use crate::model::{enumerate_ops, ExecConfig, Executor, ModelDef, OpStreamSummary};
use crate::qtensor::{BitWidth, QTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub index: usize,
    /// First op id.
    pub start: u64,
    /// One past the last op id.
    pub end: u64,
}

impl Segment {
    pub fn len(&self) -> u64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// `ceil(total_ops / segment_size)` contiguous segments covering `[0, total_ops)`.
pub fn segment_ops(total_ops: u64, segment_size: u64) -> Result<Vec<Segment>> {
    if segment_size < 1 {
        return Err(Error::Config("segment size must be at least 1".into()));
    }
    let n = total_ops.div_ceil(segment_size);
    Ok((0..n)
        .map(|i| Segment {
            index: i as usize,
            start: i * segment_size,
            end: ((i + 1) * segment_size).min(total_ops),
        })
        .collect())
}

/// Op ranges of the chosen segments.
pub fn segment_ranges(segments: &[Segment], chosen: &[usize]) -> OpRanges {
    OpRanges::new(chosen.iter().map(|&i| (segments[i].start, segments[i].end)))
}

/// Op-type composition of a set of ops.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpMix {
    pub muls: u64,
    pub adds: u64,
}

impl OpMix {
    pub fn total(&self) -> u64 {
        self.muls + self.adds
    }
}

impl std::ops::Add for OpMix {
    type Output = OpMix;

    fn add(self, o: OpMix) -> OpMix {
        OpMix {
            muls: self.muls + o.muls,
            adds: self.adds + o.adds,
        }
    }
}

impl std::iter::Sum for OpMix {
    fn sum<I: Iterator<Item = OpMix>>(iter: I) -> OpMix {
        iter.fold(OpMix::default(), |a, b| a + b)
    }
}

/// Op-type composition of every segment, from one fault-free dry run.
pub fn segment_mix(model: &ModelDef, cfg: &ExecConfig, segments: &[Segment]) -> Result<Vec<OpMix>> {
    let mut mix = vec![OpMix::default(); segments.len()];
    let size = segments.first().map_or(1, Segment::len).max(1);
    let input = QTensor::zeros(model.sample_shape(), model.input_qparams);
    let mut count = |op: &OpRecord, v: i64| {
        if let Some(m) = mix.get_mut((op.op_id / size) as usize) {
            match op.op_type {
                OpType::Mul => m.muls += 1,
                OpType::Add => m.adds += 1,
            }
        }
        v
    };
    Executor::new(model, *cfg)?.run(&input, &mut count)?;
    Ok(mix)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WidthScaling {
    /// Weights are used as given for every bit width.
    #[default]
    None,
    /// Relative to int8: MUL cost grows with the square of the width, ADD cost linearly.
    Area,
}

/// Relative cost of executing one op.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub add_weight: f64,
    /// int8 multiply relative to int8 add.
    pub mul_weight: f64,
    #[serde(default)]
    pub width_scaling: WidthScaling,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            add_weight: 1.0,
            mul_weight: 6.67,
            width_scaling: WidthScaling::None,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.add_weight > 0.0 && self.mul_weight > 0.0) {
            return Err(Error::Config("cost weights must be positive".into()));
        }
        Ok(())
    }

    pub fn weight(&self, op_type: OpType, bw: BitWidth) -> f64 {
        let r = bw.bits() as f64 / 8.0;
        match (op_type, self.width_scaling) {
            (OpType::Add, WidthScaling::None) => self.add_weight,
            (OpType::Mul, WidthScaling::None) => self.mul_weight,
            (OpType::Add, WidthScaling::Area) => self.add_weight * r,
            (OpType::Mul, WidthScaling::Area) => self.mul_weight * r * r,
        }
    }

    /// Two extra executions of every protected op plus one ADD-weight vote per op.
    pub fn tmr_overhead(&self, mix: OpMix, bw: BitWidth) -> f64 {
        let (wm, wa) = (self.weight(OpType::Mul, bw), self.weight(OpType::Add, bw));
        2.0 * (mix.muls as f64 * wm + mix.adds as f64 * wa) + mix.total() as f64 * wa
    }

    /// Overhead of protecting every op of an inference.
    pub fn full_tmr_overhead(&self, summary: &OpStreamSummary, bw: BitWidth) -> f64 {
        let mix = OpMix {
            muls: summary.total_of(OpType::Mul),
            adds: summary.total_of(OpType::Add),
        };
        self.tmr_overhead(mix, bw)
    }
}

/// Overhead of `mix` divided by the full-TMR overhead of the model on the direct engine.
pub fn normalized_overhead(model: &ModelDef, cfg: &ExecConfig, mix: OpMix, cost: &CostModel) -> Result<f64> {
    let direct = ExecConfig {
        engine: Engine::Direct,
        ..*cfg
    };
    let full = cost.full_tmr_overhead(&enumerate_ops(model, &direct)?, model.bit_width);
    Ok(cost.tmr_overhead(mix, model.bit_width) / full)
}

/// Segments keeping each one fault-free in turn, paired against one raw campaign.
pub fn measure_segment_vulnerability(
    eval: &Evaluator<'_>,
    inj: &InjectionConfig,
    segments: &[Segment],
) -> Result<(f64, Vec<VulnReport>)> {
    let subjects: Vec<_> = segments
        .iter()
        .map(|s| {
            let r = OpRanges::new([(s.start, s.end)]);
            (Subject::Segment(s.index), inj.scope.clone().excluding_ops(&r))
        })
        .collect();
    let (raw, reports) = vulnerability(eval, inj, &subjects)?;
    Ok((raw.mean_accuracy, reports))
}

/// Segment indices by descending vulnerability; ties by ascending index.
pub fn vulnerability_order(v: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    order
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanOptions {
    /// Always protect at least one segment before checking the target, as a do-while
    /// loop would. Off by default: `n = 0` when the unprotected model already meets it.
    #[serde(default)]
    pub literal_do_while: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyOutcome {
    pub order: Vec<usize>,
    pub n: usize,
    pub achieved_acc: f64,
    pub target_unreachable: bool,
    /// `(n, accuracy)` for every prefix evaluated.
    pub evaluated: Vec<(usize, f64)>,
}

/// Greedy prefix selection over `v`. `eval` measures accuracy with the given segment
/// indices protected.
pub fn plan_greedy(
    v: &[f64],
    target_acc: f64,
    mut eval: impl FnMut(&[usize]) -> Result<f64>,
    opts: PlanOptions,
) -> Result<GreedyOutcome> {
    let order = vulnerability_order(v);
    let total = order.len();
    let mut evaluated = Vec::new();
    let mut n = 0;
    let mut acc = f64::NAN;
    if !opts.literal_do_while || total == 0 {
        acc = eval(&[])?;
        evaluated.push((0, acc));
    }
    while (opts.literal_do_while && evaluated.is_empty()) || (acc < target_acc && n < total) {
        n += 1;
        acc = eval(&order[..n])?;
        evaluated.push((n, acc));
    }
    Ok(GreedyOutcome {
        target_unreachable: acc < target_acc,
        order,
        n,
        achieved_acc: acc,
        evaluated,
    })
}

/// A TMR protection plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TmrPlan {
    pub engine: Engine,
    /// Ops per inference the plan was built for.
    pub total_ops: u64,
    pub segment_size: u64,
    /// Segment indices by descending vulnerability.
    pub order: Vec<usize>,
    pub n: usize,
    /// Fraction of all ops under TMR.
    #[serde(rename = "P")]
    pub protection_ratio: f64,
    pub target_acc: f64,
    pub achieved_acc: f64,
    pub target_unreachable: bool,
    pub acc_raw: f64,
    pub ber: f64,
    /// Per segment, indexed by segment.
    pub vulnerability: Vec<f64>,
    pub vulnerability_ci95: Vec<f64>,
    pub protected_mix: OpMix,
    pub overhead: f64,
    pub overhead_normalized: f64,
}

impl TmrPlan {
    pub fn segments(&self) -> Result<Vec<Segment>> {
        segment_ops(self.total_ops, self.segment_size)
    }

    pub fn protected_segments(&self) -> &[usize] {
        &self.order[..self.n]
    }

    pub fn protected_ranges(&self) -> Result<OpRanges> {
        Ok(segment_ranges(&self.segments()?, self.protected_segments()))
    }

    /// The plan's op id space must be the one `cfg` produces for `model`.
    pub fn check(&self, model: &ModelDef, cfg: &ExecConfig) -> Result<()> {
        if self.engine != cfg.engine {
            return Err(Error::Config(format!(
                "plan was built for the {} engine, not {}",
                self.engine, cfg.engine
            )));
        }
        let m = enumerate_ops(model, cfg)?.total_ops();
        if m != self.total_ops {
            return Err(Error::Config(format!(
                "plan covers {} ops but the model runs {m}",
                self.total_ops
            )));
        }
        if self.order.len() as u64 != self.total_ops.div_ceil(self.segment_size.max(1)) || self.n > self.order.len() {
            return Err(Error::Config("plan segment order is inconsistent".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Measure segment vulnerabilities, then greedily protect segments until the
/// scope-excluded (fault-free) accuracy of the protected prefix reaches `target_acc`.
pub fn plan_tmr(
    eval: &Evaluator<'_>,
    inj: &InjectionConfig,
    segment_size: u64,
    target_acc: f64,
    cost: &CostModel,
    opts: PlanOptions,
) -> Result<TmrPlan> {
    cost.validate()?;
    let model = eval.executor().model();
    let cfg = *eval.exec_config();
    let total_ops = enumerate_ops(model, &cfg)?.total_ops();
    let segments = segment_ops(total_ops, segment_size)?;
    let (acc_raw, reports) = measure_segment_vulnerability(eval, inj, &segments)?;
    let v: Vec<f64> = reports.iter().map(|r| r.delta).collect();
    let outcome = plan_greedy(
        &v,
        target_acc,
        |chosen| protected_accuracy(eval, inj, &segments, chosen),
        opts,
    )?;
    let mix = segment_mix(model, &cfg, &segments)?;
    let chosen = &outcome.order[..outcome.n];
    let protected_mix: OpMix = chosen.iter().map(|&i| mix[i]).sum();
    let covered: u64 = chosen.iter().map(|&i| segments[i].len()).sum();
    Ok(TmrPlan {
        engine: cfg.engine,
        total_ops,
        segment_size,
        n: outcome.n,
        protection_ratio: if total_ops == 0 {
            0.0
        } else {
            covered as f64 / total_ops as f64
        },
        target_acc,
        achieved_acc: outcome.achieved_acc,
        target_unreachable: outcome.target_unreachable,
        acc_raw,
        ber: inj.ber,
        vulnerability: v,
        vulnerability_ci95: reports.iter().map(|r| r.ci95_half_width).collect(),
        protected_mix,
        overhead: cost.tmr_overhead(protected_mix, model.bit_width),
        overhead_normalized: normalized_overhead(model, &cfg, protected_mix, cost)?,
        order: outcome.order,
    })
}

/// Mean accuracy with the chosen segments kept fault-free (paired with the raw run).
pub fn protected_accuracy(
    eval: &Evaluator<'_>,
    inj: &InjectionConfig,
    segments: &[Segment],
    chosen: &[usize],
) -> Result<f64> {
    let scope = inj.scope.clone().excluding_ops(&segment_ranges(segments, chosen));
    Ok(eval.campaign(&inj.clone().with_scope(scope))?.mean_accuracy)
}

/// One inference with the plan's protected ops executed three times and voted.
pub fn run_with_tmr(
    model: &ModelDef,
    input: &QTensor,
    cfg: &ExecConfig,
    plan: &TmrPlan,
    inj: &InjectionConfig,
    trial: u32,
    sample: u32,
) -> Result<QTensor> {
    inj.validate()?;
    plan.check(model, cfg)?;
    let ranges = plan.protected_ranges()?;
    let mut hook = FaultHook::sampled(inj, trial, sample).with_tmr(&ranges);
    Executor::new(model, *cfg)?.run(input, &mut hook)
}
