//! Monte-Carlo campaigns: accuracy under injection, BER sweeps, layer RMSE and
//! vulnerability reports.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conv::{Engine, NoFaults, OpHook, OpType};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::inject::{FaultHook, FaultTrace, Flip, Granularity, InjectionConfig, OpRanges, RunMasks, Scope};
use crate::mitigation::{ClampMode, RangeProfile};
use crate::model::{top1, ExecConfig, Executor, ModelDef, Tap};
use crate::qtensor::QTensor;

/// z-value of a two-sided 95% normal interval.
pub const Z95: f64 = 1.96;

/// Mean and 95% half-width `1.96 * s / sqrt(n)` with the sample standard deviation.
pub fn mean_ci95(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, Z95 * var.sqrt() / (n as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: u32,
    /// Samples whose top-1 matched the reference.
    pub correct: usize,
    pub samples: usize,
}

impl TrialRecord {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.samples as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub engine: Engine,
    pub granularity: Granularity,
    pub ber: f64,
    pub seed: u64,
    pub scope: String,
    /// Ops executed under TMR.
    pub protected_ops: u64,
    pub samples: usize,
    pub mean_accuracy: f64,
    pub ci95_half_width: f64,
    pub trials: Vec<TrialRecord>,
}

impl CampaignResult {
    fn new(
        eval: &Evaluator<'_>,
        inj: &InjectionConfig,
        protected: Option<&OpRanges>,
        trials: Vec<TrialRecord>,
    ) -> Self {
        let accs: Vec<f64> = trials.iter().map(TrialRecord::accuracy).collect();
        let (mean, ci) = mean_ci95(&accs);
        Self {
            engine: eval.cfg.engine,
            granularity: inj.granularity,
            ber: inj.ber,
            seed: inj.seed,
            scope: inj.scope.to_string(),
            protected_ops: protected.map_or(0, OpRanges::count),
            samples: eval.dataset.len(),
            mean_accuracy: mean,
            ci95_half_width: ci,
            trials,
        }
    }

    pub fn accuracies(&self) -> Vec<f64> {
        self.trials.iter().map(TrialRecord::accuracy).collect()
    }

    pub fn ci_low(&self) -> f64 {
        self.mean_accuracy - self.ci95_half_width
    }

    pub fn ci_high(&self) -> f64 {
        self.mean_accuracy + self.ci95_half_width
    }
}

/// How accuracy is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracyMode {
    /// Top-1 agreement with the fault-free model.
    Agreement,
    /// Top-1 against dataset labels.
    Labels,
}

type TraceRuns = HashMap<(u32, u32), Vec<Flip>>;

/// Runs campaigns of one model, engine and dataset.
pub struct Evaluator<'a> {
    dataset: &'a Dataset,
    cfg: ExecConfig,
    exec: Executor<'a>,
    mode: AccuracyMode,
    reference: Vec<usize>,
    clean_correct: usize,
    workers: Option<usize>,
    trace: Option<TraceRuns>,
}

impl<'a> Evaluator<'a> {
    /// Labels are used when the dataset has them; otherwise accuracy is agreement with
    /// the fault-free model.
    pub fn new(model: &'a ModelDef, dataset: &'a Dataset, cfg: ExecConfig) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::Config("evaluation dataset is empty".into()));
        }
        let exec = Executor::new(model, cfg)?;
        let clean = dataset
            .samples()
            .iter()
            .map(|s| Ok(top1(&exec.run(s, &mut NoFaults)?)))
            .collect::<Result<Vec<_>>>()?;
        let (mode, reference) = match dataset.labels() {
            Some(l) => (AccuracyMode::Labels, l.to_vec()),
            None => (AccuracyMode::Agreement, clean.clone()),
        };
        let clean_correct = clean.iter().zip(&reference).filter(|(a, b)| a == b).count();
        Ok(Self {
            dataset,
            cfg,
            exec,
            mode,
            reference,
            clean_correct,
            workers: None,
            trace: None,
        })
    }

    /// Evaluate with constrained activations. The reference predictions stay those of
    /// the unconstrained fault-free model.
    pub fn with_clamp(mut self, profile: RangeProfile, mode: ClampMode) -> Result<Self> {
        self.exec = self.exec.with_clamp(profile, mode)?;
        self.clean_correct = 0;
        for (s, &r) in self.dataset.samples().iter().zip(&self.reference) {
            if top1(&self.exec.run(s, &mut NoFaults)?) == r {
                self.clean_correct += 1;
            }
        }
        Ok(self)
    }

    /// Worker threads for trials; `None` uses the global pool. Results do not depend on it.
    pub fn with_workers(mut self, workers: Option<usize>) -> Self {
        self.workers = workers.filter(|&n| n > 0);
        self
    }

    /// Replay `trace` in every later campaign instead of sampling flips. Scopes and TMR
    /// still apply, so campaigns that differ from the traced one only in scope or
    /// protection reproduce their sampled results.
    pub fn with_trace(mut self, trace: &FaultTrace) -> Result<Self> {
        self.trace = Some(self.index_trace(trace)?);
        Ok(self)
    }

    fn index_trace(&self, trace: &FaultTrace) -> Result<TraceRuns> {
        let mut runs = TraceRuns::new();
        for f in &trace.flips {
            if f.sample as usize >= self.dataset.len() {
                return Err(Error::Config(format!(
                    "trace flip at sample {} is outside the {}-sample dataset",
                    f.sample,
                    self.dataset.len()
                )));
            }
            runs.entry((f.trial, f.sample)).or_default().push(*f);
        }
        Ok(runs)
    }

    pub fn exec_config(&self) -> &ExecConfig {
        &self.cfg
    }

    pub fn executor(&self) -> &Executor<'a> {
        &self.exec
    }

    pub fn dataset(&self) -> &Dataset {
        self.dataset
    }

    pub fn accuracy_mode(&self) -> AccuracyMode {
        self.mode
    }

    pub fn clean_accuracy(&self) -> f64 {
        self.clean_correct as f64 / self.dataset.len() as f64
    }

    pub fn campaign(&self, inj: &InjectionConfig) -> Result<CampaignResult> {
        Ok(self.run(inj, None, self.trace.as_ref(), false)?.0)
    }

    /// Campaign with the ops in `protected` executed under TMR.
    pub fn campaign_tmr(&self, inj: &InjectionConfig, protected: &OpRanges) -> Result<CampaignResult> {
        Ok(self.run(inj, Some(protected), self.trace.as_ref(), false)?.0)
    }

    /// Campaign that also returns every applied flip.
    pub fn campaign_traced(
        &self,
        inj: &InjectionConfig,
        protected: Option<&OpRanges>,
    ) -> Result<(CampaignResult, FaultTrace)> {
        self.run(inj, protected, self.trace.as_ref(), true)
    }

    /// Re-run a campaign applying exactly the flips of `trace`.
    pub fn replay(
        &self,
        inj: &InjectionConfig,
        trace: &FaultTrace,
        protected: Option<&OpRanges>,
    ) -> Result<CampaignResult> {
        let runs = self.index_trace(trace)?;
        Ok(self.run(inj, protected, Some(&runs), false)?.0)
    }

    fn run(
        &self,
        inj: &InjectionConfig,
        protected: Option<&OpRanges>,
        replay: Option<&TraceRuns>,
        record: bool,
    ) -> Result<(CampaignResult, FaultTrace)> {
        inj.validate()?;
        if let Some(&(t, s)) = replay.and_then(|r| r.keys().find(|k| k.0 >= inj.trials)) {
            return Err(Error::Config(format!(
                "trace flip at trial {t} sample {s} is outside the {}-trial campaign",
                inj.trials
            )));
        }
        if inj.granularity == Granularity::NeuronLevel && protected.is_some() {
            return Err(Error::Config("TMR protects ops, not neurons".into()));
        }
        let clean_run = inj.ber == 0.0 && replay.is_none();
        let trial = |t: u32| -> Result<(TrialRecord, Vec<Flip>)> {
            let mut correct = 0;
            let mut flips = Vec::new();
            if clean_run {
                correct = self.clean_correct;
            } else {
                for (s, (x, &r)) in self.dataset.samples().iter().zip(&self.reference).enumerate() {
                    let s = s as u32;
                    let mut hook = match replay {
                        None => FaultHook::sampled(inj, t, s),
                        Some(runs) => {
                            let masks = runs.get(&(t, s)).map_or_else(RunMasks::default, RunMasks::from_flips);
                            FaultHook::replay(inj, t, s, masks)
                        }
                    }
                    .recording(record);
                    if let Some(p) = protected {
                        hook = hook.with_tmr(p);
                    }
                    if top1(&self.exec.run(x, &mut hook)?) == r {
                        correct += 1;
                    }
                    flips.extend(hook.into_flips());
                }
            }
            let rec = TrialRecord {
                trial: t,
                correct,
                samples: self.dataset.len(),
            };
            Ok((rec, flips))
        };
        let job = || (0..inj.trials).into_par_iter().map(trial).collect::<Result<Vec<_>>>();
        let per_trial = match self.workers {
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("cannot start {n} workers: {e}")))?
                .install(job)?,
            None => job()?,
        };
        let mut trials = Vec::with_capacity(per_trial.len());
        let mut flips = Vec::new();
        for (rec, f) in per_trial {
            trials.push(rec);
            flips.extend(f);
        }
        Ok((
            CampaignResult::new(self, inj, protected, trials),
            FaultTrace::new(flips),
        ))
    }
}

/// One campaign per BER, all sharing `base`'s seed, scope and trial count.
pub fn sweep_ber(eval: &Evaluator<'_>, base: &InjectionConfig, bers: &[f64]) -> Result<Vec<CampaignResult>> {
    bers.iter()
        .map(|&ber| eval.campaign(&base.clone().with_ber(ber)))
        .collect()
}

/// Smallest-magnitude BER (searched geometrically in `[lo, hi]`) whose mean accuracy
/// falls to `target` or below. Returns `hi` if even `hi` stays above the target.
pub fn ber_for_accuracy(
    eval: &Evaluator<'_>,
    base: &InjectionConfig,
    target: f64,
    lo: f64,
    hi: f64,
    steps: usize,
) -> Result<f64> {
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::Config("ber search needs 0 < lo < hi".into()));
    }
    let (mut lo, mut hi) = (lo.ln(), hi.ln());
    for _ in 0..steps {
        let mid = 0.5 * (lo + hi);
        let acc = eval.campaign(&base.clone().with_ber(mid.exp()))?.mean_accuracy;
        if acc <= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi.exp())
}

/// Root-mean-square difference of two tensors in the real domain.
pub fn rmse(a: &QTensor, b: &QTensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("rmse of {:?} vs {:?}", a.shape(), b.shape())));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let (da, db) = (a.dequantize(), b.dequantize());
    let sq: f64 = da.iter().zip(&db).map(|(x, y)| (x - y).powi(2)).sum();
    Ok((sq / a.len() as f64).sqrt())
}

/// Mean over trials of the RMSE between the fault-free and faulty conv output of
/// `layer_id` for one input.
pub fn rmse_layer(
    model: &ModelDef,
    input: &QTensor,
    layer_id: usize,
    cfg: &ExecConfig,
    inj: &InjectionConfig,
) -> Result<f64> {
    inj.validate()?;
    if !model.conv_layer_ids().contains(&layer_id) {
        return Err(Error::Config(format!("layer {layer_id} is not a conv layer")));
    }
    let exec = Executor::new(model, *cfg)?;
    let clean = conv_output(&exec, input, &mut NoFaults, layer_id)?;
    let mut total = 0.0;
    for t in 0..inj.trials {
        let faulty = conv_output(&exec, input, &mut FaultHook::sampled(inj, t, 0), layer_id)?;
        total += rmse(&clean, &faulty)?;
    }
    Ok(total / inj.trials as f64)
}

fn conv_output<H: OpHook>(exec: &Executor<'_>, input: &QTensor, hook: &mut H, layer_id: usize) -> Result<QTensor> {
    let mut out = None;
    exec.run_observed(input, hook, &mut |tap, id, t| {
        if tap == Tap::ConvOutput && id == layer_id {
            out = Some(t.clone());
        }
    })?;
    out.ok_or_else(|| Error::Config(format!("layer {layer_id} produced no output")))
}

/// What a vulnerability report keeps fault-free.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Subject {
    Layer(usize),
    OpType(OpType),
    Segment(usize),
}

impl fmt::Display for Subject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Subject::Layer(l) => write!(f, "layer:{l}"),
            Subject::OpType(t) => write!(f, "optype:{t}"),
            Subject::Segment(i) => write!(f, "segment:{i}"),
        }
    }
}

impl FromStr for Subject {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad subject '{s}'"));
        let (kind, v) = s.split_once(':').ok_or_else(bad)?;
        match kind {
            "layer" => v.parse().map(Subject::Layer).map_err(|_| bad()),
            "optype" => v.parse().map(Subject::OpType),
            "segment" => v.parse().map(Subject::Segment).map_err(|_| bad()),
            _ => Err(bad()),
        }
    }
}

impl From<Subject> for String {
    fn from(s: Subject) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for Subject {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VulnReport {
    pub subject: Subject,
    pub ber: f64,
    pub acc_raw: f64,
    pub acc_prot: f64,
    /// `acc_prot - acc_raw`; not clamped at zero.
    pub delta: f64,
    /// Half-width of the 95% interval of the paired per-trial delta.
    pub ci95_half_width: f64,
}

/// Paired vulnerability: one raw campaign, then one campaign per subject scope with the
/// same seed.
pub fn vulnerability(
    eval: &Evaluator<'_>,
    inj: &InjectionConfig,
    subjects: &[(Subject, Scope)],
) -> Result<(CampaignResult, Vec<VulnReport>)> {
    let raw = eval.campaign(inj)?;
    let raw_acc = raw.accuracies();
    let reports = subjects
        .iter()
        .map(|(subject, scope)| {
            let prot = eval.campaign(&inj.clone().with_scope(scope.clone()))?;
            let diffs: Vec<f64> = prot.accuracies().iter().zip(&raw_acc).map(|(p, r)| p - r).collect();
            let (_, ci) = mean_ci95(&diffs);
            Ok(VulnReport {
                subject: *subject,
                ber: inj.ber,
                acc_raw: raw.mean_accuracy,
                acc_prot: prot.mean_accuracy,
                delta: prot.mean_accuracy - raw.mean_accuracy,
                ci95_half_width: ci,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((raw, reports))
}

/// One report per conv layer, each keeping that layer fault-free.
pub fn layer_vulnerability(eval: &Evaluator<'_>, inj: &InjectionConfig) -> Result<Vec<VulnReport>> {
    let layers = eval.executor().model().conv_layer_ids();
    if layers.len() < 2 {
        return Err(Error::Config(
            "layer vulnerability needs at least two conv layers".into(),
        ));
    }
    let subjects: Vec<_> = layers
        .iter()
        .map(|&l| (Subject::Layer(l), inj.scope.clone().excluding_layer(l)))
        .collect();
    Ok(vulnerability(eval, inj, &subjects)?.1)
}

/// Reports for MUL and ADD, each keeping that op type fault-free.
pub fn optype_vulnerability(eval: &Evaluator<'_>, inj: &InjectionConfig) -> Result<(VulnReport, VulnReport)> {
    if inj.granularity != Granularity::OpLevel {
        return Err(Error::Config("op-type vulnerability needs op-level injection".into()));
    }
    let subjects: Vec<_> = OpType::ALL
        .iter()
        .map(|&t| (Subject::OpType(t), inj.scope.clone().excluding_op_type(t)))
        .collect();
    let mut r = vulnerability(eval, inj, &subjects)?.1.into_iter();
    let (mul, add) = (r.next(), r.next());
    Ok((mul.expect("two subjects"), add.expect("two subjects")))
}

pub const SWEEP_CSV_HEADER: &str = "ber,engine,granularity,trials,samples,mean_accuracy,ci95_half_width";
pub const VULN_CSV_HEADER: &str = "subject,ber,acc_raw,acc_prot,delta,ci95_half_width";

pub fn sweep_csv_row(r: &CampaignResult) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        r.ber,
        r.engine,
        r.granularity,
        r.trials.len(),
        r.samples,
        r.mean_accuracy,
        r.ci95_half_width
    )
}

pub fn vuln_csv_row(r: &VulnReport) -> String {
    format!(
        "{},{},{},{},{},{}",
        r.subject, r.ber, r.acc_raw, r.acc_prot, r.delta, r.ci95_half_width
    )
}
