//! Op-level and neuron-level bit-flip injection.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::conv::{OpHook, OpRecord, OpType, Stage};
use crate::error::{Error, Result};
use crate::qtensor::{sign_extend, QTensor};
use crate::rng::{Domain, SlotStream, StreamKey};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// Flip result bits of primitive MUL/ADD ops.
    #[default]
    OpLevel,
    /// Flip bits of requantized conv outputs.
    NeuronLevel,
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Granularity::OpLevel => "op",
            Granularity::NeuronLevel => "neuron",
        })
    }
}

impl FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "op" | "op_level" => Ok(Granularity::OpLevel),
            "neuron" | "neuron_level" => Ok(Granularity::NeuronLevel),
            other => Err(Error::Config(format!("unknown granularity '{other}'"))),
        }
    }
}

/// Sorted, disjoint, non-adjacent half-open op id ranges.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OpRanges(Vec<(u64, u64)>);

impl OpRanges {
    pub fn new(ranges: impl IntoIterator<Item = (u64, u64)>) -> Self {
        let mut v: Vec<(u64, u64)> = ranges.into_iter().filter(|r| r.0 < r.1).collect();
        v.sort_unstable();
        let mut out: Vec<(u64, u64)> = Vec::with_capacity(v.len());
        for (s, e) in v {
            match out.last_mut() {
                Some(last) if s <= last.1 => last.1 = last.1.max(e),
                _ => out.push((s, e)),
            }
        }
        Self(out)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ranges(&self) -> &[(u64, u64)] {
        &self.0
    }

    /// Number of op ids covered.
    pub fn count(&self) -> u64 {
        self.0.iter().map(|(s, e)| e - s).sum()
    }

    pub fn contains(&self, op_id: u64) -> bool {
        let i = self.0.partition_point(|r| r.1 <= op_id);
        self.0.get(i).is_some_and(|r| r.0 <= op_id)
    }

    pub fn union(&self, other: &OpRanges) -> OpRanges {
        OpRanges::new(self.0.iter().chain(&other.0).copied())
    }
}

/// Membership test for increasing op ids.
#[derive(Debug)]
struct RangeCursor<'a> {
    ranges: &'a [(u64, u64)],
    idx: usize,
}

impl RangeCursor<'_> {
    #[inline]
    fn contains(&mut self, id: u64) -> bool {
        if self.idx > 0 && id < self.ranges[self.idx - 1].1 {
            self.idx = 0;
        }
        while self.ranges.get(self.idx).is_some_and(|r| r.1 <= id) {
            self.idx += 1;
        }
        self.ranges.get(self.idx).is_some_and(|r| r.0 <= id)
    }
}

/// Which ops (or, at neuron level, which layers) may be struck.
///
/// Empty include sets mean "everything"; exclusions win over inclusions.
/// `exclude_ops` applies to op-level injection only.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scope {
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub layers: BTreeSet<usize>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub op_types: BTreeSet<OpType>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub stages: BTreeSet<Stage>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub exclude_layers: BTreeSet<usize>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub exclude_op_types: BTreeSet<OpType>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub exclude_stages: BTreeSet<Stage>,
    #[serde(default, skip_serializing_if = "OpRanges::is_empty")]
    pub exclude_ops: OpRanges,
}

fn admits<T: Ord>(include: &BTreeSet<T>, exclude: &BTreeSet<T>, v: &T) -> bool {
    (include.is_empty() || include.contains(v)) && !exclude.contains(v)
}

impl Scope {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn excluding_layer(mut self, layer_id: usize) -> Self {
        self.exclude_layers.insert(layer_id);
        self
    }

    pub fn excluding_op_type(mut self, op_type: OpType) -> Self {
        self.exclude_op_types.insert(op_type);
        self
    }

    pub fn excluding_ops(mut self, ranges: &OpRanges) -> Self {
        self.exclude_ops = self.exclude_ops.union(ranges);
        self
    }

    pub fn contains_op(&self, op: &OpRecord) -> bool {
        admits(&self.layers, &self.exclude_layers, &(op.layer_id as usize))
            && admits(&self.op_types, &self.exclude_op_types, &op.op_type)
            && admits(&self.stages, &self.exclude_stages, &op.stage)
            && !self.exclude_ops.contains(op.op_id)
    }

    pub fn contains_layer(&self, layer_id: usize) -> bool {
        admits(&self.layers, &self.exclude_layers, &layer_id)
    }
}

fn join<T: fmt::Display>(items: impl IntoIterator<Item = T>) -> String {
    items.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

impl fmt::Display for Scope {
    /// Canonical string form, parsed back by [`FromStr`].
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        let stage_names = |s: &BTreeSet<Stage>| join(s.iter().map(|st| st.name()));
        if !self.layers.is_empty() {
            parts.push(format!("layers={}", join(&self.layers)));
        }
        if !self.op_types.is_empty() {
            parts.push(format!("types={}", join(&self.op_types)));
        }
        if !self.stages.is_empty() {
            parts.push(format!("stages={}", stage_names(&self.stages)));
        }
        if !self.exclude_layers.is_empty() {
            parts.push(format!("exclude-layers={}", join(&self.exclude_layers)));
        }
        if !self.exclude_op_types.is_empty() {
            parts.push(format!("exclude-types={}", join(&self.exclude_op_types)));
        }
        if !self.exclude_stages.is_empty() {
            parts.push(format!("exclude-stages={}", stage_names(&self.exclude_stages)));
        }
        if !self.exclude_ops.is_empty() {
            let r = self.exclude_ops.ranges().iter().map(|(s, e)| format!("{s}..{e}"));
            parts.push(format!("exclude-ops={}", join(r)));
        }
        if parts.is_empty() {
            f.write_str("all")
        } else {
            f.write_str(&parts.join(";"))
        }
    }
}

fn parse_list<T: FromStr + Ord>(key: &str, v: &str) -> Result<BTreeSet<T>> {
    v.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| Error::Config(format!("bad value '{s}' for scope key '{key}'")))
        })
        .collect()
}

fn parse_range(s: &str) -> Result<(u64, u64)> {
    let bad = || Error::Config(format!("bad op range '{s}', expected START..END"));
    let (a, b) = s.trim().split_once("..").ok_or_else(bad)?;
    Ok((a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?))
}

impl FromStr for Scope {
    type Err = Error;

    /// `all`, or `;`-separated `key=v1,v2` items with keys `layers`, `types`, `stages`,
    /// `exclude-layers`, `exclude-types`, `exclude-stages`, `exclude-ops` (`a..b` ranges),
    /// `segment-size` and `exclude-segments`.
    fn from_str(s: &str) -> Result<Self> {
        let mut scope = Scope::all();
        let mut segment_size: Option<u64> = None;
        let mut segments: BTreeSet<u64> = BTreeSet::new();
        for item in s.split(';').map(str::trim).filter(|i| !i.is_empty()) {
            if item.eq_ignore_ascii_case("all") {
                continue;
            }
            let (key, val) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("scope item '{item}' is not key=value")))?;
            let key = key.trim().to_ascii_lowercase().replace('_', "-");
            match key.as_str() {
                "layers" => scope.layers = parse_list(&key, val)?,
                "types" | "op-types" => scope.op_types = parse_list(&key, val)?,
                "stages" => scope.stages = parse_list(&key, val)?,
                "exclude-layers" => scope.exclude_layers = parse_list(&key, val)?,
                "exclude-types" | "exclude-op-types" => scope.exclude_op_types = parse_list(&key, val)?,
                "exclude-stages" => scope.exclude_stages = parse_list(&key, val)?,
                "exclude-ops" => {
                    let r: Result<Vec<_>> = val.split(',').filter(|p| !p.is_empty()).map(parse_range).collect();
                    scope.exclude_ops = scope.exclude_ops.union(&OpRanges::new(r?));
                }
                "segment-size" => {
                    let n: u64 = val
                        .trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("bad segment size '{val}'")))?;
                    if n == 0 {
                        return Err(Error::Config("segment size must be at least 1".into()));
                    }
                    segment_size = Some(n);
                }
                "exclude-segments" => segments = parse_list(&key, val)?,
                other => return Err(Error::Config(format!("unknown scope key '{other}'"))),
            }
        }
        if !segments.is_empty() {
            let size = segment_size.ok_or_else(|| Error::Config("exclude-segments needs segment-size".into()))?;
            let r = OpRanges::new(segments.iter().map(|&i| (i * size, (i + 1) * size)));
            scope.exclude_ops = scope.exclude_ops.union(&r);
        }
        Ok(scope)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectionConfig {
    #[serde(default)]
    pub granularity: Granularity,
    /// Per-bit flip probability.
    pub ber: f64,
    pub seed: u64,
    #[serde(default)]
    pub scope: Scope,
    #[serde(default = "default_trials")]
    pub trials: u32,
}

fn default_trials() -> u32 {
    100
}

impl InjectionConfig {
    pub fn op_level(ber: f64, seed: u64, trials: u32) -> Self {
        Self {
            granularity: Granularity::OpLevel,
            ber,
            seed,
            scope: Scope::all(),
            trials,
        }
    }

    pub fn neuron_level(ber: f64, seed: u64, trials: u32) -> Self {
        Self {
            granularity: Granularity::NeuronLevel,
            ..Self::op_level(ber, seed, trials)
        }
    }

    pub fn with_scope(mut self, scope: Scope) -> Self {
        self.scope = scope;
        self
    }

    pub fn with_ber(mut self, ber: f64) -> Self {
        self.ber = ber;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ber) {
            return Err(Error::Config(format!("ber {} is outside [0, 1]", self.ber)));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FlipTarget {
    Op(u64),
    Neuron(u64),
}

/// One applied bit flip. `bit` is relative to the exposed window of the op (or to the
/// neuron's LSB). `replica` is the TMR copy (0 for unprotected execution).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Flip {
    pub trial: u32,
    pub sample: u32,
    pub target: FlipTarget,
    pub bit: u32,
    pub replica: u8,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlipRecord {
    trial: u32,
    #[serde(default)]
    sample: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    op_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    neuron: Option<u64>,
    bit: u32,
    #[serde(default, skip_serializing_if = "is_zero")]
    replica: u8,
}

fn is_zero(v: &u8) -> bool {
    *v == 0
}

impl From<&Flip> for FlipRecord {
    fn from(f: &Flip) -> Self {
        let (op_id, neuron) = match f.target {
            FlipTarget::Op(id) => (Some(id), None),
            FlipTarget::Neuron(n) => (None, Some(n)),
        };
        Self {
            trial: f.trial,
            sample: f.sample,
            op_id,
            neuron,
            bit: f.bit,
            replica: f.replica,
        }
    }
}

impl TryFrom<FlipRecord> for Flip {
    type Error = Error;

    fn try_from(r: FlipRecord) -> Result<Self> {
        let target = match (r.op_id, r.neuron) {
            (Some(id), None) => FlipTarget::Op(id),
            (None, Some(n)) => FlipTarget::Neuron(n),
            _ => {
                return Err(Error::Format(
                    "trace record needs exactly one of op_id and neuron".into(),
                ))
            }
        };
        if r.bit >= 64 {
            return Err(Error::InvalidBitPosition {
                position: r.bit,
                bit_width: 64,
            });
        }
        Ok(Flip {
            trial: r.trial,
            sample: r.sample,
            target,
            bit: r.bit,
            replica: r.replica,
        })
    }
}

/// Every flip applied in a campaign, in (trial, sample, emission) order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FaultTrace {
    pub flips: Vec<Flip>,
}

impl FaultTrace {
    pub fn new(flips: Vec<Flip>) -> Self {
        Self { flips }
    }

    pub fn len(&self) -> usize {
        self.flips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flips.is_empty()
    }

    /// JSON lines, one flip per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for f in &self.flips {
            serde_json::to_writer(&mut w, &FlipRecord::from(f))?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut flips = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::Format(format!("trace line {}: {e}", n + 1)))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: FlipRecord =
                serde_json::from_str(&line).map_err(|e| Error::Format(format!("trace line {}: {e}", n + 1)))?;
            flips.push(Flip::try_from(rec)?);
        }
        Ok(Self { flips })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_jsonl(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_jsonl(std::io::BufReader::new(f))
    }

    /// Flip masks of one `(trial, sample)` run.
    pub fn run(&self, trial: u32, sample: u32) -> RunMasks {
        RunMasks::from_flips(self.flips.iter().filter(|f| f.trial == trial && f.sample == sample))
    }
}

/// Flip masks of a single run, keyed by target.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunMasks {
    /// `(op_id, replica, mask)`, sorted.
    ops: Vec<(u64, u8, u64)>,
    /// `(neuron, mask)`, sorted.
    neurons: Vec<(u64, u64)>,
}

impl RunMasks {
    pub fn from_flips<'a>(flips: impl IntoIterator<Item = &'a Flip>) -> Self {
        let mut ops: Vec<(u64, u8, u64)> = Vec::new();
        let mut neurons: Vec<(u64, u64)> = Vec::new();
        for f in flips {
            match f.target {
                FlipTarget::Op(id) => ops.push((id, f.replica, 1 << f.bit)),
                FlipTarget::Neuron(n) => neurons.push((n, 1 << f.bit)),
            }
        }
        ops.sort_unstable();
        neurons.sort_unstable();
        // Merge duplicates by XOR so that a repeated record cancels, as flips would.
        let mut merged_ops: Vec<(u64, u8, u64)> = Vec::with_capacity(ops.len());
        for (id, r, m) in ops {
            match merged_ops.last_mut() {
                Some(last) if last.0 == id && last.1 == r => last.2 ^= m,
                _ => merged_ops.push((id, r, m)),
            }
        }
        let mut merged_neurons: Vec<(u64, u64)> = Vec::with_capacity(neurons.len());
        for (n, m) in neurons {
            match merged_neurons.last_mut() {
                Some(last) if last.0 == n => last.1 ^= m,
                _ => merged_neurons.push((n, m)),
            }
        }
        Self {
            ops: merged_ops,
            neurons: merged_neurons,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty() && self.neurons.is_empty()
    }
}

// One per hook; boxing the streams would only add an indirection on the hot path.
#[allow(clippy::large_enum_variant)]
#[derive(Debug)]
enum Source {
    Sampled { ops: [SlotStream; 3], neurons: SlotStream },
    Replay { masks: RunMasks, op_cursor: usize },
}

impl Source {
    #[inline]
    fn op_mask(&mut self, replica: u8, op: &OpRecord) -> u64 {
        match self {
            Source::Sampled { ops, .. } => ops[replica as usize].mask(op.op_id, op.bit_width as u32),
            Source::Replay { masks, op_cursor } => {
                let key = (op.op_id, replica);
                let v = &masks.ops;
                if *op_cursor > 0 && (v[*op_cursor - 1].0, v[*op_cursor - 1].1) >= key {
                    *op_cursor = 0;
                }
                while v.get(*op_cursor).is_some_and(|e| (e.0, e.1) < key) {
                    *op_cursor += 1;
                }
                match v.get(*op_cursor) {
                    Some(e) if (e.0, e.1) == key => {
                        *op_cursor += 1;
                        e.2 & low_bits(op.bit_width as u32)
                    }
                    _ => 0,
                }
            }
        }
    }

    fn neuron_mask(&mut self, index: u64, bits: u32) -> u64 {
        match self {
            Source::Sampled { neurons, .. } => neurons.mask(index, bits),
            Source::Replay { masks, .. } => {
                let v = &masks.neurons;
                let i = v.partition_point(|e| e.0 < index);
                v.get(i).filter(|e| e.0 == index).map_or(0, |e| e.1 & low_bits(bits))
            }
        }
    }
}

#[inline]
fn low_bits(width: u32) -> u64 {
    if width >= 64 {
        u64::MAX
    } else {
        (1u64 << width) - 1
    }
}

/// 2-of-3 on exact equality; the median when all three differ.
#[inline]
pub fn vote(a: i64, b: i64, c: i64) -> i64 {
    if a == b || a == c {
        a
    } else if b == c {
        b
    } else {
        a.max(b).min(a.min(b).max(c))
    }
}

/// Injecting [`OpHook`] for one inference (one `(trial, sample)` pair).
#[derive(Debug)]
pub struct FaultHook<'a> {
    granularity: Granularity,
    scope: &'a Scope,
    trial: u32,
    sample: u32,
    source: Source,
    protected: Option<RangeCursor<'a>>,
    record: bool,
    flips: Vec<Flip>,
    flipped_bits: u64,
}

impl<'a> FaultHook<'a> {
    /// Fresh random flips drawn from `(cfg.seed, trial, sample)`.
    pub fn sampled(cfg: &'a InjectionConfig, trial: u32, sample: u32) -> Self {
        let key = |domain, replica| StreamKey {
            seed: cfg.seed,
            domain,
            trial,
            sample,
            replica,
        };
        let ops = [0, 1, 2].map(|r| SlotStream::new(key(Domain::Op, r), cfg.ber));
        let neurons = SlotStream::new(key(Domain::Neuron, 0), cfg.ber);
        Self::with_source(cfg, trial, sample, Source::Sampled { ops, neurons })
    }

    /// Replays exactly the flips in `masks`; `cfg.ber` and `cfg.seed` are ignored.
    pub fn replay(cfg: &'a InjectionConfig, trial: u32, sample: u32, masks: RunMasks) -> Self {
        Self::with_source(cfg, trial, sample, Source::Replay { masks, op_cursor: 0 })
    }

    fn with_source(cfg: &'a InjectionConfig, trial: u32, sample: u32, source: Source) -> Self {
        Self {
            granularity: cfg.granularity,
            scope: &cfg.scope,
            trial,
            sample,
            source,
            protected: None,
            record: false,
            flips: Vec::new(),
            flipped_bits: 0,
        }
    }

    /// Execute ops in `protected` three times and vote.
    pub fn with_tmr(mut self, protected: &'a OpRanges) -> Self {
        self.protected = Some(RangeCursor {
            ranges: protected.ranges(),
            idx: 0,
        });
        self
    }

    /// Keep a [`Flip`] record of every applied flip.
    pub fn recording(mut self, on: bool) -> Self {
        self.record = on;
        self
    }

    pub fn flips(&self) -> &[Flip] {
        &self.flips
    }

    pub fn into_flips(self) -> Vec<Flip> {
        self.flips
    }

    /// Total bits flipped so far (all replicas).
    pub fn flipped_bits(&self) -> u64 {
        self.flipped_bits
    }

    fn note(&mut self, target: FlipTarget, replica: u8, mask: u64) {
        self.flipped_bits += mask.count_ones() as u64;
        if self.record {
            let mut m = mask;
            while m != 0 {
                let bit = m.trailing_zeros();
                self.flips.push(Flip {
                    trial: self.trial,
                    sample: self.sample,
                    target,
                    bit,
                    replica,
                });
                m &= m - 1;
            }
        }
    }
}

impl OpHook for FaultHook<'_> {
    #[inline]
    fn on_op(&mut self, op: &OpRecord, value: i64) -> i64 {
        if self.granularity != Granularity::OpLevel {
            return value;
        }
        let protected = self.protected.as_mut().is_some_and(|p| p.contains(op.op_id));
        if !protected {
            let m = self.source.op_mask(0, op);
            if m == 0 || !self.scope.contains_op(op) {
                return value;
            }
            self.note(FlipTarget::Op(op.op_id), 0, m);
            return value ^ op.widen_mask(m);
        }
        let masks = [0u8, 1, 2].map(|r| self.source.op_mask(r, op));
        if masks == [0; 3] || !self.scope.contains_op(op) {
            return value;
        }
        let mut copies = [value; 3];
        for (r, (&m, c)) in masks.iter().zip(copies.iter_mut()).enumerate() {
            if m != 0 {
                self.note(FlipTarget::Op(op.op_id), r as u8, m);
                *c ^= op.widen_mask(m);
            }
        }
        vote(copies[0], copies[1], copies[2])
    }

    fn on_conv_output(&mut self, layer_id: usize, neuron_base: u64, out: &mut QTensor) {
        if self.granularity != Granularity::NeuronLevel || !self.scope.contains_layer(layer_id) {
            return;
        }
        let bits = out.bit_width().bits();
        for i in 0..out.len() {
            let n = neuron_base + i as u64;
            let m = self.source.neuron_mask(n, bits);
            if m != 0 {
                self.note(FlipTarget::Neuron(n), 0, m);
                let v = &mut out.data_mut()[i];
                *v = sign_extend(*v as i64 ^ m as i64, bits) as i32;
            }
        }
    }
}

/// Neuron-level injection into one conv layer output, numbering its neurons from 0.
pub fn neuron_level_inject(
    output: &QTensor,
    cfg: &InjectionConfig,
    layer_id: usize,
    trial: u32,
) -> Result<(QTensor, Vec<Flip>)> {
    cfg.validate()?;
    if cfg.granularity != Granularity::NeuronLevel {
        return Err(Error::Config("neuron_level_inject needs neuron granularity".into()));
    }
    let mut hook = FaultHook::sampled(cfg, trial, 0).recording(true);
    let mut out = output.clone();
    hook.on_conv_output(layer_id, 0, &mut out);
    Ok((out, hook.into_flips()))
}

/// `op_bits / neuron_bits`: the factor relating an op-level BER to the neuron-level BER
/// producing the same expected number of flips.
pub fn bit_ratio(op_bits: u64, neuron_bits: u64) -> f64 {
    op_bits as f64 / neuron_bits as f64
}
