//! On-disk models and datasets, and generated toy models.
//!
//! A model is a JSON manifest plus one little-endian blob per weight or bias tensor,
//! each with a SHA-256 checksum. A dataset is a directory holding a JSON manifest, one
//! blob per sample and an optional `labels.csv`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::conv::{direct_accumulators, ConvSpec, Engine};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{ConvLayer, Layer, LinearLayer, ModelDef};
use crate::qtensor::{requantize, BitWidth, QTensor, QuantParams};

pub const FORMAT_VERSION: u32 = 1;
pub const MODEL_MANIFEST: &str = "model.json";
pub const DATASET_MANIFEST: &str = "dataset.json";
pub const LABELS_FILE: &str = "labels.csv";

type Extra = BTreeMap<String, Value>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadOptions {
    /// Warn about unknown manifest fields instead of rejecting them.
    pub lenient: bool,
}

#[derive(Serialize, Deserialize)]
struct BlobRef {
    file: String,
    sha256: String,
    #[serde(flatten)]
    extra: Extra,
}

#[derive(Serialize, Deserialize)]
struct InputEntry {
    shape: [usize; 3],
    scale: f64,
    #[serde(flatten)]
    extra: Extra,
}

fn one() -> usize {
    1
}

fn is_one(v: &usize) -> bool {
    *v == 1
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum LayerEntry {
    #[serde(rename = "conv3x3")]
    Conv {
        in_channels: usize,
        out_channels: usize,
        padding: usize,
        #[serde(default = "one", skip_serializing_if = "is_one")]
        stride: usize,
        weight_scale: f64,
        weights: BlobRef,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bias: Option<BlobRef>,
        output_scale: f64,
        #[serde(flatten)]
        extra: Extra,
    },
    Relu {
        #[serde(flatten)]
        extra: Extra,
    },
    ConstrainedRelu {
        min: i32,
        max: i32,
        #[serde(flatten)]
        extra: Extra,
    },
    Flatten {
        #[serde(flatten)]
        extra: Extra,
    },
    Linear {
        in_features: usize,
        out_features: usize,
        weight_scale: f64,
        weights: BlobRef,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bias: Option<BlobRef>,
        output_scale: f64,
        #[serde(flatten)]
        extra: Extra,
    },
}

#[derive(Serialize, Deserialize)]
struct ModelManifest {
    version: u32,
    name: String,
    bit_width: BitWidth,
    engine: Engine,
    input: InputEntry,
    layers: Vec<LayerEntry>,
    #[serde(flatten)]
    extra: Extra,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn check_extra(where_: &str, extra: &Extra, opts: LoadOptions) -> Result<()> {
    if extra.is_empty() {
        return Ok(());
    }
    let keys: Vec<&str> = extra.keys().map(String::as_str).collect();
    if opts.lenient {
        log::warn!("ignoring unknown fields in {where_}: {}", keys.join(", "));
        Ok(())
    } else {
        Err(Error::Format(format!(
            "unknown fields in {where_}: {}",
            keys.join(", ")
        )))
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn encode_ints(values: impl Iterator<Item = i64>, bytes_per: usize) -> Vec<u8> {
    let mut out = Vec::new();
    for v in values {
        match bytes_per {
            1 => out.extend((v as i8).to_le_bytes()),
            2 => out.extend((v as i16).to_le_bytes()),
            4 => out.extend((v as i32).to_le_bytes()),
            _ => out.extend(v.to_le_bytes()),
        }
    }
    out
}

fn decode_ints(bytes: &[u8], bytes_per: usize, path: &Path) -> Result<Vec<i64>> {
    if !bytes.len().is_multiple_of(bytes_per) {
        return Err(Error::Format(format!(
            "{}: {} bytes is not a multiple of {bytes_per}",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(bytes_per)
        .map(|c| match bytes_per {
            1 => i8::from_le_bytes([c[0]]) as i64,
            2 => i16::from_le_bytes([c[0], c[1]]) as i64,
            4 => i32::from_le_bytes(c.try_into().expect("4 bytes")) as i64,
            _ => i64::from_le_bytes(c.try_into().expect("8 bytes")),
        })
        .collect())
}

fn bias_bytes(bw: BitWidth) -> usize {
    bw.accumulator_bits() as usize / 8
}

struct BlobWriter<'a> {
    dir: &'a Path,
}

impl BlobWriter<'_> {
    fn put(&self, file: String, bytes: &[u8]) -> Result<BlobRef> {
        write_file(&self.dir.join(&file), bytes)?;
        Ok(BlobRef {
            sha256: sha256_hex(bytes),
            file,
            extra: Extra::new(),
        })
    }

    fn tensor(&self, file: String, t: &QTensor) -> Result<BlobRef> {
        let bytes = encode_ints(t.data().iter().map(|&v| v as i64), t.bit_width().bytes());
        self.put(file, &bytes)
    }

    fn bias(&self, file: String, b: &[i64], bw: BitWidth) -> Result<BlobRef> {
        self.put(file, &encode_ints(b.iter().copied(), bias_bytes(bw)))
    }
}

/// Write `model` as `dir/model.json` plus blobs. Output is canonical: saving a loaded
/// canonical model reproduces every file byte for byte.
pub fn save_model(model: &ModelDef, dir: &Path) -> Result<PathBuf> {
    model.validate_for(Engine::Direct)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let blobs = BlobWriter { dir };
    let bw = model.bit_width;
    let mut layers = Vec::with_capacity(model.layers.len());
    for (i, layer) in model.layers.iter().enumerate() {
        layers.push(match layer {
            Layer::Conv(c) => LayerEntry::Conv {
                in_channels: c.spec.in_channels,
                out_channels: c.spec.out_channels,
                padding: c.spec.padding,
                stride: c.spec.stride,
                weight_scale: c.spec.weights.qparams().scale,
                weights: blobs.tensor(format!("layer{i}.weights.bin"), &c.spec.weights)?,
                bias: match &c.spec.bias {
                    Some(b) => Some(blobs.bias(format!("layer{i}.bias.bin"), b, bw)?),
                    None => None,
                },
                output_scale: c.output.scale,
                extra: Extra::new(),
            },
            Layer::Relu => LayerEntry::Relu { extra: Extra::new() },
            Layer::ConstrainedRelu { min, max } => LayerEntry::ConstrainedRelu {
                min: *min,
                max: *max,
                extra: Extra::new(),
            },
            Layer::Flatten => LayerEntry::Flatten { extra: Extra::new() },
            Layer::Linear(l) => LayerEntry::Linear {
                in_features: l.in_features,
                out_features: l.out_features,
                weight_scale: l.weights.qparams().scale,
                weights: blobs.tensor(format!("layer{i}.weights.bin"), &l.weights)?,
                bias: match &l.bias {
                    Some(b) => Some(blobs.bias(format!("layer{i}.bias.bin"), b, bw)?),
                    None => None,
                },
                output_scale: l.output.scale,
                extra: Extra::new(),
            },
        });
    }
    let manifest = ModelManifest {
        version: FORMAT_VERSION,
        name: model.name.clone(),
        bit_width: bw,
        engine: model.engine,
        input: InputEntry {
            shape: model.input_shape,
            scale: model.input_qparams.scale,
            extra: Extra::new(),
        },
        layers,
        extra: Extra::new(),
    };
    let path = dir.join(MODEL_MANIFEST);
    write_file(&path, (serde_json::to_string_pretty(&manifest)? + "\n").as_bytes())?;
    Ok(path)
}

/// Manifest path for `path`, which may be the manifest itself or its directory.
fn manifest_path(path: &Path, name: &str) -> PathBuf {
    if path.is_dir() {
        path.join(name)
    } else {
        path.to_path_buf()
    }
}

pub fn load_model(path: &Path) -> Result<ModelDef> {
    load_model_with(path, LoadOptions::default())
}

pub fn load_model_with(path: &Path, opts: LoadOptions) -> Result<ModelDef> {
    let mpath = manifest_path(path, MODEL_MANIFEST);
    let dir = mpath.parent().unwrap_or(Path::new(".")).to_path_buf();
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let raw: Value = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", mpath.display())))?;
    match raw.get("version").and_then(Value::as_u64) {
        Some(v) if v == FORMAT_VERSION as u64 => {}
        Some(v) => return Err(Error::Format(format!("unsupported manifest version {v}"))),
        None => return Err(Error::Format("manifest has no version field".into())),
    }
    let m: ModelManifest =
        serde_json::from_value(raw).map_err(|e| Error::Format(format!("{}: {e}", mpath.display())))?;
    check_extra("model manifest", &m.extra, opts)?;
    check_extra("input", &m.input.extra, opts)?;
    let bw = m.bit_width;
    let blob = |r: &BlobRef, what: &str, bytes_per: usize| -> Result<Vec<i64>> {
        check_extra(what, &r.extra, opts)?;
        let p = dir.join(&r.file);
        let bytes = read_file(&p)?;
        let found = sha256_hex(&bytes);
        if !found.eq_ignore_ascii_case(&r.sha256) {
            return Err(Error::Checksum {
                path: p,
                expected: r.sha256.clone(),
                found,
            });
        }
        decode_ints(&bytes, bytes_per, &p)
    };
    let tensor = |r: &BlobRef, what: &str, shape: Vec<usize>, scale: f64| -> Result<QTensor> {
        let data = blob(r, what, bw.bytes())?.into_iter().map(|v| v as i32).collect();
        QTensor::new(shape, data, QuantParams::new(bw, scale)?)
    };
    let bias = |r: &Option<BlobRef>, what: &str, len: usize| -> Result<Option<Vec<i64>>> {
        let Some(r) = r else { return Ok(None) };
        let b = blob(r, what, bias_bytes(bw))?;
        if b.len() != len {
            return Err(Error::Shape(format!("{what}: {} values, expected {len}", b.len())));
        }
        Ok(Some(b))
    };
    let mut layers = Vec::with_capacity(m.layers.len());
    for (i, entry) in m.layers.iter().enumerate() {
        let at = format!("layer {i}");
        layers.push(match entry {
            LayerEntry::Conv {
                in_channels,
                out_channels,
                padding,
                stride,
                weight_scale,
                weights,
                bias: b,
                output_scale,
                extra,
            } => {
                check_extra(&at, extra, opts)?;
                let shape = vec![*out_channels, *in_channels, 3, 3];
                Layer::Conv(ConvLayer {
                    spec: ConvSpec {
                        in_channels: *in_channels,
                        out_channels: *out_channels,
                        padding: *padding,
                        stride: *stride,
                        weights: tensor(weights, &at, shape, *weight_scale)?,
                        bias: bias(b, &at, *out_channels)?,
                    },
                    output: QuantParams::new(bw, *output_scale)?,
                })
            }
            LayerEntry::Relu { extra } => {
                check_extra(&at, extra, opts)?;
                Layer::Relu
            }
            LayerEntry::ConstrainedRelu { min, max, extra } => {
                check_extra(&at, extra, opts)?;
                Layer::ConstrainedRelu { min: *min, max: *max }
            }
            LayerEntry::Flatten { extra } => {
                check_extra(&at, extra, opts)?;
                Layer::Flatten
            }
            LayerEntry::Linear {
                in_features,
                out_features,
                weight_scale,
                weights,
                bias: b,
                output_scale,
                extra,
            } => {
                check_extra(&at, extra, opts)?;
                let shape = vec![*out_features, *in_features];
                Layer::Linear(LinearLayer {
                    in_features: *in_features,
                    out_features: *out_features,
                    weights: tensor(weights, &at, shape, *weight_scale)?,
                    bias: bias(b, &at, *out_features)?,
                    output: QuantParams::new(bw, *output_scale)?,
                })
            }
        });
    }
    let model = ModelDef {
        name: m.name,
        bit_width: bw,
        engine: m.engine,
        input_shape: m.input.shape,
        input_qparams: QuantParams::new(bw, m.input.scale)?,
        layers,
    };
    model.validate()?;
    Ok(model)
}

#[derive(Serialize, Deserialize)]
struct DatasetManifest {
    version: u32,
    bit_width: BitWidth,
    /// `C,H,W` of each sample.
    shape: [usize; 3],
    scale: f64,
    samples: Vec<BlobRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<String>,
    #[serde(flatten)]
    extra: Extra,
}

/// Write `dataset` into `dir`. Every sample must share shape and qparams.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    let first = dataset
        .samples()
        .first()
        .ok_or_else(|| Error::Config("cannot save an empty dataset".into()))?;
    let qp = first.qparams();
    let dims = first.shape();
    let shape: [usize; 3] = dims[dims.len() - 3..]
        .try_into()
        .map_err(|_| Error::Shape("dataset samples must be C,H,W or 1,C,H,W".into()))?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let blobs = BlobWriter { dir };
    let mut samples = Vec::with_capacity(dataset.len());
    for (i, s) in dataset.samples().iter().enumerate() {
        if s.qparams() != qp || s.len() != shape.iter().product::<usize>() {
            return Err(Error::Shape(format!("sample {i} differs in shape or qparams")));
        }
        samples.push(blobs.tensor(format!("sample{i:05}.bin"), s)?);
    }
    let labels = match dataset.labels() {
        Some(l) => {
            let mut csv = String::from("sample,label\n");
            for (i, v) in l.iter().enumerate() {
                csv.push_str(&format!("{i},{v}\n"));
            }
            write_file(&dir.join(LABELS_FILE), csv.as_bytes())?;
            Some(LABELS_FILE.to_string())
        }
        None => None,
    };
    let manifest = DatasetManifest {
        version: FORMAT_VERSION,
        bit_width: qp.bit_width,
        shape,
        scale: qp.scale,
        samples,
        labels,
        extra: Extra::new(),
    };
    let path = dir.join(DATASET_MANIFEST);
    write_file(&path, (serde_json::to_string_pretty(&manifest)? + "\n").as_bytes())?;
    Ok(path)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    load_dataset_with(path, LoadOptions::default())
}

pub fn load_dataset_with(path: &Path, opts: LoadOptions) -> Result<Dataset> {
    let mpath = manifest_path(path, DATASET_MANIFEST);
    let dir = mpath.parent().unwrap_or(Path::new(".")).to_path_buf();
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let m: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", mpath.display())))?;
    if m.version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported dataset version {}", m.version)));
    }
    check_extra("dataset manifest", &m.extra, opts)?;
    let qp = QuantParams::new(m.bit_width, m.scale)?;
    let mut samples = Vec::with_capacity(m.samples.len());
    for r in &m.samples {
        check_extra("sample", &r.extra, opts)?;
        let p = dir.join(&r.file);
        let bytes = read_file(&p)?;
        let found = sha256_hex(&bytes);
        if !found.eq_ignore_ascii_case(&r.sha256) {
            return Err(Error::Checksum {
                path: p,
                expected: r.sha256.clone(),
                found,
            });
        }
        let data = decode_ints(&bytes, qp.bit_width.bytes(), &p)?
            .into_iter()
            .map(|v| v as i32)
            .collect();
        let [c, h, w] = m.shape;
        samples.push(QTensor::new(vec![1, c, h, w], data, qp)?);
    }
    let labels = match &m.labels {
        Some(f) => Some(read_labels(&dir.join(f), samples.len())?),
        None => None,
    };
    Dataset::new(samples, labels)
}

fn read_labels(path: &Path, n: usize) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut labels = vec![None; n];
    for (ln, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Format(format!("{}:{}: expected sample,label", path.display(), ln + 1));
        let (s, l) = line.split_once(',').ok_or_else(bad)?;
        let s: usize = s.trim().parse().map_err(|_| bad())?;
        let l: usize = l.trim().parse().map_err(|_| bad())?;
        *labels.get_mut(s).ok_or_else(bad)? = Some(l);
    }
    labels
        .into_iter()
        .enumerate()
        .map(|(i, l)| l.ok_or_else(|| Error::Format(format!("no label for sample {i}"))))
        .collect()
}

/// Shape of a generated model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToySpec {
    pub name: String,
    pub bit_width: BitWidth,
    pub in_channels: usize,
    pub input_hw: [usize; 2],
    /// Output channels of each conv layer; one 3x3 conv + ReLU per entry.
    pub channels: Vec<usize>,
    pub padding: usize,
    /// Classes of a final linear layer; `None` ends the model at the flattened conv
    /// output.
    pub classes: Option<usize>,
    pub bias: bool,
}

impl ToySpec {
    pub fn new(bit_width: BitWidth, in_channels: usize, channels: Vec<usize>, input_hw: [usize; 2]) -> Self {
        Self {
            name: format!("toy-{bit_width}"),
            bit_width,
            in_channels,
            input_hw,
            channels,
            padding: 1,
            classes: Some(10),
            bias: true,
        }
    }
}

/// Input scale of generated models and datasets: inputs lie in `[-1, 1]`.
fn toy_input_qparams(bw: BitWidth) -> QuantParams {
    QuantParams::covering(bw, 1.0)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, bound: f64, bw: BitWidth) -> Result<QTensor> {
    let n = shape.iter().product();
    let values: Vec<f64> = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    let max_abs = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    crate::qtensor::quantize(&values, shape, QuantParams::covering(bw, max_abs))
}

/// Random uniform inputs in `[-1, 1]` shaped for `model`.
pub fn random_inputs(model: &ModelDef, count: usize, seed: u64) -> Vec<QTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_DA7A);
    let qp = model.input_qparams;
    let shape = model.sample_shape();
    let n: usize = shape.iter().product();
    (0..count)
        .map(|_| {
            let data = (0..n)
                .map(|_| qp.quantize_value(rng.random_range(-1.0..=1.0)))
                .collect();
            QTensor::new(shape.clone(), data, qp).expect("in-range quantized input")
        })
        .collect()
}

/// Unlabeled dataset of random inputs for `model`.
pub fn generate_dataset(model: &ModelDef, count: usize, seed: u64) -> Dataset {
    Dataset::unlabeled(random_inputs(model, count, seed))
}

fn calibrated_output(max_abs_acc: i64, s_in: f64, s_w: f64, bw: BitWidth) -> QuantParams {
    QuantParams::covering(bw, max_abs_acc as f64 * s_in * s_w)
}

/// Deterministic random-weight model. Output scales are calibrated on random inputs
/// as the smallest power of two covering the fault-free max-abs of each layer.
pub fn generate_toy_model(spec: &ToySpec, seed: u64) -> Result<ModelDef> {
    if spec.channels.is_empty() || spec.in_channels == 0 {
        return Err(Error::Config(
            "toy model needs at least one conv layer and input channel".into(),
        ));
    }
    let bw = spec.bit_width;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input_qparams = toy_input_qparams(bw);
    let [h, w] = spec.input_hw;
    let mut model = ModelDef {
        name: spec.name.clone(),
        bit_width: bw,
        engine: Engine::Direct,
        input_shape: [spec.in_channels, h, w],
        input_qparams,
        layers: Vec::new(),
    };
    let mut calib = random_inputs(&model, 16, seed);
    let mut c_in = spec.in_channels;
    for &k in &spec.channels {
        let bound = (3.0 / (9 * c_in) as f64).sqrt();
        let weights = random_tensor(&mut rng, vec![k, c_in, 3, 3], bound, bw)?;
        let s_in = calib[0].qparams().scale;
        let s_w = weights.qparams().scale;
        let bias = spec.bias.then(|| {
            (0..k)
                .map(|_| (rng.random_range(-0.1..=0.1) / (s_in * s_w)).round() as i64)
                .collect::<Vec<i64>>()
        });
        let spec_k = ConvSpec {
            in_channels: c_in,
            out_channels: k,
            padding: spec.padding,
            stride: 1,
            weights,
            bias,
        };
        let accs = calib
            .iter()
            .map(|x| direct_accumulators(x, &spec_k))
            .collect::<Result<Vec<_>>>()?;
        let (ho, wo) = spec_k.output_hw(calib[0].dims4()[2], calib[0].dims4()[3])?;
        let plane = ho * wo;
        let with_bias = |acc: &[i64], spec: &ConvSpec| -> Vec<i64> {
            acc.iter()
                .enumerate()
                .map(|(i, &a)| a + spec.bias.as_ref().map_or(0, |b| b[i / plane]))
                .collect()
        };
        let max_abs = accs
            .iter()
            .flat_map(|a| with_bias(a, &spec_k))
            .map(i64::abs)
            .max()
            .unwrap_or(0);
        let out_qp = calibrated_output(max_abs, s_in, s_w, bw);
        let shift = spec_k.requant_shift(calib[0].qparams(), out_qp)?;
        calib = accs
            .iter()
            .map(|a| {
                let data = with_bias(a, &spec_k)
                    .into_iter()
                    .map(|v| requantize(v, shift, bw).max(0))
                    .collect();
                QTensor::new(vec![1, k, ho, wo], data, out_qp)
            })
            .collect::<Result<Vec<_>>>()?;
        spec_k.validate()?;
        model.layers.push(Layer::Conv(ConvLayer {
            spec: spec_k,
            output: out_qp,
        }));
        model.layers.push(Layer::Relu);
        c_in = k;
    }
    model.layers.push(Layer::Flatten);
    if let Some(classes) = spec.classes {
        let features = calib[0].len();
        let bound = (3.0 / features as f64).sqrt();
        let weights = random_tensor(&mut rng, vec![classes, features], bound, bw)?;
        let (s_in, s_w) = (calib[0].qparams().scale, weights.qparams().scale);
        let max_abs = calib
            .iter()
            .flat_map(|x| {
                let xs = x.data();
                weights.data().chunks(features).map(move |row| {
                    row.iter()
                        .zip(xs)
                        .map(|(&a, &b)| a as i64 * b as i64)
                        .sum::<i64>()
                        .abs()
                })
            })
            .max()
            .unwrap_or(0);
        model.layers.push(Layer::Linear(LinearLayer {
            in_features: features,
            out_features: classes,
            weights,
            bias: None,
            output: calibrated_output(max_abs, s_in, s_w, bw),
        }));
    }
    model.validate()?;
    Ok(model)
}

/// Names accepted by [`builtin_model`].
pub const BUILTIN_MODELS: &[&str] = &["toycnn-int8", "toycnn-int16"];

/// Seed of the built-in models.
pub const BUILTIN_SEED: u64 = 2024;

/// Spec of a built-in model: 3x8x8 input, two 8-channel conv + ReLU blocks, flatten and
/// a 10-way linear head (6 layers).
pub fn builtin_spec(name: &str) -> Result<ToySpec> {
    let bw = match name {
        "toycnn-int8" => BitWidth::Int8,
        "toycnn-int16" => BitWidth::Int16,
        other => return Err(Error::Config(format!("unknown built-in model '{other}'"))),
    };
    Ok(ToySpec {
        name: name.to_string(),
        ..ToySpec::new(bw, 3, vec![8, 8], [8, 8])
    })
}

pub fn builtin_model(name: &str) -> Result<ModelDef> {
    generate_toy_model(&builtin_spec(name)?, BUILTIN_SEED)
}
