use std::collections::BTreeMap;

use proptest::prelude::*;
use wgfi::conv::{conv_direct, conv_winograd, OpContext};
use wgfi::io::{generate_dataset, generate_toy_model, ToySpec};
use wgfi::*;

/// Independent reference: nested loops over the padded input, exact integer
/// accumulation, then round-half-away-from-zero and saturation through `f64`.
fn oracle(input: &QTensor, spec: &ConvSpec, out_qp: QuantParams) -> Vec<i32> {
    let [n, c, h, w] = input.dims4();
    let p = spec.padding as i64;
    let ho = h + 2 * spec.padding - 2;
    let wo = w + 2 * spec.padding - 2;
    let shift = out_qp.scale_log2().unwrap()
        - input.qparams().scale_log2().unwrap()
        - spec.weights.qparams().scale_log2().unwrap();
    let bw = out_qp.bit_width;
    let mut out = Vec::new();
    for b in 0..n {
        for k in 0..spec.out_channels {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc: i64 = spec.bias.as_ref().map_or(0, |v| v[k]);
                    for ch in 0..c {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let y = oy as i64 + ky as i64 - p;
                                let x = ox as i64 + kx as i64 - p;
                                if y < 0 || x < 0 || y >= h as i64 || x >= w as i64 {
                                    continue;
                                }
                                acc += input.at4(b, ch, y as usize, x as usize) as i64
                                    * spec.weights.at4(k, ch, ky, kx) as i64;
                            }
                        }
                    }
                    let scaled = (acc as f64 * 2f64.powi(-shift)).round();
                    let q = scaled.clamp(bw.min_value() as f64, bw.max_value() as f64);
                    out.push(q as i32);
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
struct Case {
    input: QTensor,
    spec: ConvSpec,
    out_qp: QuantParams,
}

fn tensor(bw: BitWidth, exp: i32, shape: Vec<usize>) -> impl Strategy<Value = QTensor> {
    let n: usize = shape.iter().product();
    let (lo, hi) = (bw.min_value() as i32, bw.max_value() as i32);
    proptest::collection::vec(lo..=hi, n)
        .prop_map(move |data| QTensor::new(shape.clone(), data, QuantParams::pow2(bw, exp)).unwrap())
}

fn case() -> impl Strategy<Value = Case> {
    (
        prop_oneof![Just(BitWidth::Int8), Just(BitWidth::Int16)],
        1usize..=8,
        1usize..=8,
        1usize..=16,
        1usize..=16,
        0usize..=1,
        any::<bool>(),
    )
        .prop_filter("input must cover the kernel", |&(_, _, _, h, w, p, _)| {
            h + 2 * p >= 3 && w + 2 * p >= 3
        })
        .prop_flat_map(|(bw, c, k, h, w, p, with_bias)| {
            let bias = if with_bias {
                proptest::collection::vec(-100_000i64..=100_000, k)
                    .prop_map(Some)
                    .boxed()
            } else {
                Just(None).boxed()
            };
            (
                tensor(bw, -(bw.bits() as i32 - 1), vec![1, c, h, w]),
                tensor(bw, -(bw.bits() as i32 - 1), vec![k, c, 3, 3]),
                bias,
                -4i32..=8,
            )
                .prop_map(move |(input, weights, bias, extra)| {
                    let in_exp = input.qparams().scale_log2().unwrap();
                    let w_exp = weights.qparams().scale_log2().unwrap();
                    // Requant shift of a few bits beyond the product width keeps outputs
                    // mostly unsaturated.
                    let shift = bw.bits() as i32 + extra;
                    Case {
                        input,
                        spec: ConvSpec {
                            in_channels: c,
                            out_channels: k,
                            padding: p,
                            stride: 1,
                            weights,
                            bias,
                        },
                        out_qp: QuantParams::pow2(bw, in_exp + w_exp + shift),
                    }
                })
        })
}

fn run_direct(case: &Case) -> QTensor {
    let mut hook = NoFaults;
    let mut ctx = OpContext::new(&mut hook, Exposure::default());
    conv_direct(&case.input, &case.spec, case.out_qp, &mut ctx).unwrap()
}

fn run_winograd(case: &Case, cfg: &WinogradConfig) -> QTensor {
    let mut hook = NoFaults;
    let mut ctx = OpContext::new(&mut hook, Exposure::default());
    conv_winograd(&case.input, &case.spec, case.out_qp, cfg, &mut ctx).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn winograd_matches_direct(case in case()) {
        let direct = run_direct(&case);
        prop_assert_eq!(&run_winograd(&case, &WinogradConfig::default()), &direct);
        let emitting = WinogradConfig { emit_filter_transform: true };
        prop_assert_eq!(&run_winograd(&case, &emitting), &direct);
    }

    #[test]
    fn direct_matches_oracle(case in case()) {
        let expected = oracle(&case.input, &case.spec, case.out_qp);
        prop_assert_eq!(run_direct(&case).data().to_vec(), expected);
    }
}

fn identity_spec(channels: usize, bw: BitWidth) -> ConvSpec {
    let mut w = vec![0i32; channels * channels * 9];
    for k in 0..channels {
        w[(k * channels + k) * 9 + 4] = 1;
    }
    ConvSpec {
        in_channels: channels,
        out_channels: channels,
        padding: 1,
        stride: 1,
        weights: QTensor::new(vec![channels, channels, 3, 3], w, QuantParams::pow2(bw, 0)).unwrap(),
        bias: None,
    }
}

#[test]
fn identity_kernel_reproduces_input() {
    for bw in [BitWidth::Int8, BitWidth::Int16] {
        let qp = QuantParams::pow2(bw, -3);
        let data: Vec<i32> = (0..2 * 5 * 7).map(|i| i * 37 % 251 - 125).collect();
        let input = QTensor::new(vec![1, 2, 5, 7], data, qp).unwrap();
        let case = Case {
            input: input.clone(),
            spec: identity_spec(2, bw),
            out_qp: qp,
        };
        assert_eq!(run_direct(&case).data(), input.data());
        assert_eq!(run_winograd(&case, &WinogradConfig::default()).data(), input.data());
    }
}

fn single_tile_model(bw: BitWidth) -> ModelDef {
    let mut spec = ToySpec::new(bw, 1, vec![1], [4, 4]);
    spec.padding = 0;
    spec.classes = None;
    generate_toy_model(&spec, 5).unwrap()
}

type Tally = BTreeMap<(usize, OpType, Stage), (u64, u64)>;

fn hook_tally(model: &ModelDef, cfg: ExecConfig, input: &QTensor) -> (Tally, u64) {
    let mut tally = Tally::new();
    let mut next_id = 0u64;
    let ex = Executor::new(model, cfg).unwrap();
    ex.run(input, &mut |op: &OpRecord, v: i64| {
        assert_eq!(op.op_id, next_id, "op ids must be dense and in order");
        next_id += 1;
        let e = tally.entry((op.layer_id as usize, op.op_type, op.stage)).or_default();
        e.0 += 1;
        e.1 += op.bit_width as u64;
        v
    })
    .unwrap();
    (tally, next_id)
}

fn enumerated_tally(model: &ModelDef, cfg: &ExecConfig) -> Tally {
    let summary = enumerate_ops(model, cfg).unwrap();
    let mut tally = Tally::new();
    for layer in &summary.layers {
        for c in &layer.counts {
            tally.insert((layer.layer_id, c.op_type, c.stage), (c.ops, c.bits));
        }
    }
    tally
}

#[test]
fn single_tile_constants() {
    let model = single_tile_model(BitWidth::Int8);
    let input = generate_dataset(&model, 1, 3).samples()[0].clone();

    let direct = ExecConfig::new(Engine::Direct);
    let summary = enumerate_ops(&model, &direct).unwrap();
    assert_eq!(summary.total_of(OpType::Mul), 36);
    assert_eq!(summary.total_of(OpType::Add), 36);
    let (tally, _) = hook_tally(&model, direct, &input);
    assert_eq!(tally[&(0, OpType::Mul, Stage::DirectMac)].0, 36);

    let wino = ExecConfig::new(Engine::Winograd);
    let summary = enumerate_ops(&model, &wino).unwrap();
    assert_eq!(summary.total_in(Stage::WgEwmul), 16);
    assert_eq!(summary.total_in(Stage::WgInputTf), 32);
    assert_eq!(summary.total_in(Stage::WgInverseTf), 24);
    assert_eq!(summary.total_in(Stage::WgFilterTf), 0);
    let (tally, _) = hook_tally(&model, wino, &input);
    assert_eq!(tally[&(0, OpType::Mul, Stage::WgEwmul)].0, 16);
    assert_eq!(tally[&(0, OpType::Add, Stage::WgInputTf)].0, 32);
    assert_eq!(tally[&(0, OpType::Add, Stage::WgInverseTf)].0, 24);
    assert_eq!(36.0 / 16.0, 2.25);

    let mut with_filter = wino;
    with_filter.winograd.emit_filter_transform = true;
    let summary = enumerate_ops(&model, &with_filter).unwrap();
    assert_eq!(summary.total_in(Stage::WgFilterTf), 42);
}

#[test]
fn enumeration_matches_hook_counts() {
    let shapes = [
        (BitWidth::Int8, 3, vec![4, 6, 5], [8, 8], 1),
        (BitWidth::Int16, 2, vec![3, 3], [7, 9], 1),
        (BitWidth::Int8, 1, vec![2], [5, 6], 0),
    ];
    for (bw, c, channels, hw, padding) in shapes {
        let mut spec = ToySpec::new(bw, c, channels, hw);
        spec.padding = padding;
        let model = generate_toy_model(&spec, 9).unwrap();
        let input = generate_dataset(&model, 1, 4).samples()[0].clone();
        for engine in [Engine::Direct, Engine::Winograd] {
            for (emit, exposure) in [(false, Exposure::default()), (true, Exposure::uniform())] {
                let mut cfg = ExecConfig::new(engine);
                cfg.exposure = exposure;
                cfg.winograd.emit_filter_transform = emit;
                let (tally, total) = hook_tally(&model, cfg, &input);
                assert_eq!(tally, enumerated_tally(&model, &cfg), "{engine} emit={emit}");
                assert_eq!(total, enumerate_ops(&model, &cfg).unwrap().total_ops());
            }
        }
    }
}

#[test]
fn engines_agree_on_whole_models() {
    let spec = ToySpec::new(BitWidth::Int16, 3, vec![5, 4, 6], [9, 7]);
    let model = generate_toy_model(&spec, 21).unwrap();
    let data = generate_dataset(&model, 6, 22);
    let direct = Executor::new(&model, ExecConfig::new(Engine::Direct)).unwrap();
    let wino = Executor::new(&model, ExecConfig::new(Engine::Winograd)).unwrap();
    for s in data.samples() {
        assert_eq!(
            direct.run(s, &mut NoFaults).unwrap(),
            wino.run(s, &mut NoFaults).unwrap()
        );
    }
}

#[test]
fn execution_is_deterministic() {
    let model = io::builtin_model("toycnn-int8").unwrap();
    let data = generate_dataset(&model, 3, 1);
    for engine in [Engine::Direct, Engine::Winograd] {
        let ex = Executor::new(&model, ExecConfig::new(engine)).unwrap();
        for s in data.samples() {
            assert_eq!(ex.run(s, &mut NoFaults).unwrap(), ex.run(s, &mut NoFaults).unwrap());
        }
    }
}

#[test]
fn winograd_rejects_stride_two() {
    let mut case_spec = identity_spec(1, BitWidth::Int8);
    case_spec.stride = 2;
    let qp = QuantParams::pow2(BitWidth::Int8, 0);
    let input = QTensor::zeros(vec![1, 1, 6, 6], qp);
    let mut hook = NoFaults;
    let mut ctx = OpContext::new(&mut hook, Exposure::default());
    let err = conv_winograd(&input, &case_spec, qp, &WinogradConfig::default(), &mut ctx).unwrap_err();
    assert!(matches!(err, Error::UnsupportedConv(_)));
    let mut hook = NoFaults;
    let mut ctx = OpContext::new(&mut hook, Exposure::default());
    let out = conv_direct(&input, &case_spec, qp, &mut ctx).unwrap();
    assert_eq!(out.shape(), &[1, 1, 3, 3]);
}

#[test]
fn identity_kernel_single_tile() {
    let qp = QuantParams::pow2(BitWidth::Int8, -5);
    let input = QTensor::new(vec![1, 1, 4, 4], (0..16).map(|i| i * 7 - 50).collect(), qp).unwrap();
    let case = Case {
        input: input.clone(),
        spec: identity_spec(1, BitWidth::Int8),
        out_qp: qp,
    };
    assert_eq!(run_direct(&case), input);
    assert_eq!(run_winograd(&case, &WinogradConfig::default()), input);
}

#[test]
fn identical_layers_double_counts() {
    let mut one = ToySpec::new(BitWidth::Int8, 4, vec![4], [6, 6]);
    one.classes = None;
    let mut two = one.clone();
    two.channels = vec![4, 4];
    let (m1, m2) = (
        generate_toy_model(&one, 1).unwrap(),
        generate_toy_model(&two, 1).unwrap(),
    );
    for engine in [Engine::Direct, Engine::Winograd] {
        let cfg = ExecConfig {
            exposure: Exposure::uniform(),
            ..ExecConfig::new(engine)
        };
        let (s1, s2) = (enumerate_ops(&m1, &cfg).unwrap(), enumerate_ops(&m2, &cfg).unwrap());
        assert_eq!(s2.layers.len(), 2);
        for l in &s2.layers {
            assert_eq!(l.counts, s1.layers[0].counts);
        }
        assert_eq!(s2.total_ops(), 2 * s1.total_ops());
    }
}

#[test]
fn mul_ratio_is_exact_for_even_outputs() {
    for (c, k, hw) in [(1, 1, [4, 4]), (3, 5, [8, 6]), (8, 2, [10, 12]), (2, 7, [16, 16])] {
        let mut spec = ToySpec::new(BitWidth::Int16, c, vec![k], hw);
        spec.classes = None;
        let model = generate_toy_model(&spec, 3).unwrap();
        let muls = |e| {
            enumerate_ops(&model, &ExecConfig::new(e))
                .unwrap()
                .total_of(OpType::Mul)
        };
        let (d, w) = (muls(Engine::Direct), muls(Engine::Winograd));
        assert_eq!(d * 16, w * 36, "C={c} K={k} {hw:?}");
    }
}

#[test]
fn int8_oracle_example() {
    let bw = BitWidth::Int8;
    let input = QTensor::new(
        vec![1, 2, 6, 6],
        (0..72).map(|i| (i * 53 + 11) % 255 - 127).collect(),
        QuantParams::pow2(bw, -7),
    )
    .unwrap();
    let weights = QTensor::new(
        vec![3, 2, 3, 3],
        (0..54).map(|i| (i * 29 + 5) % 255 - 127).collect(),
        QuantParams::pow2(bw, -7),
    )
    .unwrap();
    let case = Case {
        input,
        spec: ConvSpec {
            in_channels: 2,
            out_channels: 3,
            padding: 0,
            stride: 1,
            weights,
            bias: None,
        },
        out_qp: QuantParams::pow2(bw, -4),
    };
    let expected = oracle(&case.input, &case.spec, case.out_qp);
    assert_eq!(run_direct(&case).data(), expected.as_slice());
    assert_eq!(
        run_winograd(&case, &WinogradConfig::default()).data(),
        expected.as_slice()
    );
}
