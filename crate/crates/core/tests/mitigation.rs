use wgfi::analyze::{mean_ci95, Evaluator};
use wgfi::io::{generate_dataset, generate_toy_model, ToySpec};
use wgfi::mitigation::{apply_constrained_activation, profile_ranges};
use wgfi::model::Tap;
use wgfi::*;

fn toy(bias: bool) -> ModelDef {
    let mut spec = ToySpec::new(BitWidth::Int16, 3, vec![6, 6, 6], [8, 8]);
    spec.bias = bias;
    generate_toy_model(&spec, 40).unwrap()
}

fn activations(ex: &Executor<'_>, input: &QTensor, hook: &mut impl OpHook) -> Vec<(usize, QTensor)> {
    let mut seen = Vec::new();
    ex.run_observed(input, hook, &mut |tap, id, t| {
        if tap == Tap::Activation {
            seen.push((id, t.clone()));
        }
    })
    .unwrap();
    seen
}

#[test]
fn zero_input_profiles_to_zero() {
    let model = toy(false);
    let zero = QTensor::zeros(model.sample_shape(), model.input_qparams);
    let data = Dataset::unlabeled(vec![zero]);
    let profile = profile_ranges(&model, &data, &ExecConfig::default()).unwrap();
    let layers: Vec<_> = profile.layers().collect();
    assert_eq!(layers, vec![(0, (0, 0)), (2, (0, 0)), (4, (0, 0))]);
}

#[test]
fn single_sample_profile_is_its_min_max() {
    let model = toy(true);
    let data = generate_dataset(&model, 1, 3);
    let ex = Executor::new(&model, ExecConfig::default()).unwrap();
    let profile = profile_ranges(&model, &data, &ExecConfig::default()).unwrap();
    for (id, t) in activations(&ex, &data.samples()[0], &mut NoFaults) {
        let lo = *t.data().iter().min().unwrap();
        let hi = *t.data().iter().max().unwrap();
        assert_eq!(profile.range(id).unwrap(), (lo, hi));
        assert!(lo >= 0, "profile is taken after the ReLU");
    }
}

#[test]
fn profile_of_union_is_merge() {
    let model = toy(true);
    let data = generate_dataset(&model, 10, 4);
    let cfg = ExecConfig::default();
    let (a, b) = (data.slice(0..4), data.slice(4..10));
    let mut merged = profile_ranges(&model, &a, &cfg).unwrap();
    merged.merge(&profile_ranges(&model, &b, &cfg).unwrap());
    assert_eq!(merged, profile_ranges(&model, &data, &cfg).unwrap());
}

#[test]
fn empty_profiling_set_is_rejected() {
    let model = toy(true);
    let err = profile_ranges(&model, &Dataset::unlabeled(Vec::new()), &ExecConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn missing_layer_is_rejected() {
    let qp = QuantParams::pow2(BitWidth::Int8, -2);
    let t = QTensor::new(vec![2], vec![1, 2], qp).unwrap();
    let err = apply_constrained_activation(&t, &RangeProfile::new(), 0, ClampMode::Clamp).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    let model = toy(true);
    let mut partial = RangeProfile::new();
    partial.observe(0, &[0, 5]);
    let ex = Executor::new(&model, ExecConfig::default()).unwrap();
    assert!(matches!(
        ex.with_clamp(partial, ClampMode::Clamp),
        Err(Error::Config(_))
    ));
}

#[test]
fn profile_serializes_as_layer_map() {
    let mut p = RangeProfile::new();
    p.observe(0, &[3, -1, 7]);
    p.observe(4, &[10]);
    let json = serde_json::to_value(&p).unwrap();
    assert_eq!(json, serde_json::json!({"0": [-1, 7], "4": [10, 10]}));
    assert_eq!(serde_json::from_value::<RangeProfile>(json).unwrap(), p);
}

#[test]
fn clamping_is_idempotent_on_the_profiling_set() {
    let model = toy(true);
    let data = generate_dataset(&model, 12, 5);
    for engine in [Engine::Direct, Engine::Winograd] {
        let cfg = ExecConfig::new(engine);
        let profile = profile_ranges(&model, &data, &cfg).unwrap();
        let plain = Executor::new(&model, cfg).unwrap();
        for mode in [ClampMode::Clamp, ClampMode::Zero] {
            let clamped = Executor::new(&model, cfg)
                .unwrap()
                .with_clamp(profile.clone(), mode)
                .unwrap();
            for s in data.samples() {
                assert_eq!(
                    clamped.run(s, &mut NoFaults).unwrap(),
                    plain.run(s, &mut NoFaults).unwrap()
                );
            }
        }
    }
}

#[test]
fn clamped_activations_stay_in_range_under_faults() {
    let model = toy(true);
    let data = generate_dataset(&model, 4, 6);
    let cfg = ExecConfig::new(Engine::Direct);
    let profile = profile_ranges(&model, &data, &cfg).unwrap();
    let ex = Executor::new(&model, cfg)
        .unwrap()
        .with_clamp(profile.clone(), ClampMode::Clamp)
        .unwrap();
    let inj = InjectionConfig::op_level(1e-3, 2, 1);
    let mut escaped_without_clamp = false;
    let plain = Executor::new(&model, cfg).unwrap();
    for (i, s) in data.samples().iter().enumerate() {
        for (id, t) in activations(&ex, s, &mut FaultHook::sampled(&inj, 0, i as u32)) {
            let (lo, hi) = profile.range(id).unwrap();
            assert!(t.data().iter().all(|&v| (lo..=hi).contains(&v)));
        }
        for (id, t) in activations(&plain, s, &mut FaultHook::sampled(&inj, 0, i as u32)) {
            let (lo, hi) = profile.range(id).unwrap();
            escaped_without_clamp |= t.data().iter().any(|&v| !(lo..=hi).contains(&v));
        }
    }
    assert!(escaped_without_clamp);
}

#[test]
fn clamping_improves_faulty_accuracy() {
    let model = toy(true);
    let data = generate_dataset(&model, 24, 7);
    for engine in [Engine::Direct, Engine::Winograd] {
        let cfg = ExecConfig::new(engine);
        let profile = profile_ranges(&model, &data, &cfg).unwrap();
        let plain = Evaluator::new(&model, &data, cfg).unwrap();
        let clamped = Evaluator::new(&model, &data, cfg)
            .unwrap()
            .with_clamp(profile, ClampMode::Clamp)
            .unwrap();
        assert_eq!(clamped.clean_accuracy(), 1.0);
        let inj = InjectionConfig::op_level(3e-5, 15, 100);
        let (a, b) = (plain.campaign(&inj).unwrap(), clamped.campaign(&inj).unwrap());
        let diffs: Vec<f64> = b.accuracies().iter().zip(a.accuracies()).map(|(x, y)| x - y).collect();
        let (mean, ci) = mean_ci95(&diffs);
        assert!(
            mean > 0.0 && mean - ci > 0.0,
            "{engine}: {} -> {} ({mean} +- {ci})",
            a.mean_accuracy,
            b.mean_accuracy
        );
    }
}
