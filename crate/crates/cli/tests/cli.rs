use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;
use wgfi::analyze::Evaluator;
use wgfi::io::{builtin_model, generate_dataset};
use wgfi::{Engine, ExecConfig};
use wgfi_cli::error::{EXIT_CONFIG, EXIT_RUNTIME};
use wgfi_cli::output::parse_meta;

const MODEL: &str = "builtin:toycnn-int8";

fn wgfi(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wgfi"))
        .current_dir(dir)
        .args(args)
        .env_remove("WGFI_WORKERS")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = wgfi(dir, args);
    assert!(
        out.status.success(),
        "wgfi {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn golden(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name);
    std::fs::read_to_string(path).unwrap()
}

/// CSV body after the meta line.
fn body(csv: &str) -> String {
    csv.split_once('\n').unwrap().1.to_string()
}

fn rows(csv: &str) -> Vec<Vec<String>> {
    body(csv)
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

fn small(extra: &[&'static str]) -> Vec<&'static str> {
    let mut v = vec!["--model", MODEL, "--samples", "8", "--trials", "4"];
    v.extend_from_slice(extra);
    v
}

fn with_cmd<'a>(cmd: &'a str, args: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![cmd];
    v.extend_from_slice(args);
    v
}

#[test]
fn csv_headers_match_golden() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let header = |csv: &str| body(csv).lines().next().unwrap().to_string() + "\n";

    let sweep = ok(d, &with_cmd("sweep", &small(&["--ber", "1e-5"])));
    assert_eq!(header(&sweep), golden("sweep.header"));
    let lv = ok(d, &with_cmd("layer-vuln", &small(&["--ber", "1e-5"])));
    assert_eq!(header(&lv), golden("vuln.header"));
    let ov = ok(d, &with_cmd("optype-vuln", &small(&["--ber", "1e-5"])));
    assert_eq!(header(&ov), golden("vuln.header"));
    let args = small(&[
        "--ber",
        "1e-5",
        "--segment-size",
        "20000",
        "--target-acc",
        "0.5",
        "--plan",
        "p.json",
    ]);
    let plan = ok(d, &with_cmd("plan-tmr", &args));
    assert_eq!(header(&plan), golden("plan-tmr.header"));
    let eval = ok(d, &with_cmd("eval-tmr", &small(&["--ber", "1e-5", "--plan", "p.json"])));
    assert_eq!(header(&eval), golden("eval-tmr.header"));
    let prof = ok(d, &with_cmd("profile-ranges", &small(&[])));
    assert_eq!(header(&prof), golden("profile-ranges.header"));

    for (csv, cols) in [(&sweep, 7), (&lv, 6), (&ov, 6), (&plan, 13), (&eval, 10), (&prof, 3)] {
        let r = rows(csv);
        assert!(!r.is_empty());
        assert!(r.iter().all(|row| row.len() == cols), "{csv}");
    }
    let subjects: Vec<_> = rows(&ov).into_iter().map(|r| r[0].clone()).collect();
    assert_eq!(subjects, ["optype:mul", "optype:add"]);
    let layers: Vec<_> = rows(&lv).into_iter().map(|r| r[0].clone()).collect();
    assert_eq!(layers, ["layer:0", "layer:2"]);
}

#[test]
fn sweep_rows_match_golden() {
    let dir = TempDir::new().unwrap();
    for engine in ["direct", "winograd"] {
        let args = [
            "sweep",
            "--model",
            MODEL,
            "--engine",
            engine,
            "--ber",
            "0,1e-4",
            "--trials",
            "4",
            "--samples",
            "8",
            "--seed",
            "5",
        ];
        let out = ok(dir.path(), &args);
        assert_eq!(body(&out), golden(&format!("sweep_int8_{engine}.csv")));
    }
}

#[test]
fn zero_ber_sweep_reports_clean_accuracy() {
    let dir = TempDir::new().unwrap();
    let model = builtin_model("toycnn-int16").unwrap();
    let data = generate_dataset(&model, 8, 3);
    wgfi::io::save_dataset(&data, &dir.path().join("data")).unwrap();
    let clean = Evaluator::new(&model, &data, ExecConfig::new(Engine::Winograd))
        .unwrap()
        .clean_accuracy();
    let out = ok(
        dir.path(),
        &[
            "sweep",
            "--model",
            "builtin:toycnn-int16",
            "--dataset",
            "data",
            "--engine",
            "winograd",
            "--ber",
            "0",
            "--trials",
            "5",
        ],
    );
    let r = &rows(&out)[0];
    assert_eq!(r[5].parse::<f64>().unwrap(), clean);
    assert_eq!(r[6], "0");
}

#[test]
fn meta_records_the_resolved_config() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("c.toml"),
        "model = \"builtin:toycnn-int8\"\nber = [1e-5, 1e-4]\ntrials = 3\nsamples = 4\nseed = 9\n",
    )
    .unwrap();
    let out = ok(
        d,
        &["sweep", "--config", "c.toml", "--seed", "11", "--engine", "winograd"],
    );
    let meta = parse_meta(&out).unwrap();
    assert_eq!(meta["seed"], 11);
    assert_eq!(meta["config"]["seed"], 11);
    assert_eq!(meta["config"]["engine"], "winograd");
    assert_eq!(meta["config"]["trials"], 3);
    assert_eq!(meta["file_config"]["seed"], 9);
    assert_eq!(meta["flags"]["seed"], 11);
    assert_eq!(meta["config_file"], "c.toml");
    assert_eq!(meta["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(rows(&out).len(), 2);

    let json = ok(d, &["sweep", "--config", "c.toml", "--format", "json"]);
    let doc: Value = serde_json::from_str(&json).unwrap();
    assert_eq!(doc["rows"].as_array().unwrap().len(), 2);
    assert_eq!(doc["rows"][0]["engine"], "direct");
    assert_eq!(parse_meta(&json).unwrap()["command"], "sweep");
}

#[test]
fn worker_count_does_not_change_results() {
    let dir = TempDir::new().unwrap();
    let args = small(&["--ber", "1e-4"]);
    let one = ok(dir.path(), &[&["--workers", "1", "sweep"], args.as_slice()].concat());
    let many = ok(dir.path(), &[&["--workers", "3", "sweep"], args.as_slice()].concat());
    assert_eq!(one, many);
}

#[test]
fn replay_from_traces_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    for (cmd, extra) in [
        ("sweep", vec!["--ber", "1e-5,1e-4", "--engine", "winograd"]),
        ("optype-vuln", vec!["--ber", "1e-4"]),
        ("layer-vuln", vec!["--ber", "1e-4", "--format", "json"]),
    ] {
        let trace_dir = format!("{cmd}-traces");
        let result = format!("{cmd}.out");
        let mut args = small(&[]);
        args.extend_from_slice(&extra);
        args.extend_from_slice(&["--trace-dir", &trace_dir, "-o", &result]);
        ok(d, &with_cmd(cmd, &args));
        assert!(d.join(&trace_dir).join("ber0.jsonl").exists());
        ok(d, &["replay", "--result", &result, "--check"]);
        ok(d, &["replay", "--result", &result, "-o", "again.out"]);
        assert_eq!(
            std::fs::read(d.join(&result)).unwrap(),
            std::fs::read(d.join("again.out")).unwrap()
        );
    }
}

#[test]
fn replay_without_traces_resamples_from_the_seed() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, &with_cmd("sweep", &small(&["--ber", "1e-4", "-o", "s.csv"])));
    let out = wgfi(d, &["replay", "--result", "s.csv", "--check"]);
    assert!(out.status.success());
}

#[test]
fn replay_of_tmr_evaluation_uses_its_trace() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let plan_args = small(&[
        "--ber",
        "1e-4",
        "--segment-size",
        "8000",
        "--target-acc",
        "0.8",
        "--plan",
        "p.json",
    ]);
    ok(d, &with_cmd("plan-tmr", &plan_args));
    let eval_args = small(&["--ber", "1e-4", "--plan", "p.json", "--trace-dir", "t", "-o", "e.csv"]);
    ok(d, &with_cmd("eval-tmr", &eval_args));
    std::fs::rename(d.join("t"), d.join("moved")).unwrap();
    ok(d, &["replay", "--result", "e.csv", "--trace-dir", "moved", "--check"]);
    // The moved traces are still required.
    let out = wgfi(d, &["replay", "--result", "e.csv", "--check"]);
    assert_eq!(out.status.code(), Some(EXIT_RUNTIME));
}

#[test]
fn tampered_result_fails_the_check() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(
        d,
        &with_cmd("sweep", &small(&["--ber", "1e-4", "--trace-dir", "t", "-o", "s.csv"])),
    );
    let text = std::fs::read_to_string(d.join("s.csv")).unwrap();
    let (head, last) = text.trim_end().rsplit_once(',').unwrap();
    std::fs::write(d.join("s.csv"), format!("{head},{last}1\n")).unwrap();
    let out = wgfi(d, &["replay", "--result", "s.csv", "--check"]);
    assert_eq!(out.status.code(), Some(EXIT_RUNTIME));
    let err: Value = serde_json::from_slice(out.stderr.trim_ascii()).unwrap();
    assert_eq!(err["error"]["kind"], "runtime");
    assert!(err["error"]["message"].as_str().unwrap().contains("line 3"));
}

#[test]
fn plan_then_evaluate() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let common = ["--model", MODEL, "--samples", "16", "--trials", "40", "--ber", "3e-5"];
    let plan_csv = ok(
        d,
        &[
            &["plan-tmr"][..],
            &common,
            &["--segment-size", "5000", "--target-acc", "0.9", "--plan", "plan.json"],
        ]
        .concat(),
    );
    let plan: Value = serde_json::from_str(&std::fs::read_to_string(d.join("plan.json")).unwrap()).unwrap();
    for key in [
        "order",
        "n",
        "P",
        "achieved_acc",
        "overhead_normalized",
        "vulnerability",
    ] {
        assert!(plan.get(key).is_some(), "{key}");
    }
    let plan_row = &rows(&plan_csv)[0];
    let eval_csv = ok(
        d,
        &[&["eval-tmr"][..], &common, &["--plan", "plan.json", "--seed", "1"]].concat(),
    );
    let r = &rows(&eval_csv)[0];
    let num = |i: usize| r[i].parse::<f64>().unwrap();
    let (acc_raw, acc_tmr, ci_tmr, plan_acc) = (num(5), num(7), num(8), num(9));
    assert_eq!(r[4], plan_row[6]);
    assert_eq!(plan_acc, plan_row[8].parse::<f64>().unwrap());
    assert!(acc_tmr >= acc_raw);
    assert!(acc_tmr + ci_tmr >= plan_acc.min(0.9) - 0.05, "{eval_csv}");
}

#[test]
fn clamp_profile_feeds_campaigns() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let out = ok(d, &with_cmd("profile-ranges", &small(&["--profile-out", "prof.json"])));
    let profile: Value = serde_json::from_str(&std::fs::read_to_string(d.join("prof.json")).unwrap()).unwrap();
    assert!(profile.is_object());
    assert_eq!(rows(&out).len(), 2);
    let clamped = ok(
        d,
        &with_cmd("sweep", &small(&["--ber", "0", "--clamp-profile", "prof.json"])),
    );
    assert_eq!(rows(&clamped)[0][5], "1");
    let meta = parse_meta(&clamped).unwrap();
    assert_eq!(meta["config"]["clamp_mode"], "clamp");
}

#[test]
fn generated_model_and_dataset_load() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "gen-model",
            "--out",
            "m",
            "--bits",
            "16",
            "--channels",
            "4,4,4",
            "--seed",
            "3",
        ],
    );
    ok(d, &["gen-dataset", "--model", "m", "--out", "data", "--samples", "4"]);
    let out = ok(
        d,
        &[
            "layer-vuln",
            "--model",
            "m",
            "--dataset",
            "data",
            "--ber",
            "1e-5",
            "--trials",
            "2",
        ],
    );
    assert_eq!(rows(&out).len(), 3);
    ok(d, &["gen-model", "--out", "b", "--builtin", "toycnn-int8"]);
    let a = ok(d, &with_cmd("sweep", &small(&["--ber", "1e-4"])));
    let b = ok(
        d,
        &[
            "sweep",
            "--model",
            "b",
            "--samples",
            "8",
            "--trials",
            "4",
            "--ber",
            "1e-4",
        ],
    );
    assert_eq!(body(&a), body(&b));
}

#[test]
fn configuration_errors_exit_with_config_status() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.toml"), "model = \"builtin:toycnn-int8\"\nbogus = 1\n").unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["sweep", "--ber", "1e-4"],
        vec!["sweep", "--model", "missing/model.json", "--ber", "1e-4"],
        vec!["sweep", "--model", "builtin:nope", "--ber", "1e-4"],
        vec!["sweep", "--model", MODEL, "--ber", "1.5"],
        vec!["sweep", "--model", MODEL],
        vec!["sweep", "--model", MODEL, "--ber", "1e-4", "--trials", "0"],
        vec!["sweep", "--model", MODEL, "--ber", "1e-4", "--scope", "layer:x"],
        vec!["sweep", "--config", "bad.toml", "--ber", "1e-4"],
        vec!["sweep", "--config", "absent.toml"],
        vec!["sweep", "--model", MODEL, "--ber", "1e-4", "--engine", "fft"],
        vec!["plan-tmr", "--model", MODEL, "--ber", "1e-4"],
        vec![
            "plan-tmr",
            "--model",
            MODEL,
            "--ber",
            "1e-4,1e-3",
            "--segment-size",
            "10",
            "--target-acc",
            "0.5",
        ],
        vec!["eval-tmr", "--model", MODEL, "--ber", "1e-4"],
        vec!["eval-tmr", "--model", MODEL, "--ber", "1e-4", "--plan", "none.json"],
        vec!["replay", "--result", "none.csv"],
        vec!["--workers", "0", "sweep", "--model", MODEL, "--ber", "0"],
    ];
    for args in cases {
        let out = wgfi(d, &args);
        assert_eq!(out.status.code(), Some(EXIT_CONFIG), "{args:?}");
    }
    let out = wgfi(d, &["sweep", "--model", MODEL, "--ber", "1.5"]);
    let err: Value = serde_json::from_slice(out.stderr.trim_ascii()).unwrap();
    assert_eq!(err["error"]["kind"], "config");
}

#[test]
fn plan_for_another_engine_is_rejected() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let args = small(&[
        "--ber",
        "1e-5",
        "--segment-size",
        "20000",
        "--target-acc",
        "0.5",
        "--plan",
        "p.json",
    ]);
    ok(d, &with_cmd("plan-tmr", &args));
    let out = wgfi(
        d,
        &with_cmd(
            "eval-tmr",
            &small(&["--ber", "1e-5", "--plan", "p.json", "--engine", "winograd"]),
        ),
    );
    assert_eq!(out.status.code(), Some(EXIT_CONFIG));
}

#[test]
fn stride_two_model_cannot_run_winograd() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let mut spec = wgfi::io::builtin_spec("toycnn-int8").unwrap();
    spec.classes = None;
    let mut model = wgfi::io::generate_toy_model(&spec, 1).unwrap();
    if let wgfi::Layer::Conv(conv) = &mut model.layers[0] {
        conv.spec.stride = 2;
    }
    model.engine = Engine::Direct;
    wgfi::io::save_model(&model, &d.join("m")).unwrap();
    let base = ["sweep", "--model", "m", "--ber", "0", "--trials", "1", "--samples", "2"];
    ok(d, &base);
    let out = wgfi(d, &[&base[..], &["--engine", "winograd"]].concat());
    assert_eq!(out.status.code(), Some(EXIT_CONFIG));
}
