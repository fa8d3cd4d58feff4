use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spnas::latency::{lutgen, RuntimeModel};
use spnas::space::{Architecture, MBConvType, SearchSpaceConfig};

fn spnas(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spnas"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = spnas(args);
    assert!(
        out.status.success(),
        "spnas {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    let out = spnas(args);
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));
    out.status.code().unwrap()
}

/// Three width-preserving layers on 8x8 inputs; every layer is skippable.
const SPACE: &str = r#"{
    "image_size": 8, "in_channels": 1, "classes": 4, "stem_channels": 4, "stem_stride": 2,
    "layers": [
        {"out_channels": 4, "stride": 1},
        {"out_channels": 4, "stride": 1},
        {"out_channels": 4, "stride": 1}
    ],
    "head_channels": 8
}"#;

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("experiment.json");
    let text = format!(
        r#"{{
    "space": {SPACE},
    "data": {{"synthetic": {{"n": 48}}}},
    "search": {{"batch_size": 8, "proxy": {{"epochs": 0}}}},
    "train": {{"epochs": 1, "batch_size": 8}}{extra}
}}"#
    );
    std::fs::write(&path, text).unwrap();
    path
}

fn space() -> SearchSpaceConfig {
    serde_json::from_str(SPACE).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn latency_of_the_empty_network_is_the_fixed_overhead() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let lut = dir.path().join("lut.json");
    ok(&["lutgen", "--config", s(&cfg), "--seed", "5", "--out", s(&lut)]);
    let arch = dir.path().join("arch.json");
    std::fs::write(&arch, Architecture(vec![MBConvType::Skip; 3]).to_json()).unwrap();
    let out = ok(&["latency", "--config", s(&cfg), "--arch", s(&arch), "--lut", s(&lut)]);
    let expected = lutgen(&space(), 5, 0.1).unwrap().fixed_overhead_ms;
    assert_eq!(out.trim().parse::<f64>().unwrap(), expected);
}

#[test]
fn search_then_derive_then_latency_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let ck = dir.path().join("search.ckpt");
    let report = dir.path().join("report.json");
    let arch = dir.path().join("arch.json");

    // no steps and no runtime pressure: every layer decodes to the skip-op
    ok(&["search", "--config", s(&cfg), "--lambda", "0", "--steps", "0", "--checkpoint", s(&ck)]);
    ok(&["derive", "--checkpoint", s(&ck), "--out", s(&arch)]);
    let derived = Architecture::from_json(&std::fs::read_to_string(&arch).unwrap()).unwrap();
    assert_eq!(derived, Architecture(vec![MBConvType::Skip; 3]));

    for variant in ["single_sigmoid", "single_softmax", "multi_path_softmax"] {
        ok(&[
            "search", "--config", s(&cfg), "--variant", variant, "--lambda", "0.5", "--steps", "3",
            "--checkpoint", s(&ck), "--out", s(&report),
        ]);
        let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
        ok(&["derive", "--checkpoint", s(&ck), "--out", s(&arch)]);
        let printed = ok(&["latency", "--config", s(&cfg), "--arch", s(&arch)]);
        assert_eq!(printed.trim().parse::<f64>().unwrap(), r["hard_runtime_ms"].as_f64().unwrap(), "{variant}");
        let model = RuntimeModel::new(lutgen(&space(), 0, 0.1).unwrap());
        let a = Architecture::from_json(&std::fs::read_to_string(&arch).unwrap()).unwrap();
        assert_eq!(model.architecture_runtime(&a).unwrap(), r["hard_runtime_ms"].as_f64().unwrap());
    }
}

#[test]
fn outputs_are_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let read = |p: &Path| std::fs::read(p).unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    for args in [
        vec!["search", "--steps", "4", "--lambda", "0.3"],
        vec!["train", "--arch", "ARCH"],
        vec!["random-search", "--samples", "2"],
        vec!["hypertune", "--backend", "synthetic", "--method", "mf", "--budget-epochs", "40"],
    ] {
        let arch = dir.path().join("arch.json");
        std::fs::write(&arch, Architecture(vec![MBConvType::MIN; 3]).to_json()).unwrap();
        let args: Vec<&str> = args.iter().map(|x| if *x == "ARCH" { s(&arch) } else { x }).collect();
        for out in [&a, &b] {
            let mut full = args.clone();
            full.extend(["--config", s(&cfg), "--seed", "2", "--out", s(out)]);
            ok(&full);
        }
        assert_eq!(read(&a), read(&b), "{args:?}");
    }
}

#[test]
fn grid_study_prints_the_csv_it_writes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("grid.csv");
    let printed = ok(&[
        "grid-study", "--backend", "synthetic", "--target-ms", "60", "--lambdas", "0.01,1", "--budgets", "2,8",
        "--out", s(&out),
    ]);
    assert_eq!(printed, std::fs::read_to_string(&out).unwrap());
    let mut lines = printed.lines();
    assert_eq!(lines.next().unwrap(), "lambda,2,8");
    assert_eq!(lines.count(), 2);
}

#[test]
fn exit_codes_follow_the_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    // configuration and I/O problems
    assert_eq!(code(&["derive", "--checkpoint", s(&dir.path().join("missing"))]), 2);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"no_such_section": 1}"#).unwrap();
    assert_eq!(code(&["lutgen", "--config", s(&bad)]), 2);
    assert_eq!(code(&["search", "--config", s(&cfg), "--lambda=-1", "--steps", "1"]), 2);
    // an impossible runtime window
    assert_eq!(code(&["random-search", "--config", s(&cfg), "--window-max", "1e-9"]), 4);
    // numerical blow-up
    let wild = write_config(dir.path(), r#", "synthetic_backend": {}"#);
    let text = std::fs::read_to_string(&wild)
        .unwrap()
        .replace(r#""batch_size": 8, "proxy""#, r#""batch_size": 8, "lr": 1e150, "lr_warmup_fraction": 0.0, "proxy""#);
    std::fs::write(&wild, text).unwrap();
    let ck = dir.path().join("wild.ckpt");
    assert_eq!(
        code(&["search", "--config", s(&wild), "--lambda", "0.1", "--steps", "6", "--checkpoint", s(&ck)]),
        3
    );
    assert!(ck.with_extension("last_good").exists());
}
