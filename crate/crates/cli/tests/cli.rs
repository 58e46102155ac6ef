use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use edgeclass_core::data::{DatasetManifest, Item};

fn edgeclass(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edgeclass")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = edgeclass(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    edgeclass(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Synthetic data, a trained classifier and its variants, built once.
struct Pipeline {
    _tmp: tempfile::TempDir,
    root: PathBuf,
}

impl Pipeline {
    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }
}

fn pipeline() -> &'static Pipeline {
    static P: OnceLock<Pipeline> = OnceLock::new();
    P.get_or_init(|| {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().to_path_buf();
        let p = |rel: &str| root.join(rel).to_str().unwrap().to_string();
        ok(&["dataset", "synth", "--out", &p("data"), "--per-class", "30", "--seed", "4"]);
        ok(&["model", "fixture", "--out", &p("backbone"), "--seed", "4"]);
        ok(&["dataset", "split", "--manifest", &p("data/manifest.tsv"), "--folds", "3", "--seed", "4", "--out", &p("split.json")]);
        ok(&[
            "train-head", "--backbone", &p("backbone"), "--manifest", &p("data/manifest.tsv"), "--epochs", "10",
            "--seed", "4", "--out", &p("model"),
        ]);
        Pipeline { _tmp: tmp, root }
    })
}

const SUBCOMMANDS: &[&[&str]] = &[
    &[],
    &["model"],
    &["model", "inspect"],
    &["model", "validate"],
    &["model", "fixture"],
    &["dataset"],
    &["dataset", "ingest"],
    &["dataset", "synth"],
    &["dataset", "augment"],
    &["dataset", "split"],
    &["train-head"],
    &["quantize"],
    &["infer"],
    &["eval"],
    &["bench"],
    &["power-report"],
    &["serve"],
];

#[test]
fn help_for_every_subcommand() {
    for path in SUBCOMMANDS {
        let mut args = path.to_vec();
        args.push("--help");
        let text = ok(&args);
        assert!(text.contains("Usage:"), "{path:?}");
    }
    let serve = ok(&["serve", "--help"]);
    for flag in ["--host", "--port", "--models-dir", "--max-concurrent", "--static-dir", "--audit-log", "EDGECLASS_PORT"] {
        assert!(serve.contains(flag), "serve help lacks {flag}");
    }
    let quant = ok(&["quantize", "--help"]);
    for flag in ["--precision", "--calib-dir", "--in", "--out", "--exclude"] {
        assert!(quant.contains(flag), "quantize help lacks {flag}");
    }
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(code(&[]), 2);
    assert_eq!(code(&["quantize", "--precision", "int4"]), 2);
    assert_eq!(code(&["serve", "--max-concurrent", "0"]), 2);
    let p = pipeline();
    let (model, manifest, split) = (p.path("model"), p.path("data/manifest.tsv"), p.path("split.json"));
    let args = ["eval", "--model", s(&model), "--manifest", s(&manifest), "--split", s(&split), "--fold", "9"];
    assert_eq!(code(&args), 2);
}

#[test]
fn augmentation_counts_at_factor_fourteen() {
    let dir = tempfile::tempdir().unwrap();
    for (n, expected) in [(102, 1428), (126, 1764)] {
        let m = DatasetManifest {
            root: dir.path().to_path_buf(),
            classes: vec!["Monkeypox".into()],
            items: (0..n).map(|i| Item::original(format!("Monkeypox/{i}.png"), 0)).collect(),
        };
        let input = dir.path().join(format!("in{n}.tsv"));
        let output = dir.path().join(format!("out{n}.tsv"));
        m.save(&input).unwrap();
        let text = ok(&["dataset", "augment", "--manifest", s(&input), "--factor", "14", "--seed", "7", "--out", s(&output)]);
        assert!(text.starts_with(&format!("{n} -> {expected} items")), "{text}");
        assert_eq!(DatasetManifest::load(&output).unwrap().items.len(), expected);
    }
}

#[test]
fn quantize_writes_variant_and_prints_ratio() {
    let p = pipeline();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m-int8");
    let text = ok(&[
        "quantize", "--precision", "int8", "--calib-dir", s(&p.path("data")), "--calib-count", "16", "--in",
        s(&p.path("model")), "--out", s(&out),
    ]);
    let line = text.lines().find(|l| l.starts_with("int8\t")).unwrap();
    let ratio: f64 = line.split("ratio ").nth(1).unwrap().split_whitespace().next().unwrap().parse().unwrap();
    assert!(ratio <= 0.30, "{line}");
    assert!(ok(&["model", "validate", "--model", s(&out)]).starts_with("ok:"));

    let label = ok(&["infer", "--model", s(&out), "--image", s(&p.path("data/Others/img_0003.png"))]);
    let (name, pct) = label.trim_end().split_once(' ').unwrap();
    assert!(["Monkeypox", "Others"].contains(&name));
    let pct = pct.strip_suffix('%').unwrap();
    assert_eq!(pct.split('.').nth(1).unwrap().len(), 2);
    assert!((50.0..=100.0).contains(&pct.parse::<f64>().unwrap()));
    assert_eq!(label.lines().count(), 1);
}

#[test]
fn structured_reports_are_reproducible() {
    let p = pipeline();
    let dir = tempfile::tempdir().unwrap();
    let twice = |name: &str, args: &[&str]| {
        let mut outs = Vec::new();
        for i in 0..2 {
            let out = dir.path().join(format!("{name}{i}"));
            let mut a = args.to_vec();
            a.extend(["--out", s(&out)]);
            ok(&a);
            outs.push(fs::read(&out).unwrap());
        }
        assert_eq!(outs[0], outs[1], "{name} differs between runs");
    };
    let manifest = p.path("data/manifest.tsv");
    twice("split", &["dataset", "split", "--manifest", s(&manifest), "--folds", "4", "--seed", "11"]);
    twice("augment", &["dataset", "augment", "--manifest", s(&manifest), "--factor", "3", "--seed", "2"]);
    twice("inspect", &["model", "inspect", "--model", s(&p.path("model"))]);
    twice("eval", &["eval", "--model", s(&p.path("model")), "--manifest", s(&manifest)]);
    twice(
        "cv",
        &[
            "eval", "--model", s(&p.path("backbone")), "--manifest", s(&manifest), "--split", s(&p.path("split.json")),
            "--epochs", "3", "--seed", "1",
        ],
    );
    twice("infer", &["infer", "--model", s(&p.path("model")), "--image", s(&p.path("data/Monkeypox/img_0001.png"))]);

    let logs: Vec<Vec<u8>> = (0..2)
        .map(|i| {
            let log = dir.path().join(format!("train{i}.tsv"));
            let model = dir.path().join(format!("head{i}"));
            ok(&[
                "train-head", "--backbone", s(&p.path("backbone")), "--manifest", s(&manifest), "--split",
                s(&p.path("split.json")), "--fold", "1", "--epochs", "4", "--seed", "3", "--log", s(&log), "--out", s(&model),
            ]);
            fs::read(log).unwrap()
        })
        .collect();
    assert_eq!(logs[0], logs[1]);
}

const REFERENCE_WATT_LOG: &str = "\
2024-05-01T10:00:00Z, 5.2
2024-05-01T10:00:01Z, 5.2
2024-05-01T10:00:02Z, 5.2
2024-05-01T10:01:00Z, 6.0
2024-05-01T10:01:01Z, 6.0
2024-05-01T10:01:02Z, 6.0
2024-05-01T10:02:00Z, 5.5
2024-05-01T10:02:01Z, 5.5
2024-05-01T10:02:02Z, 5.5
2024-05-01T10:03:00Z, 5.5
2024-05-01T10:03:01Z, 5.5
2024-05-01T10:03:02Z, 5.5
2024-05-01T10:04:00Z, 5.4
2024-05-01T10:04:01Z, 5.4
2024-05-01T10:04:02Z, 5.4
";

fn windows() -> Vec<String> {
    ["idle", "original", "fp32opt", "fp16", "int8"]
        .iter()
        .enumerate()
        .map(|(i, n)| format!("{n}=2024-05-01T10:0{i}:00Z/2024-05-01T10:0{i}:59Z"))
        .collect()
}

#[test]
fn power_report_ratios() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("watts.csv");
    fs::write(&log, REFERENCE_WATT_LOG).unwrap();
    let w = windows();
    let mut args = vec!["power-report", "--log", s(&log)];
    for x in &w {
        args.extend(["--window", x.as_str()]);
    }
    let text = ok(&args);
    let ratios: Vec<&str> = text.lines().skip(2).map(|l| l.rsplit('\t').next().unwrap()).collect();
    assert_eq!(ratios, ["-", "1.00", "0.92", "0.92", "0.90"]);

    fs::write(&log, "2024-05-01T10:00:00Z, many\n").unwrap();
    assert_eq!(code(&args), 3);
    let mut bad = vec!["power-report", "--log", s(&log), "--window", "idle=yesterday"];
    assert_eq!(code(&bad), 2);
    bad[2] = "/nonexistent/watts.csv";
    assert_eq!(code(&bad), 2);
}

#[test]
fn error_classes_map_to_exit_codes() {
    let p = pipeline();
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.png");
    fs::write(&junk, "not a png").unwrap();
    let model_dir = p.path("model");
    let model = s(&model_dir);
    assert_eq!(code(&["infer", "--model", model, "--image", s(&junk)]), 3);
    assert_eq!(code(&["infer", "--model", model, "--image", s(&dir.path().join("missing.png"))]), 6);
    assert_eq!(code(&["model", "validate", "--model", s(&dir.path().join("nope"))]), 6);

    let broken = dir.path().join("broken");
    fs::create_dir(&broken).unwrap();
    fs::write(broken.join("manifest.json"), "{}").unwrap();
    fs::write(broken.join("weights.bin"), "").unwrap();
    assert_eq!(code(&["model", "inspect", "--model", s(&broken)]), 4);

    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    assert_eq!(code(&["dataset", "ingest", "--root", s(&empty), "--out", s(&dir.path().join("m.tsv"))]), 3);
    assert_eq!(code(&["serve", "--models-dir", s(&empty), "--port", "0"]), 4);
    assert_eq!(
        code(&["quantize", "--precision", "fp16", "--calib-dir", s(&empty), "--in", model, "--out", s(&dir.path().join("q"))]),
        3
    );
    assert_eq!(
        code(&[
            "quantize", "--precision", "fp16", "--calib-dir", s(&p.path("data")), "--in", s(&p.path("model")), "--calib-count",
            "2", "--out", s(&dir.path().join("q16")),
        ]),
        0
    );
    assert_eq!(
        code(&[
            "quantize", "--precision", "int8", "--calib-dir", s(&p.path("data")), "--in", s(&dir.path().join("q16")),
            "--out", s(&dir.path().join("qq")),
        ]),
        4
    );
}

#[test]
fn bench_compares_variants() {
    let p = pipeline();
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().join("m");
    ok(&[
        "quantize", "--precision", "all", "--calib-dir", s(&p.path("data")), "--calib-count", "8", "--in", s(&p.path("model")),
        "--out", s(&base),
    ]);
    let v = |suffix: &str| format!("{}{suffix}", s(&base));
    let (a, b, c) = (v("-fp32opt"), v("-fp16"), v("-int8"));
    let report = dir.path().join("bench.json");
    let text = ok(&[
        "bench", "--model", s(&p.path("model")), "--model", &a, "--model", &b, "--model", &c, "--synth", "40", "--warmup",
        "1", "--reps", "2", "--out", s(&report),
    ]);
    assert_eq!(text.lines().count(), 5);
    let json: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    for r in json["reports"].as_array().unwrap() {
        assert_eq!(r["batches_per_pass"], 2);
        let consistency = r["images_per_second"].as_f64().unwrap() * r["ms_per_image"].as_f64().unwrap() / 1e3;
        assert!((consistency - 1.0).abs() <= 0.05);
    }
    assert_eq!(json["rows"][0]["latency_ratio"], 1.0);
    assert_eq!(code(&["bench", "--model", &a, "--model", &b, "--synth", "4"]), 3);
    assert_eq!(code(&["bench", "--model", &a]), 2);
}
