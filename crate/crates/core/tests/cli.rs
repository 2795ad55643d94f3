use std::path::Path;
use std::process::{Command, Output};

fn nowcast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nowcast"))
        .args(args)
        .env("NOWCAST_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn generate(dir: &Path) {
    let out = dir.to_str().unwrap();
    ok(nowcast(&[
        "--profile",
        "tiny",
        "generate",
        "--out",
        out,
        "--seed",
        "3",
        "--sequences",
        "2",
        "--duration",
        "4",
    ]));
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in walk(dir) {
        out.push((
            entry.strip_prefix(dir).unwrap().display().to_string(),
            std::fs::read(&entry).unwrap(),
        ));
    }
    out.sort();
    out
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn generate_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    generate(&a);
    generate(&b);
    let fa = files(&a);
    assert_eq!(fa.iter().filter(|(n, _)| n.ends_with(".dpt")).count(), 240);
    assert_eq!(fa, files(&b));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(nowcast(&["generate"]).status.code(), Some(2));
    assert_eq!(nowcast(&["bogus"]).status.code(), Some(2));
    let tmp = tempfile::tempdir().unwrap();
    let out = nowcast(&[
        "--profile",
        "tiny",
        "train",
        "--data",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn bad_config_and_missing_data_have_distinct_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, "[window]\npast_count = 4\n").unwrap();
    let out = nowcast(&["--config", cfg.to_str().unwrap(), "generate", "--out", "x"]);
    assert_eq!(out.status.code(), Some(3));
    let missing = tmp.path().join("nothing");
    let out = nowcast(&["eval", "c.nwck", "--data", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn train_eval_predict_bench() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data);
    let run = tmp.path().join("run");
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, "[train]\nepochs = 1\nbatch_size = 8\n").unwrap();
    let c = cfg.to_str().unwrap();
    let d = data.to_str().unwrap();
    ok(nowcast(&[
        "--profile",
        "tiny",
        "--config",
        c,
        "train",
        "--data",
        d,
        "--out",
        run.to_str().unwrap(),
        "--no-forecasting",
    ]));
    for f in ["best.nwck", "final.nwck", "metrics.ndjson"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let log = std::fs::read_to_string(run.join("metrics.ndjson")).unwrap();
    let records: Vec<serde_json::Value> = log
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert!(records.iter().any(|r| r["split"] == "train"));
    assert!(records.iter().all(|r| r["loss_rpf"] == 0.0));

    let ck = run.join("final.nwck");
    let ck = ck.to_str().unwrap();
    let report = tmp.path().join("report");
    ok(nowcast(&[
        "--profile",
        "tiny",
        "eval",
        ck,
        "--data",
        d,
        "--split",
        "all",
        "--report",
        report.to_str().unwrap(),
    ]));
    for mode in ["gt_past", "autoregressive"] {
        let horizons =
            std::fs::read_to_string(report.join(format!("{mode}_horizons.csv"))).unwrap();
        assert_eq!(horizons.lines().count(), 1 + 5, "{horizons}");
        assert!(horizons.starts_with("horizon_s,add_mean_cm,add_std_cm,map@2cm"));
        let map = std::fs::read_to_string(report.join(format!("{mode}_map.csv"))).unwrap();
        assert_eq!(map.lines().count(), 1 + 5);
    }
    let svg = std::fs::read_to_string(report.join("map_vs_horizon.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(report.join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["gap"].as_array().unwrap().len(), 5);

    let pred = tmp.path().join("pred.jsonl");
    ok(nowcast(&[
        "eval",
        ck,
        "--data",
        d,
        "--mode",
        "gt_past",
        "--report",
        report.to_str().unwrap(),
    ]));
    ok(nowcast(&[
        "predict",
        ck,
        "--data",
        d,
        "--sequence",
        "1",
        "--out",
        pred.to_str().unwrap(),
    ]));
    let lines: Vec<serde_json::Value> = std::fs::read_to_string(&pred)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 120);
    assert_eq!(lines[7]["frame"], 7);
    assert_eq!(lines[7]["forecasts"].as_array().unwrap().len(), 4);

    let bench = ok(nowcast(&["bench", ck, "--data", d, "--frames", "3"]));
    assert!(
        bench.contains("estimation only") && bench.contains("FPS"),
        "{bench}"
    );
    assert_eq!(
        nowcast(&["bench", ck, "--data", d, "--frames", "0"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        nowcast(&["predict", ck, "--data", d, "--sequence", "9"])
            .status
            .code(),
        Some(2)
    );
}
