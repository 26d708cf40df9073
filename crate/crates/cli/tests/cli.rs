use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use serde_json::Value;

const SCENARIO: &str = r#"{
  "model": "sir",
  "params": { "r0": 2.0, "gamma": 0.05 },
  "grid": { "t_star": 5.0, "dt": 0.05 },
  "plan": { "kind": "mixed" },
  "sizes": { "train": 60, "test": 20 },
  "seeds": { "train": 5, "test": 6 }
}"#;

fn kol(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kol"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("run kol")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = kol(dir, args);
    assert!(
        out.status.success(),
        "kol {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("scenario.json"), SCENARIO).unwrap();
    dir
}

#[test]
fn gen_fit_eval_pipeline() {
    let dir = setup();
    let d = dir.path();
    let summary = ok(d, &["gen", "--config", "scenario.json", "--out", "data"]);
    assert!(summary.contains("train: 60 samples"), "{summary}");
    for f in ["data/train/manifest.json", "data/test/manifest.json", "data/run-manifest.json"] {
        assert!(d.join(f).is_file(), "{f}");
    }
    ok(d, &["fit", "--data", "data/train", "--kernel", "ntk_relu", "--out", "m.kol"]);
    assert!(d.join("m.kol.run-manifest.json").is_file());

    // On its own training inputs the fit nearly interpolates.
    ok(d, &["eval", "--model", "m.kol", "--test", "data/train", "--out", "self"]);
    let report = read_json(&d.join("self/report.json"));
    assert!(report["p_err"].as_f64().unwrap() <= 1e-4, "{report}");

    ok(d, &["eval", "--model", "m.kol", "--test", "data/test", "--out", "ev"]);
    let report = read_json(&d.join("ev/report.json"));
    assert_eq!(report["n_samples"], 20);
    assert!(report.get("predict_seconds").is_none(), "timings stay out of the report");
    assert!(d.join("ev/timing.json").is_file());

    // CSV and JSON carry the same numbers.
    let csv = std::fs::read_to_string(d.join("ev/summary.csv")).unwrap();
    let p_err_row = csv.lines().find(|l| l.starts_with("p_err,")).unwrap();
    let from_csv: f64 = p_err_row[6..].parse().unwrap();
    assert_eq!(from_csv, report["p_err"].as_f64().unwrap());
    let samples = std::fs::read_to_string(d.join("ev/per_sample.csv")).unwrap();
    let per_sample: Vec<f64> = samples.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    let json_samples: Vec<f64> = report["per_sample"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(per_sample, json_samples);

    // Derivative mode through the same path.
    ok(d, &["fit", "--data", "data/train", "--kernel", "ntk_relu", "--mode", "partial", "--out", "d.kol"]);
    ok(d, &["eval", "--model", "d.kol", "--test", "data/test", "--out", "ev_d"]);
    assert!(read_json(&d.join("ev_d/report.json"))["p_err"].as_f64().unwrap() < 0.1);
}

#[test]
fn same_seed_same_bytes() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["gen", "--config", "scenario.json", "--out", "a"]);
    ok(d, &["gen", "--config", "scenario.json", "--out", "b"]);
    for f in ["train/manifest.json", "test/manifest.json", "run-manifest.json"] {
        assert_eq!(std::fs::read(d.join("a").join(f)).unwrap(), std::fs::read(d.join("b").join(f)).unwrap(), "{f}");
    }
    ok(d, &["gen", "--config", "scenario.json", "--out", "c", "--seed", "99", "--split", "train"]);
    assert!(!d.join("c/test").exists());
    assert_ne!(
        std::fs::read(d.join("a/train/manifest.json")).unwrap(),
        std::fs::read(d.join("c/train/manifest.json")).unwrap()
    );
}

#[test]
fn exit_codes() {
    let dir = setup();
    let d = dir.path();
    assert_eq!(code(&kol(d, &["gen", "--config", "missing.json", "--out", "x"])), 2);
    std::fs::write(d.join("bad.json"), r#"{"model": "sir"}"#).unwrap();
    assert_eq!(code(&kol(d, &["gen", "--config", "bad.json", "--out", "x"])), 2);
    ok(d, &["gen", "--config", "scenario.json", "--out", "data"]);
    assert_eq!(code(&kol(d, &["fit", "--data", "data/train", "--kernel", "nope", "--out", "m.kol"])), 2);
    assert_eq!(
        code(&kol(d, &["fit", "--data", "data/train", "--kernel", "{\"kind\":\"rbf\",\"sigma\":-1}", "--out", "m.kol"])),
        2
    );
    // 60 samples on a 101-node grid with a linear kernel: rank-deficient
    // without a ridge, so the factorisation fails at run time.
    assert_eq!(
        code(&kol(d, &["fit", "--data", "data/train", "--kernel", "linear", "--ridge", "0", "--out", "m.kol"])),
        3
    );
    assert_eq!(code(&kol(d, &["eval", "--model", "missing.kol", "--test", "data/test", "--out", "e"])), 3);
    assert_eq!(code(&kol(d, &["ocquad", "--ci", "1", "--out", "o"])), 2);
    assert_eq!(code(&kol(d, &["preset", "nope"])), 2);
}

#[test]
fn presets_parse_back() {
    let dir = setup();
    let d = dir.path();
    let list = ok(d, &["preset"]);
    for name in ["figs", "table1", "fig7", "ocquad"] {
        assert!(list.lines().any(|l| l == name));
        let text = ok(d, &["preset", name]);
        serde_json::from_str::<Value>(&text).unwrap();
    }
}

#[test]
fn bench_protocols_small() {
    let dir = setup();
    let d = dir.path();
    let t = Instant::now();
    ok(d, &["bench", "--protocol", "figs", "--batches", "2", "--batch-size", "50", "--out", "figs"]);
    assert!(t.elapsed() < Duration::from_secs(120));
    let entries = read_json(&d.join("figs/kernel_bench.json"));
    assert_eq!(entries.as_array().unwrap().len(), 12, "6 kernels x 2 modes");
    let csv = std::fs::read_to_string(d.join("figs/kernel_bench.csv")).unwrap();
    assert_eq!(csv.lines().count(), 13);

    ok(d, &["bench", "--protocol", "table1", "--sizes", "10,20", "--out", "t1"]);
    let rows = read_json(&d.join("t1/table1.json"));
    assert_eq!(rows.as_array().unwrap().len(), 3 * 2 * 2, "3 models x 2 sizes x 2 modes");
}

#[test]
fn eradication_branches() {
    let dir = setup();
    let d = dir.path();
    let table = ok(d, &["erad", "--provider", "ode", "--umax-sweep", "0.7,0.4", "--out", "e"]);
    let results = read_json(&d.join("e/erad.json"));
    let results = results.as_array().unwrap();
    assert_eq!(results.len(), 2);
    let controlled = &results[0];
    assert!(controlled["tau_star"].as_f64().unwrap() > 0.0);
    assert!(controlled["te_star"].as_f64().unwrap() < controlled["te_at_zero"].as_f64().unwrap());

    // u_max below 1 - 1/R0 gives R_umax >= 1 and the tau* = 0 branch.
    let csv = std::fs::read_to_string(d.join("e/erad.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(csv.lines().next().unwrap().split(',').nth(3), Some("branch"));
    assert_eq!(rows[0][3], "switching");
    assert_eq!(rows[1][3], "tau_zero");
    assert!(rows[1][2].parse::<f64>().unwrap() >= 1.0);
    assert!(table.contains("tau* = 0 branch expected"), "{table}");
}

#[test]
fn ocquad_without_infection_weight_is_zero() {
    let dir = setup();
    let d = dir.path();
    let oc = read_json(Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/ocquad.json")));
    let mut oc = oc;
    oc["training"]["size"] = 100.into();
    std::fs::write(d.join("oc.json"), oc.to_string()).unwrap();
    let table = ok(d, &["ocquad", "--config", "oc.json", "--phases", "5", "--ci", "0", "--cu", "1", "--out", "o"]);
    assert!(table.contains("ode"), "{table}");
    let rows = read_json(&d.join("o/ocquad.json"));
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 3);
    for r in rows {
        for l in r["levels"].as_array().unwrap() {
            assert!(l.as_f64().unwrap().abs() < 1e-6, "{r}");
        }
    }
}

#[test]
fn integrate_writes_a_trajectory() {
    let dir = setup();
    let d = dir.path();
    std::fs::write(
        d.join("ode.json"),
        r#"{"model":"sir","params":{"r0":4.0,"gamma":0.05},"grid":{"t_star":5.0,"dt":0.05}}"#,
    )
    .unwrap();
    ok(d, &["integrate", "--config", "ode.json", "--control", r#"{"family":"constant","params":{"value":0.3}}"#, "--out", "t"]);
    let csv = std::fs::read_to_string(d.join("t/trajectory.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "t,u,S,I,R");
    assert_eq!(csv.lines().count(), 102);
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
    }
}

fn http_get(addr: &str, path: &str) -> (u16, String) {
    let mut s = TcpStream::connect(addr).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
    write!(s, "GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut text = String::new();
    s.read_to_string(&mut text).unwrap();
    let status = text.split_whitespace().nth(1).unwrap().parse().unwrap();
    let body = text.split_once("\r\n\r\n").map(|(_, b)| b.to_string()).unwrap_or_default();
    (status, body)
}

#[cfg(unix)]
#[test]
fn serve_answers_and_stops_on_sigterm() {
    let dir = setup();
    let mut child = Command::new(env!("CARGO_BIN_EXE_kol"))
        .args(["serve", "--bind", "127.0.0.1:0", "--assets", "no-such-dir"])
        .current_dir(dir.path())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stdout = BufReader::new(child.stdout.take().unwrap());
    let mut stderr = child.stderr.take().unwrap();
    let server = Server(child);
    let mut line = String::new();
    stdout.read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on http://").unwrap_or_else(|| panic!("{line}")).to_string();

    let (status, body) = http_get(&addr, "/health");
    assert_eq!(status, 200);
    assert!(body.contains("ok"), "{body}");
    // Without assets the API answers and everything else is a JSON 404.
    let (status, body) = http_get(&addr, "/index.html");
    assert_eq!(status, 404);
    assert!(body.contains("not_found"), "{body}");

    let pid = server.0.id().to_string();
    assert!(Command::new("kill").args(["-TERM", &pid]).status().unwrap().success());
    let mut server = server;
    let deadline = Instant::now() + Duration::from_secs(10);
    let status = loop {
        if let Some(s) = server.0.try_wait().unwrap() {
            break s;
        }
        assert!(Instant::now() < deadline, "server did not stop");
        std::thread::sleep(Duration::from_millis(50));
    };
    assert!(status.success(), "{status}");
    let mut rest = String::new();
    stdout.read_to_string(&mut rest).unwrap();
    assert!(rest.contains("shut down"));
    let mut err = String::new();
    stderr.read_to_string(&mut err).unwrap();
    assert!(err.contains("serving the API only"), "{err}");
}
