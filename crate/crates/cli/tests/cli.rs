use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use amos_core::{
    build_relu_unit, compile_graph, ActivationKind, AmosUnitParams, GraphBuilder, SpikingNetwork, UnitLibrary,
};
use serde_json::Value;
use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

fn amos(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_amos")).args(args).env_remove("AMOS_SEED").output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = amos(args);
    assert!(out.status.success(), "amos {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn p(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_str().unwrap().to_string()
}

fn relu_unit(dir: &TempDir, k: usize, alpha: f64) -> String {
    let path = p(dir, &format!("relu{k}.json"));
    ok(&["build-relu", "--k", &k.to_string(), "--alpha", &alpha.to_string(), "--out", &path]);
    path
}

fn digits_network(dir: &TempDir, k: usize) -> String {
    let unit = relu_unit(dir, k, 16.0);
    let net = p(dir, &format!("net{k}.json"));
    let graph = fixture("digits_mlp.json");
    ok(&["convert", "--graph", graph.to_str().unwrap(), "--unit", &unit, "--out", &net]);
    net
}

fn curve_rows(text: &str) -> Vec<Vec<f64>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.records().map(|rec| rec.unwrap().iter().map(|v| v.parse().unwrap()).collect()).collect()
}

#[test]
fn parameter_counts_follow_k() {
    let dir = TempDir::new().unwrap();
    for (kind, k, want) in [("sigmoid", "8", 52), ("mult", "40", 940)] {
        let out = p(&dir, &format!("{kind}.json"));
        ok(&["train-unit", "--kind", kind, "--k", k, "--epochs", "2", "--out", &out]);
        let u = AmosUnitParams::from_json(&std::fs::read_to_string(&out).unwrap()).unwrap();
        assert_eq!(u.parameter_count(), want, "{kind}");
    }
    let u = relu_unit(&dir, 10, 1.0);
    let u = AmosUnitParams::from_json(&std::fs::read_to_string(u).unwrap()).unwrap();
    assert_eq!(u.parameter_count(), 75);
}

#[test]
fn closed_form_flag_matches_build_relu() {
    let dir = TempDir::new().unwrap();
    let a = p(&dir, "a.json");
    ok(&["train-unit", "--kind", "relu", "--closed-form", "--k", "5", "--alpha", "2", "--out", &a]);
    let a = AmosUnitParams::from_json(&std::fs::read_to_string(a).unwrap()).unwrap();
    assert_eq!(a, build_relu_unit(5, 2.0).unwrap());
    let bad = amos(&["train-unit", "--kind", "sigmoid", "--closed-form", "--out", &p(&dir, "b.json")]);
    assert_eq!(code(&bad), 2);
}

#[test]
fn training_writes_loss_history() {
    let dir = TempDir::new().unwrap();
    let (out, hist) = (p(&dir, "s.json"), p(&dir, "mse.csv"));
    ok(&["train-unit", "--kind", "swish", "--k", "4", "--epochs", "7", "--domain=-4:4", "--out", &out, "--mse-csv", &hist]);
    let rows = curve_rows(&std::fs::read_to_string(hist).unwrap());
    assert_eq!(rows.len(), 7);
    assert!(rows.iter().all(|r| r[1].is_finite() && r[1] >= 0.0));
    let u = AmosUnitParams::from_json(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(u.domain, Some(vec![[-4.0, 4.0]]));
}

#[test]
fn seed_flag_and_env_agree() {
    let dir = TempDir::new().unwrap();
    let run = |name: &str, seed: Option<&str>, env: Option<&str>| {
        let out = p(&dir, name);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_amos"));
        cmd.args(["train-unit", "--kind", "sigmoid", "--k", "3", "--epochs", "3", "--out", &out]).env_remove("AMOS_SEED");
        if let Some(s) = seed {
            cmd.args(["--seed", s]);
        }
        if let Some(s) = env {
            cmd.env("AMOS_SEED", s);
        }
        assert!(cmd.output().unwrap().status.success());
        std::fs::read_to_string(out).unwrap()
    };
    let flag = run("a.json", Some("11"), None);
    assert_eq!(flag, run("b.json", None, Some("11")));
    assert_eq!(flag, run("c.json", Some("11"), None));
    assert_ne!(flag, run("d.json", Some("12"), None));
}

#[test]
fn relu_curve_is_a_bounded_staircase() {
    let dir = TempDir::new().unwrap();
    let (k, alpha) = (4, 4.0);
    let unit = relu_unit(&dir, k, alpha);
    let rows = curve_rows(&ok(&["curve", "--params", &unit, "--resolution", "801"]));
    assert_eq!(rows.len(), 801);
    let step = alpha / (1 << k) as f64;
    let mut levels: Vec<f64> = rows.iter().map(|r| r[2]).collect();
    for r in &rows {
        let (x, target, out) = (r[0], r[1], r[2]);
        assert!(out >= 0.0 && out <= alpha - step + 1e-12, "x={x} out={out}");
        if x <= alpha - step {
            assert!(target - out >= -1e-12 && target - out < step + 1e-12, "x={x}");
        }
    }
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    assert!(levels.len() <= 1 << k);
}

#[test]
fn sigmoid_curve_crosses_half_at_zero() {
    let dir = TempDir::new().unwrap();
    let unit = p(&dir, "sig.json");
    ok(&["train-unit", "--kind", "sigmoid", "--k", "8", "--epochs", "60", "--out", &unit]);
    let rows = curve_rows(&ok(&["curve", "--params", &unit, "--resolution", "1001"]));
    let mid = rows.iter().find(|r| r[0] == 0.0).expect("grid hits zero");
    assert!((mid[1] - 0.5).abs() < 1e-12);
    assert!((mid[2] - 0.5).abs() < 0.05, "amos sigmoid(0) = {}", mid[2]);
}

#[test]
fn mult_curve_reports_abs_error() {
    let dir = TempDir::new().unwrap();
    let unit = p(&dir, "m.json");
    ok(&["train-unit", "--kind", "mult", "--k", "6", "--epochs", "1", "--out", &unit]);
    let text = ok(&["curve", "--params", &unit, "--resolution", "11"]);
    assert!(text.starts_with("x,y,target,amos,abs_error"));
    let rows = curve_rows(&text);
    assert_eq!(rows.len(), 121);
    for r in rows {
        assert!((r[2] - r[0] * r[1]).abs() < 1e-12);
        assert!((r[4] - (r[2] - r[3]).abs()).abs() < 1e-12);
    }
}

#[test]
fn convert_matches_library_and_round_trips() {
    let dir = TempDir::new().unwrap();
    let unit = relu_unit(&dir, 6, 16.0);
    let (net, report) = (p(&dir, "net.json"), p(&dir, "report.json"));
    let graph = fixture("digits_mlp.json");
    ok(&["convert", "--graph", graph.to_str().unwrap(), "--unit", &unit, "--out", &net, "--report", &report]);

    let g = amos_core::AnnGraph::from_json(&std::fs::read_to_string(&graph).unwrap()).unwrap();
    let mut lib = UnitLibrary::new();
    lib.insert_tagged(build_relu_unit(6, 16.0).unwrap()).unwrap();
    let (want, want_report) = compile_graph(&g, &lib).unwrap();

    let got = SpikingNetwork::from_json(&std::fs::read_to_string(&net).unwrap()).unwrap();
    assert_eq!(got, want);
    assert_eq!(SpikingNetwork::from_json(&got.to_json()).unwrap(), got);
    let r: Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(r["latency"], want_report.latency);
    assert_eq!(r["latency"], got.latency);
    assert_eq!(r["neuron_count"], got.neuron_count());
    assert_eq!(r["synapse_count"], got.synapse_count());
    assert_eq!(r["shared_parameter_count"], 6 * 3 + 15);
}

#[test]
fn missing_unit_names_the_kind() {
    let dir = TempDir::new().unwrap();
    let mut b = GraphBuilder::new(2);
    let d = b.dense(b.input(), vec![vec![1.0, -1.0], vec![0.5, 0.5]], vec![0.0, 0.1]);
    let a = b.activation(d, ActivationKind::Swish);
    let g = b.finish(a).unwrap();
    let graph = p(&dir, "g.json");
    std::fs::write(&graph, g.to_json()).unwrap();
    let unit = relu_unit(&dir, 4, 4.0);
    let out = amos(&["convert", "--graph", &graph, "--unit", &unit, "--out", &p(&dir, "n.json")]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("swish"));
    assert!(!dir.path().join("n.json").exists());
}

#[test]
fn verify_agreement_tracks_k() {
    let dir = TempDir::new().unwrap();
    let graph = fixture("digits_mlp.json");
    let data = fixture("digits_test.csv");
    let run = |k: usize| -> Value {
        let net = digits_network(&dir, k);
        let text = ok(&[
            "verify",
            "--graph",
            graph.to_str().unwrap(),
            "--network",
            &net,
            "--dataset",
            data.to_str().unwrap(),
            "--n",
            "200",
        ]);
        serde_json::from_str(&text).unwrap()
    };
    let hi = run(12);
    assert_eq!(hi["samples"], 200);
    assert!(hi["agreement"].as_f64().unwrap() >= 0.99, "{hi}");
    // a coarse network still verifies; it just agrees less
    let lo = run(1);
    assert!(lo["agreement"].as_f64().unwrap() <= hi["agreement"].as_f64().unwrap());
}

#[test]
fn verify_reports_unit_mse_when_given_units() {
    let dir = TempDir::new().unwrap();
    let unit = relu_unit(&dir, 8, 16.0);
    let net = digits_network(&dir, 8);
    let graph = fixture("digits_mlp.json");
    let data = fixture("digits_test.csv");
    let text = ok(&[
        "verify", "--graph", graph.to_str().unwrap(), "--network", &net, "--dataset", data.to_str().unwrap(), "--n",
        "20", "--unit", &unit,
    ]);
    let v: Value = serde_json::from_str(&text).unwrap();
    assert!(v["unit_mse"]["relu"].as_f64().unwrap() < 1e-2);
}

#[test]
fn bench_step_counts() {
    let dir = TempDir::new().unwrap();
    let net = digits_network(&dir, 4);
    let latency = SpikingNetwork::from_json(&std::fs::read_to_string(&net).unwrap()).unwrap().latency;
    let v: Value = serde_json::from_str(&ok(&["bench", "--network", &net, "--seed", "3"])).unwrap();
    assert_eq!(v["inputs"], 1000);
    assert_eq!(v["steps"], latency + 999);
    assert_eq!(v["first_output_step"], latency);
    let tp = v["throughput"].as_f64().unwrap();
    assert!((tp - 1000.0 / (latency + 999) as f64).abs() < 1e-12);

    let v: Value = serde_json::from_str(&ok(&["bench", "--network", &net, "--mode", "single", "--seed", "3"])).unwrap();
    assert_eq!(v["steps"], 1000 * latency);
    assert_eq!(v["unattributed_spikes"], 0);
}

#[test]
fn simulate_writes_outputs_and_raster() {
    let dir = TempDir::new().unwrap();
    let mut b = GraphBuilder::new(2);
    let d = b.dense(b.input(), vec![vec![1.0, 1.0]], vec![0.0]);
    let a = b.activation(d, ActivationKind::Relu);
    let g = b.finish(a).unwrap();
    let graph = p(&dir, "g.json");
    std::fs::write(&graph, g.to_json()).unwrap();
    let unit = relu_unit(&dir, 3, 8.0);
    let net = p(&dir, "n.json");
    ok(&["convert", "--graph", &graph, "--unit", &unit, "--out", &net]);

    let (outputs, raster) = (p(&dir, "o.csv"), p(&dir, "r.csv"));
    let text = ok(&[
        "simulate", "--network", &net, "--input", "1,2", "--input", "2.5,2.5", "--input=-3,1", "--outputs", &outputs,
        "--raster", &raster,
    ]);
    let v: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["amos_violations"], 0);
    let got = curve_rows(&std::fs::read_to_string(outputs).unwrap());
    assert_eq!(got, vec![vec![3.0], vec![5.0], vec![0.0]]);
    let raster = std::fs::read_to_string(raster).unwrap();
    assert!(raster.starts_with("step,gate"));
    assert_eq!(raster.lines().count() as u64 - 1, v["total_spikes"].as_u64().unwrap());

    let wrong = amos(&["simulate", "--network", &net, "--input", "1,2,3"]);
    assert_eq!(code(&wrong), 3);
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&amos(&["no-such-command"])), 2);
    assert_eq!(code(&amos(&["bench"])), 2);
    assert_eq!(code(&amos(&["curve", "--params", &p(&dir, "missing.json")])), 3);

    let junk = p(&dir, "junk.json");
    std::fs::write(&junk, "{\"arity\": 1, \"K\": 2}").unwrap();
    assert_eq!(code(&amos(&["curve", "--params", &junk])), 3);

    let diverge = amos(&["train-unit", "--kind", "swish", "--k", "4", "--epochs", "3", "--lr", "1e300", "--out", &p(&dir, "x.json")]);
    assert_eq!(code(&diverge), 4);
    assert!(String::from_utf8_lossy(&diverge.stderr).contains("epoch"));

    let net = digits_network(&dir, 2);
    let empty = p(&dir, "empty.csv");
    std::fs::write(&empty, "").unwrap();
    let graph = fixture("digits_mlp.json");
    let args = ["verify", "--graph", graph.to_str().unwrap(), "--network", &net, "--dataset", &empty];
    assert_eq!(code(&amos(&args)), 2);

    let narrow = p(&dir, "narrow.csv");
    std::fs::write(&narrow, "a,b\n1,2\n").unwrap();
    let args = ["verify", "--graph", graph.to_str().unwrap(), "--network", &net, "--dataset", &narrow];
    assert_eq!(code(&amos(&args)), 3);
}
