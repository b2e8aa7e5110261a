use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const ARCH: &str = "conv3x3:2,relu,pool1x2,flatten,dense:8,relu,dense:2k,heads";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ising-topo"))
}

fn run(args: &[&str]) -> Output {
    let out = bin().args(args).output().unwrap();
    if !out.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed");
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_gen(dir: &Path, seed: &str) -> PathBuf {
    let out = dir.join(format!("data{seed}"));
    ok(&[
        "gen", "--seed", seed, "--out", s(&out), "--L", "5", "--E", "4", "--NL", "2", "--n-train", "20",
        "--n-test", "6", "--gen-lattices", "1", "--n-gen", "4", "--M", "12",
    ]);
    out
}

#[test]
fn missing_required_flag_exits_2() {
    let d = tempfile::tempdir().unwrap();
    let out = run(&["gen", "--out", s(d.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
    assert_eq!(run(&["train", "--seed", "1"]).status.code(), Some(2));
}

#[test]
fn unknown_flag_exits_2() {
    assert_eq!(run(&["gen", "--no-such-flag"]).status.code(), Some(2));
}

#[test]
fn invalid_values_exit_2() {
    let d = tempfile::tempdir().unwrap();
    let out = run(&["gen", "--seed", "1", "--out", s(d.path()), "--L", "4", "--E", "7"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["gen", "--seed", "1", "--out", s(d.path()), "--gain-mode", "sideways"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_exits_1() {
    let d = tempfile::tempdir().unwrap();
    let out = run(&["baseline", "--data", s(&d.path().join("absent")), "--out", s(d.path())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn gen_is_deterministic_and_writes_manifest() {
    let d = tempfile::tempdir().unwrap();
    let a = small_gen(d.path(), "7");
    let b = d.path().join("again");
    ok(&[
        "gen", "--seed", "7", "--out", s(&b), "--L", "5", "--E", "4", "--NL", "2", "--n-train", "20", "--n-test",
        "6", "--gen-lattices", "1", "--n-gen", "4", "--M", "12",
    ]);
    for f in ["train.bin", "test.bin", "generalization.bin", "lattices.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "gen");
    assert_eq!(m["seeds"]["seed"], 7);
    assert_eq!(m["config"]["data"]["nodes"], 5);
    assert_eq!(m["outputs"].as_array().unwrap().len(), 4);
    assert_eq!(m["outputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("gen.toml");
    std::fs::write(
        &cfg,
        "seed = 3\n[data]\nnodes = 6\nedges = 5\nlattices = 2\nn_train = 10\nn_test = 4\nsteps = 8\n",
    )
    .unwrap();
    let out = d.path().join("o");
    ok(&["gen", "--config", s(&cfg), "--out", s(&out), "--E", "3"]);
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["data"]["nodes"], 6);
    assert_eq!(m["config"]["data"]["edges"], 3);
    assert_eq!(m["config"]["seed"], 3);

    std::fs::write(&cfg, "seed = 3\n[data]\nnodez = 6\n").unwrap();
    assert_eq!(run(&["gen", "--config", s(&cfg), "--out", s(&out)]).status.code(), Some(2));
}

fn read_csvs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn pipeline_and_rerun_reproduce_csvs() {
    let d = tempfile::tempdir().unwrap();
    let data = small_gen(d.path(), "5");
    let tr = d.path().join("train");
    ok(&[
        "train", "--seed", "2", "--data", s(&data), "--out", s(&tr), "--arch", ARCH, "--epochs", "3",
        "--batch-size", "4", "--trace-batches",
    ]);
    let ev = d.path().join("eval");
    let stdout = ok(&["eval", "--checkpoint", s(&tr.join("model.ckpt")), "--data", s(&data), "--out", s(&ev)]);
    assert!(stdout.starts_with("gamma "));
    let sw = d.path().join("sweep");
    ok(&["sweep-entropy", "--report", s(&ev.join("report.csv")), "--out", s(&sw), "--thresholds", "0.1,0.5,0.7"]);
    let bl = d.path().join("baseline");
    ok(&["baseline", "--data", s(&data), "--out", s(&bl), "--include-train"]);

    let history = std::fs::read_to_string(tr.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 4);
    assert_eq!(std::fs::read_to_string(ev.join("report.csv")).unwrap().lines().count(), 1 + 6 * 10);
    assert_eq!(std::fs::read_to_string(sw.join("sweep.csv")).unwrap().lines().count(), 4);

    for dir in [&data, &tr, &ev, &sw, &bl] {
        let again = d.path().join(format!("re_{}", dir.file_name().unwrap().to_string_lossy()));
        ok(&["rerun", "--manifest", s(&dir.join("manifest.json")), "--out", s(&again)]);
        let (x, y) = (read_csvs(dir), read_csvs(&again));
        assert!(!x.is_empty());
        assert_eq!(x, y, "{}", dir.display());
    }
    assert_eq!(
        std::fs::read(tr.join("model.ckpt")).unwrap(),
        std::fs::read(d.path().join("re_train/model.ckpt")).unwrap()
    );
}

#[test]
fn train_resume_continues_to_the_same_model() {
    let d = tempfile::tempdir().unwrap();
    let data = small_gen(d.path(), "9");
    let common = ["--seed", "4", "--data", s(&data), "--arch", ARCH, "--batch-size", "4"];
    let full = d.path().join("full");
    let mut a = vec!["train", "--out", s(&full), "--epochs", "4"];
    a.extend(common);
    ok(&a);
    let part = d.path().join("part");
    let mut a = vec!["train", "--out", s(&part), "--epochs", "2", "--checkpoint-every", "1"];
    a.extend(common);
    ok(&a);
    let rest = d.path().join("rest");
    let resume = part.join("resume.ckpt");
    let mut a = vec!["train", "--out", s(&rest), "--epochs", "4", "--resume", s(&resume)];
    a.extend(common);
    ok(&a);
    assert_eq!(std::fs::read(full.join("model.ckpt")).unwrap(), std::fs::read(rest.join("model.ckpt")).unwrap());
}

#[test]
fn finetune_and_temperature_sweep_run() {
    let d = tempfile::tempdir().unwrap();
    let cold = small_gen(d.path(), "1");
    let hot = d.path().join("hot");
    ok(&[
        "gen", "--seed", "1", "--out", s(&hot), "--L", "5", "--E", "4", "--NL", "2", "--n-train", "20", "--n-test",
        "6", "--gen-lattices", "1", "--n-gen", "4", "--M", "12", "--T", "5",
    ]);
    let ft = d.path().join("ft");
    ok(&[
        "finetune", "--seed", "1", "--pretrain", s(&cold), "--target", s(&hot), "--out", s(&ft), "--arch", ARCH,
        "--pretrain-epochs", "2", "--epochs", "2", "--batch-size", "4",
    ]);
    assert!(ft.join("pretrain_history.csv").exists());
    assert!(ft.join("finetune_history.csv").exists());

    let sw = d.path().join("sweep");
    ok(&[
        "sweep-temperature", "--seed", "1", "--temperatures", "0.4,5", "--out", s(&sw), "--L", "5", "--E", "4",
        "--NL", "2", "--n-train", "20", "--n-test", "6", "--M", "12", "--arch", ARCH, "--epochs", "2",
        "--batch-size", "4", "--pretrain-temperature", "0.1", "--pretrain-epochs", "1", "--jobs", "2",
    ]);
    let t = std::fs::read_to_string(sw.join("temperature.csv")).unwrap();
    assert_eq!(t.lines().count(), 3);
    assert!(t.lines().next().unwrap().starts_with("temperature,"));
}

#[test]
fn fit_prints_coefficients() {
    let d = tempfile::tempdir().unwrap();
    let pts = d.path().join("pts.csv");
    std::fs::write(&pts, "x,y\n0,1\n1,3\n2,5\n").unwrap();
    let out = ok(&["fit", "--points", s(&pts), "--out", s(&d.path().join("fit"))]);
    let vals: Vec<f64> = out.lines().map(|l| l.split(" = ").nth(1).unwrap().parse().unwrap()).collect();
    assert!((vals[0] - 2.0).abs() < 1e-9 && (vals[1] - 1.0).abs() < 1e-9 && (vals[2] - 1.0).abs() < 1e-9);
}

#[test]
fn empty_generalization_split_is_an_error() {
    let d = tempfile::tempdir().unwrap();
    let data = d.path().join("data");
    ok(&["gen", "--seed", "1", "--out", s(&data), "--L", "5", "--E", "4", "--NL", "1", "--n-train", "4", "--n-test", "2", "--M", "6"]);
    let tr = d.path().join("tr");
    ok(&["train", "--seed", "1", "--data", s(&data), "--out", s(&tr), "--arch", ARCH, "--epochs", "1"]);
    let out = run(&[
        "eval", "--checkpoint", s(&tr.join("model.ckpt")), "--data", s(&data), "--split", "generalization", "--out",
        s(&d.path().join("ev")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}
