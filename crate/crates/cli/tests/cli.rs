use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use robustkit::data::bench::BenchmarkReport;
use robustkit::data::{gen_shapes, save_dataset, ShapesConfig};
use robustkit::nn::checkpoint_hash;

const BIN: &str = env!("CARGO_BIN_EXE_robustkit");

fn assets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets/reference")
}

fn golden() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(args: &[&str]) -> Output {
    let o = run(args);
    assert!(o.status.success(), "{args:?} failed: {}", stderr(&o));
    o
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

/// Every file of `dir` except the timestamp metadata.
fn artifacts(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_name() != "metadata.json")
        .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
        .collect()
}

fn small_train(out: &Path) {
    ok(&[
        "train",
        "-o",
        out.to_str().unwrap(),
        "--set",
        "train.epochs=2",
        "--set",
        "data.n=300",
        "--set",
        "data.size=16",
        "--set",
        "eval.n=100",
        "--set",
        "eval.size=16",
    ]);
}

#[test]
fn help_lists_every_subcommand() {
    let o = ok(&["--help"]);
    let text = String::from_utf8_lossy(&o.stdout);
    for sub in ["train", "attack-eval", "corrupt-eval", "benchmark", "visualize", "wise-ft"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
    assert!(text.contains("Exit codes"));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn empty_config_resolves_the_default_preset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("empty.toml");
    std::fs::write(&cfg, "").unwrap();
    let o = ok(&["train", "--dry-run", "-c", cfg.to_str().unwrap()]);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("preset = \"cnn-90ep\""));
    assert!(text.contains("epochs = 90"));
}

#[test]
fn resolved_snapshot_carries_overrides_and_preset_values() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    ok(&["train", "-o", out.to_str().unwrap(), "--set", "train.epochs=1", "--set", "data.n=50", "--set", "data.size=12", "--set", "train.epsilon=4/255", "--set", "train.evaluate=false"]);
    let snap: toml::Table = read(out.join("resolved_config.toml")).parse().unwrap();
    let t = snap["train"].as_table().unwrap();
    assert_eq!(t["epsilon"].as_float().unwrap() as f32, 4.0f32 / 255.0);
    assert_eq!(t["batch_size"].as_integer(), Some(128));
    assert_eq!(t["lr"].as_float(), Some(0.1));
    assert!((t["weight_decay"].as_float().unwrap() - 4e-4).abs() < 1e-9);
    assert_eq!(t["preset"].as_str(), Some("cnn-90ep"));
    for f in ["checkpoint.rbk", "train_log.jsonl", "metrics.json", "metadata.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    // the snapshot is itself a valid config
    let again = dir.path().join("again");
    ok(&["train", "-c", out.join("resolved_config.toml").to_str().unwrap(), "-o", again.to_str().unwrap()]);
    assert_eq!(std::fs::read(out.join("checkpoint.rbk")).unwrap(), std::fs::read(again.join("checkpoint.rbk")).unwrap());
}

#[test]
fn config_errors_name_the_key_and_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let o = run(&["train", "--dry-run", "--set", "train.epsilonn=0.1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("epsilonn"), "{}", stderr(&o));
    let o = run(&["train", "--dry-run", "--set", "train.epochs=many", "-o", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "dry run checks types");
    let o = run(&["train", "--set", "train.epochs=many", "-o", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("epochs"), "{}", stderr(&o));
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[attack]\nmethod = \"pgd\"\nbogus = 1\n").unwrap();
    let o = run(&["attack-eval", "-c", cfg.to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bogus"));
    let o = run(&["attack-eval", "-o", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("checkpoint"));
    assert_eq!(run(&["wise-ft", "--seed", "1", "-o", out.to_str().unwrap()]).status.code(), Some(2));
    let o = run(&["train", "--set", "train.mode=advprop", "--set", "train.epochs=1", "-o", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "advprop needs switchable BN: {}", stderr(&o));
}

#[test]
fn exit_codes_follow_error_classes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let o = dir.path().to_str().unwrap().to_string();
    // missing file: io
    let missing = format!("checkpoint=\"{o}/nope.rbk\"");
    let r = run(&["attack-eval", "--set", &missing, "-o", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(5), "{}", stderr(&r));
    // snapshot was written before the failure
    assert!(out.join("resolved_config.toml").exists());
    // corrupt checkpoint: data
    let junk = dir.path().join("junk.rbk");
    std::fs::write(&junk, b"not a checkpoint at all").unwrap();
    let r = run(&["attack-eval", "--set", &format!("checkpoint=\"{}\"", junk.display()), "-o", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(3), "{}", stderr(&r));
    // data that does not fit the model: numeric (shape)
    let std = assets().join("standard.rbk");
    let r = run(&["attack-eval", "--set", &format!("checkpoint=\"{}\"", std.display()), "--set", "data.size=12", "-o", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(4), "{}", stderr(&r));
    // truncated IDX: data
    let img = dir.path().join("i.idx");
    let lab = dir.path().join("l.idx");
    std::fs::write(&img, [0u8, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 28]).unwrap();
    std::fs::write(&lab, [0u8, 0, 8, 1, 0, 0, 0, 1, 0]).unwrap();
    let r = run(&[
        "attack-eval",
        "--set",
        &format!("checkpoint=\"{}\"", std.display()),
        "--set",
        "data.source=idx",
        "--set",
        &format!("data.images=\"{}\"", img.display()),
        "--set",
        &format!("data.labels=\"{}\"", lab.display()),
        "-o",
        out.to_str().unwrap(),
    ]);
    assert_eq!(r.status.code(), Some(3), "{}", stderr(&r));
}

#[test]
fn pipeline_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for _ in 0..2 {
        // same paths both times, since the snapshots record them
        let base = dir.path().join("run");
        let _ = std::fs::remove_dir_all(&base);
        let (t, b, v) = (base.join("train"), base.join("bench"), base.join("vis"));
        small_train(&t);
        let ck = format!("checkpoint=\"{}\"", t.join("checkpoint.rbk").display());
        ok(&["benchmark", "-o", b.to_str().unwrap(), "--set", &ck, "--set", "data.n=60", "--set", "data.size=16", "--set", "suite.robust_epsilons=[\"2/255\"]", "--set", "suite.apgd_steps=5", "--set", "suite.square_queries=20", "--set", "suite.ood=[\"edge-sketch\", \"rotation-shift\"]"]);
        ok(&["visualize", "boundary", "-o", v.to_str().unwrap(), "--set", &ck, "--set", "data.n=20", "--set", "data.size=16", "--set", "samples=[0, 3]", "--set", "boundary.resolution=15"]);
        runs.push([artifacts(&t), artifacts(&b), artifacts(&v)]);
    }
    assert_eq!(runs[0], runs[1]);
    assert!(runs[0][2].contains_key("boundary_3.ppm"));
    let report = BenchmarkReport::from_jsonl(std::str::from_utf8(&runs[0][1]["report.jsonl"]).unwrap()).unwrap();
    assert_eq!(report.rows.len(), 4);
    assert!(report.complete);
}

#[test]
fn benchmark_on_the_shipped_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let std = assets().join("standard.rbk");
    let bytes = std::fs::read(&std).unwrap();
    let pinned = read(assets().join("standard.sha256"));
    assert_eq!(pinned.split_whitespace().next().unwrap(), checkpoint_hash(&bytes));
    let out = dir.path().join("b");
    ok(&[
        "benchmark",
        "-o",
        out.to_str().unwrap(),
        "--set",
        &format!("checkpoint=\"{}\"", std.display()),
        "--set",
        &format!("baseline=\"{}\"", assets().join("baseline_grid.json").display()),
        "--set",
        &format!("reference=\"{}\"", std.display()),
        "--set",
        "data.n=200",
        "--set",
        "suite.corruptions={kinds = [\"fog\", \"contrast\"], severities = [1, 2, 3, 4, 5], seed = 0}",
        "--set",
        "suite.ood=[\"texture-randomized\"]",
    ]);
    let report = BenchmarkReport::from_jsonl(&read(out.join("report.jsonl"))).unwrap();
    assert_eq!(report.model, "standard");
    assert_eq!(report.checkpoint_hash, checkpoint_hash(&bytes));
    let labels: Vec<String> = report.rows.iter().map(|r| r.metric.label()).collect();
    assert_eq!(labels, ["clean", "mCE", "ce/fog", "ce/contrast", "ood/texture-randomized"]);
    assert!(report.rows[0].value >= 90.0, "reference model clean accuracy {}", report.rows[0].value);
    // a second report ranks against the first
    let out2 = dir.path().join("b2");
    ok(&[
        "benchmark",
        "-o",
        out2.to_str().unwrap(),
        "--set",
        &format!("checkpoint=\"{}\"", assets().join("at.rbk").display()),
        "--set",
        "data.n=50",
        "--set",
        &format!("compare=[\"{}\"]", out.join("report.jsonl").display()),
    ]);
    let lb = read(out2.join("leaderboard.txt"));
    assert_eq!(lb.lines().count(), 3, "{lb}");
    assert!(lb.lines().nth(1).unwrap().contains("standard"), "model with an mCE ranks first: {lb}");
}

#[test]
fn boundary_maps_match_goldens() {
    let dir = tempfile::tempdir().unwrap();
    for model in ["standard", "at"] {
        let out = dir.path().join(model);
        ok(&[
            "visualize",
            "boundary",
            "-o",
            out.to_str().unwrap(),
            "--set",
            &format!("checkpoint=\"{}\"", assets().join(format!("{model}.rbk")).display()),
            "--set",
            "boundary.epsilon=0.1",
        ]);
        let got = std::fs::read(out.join("boundary_0.ppm")).unwrap();
        let want = std::fs::read(golden().join(format!("boundary_{model}.ppm"))).unwrap();
        assert!(got == want, "{model} boundary map differs from the golden file");
    }
}

#[test]
fn kernel_and_cam_renders_match_goldens() {
    let dir = tempfile::tempdir().unwrap();
    let ck = format!("checkpoint=\"{}\"", assets().join("standard.rbk").display());
    let k = dir.path().join("k");
    ok(&["visualize", "kernels", "-o", k.to_str().unwrap(), "--set", &ck]);
    assert!(std::fs::read(k.join("kernels.ppm")).unwrap() == std::fs::read(golden().join("kernels_standard.ppm")).unwrap());
    let g = dir.path().join("g");
    ok(&["visualize", "gradcam", "-o", g.to_str().unwrap(), "--set", &ck]);
    assert!(std::fs::read(g.join("gradcam_0.ppm")).unwrap() == std::fs::read(golden().join("gradcam_standard.ppm")).unwrap());
    let ppm = robustkit::analyze::parse_ppm(&std::fs::read(g.join("input_0.ppm")).unwrap()).unwrap();
    assert_eq!((ppm.width, ppm.height), (28, 28));
}

#[test]
fn wise_ft_endpoints_reproduce_the_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (assets().join("standard.rbk"), assets().join("at.rbk"));
    let out = dir.path().join("w");
    ok(&[
        "wise-ft",
        "-o",
        out.to_str().unwrap(),
        "--set",
        &format!("original=\"{}\"", a.display()),
        "--set",
        &format!("finetuned=\"{}\"", b.display()),
        "--set",
        "alphas=[0, 0.5, 1]",
        "--set",
        "evaluate=false",
    ]);
    assert_eq!(std::fs::read(out.join("wise_0.rbk")).unwrap(), std::fs::read(&a).unwrap());
    assert_eq!(std::fs::read(out.join("wise_1.rbk")).unwrap(), std::fs::read(&b).unwrap());
    assert!(out.join("wise_0.5.rbk").exists());
}

#[test]
fn attack_eval_and_corrupt_eval_reports() {
    let dir = tempfile::tempdir().unwrap();
    let ck = format!("checkpoint=\"{}\"", assets().join("at.rbk").display());
    let out = dir.path().join("a");
    ok(&["attack-eval", "-o", out.to_str().unwrap(), "--set", &ck, "--set", "data.n=100", "--set", "attack.epsilon=0.1"]);
    let rep: serde_json::Value = serde_json::from_str(&read(out.join("attack_report.json"))).unwrap();
    let robust = rep["robust_accuracy"].as_f64().unwrap();
    assert!(robust <= rep["clean_accuracy"].as_f64().unwrap());
    assert_eq!(rep["robust"].as_array().unwrap().len(), 100);
    let c = dir.path().join("c");
    ok(&[
        "corrupt-eval",
        "-o",
        c.to_str().unwrap(),
        "--set",
        &format!("checkpoint=\"{}\"", assets().join("standard.rbk").display()),
        "--set",
        &format!("baseline=\"{}\"", assets().join("baseline_grid.json").display()),
    ]);
    // the reference model against its own grid
    let m: serde_json::Value = serde_json::from_str(&read(c.join("mce_report.json"))).unwrap();
    assert_eq!(m["mce"].as_f64(), Some(100.0));
    assert_eq!(read(c.join("error_grid.json")), read(assets().join("baseline_grid.json")));
}

#[test]
fn container_datasets_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let ds = gen_shapes(&ShapesConfig { n: 40, ..Default::default() }, 9).unwrap();
    let path = dir.path().join("d.rbd");
    std::fs::write(&path, save_dataset(&ds)).unwrap();
    let out = dir.path().join("b");
    ok(&[
        "benchmark",
        "-o",
        out.to_str().unwrap(),
        "--set",
        &format!("checkpoint=\"{}\"", assets().join("standard.rbk").display()),
        "--set",
        "data.source=container",
        "--set",
        &format!("data.path=\"{}\"", path.display()),
        "--set",
        "data.limit=30",
    ]);
    let report = BenchmarkReport::from_jsonl(&read(out.join("report.jsonl"))).unwrap();
    assert_eq!(report.rows[0].samples, 30);
}
