use std::path::Path;
use std::process::{Command, Output};

use poissonprop::io::{load_tensor, save_tensor, save_tensor_as, Dtype, SynthSpec};
use poissonprop::Tensor;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_poissonprop"))
        .args(args)
        .env_remove("POISSONPROP_THREADS")
        .env_remove("POISSONPROP_SEED")
        .output()
        .unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn mask(path: &Path, values: &[f64]) {
    save_tensor_as(path, &Tensor::new(vec![2, 2], values.to_vec()).unwrap(), Dtype::U8).unwrap();
}

#[test]
fn dice_of_identical_masks_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.t");
    mask(&a, &[1.0, 0.0, 1.0, 1.0]);
    let out = cli(&["dice", "--pred", s(&a), "--gt", s(&a)]);
    assert!(out.status.success());
    let stdout = text(&out.stdout);
    assert!(stdout.starts_with("DSC 1.0 "), "{stdout}");
    assert!(stdout.contains("score convention"));
}

#[test]
fn dice_rejects_non_binary_input() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.t");
    let b = dir.path().join("b.t");
    mask(&a, &[1.0, 0.0, 1.0, 1.0]);
    save_tensor(&b, &Tensor::new(vec![2, 2], vec![0.5, 0.0, 1.0, 1.0]).unwrap()).unwrap();
    let out = cli(&["dice", "--pred", s(&a), "--gt", s(&b)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).starts_with("error: NotBinary: "));
}

#[test]
fn propagate_on_disconnected_graph_fails() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g.t");
    let l = dir.path().join("l.t");
    let edges = vec![0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 2.0, 3.0, 1.0, 3.0, 2.0, 1.0];
    save_tensor(&g, &Tensor::new(vec![4, 3], edges).unwrap()).unwrap();
    save_tensor(&l, &Tensor::new(vec![2], vec![0.0, 1.0]).unwrap()).unwrap();
    let r = dir.path().join("r.t");
    let out = cli(&["propagate", "--graph", s(&g), "--labels", s(&l), "--out", s(&r)]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = text(&out.stderr);
    assert!(stderr.starts_with("error: DisconnectedGraph: "), "{stderr}");
    assert_eq!(stderr.lines().count(), 1);
}

#[test]
fn graph_then_propagate() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("f.t");
    let pts: Vec<f64> = (0..40)
        .flat_map(|i| [(i as f64 * 0.37).sin(), (i as f64 * 0.91).cos(), i as f64 * 0.05])
        .collect();
    save_tensor(&f, &Tensor::new(vec![40, 3], pts).unwrap()).unwrap();
    let g = dir.path().join("g.t");
    let out = cli(&["graph", "--features", s(&f), "--k", "6", "--out", s(&g)]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("vertices 40"));
    let edges = load_tensor(&g).unwrap();
    assert_eq!(edges.dims()[1], 3);

    let l = dir.path().join("l.t");
    save_tensor(&l, &Tensor::new(vec![4], vec![0.0, 1.0, 0.0, 1.0]).unwrap()).unwrap();
    let r = dir.path().join("r.t");
    let out = cli(&[
        "propagate",
        "--graph",
        s(&g),
        "--labels",
        s(&l),
        "--k-classes",
        "2",
        "--tol",
        "1e-9",
        "--tmax",
        "100000",
        "--out",
        s(&r),
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("stop converged"));
    assert_eq!(load_tensor(&r).unwrap().dims(), &[40, 2]);
}

#[test]
fn single_label_propagation_warns() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g.t");
    let edges = vec![
        0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 2.0, 1.0, 2.0, 1.0, 1.0, 0.0, 2.0, 1.0, 2.0, 0.0, 1.0,
    ];
    save_tensor(&g, &Tensor::new(vec![6, 3], edges).unwrap()).unwrap();
    let l = dir.path().join("l.t");
    save_tensor(&l, &Tensor::new(vec![1], vec![1.0]).unwrap()).unwrap();
    let r = dir.path().join("r.t");
    let out = cli(&["propagate", "--graph", s(&g), "--labels", s(&l), "--out", s(&r)]);
    assert!(out.status.success());
    assert!(text(&out.stderr).starts_with("warning: "));
    assert!(load_tensor(&r).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn synth_then_episode() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(&spec, SynthSpec::two_blob(8, 16, 16, 6.0, 1.0, 1).to_json()).unwrap();
    let ep_dir = dir.path().join("ep");
    let out = cli(&["synth", "--spec", s(&spec), "--out-dir", s(&ep_dir)]);
    assert!(out.status.success(), "{}", text(&out.stderr));

    let res = dir.path().join("out");
    let out = cli(&[
        "episode",
        "--manifest",
        s(&ep_dir.join("episode.json")),
        "--out-dir",
        s(&res),
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let diag: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(res.join("diagnostics.json")).unwrap()).unwrap();
    assert!(diag["dsc"].as_f64().unwrap() >= 0.95);
    assert_eq!(diag["prediction_mode"], "calibrated");
    let pred = load_tensor(res.join("predicted_mask.t")).unwrap();
    assert_eq!(pred.dims(), &[16, 16]);
    assert!(pred.data().iter().all(|&v| v == 0.0 || v == 1.0));
}

#[test]
fn seed_variable_overrides_spec() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(&spec, SynthSpec::two_blob(2, 8, 8, 6.0, 1.0, 1).to_json()).unwrap();
    let run = |seed: Option<&str>, name: &str| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_poissonprop"));
        cmd.args(["synth", "--spec", s(&spec), "--out-dir", s(&dir.path().join(name))]);
        match seed {
            Some(v) => cmd.env("POISSONPROP_SEED", v),
            None => cmd.env_remove("POISSONPROP_SEED"),
        };
        assert!(cmd.output().unwrap().status.success());
        std::fs::read(dir.path().join(name).join("query.t")).unwrap()
    };
    let base = run(None, "a");
    assert_eq!(run(Some("1"), "b"), base);
    assert_ne!(run(Some("2"), "c"), base);
}

#[test]
fn bad_manifest_names_key() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.json");
    std::fs::write(&m, r#"{"support_features": "s.t"}"#).unwrap();
    let out = cli(&["episode", "--manifest", s(&m), "--out-dir", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = text(&out.stderr);
    assert!(stderr.starts_with("error: ManifestError: "), "{stderr}");
    assert!(stderr.contains("support_mask"), "{stderr}");
}

#[test]
fn bad_thread_variable_is_rejected() {
    let out = Command::new(env!("CARGO_BIN_EXE_poissonprop"))
        .args(["dice", "--pred", "x", "--gt", "y"])
        .env("POISSONPROP_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).starts_with("error: InvalidParameter: "));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(cli(&["propagate"]).status.code(), Some(2));
    assert_eq!(cli(&["--help"]).status.code(), Some(0));
}
