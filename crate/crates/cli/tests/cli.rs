use std::path::Path;
use std::process::{Command, Output};

fn mvgsl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvgsl")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = mvgsl(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = mvgsl(args);
    assert!(!out.status.success(), "{args:?} succeeded");
    String::from_utf8(out.stderr).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_dataset(dir: &Path) -> std::path::PathBuf {
    let data = dir.join("data");
    ok(&[
        "synth", "--set", "n=60", "--set", "classes=3", "--set", "vocabulary=60", "--set", "train_per_class=5",
        "--set", "n_val=15", "--set", "n_test=20", "--out", p(&data),
    ]);
    data
}

#[test]
fn learn_merge_classify_by_hand() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let out = ok(&["validate", "--dataset", p(&data)]);
    assert!(out.contains("60 nodes"), "{out}");

    let gat = dir.path().join("gat.adj");
    let glcn = dir.path().join("glcn.adj");
    ok(&["learn", "--dataset", p(&data), "--kind", "gat", "--set", "epochs=5", "--out", p(&gat)]);
    ok(&["learn", "--dataset", p(&data), "--kind", "glcn", "--set", "epochs=5", "--out", p(&glcn)]);
    ok(&["validate", "--graph", p(&gat), "--n", "60"]);

    let merged = dir.path().join("merged.adj");
    let avg = dir.path().join("avg.adj");
    let out = ok(&[
        "merge", "--views", p(&gat), p(&glcn), "--classes", "3", "--k", "5", "--average-out", p(&avg), "--out", p(&merged),
    ]);
    assert!(out.starts_with("merged 2 views"), "{out}");
    assert!(avg.exists());

    let summary = dir.path().join("summary.json");
    let out = ok(&[
        "classify", "--dataset", p(&data), "--graph", p(&merged), "--repetitions", "2", "--set", "learning_rate=0.1",
        "--set", "max_epochs=50", "--out", p(&summary),
    ]);
    assert!(out.starts_with("test accuracy"), "{out}");
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&summary).unwrap()).unwrap();
    assert_eq!(json["accuracies"].as_array().unwrap().len(), 2);

    let spy = dir.path().join("spy.csv");
    ok(&["spy", "--graph", p(&merged), "--dataset", p(&data), "--out", p(&spy)]);
    assert!(std::fs::read_to_string(&spy).unwrap().starts_with("row,col,weight\n"));
}

#[test]
fn pipeline_and_sweep_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let config = dir.path().join("config.json");
    let default = ok(&["config"]);
    let mut v: serde_json::Value = serde_json::from_str(&default).unwrap();
    v["dataset"] = p(&data).into();
    v["output"] = p(&dir.path().join("out")).into();
    v["views"] = serde_json::json!([{"kind": "gat", "train": {"epochs": 5}}, "observed"]);
    std::fs::write(&config, v.to_string()).unwrap();

    let common = ["--config", p(&config), "--set", "repetitions=2", "--set", "gcn.learning_rate=0.1", "--set", "gcn.max_epochs=50"];
    let mut args = vec!["pipeline"];
    args.extend(common);
    args.extend(["--set", "baselines.average=true"]);
    let out = ok(&args);
    assert!(out.contains("test accuracy") && out.contains("average merge"), "{out}");
    assert!(dir.path().join("out/report.json").exists());
    assert!(dir.path().join("out/views/01-observed.adj").exists());

    let mut args = vec!["sweep"];
    args.extend(common);
    args.extend(["--param", "k", "--values", "3,6"]);
    let out = ok(&args);
    assert_eq!(out.lines().count(), 3, "{out}");
    assert!(out.starts_with("value,mean,std,val_mean,error\n3,"));
    assert_eq!(std::fs::read_to_string(dir.path().join("out/sweep.csv")).unwrap(), out);
}

#[test]
fn failures_exit_nonzero_with_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing");
    let err = fails(&["classify", "--dataset", p(&missing)]);
    assert!(err.starts_with("error: load: "), "{err}");

    let err = fails(&["pipeline", "--set", "merge.alpha=-1"]);
    assert!(err.contains("config"), "{err}");

    let err = fails(&["pipeline", "--set", "merge.nope=1"]);
    assert!(err.contains("nope"), "{err}");

    let err = fails(&["sweep", "--param", "beta"]);
    assert!(err.contains("beta"), "{err}");

    let data = small_dataset(dir.path());
    let err = fails(&["merge", "--views", p(&data.join("graph.adj")), "--out", p(&dir.path().join("m.adj"))]);
    assert!(err.contains("--p or --classes"), "{err}");
    let err = fails(&["merge", "--views", p(&data.join("graph.adj")), "--p", "500", "--out", p(&dir.path().join("m.adj"))]);
    assert!(err.starts_with("error: merge: "), "{err}");

    let bad = dir.path().join("bad.adj");
    std::fs::write(&bad, "garbage\n").unwrap();
    let err = fails(&["validate", "--graph", p(&bad)]);
    assert!(err.contains("bad.adj"), "{err}");
}
