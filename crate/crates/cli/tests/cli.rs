use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowsandbox"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn gen(dir: &Path, name: &str, scenes: &str, seed: &str) {
    let o = run(dir, &["gen", "--scenes", scenes, "--points", "128", "--seed", seed, "--out", name]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

fn all_row(csv: &str) -> Vec<String> {
    let line = csv.lines().find(|l| l.starts_with("all,")).expect("aggregate row");
    line.split(',').map(str::to_string).collect()
}

#[test]
fn gen_reports_count_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["gen", "--scenes", "3", "--points", "64", "--out", "a.sfsb"]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("scenes=3 mean_flow_norm="));
    run(dir.path(), &["gen", "--scenes", "3", "--points", "64", "--out", "b.sfsb"]);
    let a = std::fs::read(dir.path().join("a.sfsb")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.sfsb")).unwrap());
    assert_eq!(&a[..4], b"SFSB");

    let o = run(dir.path(), &["gen", "--dataset", "multi", "--mechanism", "corr", "--scenes", "2", "--points", "64", "--out", "m.sfsb"]);
    assert!(o.status.success());
}

#[test]
fn zero_baseline_has_unit_zepe() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "v.sfsb", "4", "7");
    let o = run(dir.path(), &["eval", "--data", "v.sfsb", "--baseline", "zero"]);
    assert!(o.status.success());
    let csv = stdout(&o);
    assert!(csv.starts_with("# "));
    assert!(csv.contains("scene,seed,n_points,epe,zepe,acc01,acc005\n"));
    let row = all_row(&csv);
    assert_eq!(row[2], "512");
    assert_eq!(row[4].parse::<f64>().unwrap(), 1.0);

    let o = run(dir.path(), &["eval", "--data", "v.sfsb", "--baseline", "average", "--format", "json", "--out", "r.json"]);
    assert!(o.status.success());
    let json = std::fs::read_to_string(dir.path().join("r.json")).unwrap();
    assert!(json.contains("\"estimator\": \"average\""));
    assert_eq!(json.matches("\"seed\":").count(), 4);
}

#[test]
fn report_lists_every_baseline() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "v.sfsb", "3", "1");
    let o = run(dir.path(), &["report", "--data", "v.sfsb", "--k", "3"]);
    assert!(o.status.success());
    let names: Vec<_> = stdout(&o)
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').next().unwrap().to_string())
        .collect();
    assert_eq!(names, ["zero", "average", "knn3"]);
}

#[test]
fn train_writes_checkpoint_and_log() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "t.sfsb", "4", "0");
    gen(dir.path(), "v.sfsb", "2", "100");
    std::fs::write(
        dir.path().join("exp.toml"),
        "[data]\ntrain = \"t.sfsb\"\nval = \"v.sfsb\"\n[train]\nmethod = \"knn\"\nmin_epochs = 1\nmax_epochs = 2\nbatch_size = 2\n",
    )
    .unwrap();
    let o = run(dir.path(), &["train", "--config", "exp.toml", "--out-dir", "run"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("epoch=")).count(), 2);

    let log = std::fs::read_to_string(dir.path().join("run/log.csv")).unwrap();
    assert!(log.contains("# method = \"knn\""));
    assert!(log.contains("# flow_lr = "));
    assert_eq!(log.lines().filter(|l| !l.starts_with('#')).count(), 3);

    let o = run(dir.path(), &["eval", "--data", "v.sfsb", "--checkpoint", "run/flow.sfnp"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(all_row(&stdout(&o))[4].parse::<f64>().unwrap().is_finite());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| run(dir.path(), args).status.code().unwrap();
    assert_eq!(code(&["eval", "--data", "missing.sfsb", "--baseline", "zero"]), 1);
    assert_eq!(code(&["bogus"]), 2);
    assert_eq!(code(&["eval", "--data", "x"]), 2);
    assert_eq!(code(&["gen", "--scenes", "0", "--out", "z.sfsb"]), 2);
    assert_eq!(code(&["gen", "--points", "1", "--pool-size", "0", "--out", "z.sfsb"]), 2);

    std::fs::write(dir.path().join("junk.sfsb"), b"SFSB\x01garbage").unwrap();
    assert_eq!(code(&["eval", "--data", "junk.sfsb", "--baseline", "zero"]), 1);
    std::fs::write(dir.path().join("junk.sfnp"), b"nope").unwrap();
    gen(dir.path(), "v.sfsb", "1", "0");
    assert_eq!(code(&["eval", "--data", "v.sfsb", "--checkpoint", "junk.sfnp"]), 1);
    assert_eq!(code(&["eval", "--data", "v.sfsb", "--baseline", "knn", "--k", "0"]), 2);

    std::fs::write(dir.path().join("bad.toml"), "[train]\nbatch = 3\n").unwrap();
    assert_eq!(code(&["train", "--config", "bad.toml", "--out-dir", "o"]), 2);
    std::fs::write(dir.path().join("nodata.toml"), "[data]\ntrain = \"absent.sfsb\"\nval = \"v.sfsb\"\n").unwrap();
    let o = run(dir.path(), &["train", "--config", "nodata.toml", "--out-dir", "o"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!stdout(&o).contains("epoch="));
    assert!(!dir.path().join("o").exists());
    assert_eq!(code(&["--threads", "0", "verify"]), 2);
}

#[test]
fn verify_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["verify"]);
    let out = stdout(&o);
    assert!(o.status.success(), "{out}");
    assert!(out.trim_end().ends_with(" 0 failed"));
    assert!(out.lines().any(|l| l.starts_with("PASS")));
}
