//! End-to-end runs of the `lowprec` binary on small datasets.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lowprec_core::ensemble::read_ensemble;

fn lowprec(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lowprec"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = lowprec(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const SMALL_DATA: &[&str] = &[
    "--n", "10", "--width", "24", "--height", "24", "--radius-min", "2", "--radius-max", "3",
];
const SMALL_NET: &[&str] = &["--m", "3", "--epochs", "2", "--hidden", "2"];

fn gen(dir: &Path, out: &str) {
    let mut args = vec!["gen-data", "--out", out];
    args.extend_from_slice(SMALL_DATA);
    ok(&args, dir);
}

fn train(dir: &Path, data: &str, out: &str, extra: &[&str]) -> String {
    let mut args = vec!["train-pool", "--data", data, "--out", out];
    args.extend_from_slice(SMALL_NET);
    args.extend_from_slice(extra);
    ok(&args, dir)
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out: Vec<(PathBuf, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn version_lists_formats() {
    let tmp = tempfile::tempdir().unwrap();
    let text = ok(&["--version"], tmp.path());
    assert!(text.starts_with(&format!("lowprec {}", lowprec_core::VERSION)));
    assert!(text.contains("LPGRID v1") && text.contains("LPMODEL v1"));
}

#[test]
fn usage_errors_exit_one_with_json_line() {
    let tmp = tempfile::tempdir().unwrap();
    for args in [
        vec!["gen-data", "--n", "0", "--out", "d"],
        vec!["gen-data", "--out", "d", "--bogus"],
        vec!["gen-data", "--out", "d", "--train", "3"],
        vec![],
    ] {
        let out = lowprec(&args, tmp.path());
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        let line = String::from_utf8(out.stderr).unwrap();
        let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
        assert_eq!(v["error"], "usage");
        assert_eq!(v["exit_code"], 1);
    }
    assert!(!tmp.path().join("d").exists());
}

#[test]
fn missing_inputs_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = lowprec(&["evaluate", "--data", "absent", "--pool", "absent"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    gen(tmp.path(), "d");
    fs::write(tmp.path().join("d/scene_0.gt.lpg"), b"LPGRID v1 MASK 24 24\n").unwrap();
    let out = lowprec(&["diversity", "--data", "d", "--pool", "p"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gen_data_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path(), "a");
    gen(tmp.path(), "b");
    let a = files(&tmp.path().join("a"));
    assert_eq!(a.len(), 2 * 10 + 1);
    assert_eq!(a, files(&tmp.path().join("b")));
    let mut args = vec!["gen-data", "--out", "c", "--seed", "8"];
    args.extend_from_slice(SMALL_DATA);
    ok(&args, tmp.path());
    assert_ne!(a, files(&tmp.path().join("c")));
}

#[test]
fn pool_modes_record_beta() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path(), "d");
    train(tmp.path(), "d", "base", &["--mode", "baseline"]);
    train(tmp.path(), "d", "fixed", &["--mode", "lowprec-fixed", "--beta", "0.95"]);
    train(tmp.path(), "d", "rand", &["--mode", "lowprec-random", "--beta-lo", "0.9", "--beta-hi", "1.0"]);
    let betas = |p: &str| -> Vec<f64> {
        read_ensemble(tmp.path().join(p))
            .unwrap()
            .members
            .iter()
            .map(|m| m.provenance.beta_used.unwrap())
            .collect()
    };
    assert_eq!(betas("base"), vec![0.5; 3]);
    assert_eq!(betas("fixed"), vec![0.95; 3]);
    let r = betas("rand");
    assert!(r.iter().all(|b| (0.9..1.0).contains(b)));
    assert!(r[0] != r[1] && r[1] != r[2]);
    assert_eq!(read_ensemble(tmp.path().join("base")).unwrap().config.threshold, 0.5);
    assert_eq!(read_ensemble(tmp.path().join("rand")).unwrap().config.threshold, 0.9);
}

#[test]
fn pool_training_resumes() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path(), "d");
    let first = train(tmp.path(), "d", "p", &[]);
    assert!(first.contains("3 trained, 0 reused"), "{first}");
    let before = files(&tmp.path().join("p"));
    let again = train(tmp.path(), "d", "p", &[]);
    assert!(again.contains("0 trained, 3 reused"), "{again}");
    fs::remove_file(tmp.path().join("p/member_1.lpm")).unwrap();
    fs::write(tmp.path().join("p/member_2.lpm"), b"garbage").unwrap();
    let resumed = train(tmp.path(), "d", "p", &[]);
    assert!(resumed.contains("2 trained, 1 reused"), "{resumed}");
    assert_eq!(before, files(&tmp.path().join("p")));
    // A different seed means different members: nothing is reused.
    let reseeded = train(tmp.path(), "d", "p", &["--seed", "99"]);
    assert!(reseeded.contains("3 trained, 0 reused"), "{reseeded}");
}

#[test]
fn predictions_on_disk_reproduce_evaluation() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path(), "d");
    train(tmp.path(), "d", "p", &["--mode", "baseline"]);
    ok(&["predict", "--data", "d", "--pool", "p", "--out", "pred"], tmp.path());
    let direct = ok(&["evaluate", "--data", "d", "--pool", "p"], tmp.path());
    let stored = ok(&["evaluate", "--data", "d", "--pred-dir", "pred"], tmp.path());
    assert_eq!(direct, stored);
    let explicit = ok(&["evaluate", "--data", "d", "--pool", "p", "--threshold", "0.5"], tmp.path());
    assert_eq!(direct, explicit);
    assert_eq!(direct.lines().count(), 1 + 2 + 1);
    assert!(tmp.path().join("pred/scene_8.prob.lpg").exists());
    assert!(tmp.path().join("pred/scene_9.mask.lpg").exists());

    let div = ok(&["diversity", "--data", "d", "--pool", "p"], tmp.path());
    assert!(div.starts_with("scene,pairs,tp_sim,fp_sim,allpos_sim"));
    assert!(div.lines().last().unwrap().starts_with("mean,3,"));
}

#[test]
fn sweep_outputs_and_errors() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path(), "d");
    train(tmp.path(), "d", "p", &[]);
    let sweep = |out: &str| {
        ok(
            &["sweep-k", "--data", "d", "--pool", "p", "--pool", "again=p", "--k-values", "1,2,3",
              "--repetitions", "4", "--out", out],
            tmp.path(),
        )
    };
    sweep("s1");
    sweep("s2");
    assert_eq!(files(&tmp.path().join("s1")), files(&tmp.path().join("s2")));
    let csv = fs::read_to_string(tmp.path().join("s1/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 3 * 4);
    assert!(csv.lines().nth(1).unwrap().starts_with("lowprec-random,1,0,"));
    let summary = fs::read_to_string(tmp.path().join("s1/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 2 * 3);
    let svg = fs::read_to_string(tmp.path().join("s1/sweep.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("again"));

    let out = lowprec(
        &["sweep-k", "--data", "d", "--pool", "p", "--k-values", "4", "--out", "s3"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    let out = lowprec(
        &["sweep-k", "--data", "d", "--pool", "p", "--pool", "p", "--k-values", "1", "--out", "s3"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_file_supplies_flags() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("run.toml"),
        "data = \"d\"\n[gen-data]\nout = \"d\"\nn = 10\nwidth = 24\nheight = 24\nradius_min = 2\nradius_max = 3\n\
         [train-pool]\nout = \"p\"\nm = 2\nepochs = 1\nhidden = 2\nmode = \"lowprec-fixed\"\nbeta = 0.97\n",
    )
    .unwrap();
    ok(&["gen-data", "--config", "run.toml"], tmp.path());
    assert!(tmp.path().join("d/scene_9.img.lpg").exists());
    ok(&["--config", "run.toml", "train-pool", "--beta", "0.91"], tmp.path());
    let pool = read_ensemble(tmp.path().join("p")).unwrap();
    assert_eq!(pool.members.len(), 2);
    assert_eq!(pool.members[0].provenance.beta_used, Some(0.91));

    fs::write(tmp.path().join("bad.json"), "{\"no_such_flag\": 1}").unwrap();
    let out = lowprec(&["gen-data", "--config", "bad.json", "--out", "x"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
}
