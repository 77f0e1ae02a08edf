use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mfmamba(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfmamba"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn small_train(dir: &Path, out: &str, extra: &[&str]) -> Output {
    let mut args = vec![
        "train", "--toy", "2", "--split", "test", "--depth", "2", "--growth", "4", "--set", "max_iters=3", "--out", out,
    ];
    args.extend_from_slice(extra);
    mfmamba(dir, &args)
}

#[test]
fn train_eval_infer_roundtrip() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let o = small_train(d, "run", &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let loss = fs::read_to_string(d.join("run/loss.csv")).unwrap();
    assert!(loss.starts_with("iteration,l1\n1,"));
    assert_eq!(loss.lines().count(), 4);
    assert_eq!(&fs::read(d.join("run/model.mfmb")).unwrap()[..4], b"MFMB");

    let o = mfmamba(d, &["eval", "--checkpoint", "run/model.mfmb", "--data", "run/toy", "--split", "test", "--out", "ev"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = fs::read_to_string(d.join("ev/report.csv")).unwrap();
    assert!(report.starts_with("image_id,psnr,ssim,mse,mae,sam\n"));
    assert_eq!(report.lines().count(), 3);
    assert!(d.join("ev/toy_000_err.png").exists() && d.join("ev/toy_001_err.png").exists());

    let o = mfmamba(d, &["infer", "--checkpoint", "run/model.mfmb", "--input", "run/toy/rgb/toy_000.png", "--output", "x.png"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.join("x.png").exists());
}

#[test]
fn flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("run.cfg"), "# toy run\ndepth = 3\ngrowth = 4\nmax_iters = 1\n").unwrap();
    let o = mfmamba(
        d,
        &["train", "--config", "run.cfg", "--depth", "2", "--toy", "1", "--split", "test", "--out", "a"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    // A checkpoint whose depth disagrees with an explicit flag is refused.
    let o = mfmamba(d, &["eval", "--checkpoint", "a/model.mfmb", "--depth", "3", "--toy", "1", "--out", "b"]);
    assert_eq!(code(&o), 1);
    let o = mfmamba(d, &["eval", "--checkpoint", "a/model.mfmb", "--depth", "2", "--toy", "1", "--split", "test", "--out", "b"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn configuration_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(code(&mfmamba(d, &["train", "--no-such-flag"])), 1);
    assert_eq!(code(&mfmamba(d, &["frobnicate"])), 1);
    assert_eq!(code(&small_train(d, "r", &["--task", "sr_x3"])), 1);
    assert_eq!(code(&small_train(d, "r", &["--patches", "5"])), 1);
    assert_eq!(code(&small_train(d, "r", &["--dirs", "zigzag"])), 1);
    assert_eq!(code(&small_train(d, "r", &["--set", "lr=-1"])), 1);
    assert_eq!(code(&small_train(d, "r", &["--set", "colour=blue"])), 1);
    assert_eq!(code(&mfmamba(d, &["train", "--config", "missing.cfg", "--toy", "1"])), 1);
    assert_eq!(code(&mfmamba(d, &["train"])), 1);
    assert_eq!(code(&mfmamba(d, &["bench-scan", "--lengths", "64,32", "--out", "b"])), 1);
    assert_eq!(code(&mfmamba(d, &["--help"])), 0);
}

#[test]
fn runtime_failures_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(code(&mfmamba(d, &["eval", "--checkpoint", "absent.mfmb", "--toy", "1"])), 2);
    fs::write(d.join("bad.mfmb"), b"NOPE").unwrap();
    assert_eq!(code(&mfmamba(d, &["infer", "--checkpoint", "bad.mfmb", "--input", "in.png"])), 2);
    fs::create_dir_all(d.join("empty/rgb")).unwrap();
    assert_eq!(code(&mfmamba(d, &["train", "--data", "empty", "--depth", "2", "--growth", "4"])), 2);
}

#[test]
fn bench_and_gradcheck_emit_results() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let o = mfmamba(d, &["bench-scan", "--lengths", "64,128", "--runs", "2", "--reps", "2", "--out", "b"]);
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(d.join("b/bench.csv")).unwrap();
    assert!(csv.starts_with("kernel,L,mean_ns,std_ns\n"));
    assert_eq!(csv.lines().count(), 5);

    let o = mfmamba(d, &["gradcheck", "--instances", "1", "--param-samples", "20"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("max rel error"));
}

#[test]
fn ablate_writes_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let o = mfmamba(
        d,
        &[
            "ablate", "--toy", "1", "--split", "test", "--depth", "2", "--growth", "4", "--set", "max_iters=1", "--tables",
            "modules", "--out", "ab",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let md = fs::read_to_string(d.join("ab/ablation.md")).unwrap();
    assert!(md.contains("| w/ MHCB-2 (ours) |"));
    assert_eq!(fs::read_to_string(d.join("ab/ablation.csv")).unwrap().lines().count(), 7);
}
