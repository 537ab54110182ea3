//! End-to-end checks of the `regime-grad` binary: exit codes, output files and
//! their fixed headers.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use regime_grad::harness::{mean, parse_cameras_csv, sample_std, ARMS_CSV_HEADER, CAMS_CSV_HEADER, RUNS_CSV_HEADER};
use regime_grad::scene::scene_from_text;
use regime_grad::train::{EVAL_CSV_HEADER, ITER_CSV_HEADER};

const BIN: &str = env!("CARGO_BIN_EXE_regime-grad");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

#[test]
fn no_arguments_is_a_usage_error() {
    let out = run(&[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_subcommand_or_flag_is_a_usage_error() {
    assert_eq!(run(&["bogus"]).status.code(), Some(2));
    assert_eq!(run(&["gen-scene", "--frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["variance-sim", "--preset", "nope"]).status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_1() {
    let out = run(&["gen-scene", "--set", "no.such.key=1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no.such.key"));
    let out = run(&["gen-cams", "--set", "cams.r_far_min=1.1"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn grad_check_seed_3() {
    let out = run(&["grad-check", "--seed", "3", "--n", "8"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("seed,block,max_rel_err,max_abs_err,coords,pass"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 5);
    for row in rows {
        let f: Vec<&str> = row.split(',').collect();
        assert!(f[2].parse::<f64>().unwrap() < 1e-4, "{row}");
        assert_eq!(f[5], "1");
    }
}

#[test]
fn scalar_toy_preset() {
    let out = run(&["variance-sim", "--preset", "scalar-toy"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("sigma2_w = 1\n"));
    assert!(text.contains("sigma2_b = 25\n"));
    assert!(text.contains("ratio_predicted = 26\n"));
    assert!(text.contains("identity_pass = true\n"));
}

#[test]
fn scene_and_cameras_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene.txt");
    let cams = dir.path().join("cams.csv");
    assert!(run(&["gen-scene", "--seed", "7", "--n", "5", "--out", &path(&scene)])
        .status
        .success());
    assert!(run(&["gen-cams", "--out", &path(&cams)]).status.success());
    let s = scene_from_text(&fs::read_to_string(&scene).unwrap()).unwrap();
    assert_eq!(s.len(), 5);
    let text = fs::read_to_string(&cams).unwrap();
    assert_eq!(text.lines().next(), Some(CAMS_CSV_HEADER));
    let (train, test) = parse_cameras_csv(&text).unwrap();
    assert_eq!((train.len(), test.len()), (16, 8));
    assert!(test.iter().all(|t| train.iter().all(|c| c.id != t.id)));

    let img = dir.path().join("img");
    let out = run(&[
        "render",
        "--scene",
        &path(&scene),
        "--cams",
        &path(&cams),
        "--out",
        &path(&img),
        "--format",
        "ppm",
    ]);
    assert!(out.status.success());
    let ppm = fs::read(img.join("cam0.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6\n32 32\n255\n"));
    assert_eq!(fs::read_dir(&img).unwrap().count(), 24);
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# tiny run\nscene.n = 3\nscene.seed = 11\n").unwrap();
    let a = run(&["gen-scene", "--config", &path(&cfg)]);
    let b = run(&["gen-scene", "--config", &path(&cfg), "--set", "scene.n=4"]);
    let c = run(&["gen-scene", "--config", &path(&cfg), "--n", "4"]);
    let sa = scene_from_text(&String::from_utf8_lossy(&a.stdout)).unwrap();
    let sb = scene_from_text(&String::from_utf8_lossy(&b.stdout)).unwrap();
    assert_eq!(sa.len(), 3);
    assert_eq!(sb.len(), 4);
    assert_eq!(b.stdout, c.stdout);
    fs::write(&cfg, "scene.n 3\n").unwrap();
    let out = run(&["gen-scene", "--config", &path(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}

#[test]
fn train_writes_telemetry_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "train",
        "--seed",
        "3",
        "--set",
        "iterations=50",
        "--set",
        "eval_every=20",
        "--set",
        "sampler=balanced",
        "--out",
        &path(dir.path()),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let iters = fs::read_to_string(dir.path().join("run_iters.csv")).unwrap();
    let mut lines = iters.lines();
    assert_eq!(lines.next(), Some(ITER_CSV_HEADER));
    assert_eq!(lines.count(), 50);
    let evals = fs::read_to_string(dir.path().join("run_evals.csv")).unwrap();
    assert_eq!(evals.lines().next(), Some(EVAL_CSV_HEADER));
    let iters_at: Vec<&str> = evals.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(iters_at, ["0", "20", "40", "50"]);
    let ckpts: Vec<String> = {
        let mut v: Vec<String> = fs::read_dir(dir.path().join("checkpoints"))
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        v.sort();
        v
    };
    assert_eq!(
        ckpts,
        [
            "ckpt_000000.txt",
            "ckpt_000020.txt",
            "ckpt_000040.txt",
            "ckpt_000050.txt"
        ]
    );
    let last = fs::read_to_string(dir.path().join("checkpoints/ckpt_000050.txt")).unwrap();
    assert_eq!(last, fs::read_to_string(dir.path().join("final_scene.txt")).unwrap());
}

#[test]
fn diagnose_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["diagnose", "--out", &path(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("diagnose.csv")).unwrap();
    let blocks: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(csv.lines().next(), Some("block,R,d_hat,conflict_rate"));
    assert_eq!(blocks, ["pos", "scale", "rot", "op", "col"]);
    let v = fs::read_to_string(dir.path().join("variance.txt")).unwrap();
    assert!(v.contains("sigma2_w"));
}

fn parse_opt(s: &str) -> Option<f64> {
    (!s.is_empty()).then(|| s.parse().unwrap())
}

#[test]
fn scenario_report_recomputes_from_run_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "scenario",
        "--set",
        "arms=single@40,r2view@20",
        "--set",
        "seeds=0,1,2",
        "--set",
        "eval_every=10",
        "--out",
        &path(dir.path()),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let runs = fs::read_to_string(dir.path().join("runs.csv")).unwrap();
    assert_eq!(runs.lines().next(), Some(RUNS_CSV_HEADER));
    let rows: Vec<Vec<String>> = runs
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect();
    assert_eq!(rows.len(), 6);
    let arms = fs::read_to_string(dir.path().join("arms.csv")).unwrap();
    assert_eq!(arms.lines().next(), Some(ARMS_CSV_HEADER));
    for line in arms.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let psnr: Vec<f64> = rows
            .iter()
            .filter(|r| r[0] == f[0])
            .map(|r| r[3].parse().unwrap())
            .collect();
        let ssim: Vec<f64> = rows
            .iter()
            .filter(|r| r[0] == f[0])
            .map(|r| r[4].parse().unwrap())
            .collect();
        assert_eq!(f[1].parse::<usize>().unwrap(), psnr.len());
        assert_eq!(f[2].parse::<f64>().unwrap(), mean(&psnr));
        assert_eq!(parse_opt(f[3]), sample_std(&psnr));
        assert_eq!(f[4].parse::<f64>().unwrap(), mean(&ssim));
        assert_eq!(parse_opt(f[5]), sample_std(&ssim));
    }
    let deltas = fs::read_to_string(dir.path().join("deltas.csv")).unwrap();
    assert_eq!(deltas.lines().count(), 2);
    let variance = fs::read_to_string(dir.path().join("variance.csv")).unwrap();
    assert_eq!(variance.lines().count(), 1 + 2 * 3);
    for seed in 0..3 {
        assert!(dir.path().join(format!("runs/r2view@20_seed{seed}_iters.csv")).exists());
    }
}

#[test]
fn thread_cap_is_validated() {
    let out = Command::new(BIN)
        .args(["variance-sim", "--preset", "scalar-toy"])
        .env("REGIME_GRAD_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = Command::new(BIN)
        .args(["variance-sim", "--preset", "scalar-toy"])
        .env("REGIME_GRAD_THREADS", "1")
        .output()
        .unwrap();
    assert!(out.status.success());
}
