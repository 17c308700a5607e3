use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dlen_core::checkpoint::encode_checkpoint;
use dlen_core::{DlenConfig, DlenModel};

fn dlen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dlen"))
        .args(args)
        .env_remove("DLEN_SEED")
        .output()
        .expect("spawn dlen")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
}

fn synth(dir: &Path, n: usize, size: usize) {
    ok(&dlen(&[
        "synth",
        "--procedural",
        &n.to_string(),
        "--size",
        &size.to_string(),
        "--out",
        dir.to_str().unwrap(),
        "--seed",
        "3",
    ]));
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = dlen(&["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_dataset_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dlen(&[
        "train",
        "--data-dir",
        tmp.path().join("nope").to_str().unwrap(),
        "--out",
        tmp.path().join("m.bin").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn zero_iterations_saves_initial_model() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 2, 32);
    let ckpt = tmp.path().join("m.bin");
    ok(&dlen(&[
        "train",
        "--data-dir",
        data.to_str().unwrap(),
        "--out",
        ckpt.to_str().unwrap(),
        "--iters",
        "0",
        "--width",
        "8",
        "--crop",
        "32",
        "--seed",
        "11",
    ]));
    let mut cfg = DlenConfig::new(8);
    cfg.train_h = 32;
    cfg.train_w = 32;
    let expect = encode_checkpoint(&DlenModel::<f32>::init(cfg, 11).unwrap());
    assert!(fs::read(&ckpt).unwrap() == expect);
}

#[test]
fn seed_falls_back_to_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 2, 32);
    let run = |name: &str, seed_env: Option<&str>, seed_flag: Option<&str>| {
        let ckpt = tmp.path().join(name);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_dlen"));
        cmd.env_remove("DLEN_SEED");
        if let Some(s) = seed_env {
            cmd.env("DLEN_SEED", s);
        }
        cmd.args(["train", "--iters", "0", "--width", "8", "--crop", "32", "--data-dir"])
            .arg(&data)
            .arg("--out")
            .arg(&ckpt);
        if let Some(s) = seed_flag {
            cmd.args(["--seed", s]);
        }
        ok(&cmd.output().unwrap());
        fs::read(ckpt).unwrap()
    };
    let from_env = run("a.bin", Some("5"), None);
    let from_flag = run("b.bin", None, Some("5"));
    let default = run("c.bin", None, None);
    assert!(from_env == from_flag);
    assert!(from_env != default);
}

#[test]
fn fresh_model_output_is_the_brightened_input() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 1, 24);
    let ckpt = tmp.path().join("m.bin");
    ok(&dlen(&[
        "train",
        "--data-dir",
        data.to_str().unwrap(),
        "--out",
        ckpt.to_str().unwrap(),
        "--iters",
        "0",
        "--width",
        "8",
        "--crop",
        "24",
    ]));
    let low = fs::read_dir(data.join("low")).unwrap().next().unwrap().unwrap().path();
    let dump = tmp.path().join("dump");
    ok(&dlen(&[
        "enhance",
        "--model",
        ckpt.to_str().unwrap(),
        "--input",
        low.to_str().unwrap(),
        "--output",
        tmp.path().join("out.ppm").to_str().unwrap(),
        "--dump-intermediates",
        dump.to_str().unwrap(),
    ]));
    let stem = low.file_stem().unwrap().to_string_lossy();
    let text = fs::read_to_string(dump.join(format!("{stem}.residuals.txt"))).unwrap();
    assert!(text.contains("max_abs_i_en_minus_i_lu=0\n"), "{text}");
    for part in ["i_lu", "i_flb", "i_feb", "l_tilde"] {
        assert!(dump.join(format!("{stem}.{part}.ppm")).is_file());
    }
}

#[test]
fn gradcheck_and_selftest_pass() {
    let out = dlen(&["gradcheck", "--seed", "4", "--model-coords", "4"]);
    ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("PASS") && !stdout.contains("FAIL"), "{stdout}");
    ok(&dlen(&["selftest", "--seed", "4"]));
}
