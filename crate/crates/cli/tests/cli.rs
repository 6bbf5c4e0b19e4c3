use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pbpm(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pbpm"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = pbpm(out, args);
    assert!(
        o.status.success(),
        "pbpm {args:?} failed:\n{}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = pbpm(dir.path(), &["synth", "--profile", "bpic-like", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    let o = pbpm(dir.path(), &["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn smoke_path_synth_tune_evaluate_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(out, &["synth", "--profile", "bpic-like", "--seed", "7", "--cases", "150"]);
    let args = [
        "tune", "--variant", "MB", "--R", "3", "--eta", "3", "--space", "desk", "--max-trials", "4",
    ];
    ok(out, &args);
    for f in ["runs/MB/trials.tsv", "runs/MB/model.ckpt", "runs/MB/best.json", "data/MB/train.bin"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let text = ok(out, &["evaluate", "--variant", "MB", "--split", "val"]);
    assert!(text.contains("support") && text.contains("cancel"), "{text}");
    assert!(out.join("runs/MB/report_val.json").exists());
    let text = ok(out, &["report"]);
    assert!(text.contains("M-B-LSTM"), "{text}");
    let manifest = fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("runs/MB/trials.tsv"));

    // Rerunning with the same inputs reproduces every artifact byte for byte.
    let before = fs::read(out.join("runs/MB/trials.tsv")).unwrap();
    let ckpt = fs::read(out.join("runs/MB/model.ckpt")).unwrap();
    ok(out, &args);
    assert_eq!(fs::read(out.join("runs/MB/trials.tsv")).unwrap(), before);
    assert_eq!(fs::read(out.join("runs/MB/model.ckpt")).unwrap(), ckpt);
}

#[test]
fn duration_variant_without_end_times_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src");
    fs::create_dir_all(&src).unwrap();
    let mut csv = String::from("case,activity,time,outcome\n");
    for c in 0..20 {
        let outcome = if c % 2 == 0 { "yes" } else { "no" };
        for (i, act) in ["a", "b", if c % 2 == 0 { "c" } else { "d" }].iter().enumerate() {
            csv.push_str(&format!("{c},{act},{},{outcome}\n", 1000 * c + 60 * i));
        }
    }
    fs::write(src.join("log.csv"), csv).unwrap();
    fs::write(
        src.join("log.toml"),
        "outcome_labels = [\"yes\", \"no\"]\n\n[columns]\ncase_id = \"case\"\nactivity = \"activity\"\nstart = \"time\"\noutcome = \"outcome\"\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    ok(
        &out,
        &[
            "ingest",
            "--log",
            src.join("log.csv").to_str().unwrap(),
            "--config",
            src.join("log.toml").to_str().unwrap(),
        ],
    );
    let o = pbpm(&out, &["tune", "--variant", "D", "--R", "3"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("completion timestamps"), "{err}");
}

#[test]
fn out_dir_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_pbpm"))
        .env("PBPM_OUT_DIR", dir.path())
        .args(["synth", "--profile", "patients-like", "--cases", "100"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("log/log.csv").exists());
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn featurize_and_train_text_variant() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(out, &["synth", "--profile", "patients-like", "--seed", "3", "--cases", "120"]);
    ok(out, &["featurize", "--table", "patients"]);
    ok(out, &["embed", "--binning", "patients"]);
    assert!(out.join("embed/bin_train.tsv").exists());
    let text = ok(out, &["train", "--variant", "T", "--units", "8", "--dense-units", "8", "--epochs", "2"]);
    assert!(text.contains("T-LSTM"), "{text}");
    ok(out, &["evaluate", "--variant", "T"]);
    let o = pbpm(out, &["evaluate", "--variant", "B"]);
    assert_eq!(o.status.code(), Some(1));
}
