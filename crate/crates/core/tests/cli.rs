//! End-to-end checks of the installed binary: exit codes, validate-first
//! ordering, and byte-stable report files.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_domaingap"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn fresh_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("domaingap-cli-tests").join(name);
    if dir.exists() {
        std::fs::remove_dir_all(&dir).unwrap();
    }
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn stderr_text(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn unknown_scheme_reports_a_data_error() {
    let out = run(&["experiment", "run", "--scheme", "H"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_text(&out).contains("error: unknown scheme H"));
}

#[test]
fn unknown_subcommand_is_usage() {
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_dataset_fails_before_any_training() {
    let dir = fresh_dir("missing-data");
    let out_flag = dir.to_str().unwrap();
    let out = run(&[
        "translate",
        "train",
        "--from",
        "clean[1-5]",
        "--to",
        "textured[1-5]",
        "--out",
        out_flag,
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_text(&out).starts_with("error: "));
    // No artifacts: the command died during validation, not mid-training.
    assert!(!dir.join("translator").exists());
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

#[test]
fn gen_gap_and_preprocess_round_trip() {
    let dir = fresh_dir("smoke");
    let out_flag = dir.to_str().unwrap();

    let gen = run(&[
        "toydata", "gen", "--n-images", "4", "--size", "32", "--out", out_flag,
    ]);
    assert_eq!(gen.status.code(), Some(0), "{}", stderr_text(&gen));
    assert!(dir.join("data/clean/rgb/0004.png").exists());
    assert!(dir.join("data/textured/label/0001.png").exists());

    let gap_args = [
        "gap", "report", "--set-a", "clean[1-4]", "--set-b", "textured[1-4]", "--levels", "8",
        "--out", out_flag,
    ];
    let gap = run(&gap_args);
    assert_eq!(gap.status.code(), Some(0), "{}", stderr_text(&gap));
    let stdout = String::from_utf8_lossy(&gap.stdout).into_owned();
    assert!(stdout.contains("mean hue correlation clean[1-4] vs textured[1-4]"));

    let features = read(&dir.join("gap/features.csv"));
    let correlations = read(&dir.join("gap/correlations.csv"));
    let report = read(&dir.join("gap/report.json"));

    // Identical command line must reproduce every report byte.
    let again = run(&gap_args);
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(read(&dir.join("gap/features.csv")), features);
    assert_eq!(read(&dir.join("gap/correlations.csv")), correlations);
    assert_eq!(read(&dir.join("gap/report.json")), report);

    let dest = dir.join("small");
    let pre = run(&[
        "preprocess",
        "--set",
        "clean[1-2]",
        "--dest",
        dest.to_str().unwrap(),
        "--crop",
        "0,0,24,24",
        "--resize",
        "16x16",
        "--out",
        out_flag,
    ]);
    assert_eq!(pre.status.code(), Some(0), "{}", stderr_text(&pre));
    let img = domaingap::imgproc::load_rgb(&dest.join("rgb/0002.png")).unwrap();
    assert_eq!((img.width, img.height), (16, 16));
    let labels =
        domaingap::imgproc::load_labels(&dest.join("label/0002.png"), domaingap::NUM_CLASSES)
            .unwrap();
    assert_eq!((labels.width, labels.height), (16, 16));
}

#[test]
fn gap_report_rejects_bad_levels_with_config_error() {
    let out = run(&["gap", "report", "--set-a", "a", "--set-b", "b", "--levels", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_text(&out).starts_with("error: "));
}
