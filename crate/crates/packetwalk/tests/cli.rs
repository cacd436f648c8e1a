//! End-to-end tests of the installed binary: exit codes, byte-identical
//! outputs, and the checkpoint lifecycle including a hard kill mid-run.

use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_packetwalk"))
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    binary().args(args).output().expect("binary runs")
}

fn exit_code(output: &Output) -> i32 {
    output.status.code().expect("not killed by a signal")
}

fn read_bytes(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn version_and_help_exit_zero() {
    assert_eq!(exit_code(&run(&["--version"])), 0);
    assert_eq!(exit_code(&run(&["--help"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    let cases: &[&[&str]] = &[
        // Unknown flag.
        &["--packets", "1,1", "--scheme", "replay", "--counts", "x.tsv", "--frobnicate"],
        // Single packet.
        &["--packets", "2", "--scheme", "multilevel", "--lmax", "60", "--samples", "10"],
        // Flag from another scheme.
        &["--packets", "1,1", "--scheme", "multilevel", "--lmax", "60", "--samples", "10", "--l1", "100"],
        // Missing requirement.
        &["--packets", "1,1", "--scheme", "multilevel", "--samples", "10"],
        // Replay must not receive simulation flags.
        &["--packets", "1,1", "--scheme", "replay", "--counts", "x.tsv", "--seed", "7"],
    ];
    for args in cases {
        let output = run(args);
        assert_eq!(exit_code(&output), 1, "args {args:?}");
    }
}

#[test]
fn replay_reports_are_deterministic_and_reference_annotated() {
    let counts = fixture("counts_11.tsv");
    let mut dirs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let output = run(&[
            "--packets",
            "1,1",
            "--scheme",
            "replay",
            "--counts",
            counts.to_str().unwrap(),
            "--kmin-l",
            "1069",
            "--out-dir",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(exit_code(&output), 0, "stderr: {}", String::from_utf8_lossy(&output.stderr));
        let headline = String::from_utf8(output.stdout).unwrap();
        assert!(headline.contains("1.25"), "headline: {headline}");
        dirs.push((dir, headline));
    }
    for name in ["kmin_scan.tsv", "report.json"] {
        assert_eq!(
            read_bytes(dirs[0].0.path(), name),
            read_bytes(dirs[1].0.path(), name),
            "{name} differs between identical runs"
        );
    }
    assert_eq!(dirs[0].1, dirs[1].1, "headlines differ");
    let report = String::from_utf8(read_bytes(dirs[0].0.path(), "report.json")).unwrap();
    assert!(report.contains("\"scheme\": \"replay\""));
    assert!(report.contains("\"formula\": \"5/4\""));
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.tsv");
    // Count rises between levels.
    std::fs::write(&bad, "30\t100\n33\t120\n").unwrap();
    let output = run(&[
        "--packets",
        "1,1",
        "--scheme",
        "replay",
        "--counts",
        bad.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&output), 2);

    let missing = dir.path().join("nothing.tsv");
    let output = run(&[
        "--packets",
        "1,1",
        "--scheme",
        "replay",
        "--counts",
        missing.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&output), 2);
}

#[test]
fn runtime_errors_exit_three() {
    // An output directory that cannot be created.
    let output = run(&[
        "--packets",
        "1,1",
        "--scheme",
        "multilevel",
        "--lmax",
        "40",
        "--samples",
        "10",
        "--out-dir",
        "/dev/null/nested",
    ]);
    assert_eq!(exit_code(&output), 3);

    // A dense grid that cannot fit the stated budget.
    let dir = tempfile::tempdir().unwrap();
    let output = run(&[
        "--packets",
        "1,1",
        "--scheme",
        "multilevel",
        "--lmax",
        "500",
        "--samples",
        "10",
        "--memory-mode",
        "dense",
        "--memory-budget",
        "1000",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(
        exit_code(&output),
        3,
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
}

fn small_multilevel(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "--packets",
        "1,1",
        "--scheme",
        "multilevel",
        "--lmax",
        "60",
        "--samples",
        "3000",
        "--seed",
        "9",
        "--quiet",
        "--out-dir",
        dir.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn multilevel_outputs_are_byte_deterministic() {
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let threaded = tempfile::tempdir().unwrap();
    let one = small_multilevel(first.path(), &[]);
    let two = small_multilevel(second.path(), &[]);
    let three = small_multilevel(threaded.path(), &["--workers", "3"]);
    assert_eq!(exit_code(&one), 0);
    assert_eq!(exit_code(&two), 0);
    assert_eq!(exit_code(&three), 0);
    for name in ["counts.tsv", "kmin_scan.tsv", "report.json"] {
        assert_eq!(
            read_bytes(first.path(), name),
            read_bytes(second.path(), name),
            "{name} differs between reruns"
        );
    }
    assert_eq!(one.stdout, two.stdout);
    // The report echoes its worker count, but the simulation artifacts
    // must not depend on it.
    for name in ["counts.tsv", "kmin_scan.tsv"] {
        assert_eq!(
            read_bytes(first.path(), name),
            read_bytes(threaded.path(), name),
            "{name} depends on the worker count"
        );
    }
    assert_eq!(one.stdout, three.stdout);
}

#[test]
fn twolevel_outputs_are_byte_deterministic_across_workers() {
    let mut outputs = Vec::new();
    for workers in ["1", "3"] {
        let dir = tempfile::tempdir().unwrap();
        let output = run(&[
            "--packets",
            "1,1",
            "--scheme",
            "twolevel",
            "--l1",
            "60",
            "--masters",
            "50",
            "--trials",
            "40",
            "--seed",
            "9",
            "--workers",
            workers,
            "--quiet",
            "--out-dir",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(
            exit_code(&output),
            0,
            "stderr: {}",
            String::from_utf8_lossy(&output.stderr)
        );
        outputs.push((dir, output.stdout));
    }
    for name in ["fractions.tsv", "histogram.tsv"] {
        assert_eq!(
            read_bytes(outputs[0].0.path(), name),
            read_bytes(outputs[1].0.path(), name),
            "{name} depends on the worker count"
        );
    }
    assert_eq!(outputs[0].1, outputs[1].1);
}

fn checkpointed_args(dir: &Path, lmax: &str, resume: bool) -> Vec<String> {
    let mut args: Vec<String> = [
        "--packets",
        "1,1",
        "--scheme",
        "multilevel",
        "--lmax",
        lmax,
        "--samples",
        "40000",
        "--seed",
        "31",
        "--checkpoint-interval",
        "1000",
        "--quiet",
        "--out-dir",
        dir.to_str().unwrap(),
    ]
    .map(str::to_string)
    .to_vec();
    if resume {
        args.push("--resume".to_string());
    }
    args
}

#[test]
fn interrupted_campaign_resumes_bit_exact() {
    // Uninterrupted reference.
    let reference = tempfile::tempdir().unwrap();
    let output = binary()
        .args(checkpointed_args(reference.path(), "120", false))
        .output()
        .unwrap();
    assert_eq!(exit_code(&output), 0);

    // Kill a second run at its first checkpoint, then resume it.
    let interrupted = tempfile::tempdir().unwrap();
    let mut child = binary()
        .args(checkpointed_args(interrupted.path(), "120", false))
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let checkpoint = interrupted.path().join("checkpoint.json");
    let deadline = Instant::now() + Duration::from_secs(60);
    while !checkpoint.exists() {
        assert!(Instant::now() < deadline, "no checkpoint appeared");
        if let Some(status) = child.try_wait().unwrap() {
            panic!("campaign finished before the first checkpoint: {status}");
        }
        std::thread::sleep(Duration::from_millis(10));
    }
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(
        !interrupted.path().join("counts.tsv").exists(),
        "killed run should not have written final outputs"
    );

    let resumed = binary()
        .args(checkpointed_args(interrupted.path(), "120", true))
        .output()
        .unwrap();
    assert_eq!(
        exit_code(&resumed),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&resumed.stderr)
    );
    for name in ["counts.tsv", "kmin_scan.tsv", "report.json"] {
        assert_eq!(
            read_bytes(reference.path(), name),
            read_bytes(interrupted.path(), name),
            "{name} differs after an interrupt and resume"
        );
    }
}

#[test]
fn resume_refuses_corrupt_or_foreign_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let output = binary()
        .args(checkpointed_args(dir.path(), "50", false))
        .output()
        .unwrap();
    assert_eq!(exit_code(&output), 0);
    let checkpoint = dir.path().join("checkpoint.json");
    assert!(checkpoint.exists());

    // Same flags but a different schedule: a foreign campaign.
    let foreign = binary()
        .args(checkpointed_args(dir.path(), "60", true))
        .output()
        .unwrap();
    assert_eq!(exit_code(&foreign), 2);

    // Tamper with the stored progress: the checksum must catch it.
    let text = std::fs::read_to_string(&checkpoint).unwrap();
    let tampered = text.replacen("40000", "40001", 1);
    assert_ne!(text, tampered, "tampering found nothing to change");
    std::fs::write(&checkpoint, tampered).unwrap();
    let corrupt = binary()
        .args(checkpointed_args(dir.path(), "50", true))
        .output()
        .unwrap();
    assert_eq!(exit_code(&corrupt), 2);
}

#[test]
fn memory_budget_env_var_is_honored() {
    // A 1000-byte budget forces sparse grids; the counts must not change.
    let dense_dir = tempfile::tempdir().unwrap();
    let sparse_dir = tempfile::tempdir().unwrap();
    let dense = small_multilevel(dense_dir.path(), &[]);
    assert_eq!(exit_code(&dense), 0);
    let sparse = binary()
        .args([
            "--packets",
            "1,1",
            "--scheme",
            "multilevel",
            "--lmax",
            "60",
            "--samples",
            "3000",
            "--seed",
            "9",
            "--quiet",
            "--out-dir",
            sparse_dir.path().to_str().unwrap(),
        ])
        .env("PACKETWALK_MEMORY_BUDGET", "1000")
        .output()
        .unwrap();
    assert_eq!(exit_code(&sparse), 0);
    assert_eq!(
        read_bytes(dense_dir.path(), "counts.tsv"),
        read_bytes(sparse_dir.path(), "counts.tsv"),
        "grid storage changed the simulation"
    );

    let garbled = binary()
        .args(checkpointed_args(dense_dir.path(), "50", false))
        .env("PACKETWALK_MEMORY_BUDGET", "plenty")
        .output()
        .unwrap();
    assert_eq!(exit_code(&garbled), 1);
}
