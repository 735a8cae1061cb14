//! End-to-end checks of the `de-harness` binary: a run/aggregate round
//! trip on a small grid experiment, the verification subcommands, the
//! census, and error reporting for bad inputs.

use std::path::Path;
use std::process::{Command, Output};

fn harness() -> Command {
    Command::new(env!("CARGO_BIN_EXE_de-harness"))
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_small_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("small.conf");
    std::fs::write(
        &path,
        "# three-iteration smoke experiment\n\
         domain = gridworld\n\
         d = 3\n\
         n = 20\n\
         r = 2\n\
         es_generations = 6\n\
         es_population = 8\n",
    )
    .unwrap();
    path
}

#[test]
fn run_then_aggregate_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_small_config(tmp.path());
    let out_root = tmp.path().join("runs");

    for algo in ["de", "spi"] {
        let out = harness()
            .args(["run", "--config"])
            .arg(&config)
            .args(["--algo", algo, "--seeds", "0..2", "--out"])
            .arg(&out_root)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", stderr(&out));
        let text = stdout(&out);
        assert_eq!(
            text.lines()
                .filter(|l| l.starts_with("run=") && l.contains(&format!("algo={algo}")))
                .count(),
            2,
            "{text}"
        );
        assert!(text.contains("config hash"), "{text}");
    }

    assert!(out_root.join("config.echo").is_file());
    for dir in ["de-seed00000", "de-seed00001", "spi-seed00000", "spi-seed00001"] {
        for file in ["iterations.csv", "summary.csv", "trajectories.txt"] {
            assert!(
                out_root.join(dir).join(file).is_file(),
                "missing {dir}/{file}"
            );
        }
    }

    let out = harness()
        .arg("aggregate")
        .arg("--out")
        .arg(&out_root)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("merged 12 iteration rows from 4 runs"), "{text}");
    assert!(text.contains("de:") && text.contains("spi:"), "{text}");
    assert!(text.contains("paired de-spi"), "{text}");
    assert!(out_root.join("comparison.csv").is_file());
    assert!(out_root.join("iterations.csv").is_file());
    assert!(out_root.join("summary.csv").is_file());
}

#[test]
fn repeated_runs_are_bitwise_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_small_config(tmp.path());
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out_root = tmp.path().join(name);
        let out = harness()
            .args(["run", "--config"])
            .arg(&config)
            .args(["--algo", "de", "--seeds", "5..6", "--out"])
            .arg(&out_root)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", stderr(&out));
        outputs.push(
            std::fs::read(out_root.join("de-seed00005/iterations.csv")).unwrap(),
        );
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn verify_theory_reports_three_checks() {
    let out = harness()
        .args(["verify-theory", "--trials", "100"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    for check in ["lemma1: PASS", "theorem1: PASS", "theorem2: PASS"] {
        assert!(text.contains(check), "{text}");
    }
}

#[test]
fn verify_ope_reports_three_checks() {
    let out = harness()
        .args(["verify-ope", "--samples", "3000", "--trials", "800"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    for check in ["unbiasedness: PASS", "coverage: PASS", "fdr: PASS"] {
        assert!(text.contains(check), "{text}");
    }
}

#[test]
fn census_reports_the_optimal_count_and_histogram() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("census.csv");
    let out = harness()
        .arg("enumerate-gridworld")
        .arg("--out")
        .arg(&csv)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("optimal_policies=64"));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("quality,diversity_count"));
    assert_eq!(lines.next(), Some("0,64"));
}

#[test]
fn bad_inputs_fail_with_named_causes() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_small_config(tmp.path());

    let out = harness()
        .args(["run", "--config"])
        .arg(&config)
        .args(["--algo", "both", "--seeds", "0..1", "--out"])
        .arg(tmp.path().join("x"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(stderr(&out).contains("both"), "{}", stderr(&out));

    let out = harness()
        .args(["run", "--config"])
        .arg(&config)
        .args(["--algo", "de", "--seeds", "3..3", "--out"])
        .arg(tmp.path().join("x"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(stderr(&out).contains("seed range"), "{}", stderr(&out));

    let bad = tmp.path().join("bad.conf");
    std::fs::write(&bad, "domain = gridworld\nbogus = 1\n").unwrap();
    let out = harness()
        .args(["run", "--config"])
        .arg(&bad)
        .args(["--algo", "de", "--seeds", "0..1", "--out"])
        .arg(tmp.path().join("x"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(stderr(&out).contains("bogus"), "{}", stderr(&out));
}
