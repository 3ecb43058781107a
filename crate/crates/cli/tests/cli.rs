use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn orbitmart(args: &[&str], stdin: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_orbitmart"))
        .args(args)
        .env_remove("ORBITMART_SEED")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("spawn orbitmart");
    child
        .stdin
        .take()
        .unwrap()
        .write_all(stdin.as_bytes())
        .unwrap();
    child.wait_with_output().unwrap()
}

fn records(out: &Output) -> Vec<serde_json::Value> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn scalar_lines(values: impl IntoIterator<Item = f64>) -> String {
    values
        .into_iter()
        .map(|v| format!("{{\"value\":{v}}}\n"))
        .collect()
}

#[test]
fn uniform_calibrator_never_moves() {
    let input = scalar_lines((0..40).map(|i| ((i * 37) % 11) as f64));
    let out = orbitmart(
        &["test", "--group", "perm", "--calibrator", "power:1"],
        &input,
    );
    assert_eq!(out.status.code(), Some(0));
    let recs = records(&out);
    assert_eq!(recs.len(), 40);
    for (i, r) in recs.iter().enumerate() {
        assert_eq!(r["n"], i + 1);
        assert_eq!(r["log10_wealth"].as_f64(), Some(0.0));
    }
}

#[test]
fn circle_example() {
    let out = orbitmart(
        &["test", "--group", "sphere", "--seed", "5"],
        "{\"value\":1}\n{\"value\":1}\n",
    );
    assert_eq!(out.status.code(), Some(0));
    let recs = records(&out);
    assert!((recs[1]["r"].as_f64().unwrap() - 0.25).abs() < 1e-12);
}

#[test]
fn empty_input() {
    let out = orbitmart(&["test", "--group", "perm"], "");
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
}

#[test]
fn numbers_carry_seventeen_digits() {
    let out = orbitmart(&["test", "--group", "perm"], "{\"value\":0.3}\n");
    let line = String::from_utf8(out.stdout).unwrap();
    let theta = line
        .split("\"theta\":")
        .nth(1)
        .unwrap()
        .split(',')
        .next()
        .unwrap();
    let mantissa = theta.split('e').next().unwrap().replace(['.', '-'], "");
    assert_eq!(mantissa.len(), 17, "{theta}");
}

#[test]
fn malformed_line_reports_line_number() {
    let out = orbitmart(
        &["test", "--group", "perm"],
        "{\"value\":1}\n{\"value\":2}\nnot json\n",
    );
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(records(&out).len(), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn payload_mismatch_is_an_input_error() {
    let out = orbitmart(&["test", "--group", "perm"], "{\"value\":1,\"label\":0}\n");
    assert_eq!(out.status.code(), Some(2));
    let out = orbitmart(
        &["test", "--group", "isotropy:2"],
        "{\"value\":1,\"covariates\":[1]}\n",
    );
    assert_eq!(out.status.code(), Some(2));
    let out = orbitmart(&["test", "--group", "perm-label:2"], "{\"value\":1}\n");
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_flags_are_usage_errors() {
    assert_eq!(
        orbitmart(&["test", "--group", "cube"], "").status.code(),
        Some(2)
    );
    assert_eq!(
        orbitmart(&["test", "--group", "perm", "--calibrator", "power:2"], "")
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        orbitmart(&["test", "--group", "perm", "--alpha", "1.5"], "")
            .status
            .code(),
        Some(2)
    );
}

/// A strongly trending stream: every new value is the largest so far, so the
/// ranks pile up near zero.
fn trending(n: usize) -> String {
    scalar_lines((0..n).map(|i| i as f64))
}

#[test]
fn rejection_exit_code_and_continued_monitoring() {
    let out = orbitmart(&["test", "--group", "perm", "--seed", "2"], &trending(60));
    assert_eq!(out.status.code(), Some(3));
    let recs = records(&out);
    assert_eq!(recs.len(), 60);
    let first = recs.iter().position(|r| r["rejected"] == true).unwrap();
    assert!(recs[first..].iter().all(|r| r["rejected"] == true));

    let out = orbitmart(
        &["test", "--group", "perm", "--seed", "2", "--stop-on-reject"],
        &trending(60),
    );
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(records(&out).len(), first + 1);
}

#[test]
fn seed_comes_from_the_environment() {
    let run = |env: Option<&str>, flag: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_orbitmart"));
        cmd.args(["test", "--group", "perm"]);
        if let Some(s) = flag {
            cmd.args(["--seed", s]);
        }
        match env {
            Some(s) => cmd.env("ORBITMART_SEED", s),
            None => cmd.env_remove("ORBITMART_SEED"),
        };
        let mut child = cmd
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .unwrap();
        child
            .stdin
            .take()
            .unwrap()
            .write_all(b"{\"value\":1}\n")
            .unwrap();
        child.wait_with_output().unwrap().stdout
    };
    assert_eq!(run(Some("17"), None), run(None, Some("17")));
    assert_ne!(run(Some("17"), None), run(None, None));
    assert_eq!(run(Some("3"), Some("17")), run(None, Some("17")));
}

#[test]
fn joint_mode() {
    let input: String = (0..30)
        .map(|i| {
            format!(
                "{{\"values\":[{},{}]}}\n",
                i as f64 * 0.1,
                (i * 7 % 5) as f64
            )
        })
        .collect();
    let out = orbitmart(
        &[
            "test",
            "--group",
            "perm",
            "--joint",
            "2",
            "--calibrator",
            "histkd:4:1",
        ],
        &input,
    );
    assert!(matches!(out.status.code(), Some(0) | Some(3)));
    let recs = records(&out);
    assert_eq!(recs.len(), 30);
    assert_eq!(recs[0]["r"].as_array().unwrap().len(), 2);
    assert_eq!(recs[0]["theta"].as_array().unwrap().len(), 2);

    let out = orbitmart(
        &["test", "--group", "perm", "--joint", "2"],
        "{\"values\":[1,2,3]}\n",
    );
    assert_eq!(out.status.code(), Some(2));
    let out = orbitmart(
        &["test", "--group", "perm", "--joint", "2"],
        "{\"value\":1}\n",
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn large_grids_warn() {
    let out = orbitmart(
        &[
            "test",
            "--group",
            "perm",
            "--joint",
            "3",
            "--calibrator",
            "histkd:101:1",
        ],
        "",
    );
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
}

#[test]
fn replay_reproduces_wealth_bit_exactly() {
    for (args, input, replay) in [
        (
            vec![
                "test",
                "--group",
                "perm",
                "--calibrator",
                "hist:10:0.5",
                "--seed",
                "9",
            ],
            trending(25) + &scalar_lines((0..25).map(|i| ((i * 13) % 7) as f64 - 3.1)),
            vec!["replay", "--calibrator", "hist:10:0.5"],
        ),
        (
            vec!["test", "--group", "sphere", "--seed", "4"],
            scalar_lines((1..40).map(|i| (i as f64).sin())),
            vec!["replay"],
        ),
        (
            vec![
                "test",
                "--group",
                "perm",
                "--joint",
                "2",
                "--calibrator",
                "histkd:3:1",
            ],
            (0..30)
                .map(|i| format!("{{\"values\":[{},{}]}}\n", (i as f64).cos(), i as f64))
                .collect(),
            vec!["replay", "--calibrator", "histkd:3:1", "--joint", "2"],
        ),
    ] {
        let out = orbitmart(&args, &input);
        let recorded = String::from_utf8(out.stdout).unwrap();
        let rep = orbitmart(&replay, &recorded);
        assert_eq!(
            rep.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&rep.stderr)
        );
        assert!(String::from_utf8_lossy(&rep.stdout).contains("mismatches 0"));
    }
    // a tampered record is caught
    let out = orbitmart(
        &["test", "--group", "perm", "--calibrator", "power:0.5"],
        &trending(5),
    );
    let mut recs = records(&out);
    let w = recs[2]["log10_wealth"].as_f64().unwrap();
    recs[2]["log10_wealth"] = serde_json::json!(w + 1e-9);
    let tampered: String = recs.iter().map(|r| format!("{r}\n")).collect();
    let rep = orbitmart(&["replay", "--calibrator", "power:0.5"], &tampered);
    assert_eq!(rep.status.code(), Some(1));
}

fn write_scenario(dir: &Path, text: &str) -> String {
    let path = dir.join("scenario.txt");
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

const SMALL_NULL: &str =
    "group = perm\ngenerator = iid_gaussian\nhorizon = 60\nreplications = 12\nseed = 3\n";

#[test]
fn simulate_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), SMALL_NULL);
    let out_dir = dir.path().join("out");
    let out = orbitmart(
        &[
            "simulate",
            "--scenario",
            &scenario,
            "--out",
            out_dir.to_str().unwrap(),
        ],
        "",
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["replications"], 12);
    assert!(
        report["crossing_frequency"].as_f64().unwrap()
            <= report["crossing_bound"].as_f64().unwrap()
    );
    let traj = std::fs::read_to_string(out_dir.join("trajectories.csv")).unwrap();
    assert_eq!(traj.lines().count(), 61);
    let reps = std::fs::read_to_string(out_dir.join("replications.csv")).unwrap();
    assert_eq!(reps.lines().count(), 13);
}

#[test]
fn simulate_rejects_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = orbitmart(
        &[
            "simulate",
            "--scenario",
            "/nonexistent/scenario",
            "--out",
            out_dir.to_str().unwrap(),
        ],
        "",
    );
    assert_eq!(out.status.code(), Some(2));
    let bad = write_scenario(
        dir.path(),
        "group = perm\ngenerator = teleport\nhorizon = 5\n",
    );
    let out = orbitmart(
        &[
            "simulate",
            "--scenario",
            &bad,
            "--out",
            out_dir.to_str().unwrap(),
        ],
        "",
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn selfcheck_passes_and_is_deterministic() {
    let a = orbitmart(&["selfcheck"], "");
    assert_eq!(
        a.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&a.stdout)
    );
    let b = orbitmart(&["selfcheck"], "");
    assert_eq!(a.stdout, b.stdout);
    assert!(String::from_utf8_lossy(&a.stdout).contains("PASS"));
}
