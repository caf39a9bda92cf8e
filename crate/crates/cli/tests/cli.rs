use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gini-cov"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn matrix(o: &Output) -> Vec<f64> {
    let v: Value = serde_json::from_str(&stdout(o)).unwrap();
    v["matrix"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn draw(dir: &Path, name: &str, extra: &[&str]) -> String {
    let p = dir.join(name).to_str().unwrap().to_string();
    let mut args = vec!["sample", "--output", &p];
    args.extend_from_slice(extra);
    let o = run(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    p
}

#[test]
fn gcm_of_two_points() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "x.csv", "x,y\n0,0\n3,4\n");
    let o = run(&["estimate", "--estimator", "gcm", "--input", &input]);
    assert!(o.status.success());
    let m = matrix(&o);
    let want = [9.0 / 5.0, 12.0 / 5.0, 12.0 / 5.0, 16.0 / 5.0];
    for (a, b) in m.iter().zip(want) {
        assert!((a - b).abs() < 1e-12);
    }
    let o = run(&["gmd", "--input", &input]);
    assert_eq!(stdout(&o).trim().parse::<f64>().unwrap(), 5.0);
}

#[test]
fn tr_gini_on_a_large_normal_sample() {
    let dir = tempfile::tempdir().unwrap();
    let input = draw(
        dir.path(),
        "x.csv",
        &[
            "--family", "normal", "--d", "2", "--n", "10000", "--seed", "3",
        ],
    );
    let o = run(&["estimate", "--estimator", "tr-gini", "--input", &input]);
    assert!(o.status.success());
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["converged"], true);
    assert_eq!(v["n"], 10000);
    let m = matrix(&o);
    for (k, want) in [1.0, 0.0, 0.0, 1.0].iter().enumerate() {
        assert!((m[k] - want).abs() < 0.03, "{m:?}");
    }
    let o = run(&["shape", "--estimator", "tr-gini", "--input", &input]);
    let s = matrix(&o);
    assert!((s[0] + s[3] - 2.0).abs() < 1e-12);
}

#[test]
fn location_rules() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "x.csv", "1,2\n3,1\n0,0\n2,5\n4,4\n");
    let o = run(&["estimate", "--estimator", "tyler", "--input", &input]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&[
        "estimate",
        "--estimator",
        "gcm",
        "--location",
        "0,0",
        "--input",
        &input,
    ]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&[
        "estimate",
        "--estimator",
        "tyler",
        "--location",
        "0,0,0",
        "--input",
        &input,
    ]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&[
        "estimate",
        "--estimator",
        "kotz",
        "--location",
        "2,2",
        "--input",
        &input,
    ]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn sampling_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "--family", "t", "--nu", "5", "--d", "3", "--n", "200", "--seed", "11",
    ];
    let a = fs::read(draw(dir.path(), "a.csv", &args)).unwrap();
    let b = fs::read(draw(dir.path(), "b.csv", &args)).unwrap();
    assert_eq!(a, b);
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 200);
    let o = run(&[
        "sample", "--family", "t", "--nu", "7", "--d", "3", "--n", "200", "--seed", "11",
    ]);
    assert_ne!(o.stdout, b);

    let o = run(&[
        "sample", "--family", "t", "--nu", "0.5", "--d", "2", "--n", "5",
    ]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
}

#[test]
fn sample_covariance_recovers_sigma() {
    let dir = tempfile::tempdir().unwrap();
    let sigma = [2.0, 0.5, 0.0, 0.5, 1.0, 0.3, 0.0, 0.3, 1.5];
    let sigma_arg = sigma.map(|v| v.to_string()).join(",");
    let input = draw(
        dir.path(),
        "x.csv",
        &[
            "--family", "normal", "--d", "3", "--n", "100000", "--mu", "1,-2,3", "--sigma",
            &sigma_arg,
        ],
    );
    let o = run(&["estimate", "--estimator", "cov", "--input", &input]);
    let m = matrix(&o);
    for (a, b) in m.iter().zip(sigma) {
        assert!((a - b).abs() < 0.03 * 2.0, "{m:?}");
    }
}

#[test]
fn covariance_influence_curve_is_quadratic() {
    let o = run(&[
        "if-curves",
        "--estimator",
        "cov",
        "--rmax",
        "4",
        "--points",
        "5",
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("estimator,r,alpha,beta,se"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 5);
    for row in rows {
        let r: f64 = row[1].parse().unwrap();
        let alpha: f64 = row[2].parse().unwrap();
        assert_eq!(row[0], "cov");
        assert!((alpha - r * r).abs() < 1e-12);
    }
    let o = run(&["if-curves", "--estimator", "gcm"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn are_table_for_tyler() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(
        dir.path(),
        "are.json",
        r#"{"families":[{"family":"normal"},{"family":"t","nu":5}],"d":[2,5],"estimators":["tyler"]}"#,
    );
    let csv = dir.path().join("are.csv");
    let o = run(&[
        "are",
        "--config",
        &config,
        "--output",
        csv.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("tyler"));
    let text = fs::read_to_string(csv).unwrap();
    let mut got: Vec<String> = text
        .lines()
        .skip(1)
        .map(|l| {
            format!(
                "{:.2}",
                l.split(',').nth(5).unwrap().parse::<f64>().unwrap()
            )
        })
        .collect();
    // d = 2: 0.50, d = 5: 0.71 at the normal; d = 2: 1.50, d = 5: 2.14 at t(5).
    got.sort();
    assert_eq!(got, ["0.50", "0.71", "1.50", "2.14"]);

    let bad = write(dir.path(), "bad.json", r#"{"families":[],"bogus":1}"#);
    assert_eq!(run(&["are", "--config", &bad]).status.code(), Some(1));
}

#[test]
fn fre_default_grid_at_small_m() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(
        dir.path(),
        "fre.json",
        r#"{"families":[{"family":"t","nu":5},{"family":"t","nu":8},{"family":"normal"},{"family":"kotz"}],
            "n":[50,200],"d":[2,5],"M":10,
            "estimators":["tyler","duembgen","kotz","tr-gini","mrcm","mrcm-qn"],"seed":2017}"#,
    );
    let o = run(&["fre", "--config", &config]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let csv = text.split("\n\n").nth(1).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("family,nu,d,n,estimator,re,se,fail_count")
    );
    assert_eq!(lines.count(), 96);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ragged = write(dir.path(), "bad.csv", "1,2\n3\n");
    let o = run(&["estimate", "--estimator", "gcm", "--input", &ragged]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&[
        "estimate",
        "--estimator",
        "gcm",
        "--input",
        "/nonexistent.csv",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(run(&["estimate", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));

    let input = draw(
        dir.path(),
        "x.csv",
        &["--family", "t", "--nu", "5", "--d", "3", "--n", "300"],
    );
    let o = run(&[
        "estimate",
        "--estimator",
        "tr-gini",
        "--max-iter",
        "1",
        "--input",
        &input,
    ]);
    assert_eq!(o.status.code(), Some(3));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["converged"], false);
    assert_eq!(v["iterations"], 1);
    let o = run(&[
        "estimate",
        "--estimator",
        "tr-gini",
        "--tol",
        "-1",
        "--input",
        &input,
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn rank_output_round_trips_through_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let input = draw(
        dir.path(),
        "x.csv",
        &["--family", "kotz", "--d", "2", "--n", "50", "--seed", "4"],
    );
    let ranks = dir.path().join("r.csv");
    let o = run(&[
        "rank",
        "--input",
        &input,
        "--output",
        ranks.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let text = fs::read_to_string(&ranks).unwrap();
    assert_eq!(text.lines().count(), 50);
    let o = run(&[
        "estimate",
        "--estimator",
        "cov",
        "--input",
        ranks.to_str().unwrap(),
    ]);
    assert!(o.status.success());
}

#[test]
fn thread_count_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let input = draw(
        dir.path(),
        "x.csv",
        &["--family", "t", "--nu", "5", "--d", "3", "--n", "2000"],
    );
    let one = run(&[
        "--threads",
        "1",
        "estimate",
        "--estimator",
        "tr-gini",
        "--input",
        &input,
    ]);
    let four = run(&[
        "--threads",
        "4",
        "estimate",
        "--estimator",
        "tr-gini",
        "--input",
        &input,
    ]);
    assert!(one.status.success());
    let (a, b) = (matrix(&one), matrix(&four));
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= 1e-10);
    }
}

#[test]
fn stdin_input() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_gini-cov"))
        .args(["gmd", "--input", "-"])
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    use std::io::Write;
    child.stdin.take().unwrap().write_all(b"0\n1\n3\n").unwrap();
    let o = child.wait_with_output().unwrap();
    let g: f64 = stdout(&o).trim().parse().unwrap();
    assert!((g - 2.0).abs() < 1e-15);
}
