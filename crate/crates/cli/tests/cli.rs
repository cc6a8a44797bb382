use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn repsim(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_repsim"))
        .args(args)
        .current_dir(dir)
        .env_remove("REPSIM_THREADS")
        .output()
        .expect("spawn repsim")
}

fn ok(dir: &Path, args: &[&str]) -> Vec<u8> {
    let out = repsim(dir, args);
    assert!(
        out.status.success(),
        "repsim {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out.stdout
}

fn json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn rotated_copy_has_zero_distance() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(
        d,
        &[
            "synth",
            "--family",
            "rotated_copy",
            "--n",
            "300",
            "--k",
            "6",
            "--seed",
            "4",
            "--format",
            "csv",
            "-o",
            "rot",
        ],
    );
    let rec = json(&ok(
        d,
        &[
            "dist",
            "--metric",
            "gulp",
            "--lambda",
            "1e-2",
            "rot.a.csv",
            "rot.b.csv",
        ],
    ));
    assert!(rec["value"].as_f64().unwrap() <= 1e-8);
    assert_eq!(rec["metric"]["kind"], "gulp");
    assert_eq!(rec["metric"]["lambda"], 0.01);
}

#[test]
fn ragged_csv_exits_one_and_names_the_row() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.csv"), "1,2,3\n4,5,6\n7,8\n").unwrap();
    let out = repsim(tmp.path(), &["validate", "bad.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("row 3"), "{}", stderr(&out));
}

#[test]
fn non_numeric_field_is_reported_with_position() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("x.csv"), "a,b\n1,2\n3,oops\n").unwrap();
    let out = repsim(tmp.path(), &["validate", "--has-header", "x.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("row 3, column 2"), "{}", stderr(&out));
}

#[test]
fn validate_reports_shape_and_rank() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("h.csv"), "p,q\n1,2\n2,4\n3,6.5\n").unwrap();
    let v = json(&ok(tmp.path(), &["validate", "--has-header", "h.csv"]));
    assert_eq!(v[0]["n"], 3);
    assert_eq!(v[0]["k"], 2);
    assert_eq!(v[0]["rank"], 2);
}

#[test]
fn synth_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let args = [
        "synth",
        "--family",
        "rotated_copy",
        "--n",
        "500",
        "--k",
        "10",
        "--seed",
        "7",
    ];
    ok(d, &args);
    let first = fs::read(d.join("rotated_copy_7.a.repm")).unwrap();
    ok(d, &args);
    assert_eq!(first, fs::read(d.join("rotated_copy_7.a.repm")).unwrap());
    assert_eq!(first.len(), 24 + 8 * 500 * 10);
}

#[test]
fn usage_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = repsim(tmp.path(), &["dist", "--metric", "nope", "a.csv", "b.csv"]);
    assert_eq!(out.status.code(), Some(1));
    let out = repsim(tmp.path(), &["dist", "--lambda", "-1", "a.csv", "b.csv"]);
    assert_eq!(out.status.code(), Some(1));
    let out = repsim(tmp.path(), &["dist", "missing.csv", "other.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("missing.csv"));
}

#[test]
fn numerical_failure_exits_two_with_pair_and_metric() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(
        d,
        &[
            "synth",
            "--family",
            "noisy_copy",
            "--n",
            "200",
            "--k",
            "3",
            "--noise",
            "0",
            "-o",
            "same",
        ],
    );
    let out = repsim(
        d,
        &[
            "converge",
            "--lambda",
            "1e-2",
            "--sizes",
            "20,50,100",
            "same.a.repm",
            "same.b.repm",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    let msg = stderr(&out);
    assert!(
        msg.contains("same.a") && msg.contains("same.b") && msg.contains("gulp"),
        "{msg}"
    );

    fs::write(d.join("flat.csv"), "1,2\n1,2\n1,2\n").unwrap();
    let out = repsim(d, &["validate", "flat.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn outputs_follow_the_json_schemas() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    for seed in ["1", "2"] {
        ok(
            d,
            &[
                "synth",
                "--family",
                "noisy_copy",
                "--n",
                "300",
                "--k",
                "4",
                "--noise",
                "0.4",
                "--seed",
                seed,
                "-o",
                &format!("s{seed}"),
            ],
        );
    }
    let reps = ["s1.a.repm", "s1.b.repm", "s2.a.repm", "s2.b.repm"];
    let mut args = vec![
        "distmat", "--metric", "gulp", "--lambda", "1e-2", "-o", "dm.json",
    ];
    args.extend(reps);
    assert!(ok(d, &args).is_empty());
    let dm = json(&fs::read(d.join("dm.json")).unwrap());
    assert_eq!(dm["names"].as_array().unwrap().len(), 4);
    assert_eq!(dm["metric"]["kind"], "gulp");
    assert_eq!(dm["matrix"].as_array().unwrap().len(), 4);
    let leftovers: Vec<_> = fs::read_dir(d)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with(".tmp"))
        .collect();
    assert!(leftovers.is_empty());

    let e = json(&ok(d, &["embed", "dm.json"]));
    assert_eq!(
        e["coords"].as_array().unwrap()[0].as_array().unwrap().len(),
        2
    );
    assert!(e["eigenvalues"].is_array() && e["names"].is_array());

    let t = json(&ok(d, &["cluster", "dm.json"]));
    let merges = t["merges"].as_array().unwrap();
    assert_eq!(merges.len(), 3);
    for key in ["left", "right", "height", "size"] {
        assert!(merges[0].get(key).is_some());
    }
    assert_eq!(merges[2]["size"], 4);

    let c = json(&ok(
        d,
        &[
            "converge",
            "--lambda",
            "1e-2",
            "--sizes",
            "50,100,200",
            "s1.a.repm",
            "s2.a.repm",
        ],
    ));
    assert_eq!(c["sizes"].as_array().unwrap().len(), 3);
    assert_eq!(c["rel_errors"].as_array().unwrap().len(), 3);
    assert!(c["slope"].is_f64());

    let p = json(&ok(
        d,
        &["probe", "--tasks", "3", reps[0], reps[1], reps[2], reps[3]],
    ));
    assert_eq!(p["n_pairs"], 6);
    assert_eq!(p["correlations"].as_array().unwrap().len(), 8);
}

#[test]
fn csv_output_has_header_and_names() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(
        d,
        &[
            "synth",
            "--family",
            "linear_map",
            "--n",
            "100",
            "--k",
            "3",
            "-o",
            "m",
        ],
    );
    let out = String::from_utf8(ok(
        d,
        &[
            "distmat", "--metric", "cka", "--format", "csv", "m.a.repm", "m.b.repm",
        ],
    ))
    .unwrap();
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], ",m.a,m.b");
    assert!(lines[1].starts_with("m.a,0.0,"));
    let out = repsim(d, &["distmat", "--format", "csv", "m.a.repm", "m.b.repm"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn thread_environment_overrides_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_repsim"))
        .args([
            "synth",
            "--family",
            "lowrank",
            "--n",
            "20",
            "--k",
            "3",
            "--threads",
            "2",
        ])
        .current_dir(tmp.path())
        .env("REPSIM_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("REPSIM_THREADS"));
}

#[test]
fn pwcca_matrix_is_symmetrized_and_flagged() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(
        d,
        &[
            "synth", "--family", "gaussian", "--n", "200", "--k", "3", "--rho", "0.6", "-o", "g",
        ],
    );
    ok(
        d,
        &[
            "synth",
            "--family",
            "noisy_copy",
            "--n",
            "200",
            "--k",
            "4",
            "-o",
            "h",
        ],
    );
    let dm = json(&ok(
        d,
        &[
            "distmat", "--metric", "pwcca", "g.a.repm", "g.b.repm", "h.a.repm",
        ],
    ));
    assert_eq!(dm["flags"][0], "symmetrized");
    let m = dm["matrix"].as_array().unwrap();
    assert_eq!(m[0][2], m[2][0]);
}
