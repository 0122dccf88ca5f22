use std::path::Path;
use std::process::{Command, Output};

use matrix_transfer::bounds::build_saturating_diagonal;
use matrix_transfer::channel::{check_isometry, ChannelSpec};
use matrix_transfer::constraints::{check_constraint, ConstraintKind, TransferConstraint};
use matrix_transfer::memory::memory_table;
use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mtransfer"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn report(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn check_on_saturating_construction() {
    let dir = tempfile::tempdir().unwrap();
    let ch_path = dir.path().join("sat.json");
    let out = dir.path().join("report.json");
    build_saturating_diagonal(3, 0.3, 0.6).unwrap().save(&ch_path).unwrap();
    let o = run(&[
        "check",
        s(&ch_path),
        "--constraint",
        "diag-nonideal",
        "--elements",
        "1,2",
        "--eps",
        "0.3,0.6",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    let res = &r["results"];
    assert!(res["isometry"]["max_offdiag"].as_f64().unwrap() <= 1e-15);
    assert!(res["isometry"]["max_diag_dev"].as_f64().unwrap() <= 1e-15);
    assert!(res["constraint"]["residual"].as_f64().unwrap() <= 1e-15);
    for b in res["constraint"]["bounds"].as_array().unwrap() {
        assert!(b["slack"].as_f64().unwrap().abs() <= 1e-15);
    }
    assert_eq!(r["input_digests"].as_object().unwrap().len(), 1);
    assert_eq!(r["config"]["check"]["constraint"]["constraint"], "diag-nonideal");
}

#[test]
fn memory_csv_of_swap_has_no_offdiag_memory() {
    let dir = tempfile::tempdir().unwrap();
    let ch_path = dir.path().join("swap.json");
    ChannelSpec::swap(3).save(&ch_path).unwrap();
    let o = run(&["memory", s(&ch_path), "--format", "csv"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("a,c,norm,kind"));
    let offdiag: Vec<&str> = lines.filter(|l| l.ends_with(",offdiag")).collect();
    assert_eq!(offdiag.len(), 6);
    for l in offdiag {
        let norm: f64 = l.split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(norm, 0.0, "{l}");
    }
}

#[test]
fn optimize_example_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ch_path = dir.path().join("best.json");
    let out = dir.path().join("opt.json");
    let o = run(&[
        "optimize",
        "--n",
        "3",
        "--dc",
        "1",
        "--constraint",
        "diag-nonideal",
        "--eps",
        "0.5,0.5",
        "--pair",
        "1,2",
        "--seed",
        "42",
        "--channel-out",
        s(&ch_path),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    let achieved = r["results"]["result"]["achieved"].as_f64().unwrap();
    assert!((0.499..=0.5 + 1e-8).contains(&achieved), "{achieved}");

    // the saved channel re-read by check/memory gives the same numbers
    let ch = ChannelSpec::load(&ch_path).unwrap();
    let tc = TransferConstraint::new(3, ConstraintKind::DiagonalNonIdeal { pairs: vec![(0, 0.5), (1, 0.5)] }).unwrap();
    let check_out = dir.path().join("check.json");
    let o = run(&[
        "check",
        s(&ch_path),
        "--constraint",
        "diag-nonideal",
        "--eps",
        "0.5,0.5",
        "--out",
        s(&check_out),
    ]);
    assert!(o.status.success());
    let c = report(&check_out);
    let reported = c["results"]["constraint"]["residual"].as_f64().unwrap();
    assert!((reported - check_constraint(&ch, &tc).unwrap()).abs() <= 1e-14);
    let iso = c["results"]["isometry"]["max_offdiag"].as_f64().unwrap();
    assert!((iso - check_isometry(&ch).max_offdiag).abs() <= 1e-14);
    let mem_out = dir.path().join("mem.json");
    assert!(run(&["memory", s(&ch_path), "--out", s(&mem_out)]).status.success());
    let table = memory_table(&ch);
    let m = report(&mem_out);
    let row12 = m["results"]["rows"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["a"] == 1 && r["c"] == 2 && r["kind"] == "offdiag")
        .unwrap()
        .clone();
    assert!((row12["norm"].as_f64().unwrap() - table.entry(0, 1)).abs() <= 1e-14);
    assert!((row12["norm"].as_f64().unwrap() - achieved).abs() <= 1e-14);
}

#[test]
fn sample_writes_reloadable_channels() {
    let dir = tempfile::tempdir().unwrap();
    let ch_path = dir.path().join("s.json");
    let out = dir.path().join("sample.json");
    let o = run(&[
        "sample",
        "--n",
        "3",
        "--dc",
        "2",
        "--constraint",
        "nondiag-ideal",
        "--elements",
        "1,3",
        "--count",
        "2",
        "--seed",
        "9",
        "--channel-out",
        s(&ch_path),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    let samples = r["results"]["samples"].as_array().unwrap();
    assert_eq!(samples.len(), 2);
    for (i, sample) in samples.iter().enumerate() {
        let ch = ChannelSpec::load(&dir.path().join(format!("s-{i}.json"))).unwrap();
        let embedded: ChannelSpec = serde_json::from_value(sample["channel"].clone()).unwrap();
        assert_eq!(ch, embedded);
        assert!(sample["constraint_residual"].as_f64().unwrap() <= 1e-10);
        let t = memory_table(&ch);
        assert!(t.entry(0, 2) <= 1e-7 && t.diag_diff(0, 2) <= 1e-7);
    }
}

#[test]
fn constraint_file_input_is_digested() {
    let dir = tempfile::tempdir().unwrap();
    let tc_path = dir.path().join("tc.json");
    std::fs::write(&tc_path, r#"{"n":2,"kind":"nondiagonal_non_ideal","params":{"a":1,"b":2,"eps":0.6}}"#).unwrap();
    let out = dir.path().join("o.json");
    let o = run(&[
        "optimize",
        "--constraint-file",
        s(&tc_path),
        "--restarts",
        "3",
        "--max-iters",
        "300",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    let achieved = r["results"]["result"]["achieved"].as_f64().unwrap();
    assert!((achieved - 0.8).abs() <= 1e-6, "{achieved}");
    let digest = r["input_digests"][s(&tc_path)].as_str().unwrap();
    assert_eq!(digest.len(), 64);
}

#[test]
fn sweep_is_deterministic_and_tabulated() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &Path, csv: &Path| {
        vec![
            "sweep".to_string(),
            "--kind".into(),
            "nondiagonal".into(),
            "--n".into(),
            "2".into(),
            "--eps".into(),
            "0.7,0.3".into(),
            "--restarts".into(),
            "3".into(),
            "--max-iters".into(),
            "300".into(),
            "--seed".into(),
            "11".into(),
            "--out".into(),
            s(out).into(),
            "--csv".into(),
            s(csv).into(),
        ]
    };
    let (o1, c1) = (dir.path().join("a.json"), dir.path().join("a.csv"));
    let (o2, c2) = (dir.path().join("b.json"), dir.path().join("b.csv"));
    for (o, c) in [(&o1, &c1), (&o2, &c2)] {
        let argv = args(o, c);
        let argv: Vec<&str> = argv.iter().map(String::as_str).collect();
        let out = run(&argv);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let (r1, r2) = (report(&o1), report(&o2));
    assert_eq!(r1["results"], r2["results"]);
    assert_eq!(std::fs::read(&c1).unwrap(), std::fs::read(&c2).unwrap());
    let rows = r1["results"]["rows"].as_array().unwrap();
    assert_eq!(rows[0]["eps"], 0.3);
    assert_eq!(r1["results"]["monotone"], true);
    for row in rows {
        assert!(row["slack"].as_f64().unwrap() >= -1e-8);
    }
    let csv = std::fs::read_to_string(&c1).unwrap();
    assert!(csv.starts_with("eps,achieved,bound,slack"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn bounds_table_over_grid() {
    let o = run(&["bounds", "--kind", "nondiagonal", "--n", "2", "--eps", "0.2,0.8", "--format", "csv"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    for row in rows {
        let cols: Vec<&str> = row.split(',').collect();
        let slack: f64 = cols[6].parse().unwrap();
        let chain: f64 = cols[7].parse().unwrap();
        assert!(slack.abs() <= 1e-12 && chain <= 1e-12, "{row}");
    }
}

#[test]
fn two_state_scenario_from_inline_states_and_file() {
    let dir = tempfile::tempdir().unwrap();
    let rho = "[[[0.5,0],[0.125,0]],[[0.125,0],[0.5,0]]]";
    let chi = "[[[0.25,0],[0.0625,0]],[[0.0625,0],[0.75,0]]]";
    let out = dir.path().join("inline.json");
    let o = run(&[
        "scenario", "two-state", "--rho", rho, "--chi", chi, "--mode", "diagonal", "--count", "5", "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    assert_eq!(r["results"]["diagonal"]["theorem_holds"], true);
    assert_eq!(r["results"]["diagonal"]["report"]["channels"], 10);

    let states = dir.path().join("states.json");
    std::fs::write(&states, format!(r#"{{"rho":{rho},"chi":{chi}}}"#)).unwrap();
    let out = dir.path().join("file.json");
    let o = run(&[
        "scenario",
        "two-state",
        "--states-file",
        s(&states),
        "--mode",
        "nondiagonal",
        "--dc",
        "2",
        "--restarts",
        "4",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    assert_eq!(r["results"]["nondiagonal"]["counterexample_found"], true);
    assert_eq!(r["input_digests"].as_object().unwrap().len(), 1);
}

#[test]
fn exit_codes() {
    // usage errors
    assert_eq!(run(&["optimize", "--bogus"]).status.code(), Some(2));
    assert_eq!(run(&[]).status.code(), Some(2));
    // domain errors: infeasible by the dimension rule, bad index, bad state
    let o = run(&["optimize", "--n", "2", "--constraint", "diag-nonideal", "--elements", "1,2", "--eps", "0.5,0.5"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("dimension rule"));
    assert_eq!(run(&["optimize", "--n", "3", "--constraint", "diag-ideal", "--elements", "4"]).status.code(), Some(1));
    let commuting = "[[[0.5,0],[0,0]],[[0,0],[0.5,0]]]";
    let other = "[[[0.25,0],[0,0]],[[0,0],[0.75,0]]]";
    let o = run(&["scenario", "two-state", "--rho", commuting, "--chi", other]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("commute"));
    assert_eq!(run(&["memory", "/nonexistent/channel.json"]).status.code(), Some(1));
}
