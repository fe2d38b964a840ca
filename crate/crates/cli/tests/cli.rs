use std::process::Command;

use euler_embed::dynamics::closed_form;
use euler_embed::liegroup::orthogonality_defect;
use euler_embed::GateId;
use euler_embed_cli::{run_args, Outcome, Status};
use nalgebra::{DMatrix, DVector};
use serde_json::Value;

fn run(args: &[&str]) -> Outcome {
    run_args(std::iter::once("euler-embed").chain(args.iter().copied()))
}

fn write_model(dir: &tempfile::TempDir, name: &str, text: &str) -> String {
    let path = dir.path().join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn csv_rows(body: &str) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut lines = body.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

const PARALLEL: &str = r#"{"n":3,"B":[[[1,0,0],[0,0,0],[0,0,0]],[[0,0,0],[0,0,0],[0,0,0]],[[0,0,0],[0,0,0],[0,0,0]]]}"#;

#[test]
fn certify_rotor_gives_identity() {
    let out = run(&["certify", "--gate", "rotor"]);
    assert_eq!(out.status, Status::Ok);
    let v: Value = serde_json::from_str(&out.body).unwrap();
    assert_eq!(v["status"], "found");
    let g: Vec<Vec<f64>> = serde_json::from_value(v["G"].clone()).unwrap();
    let g = DMatrix::from_fn(3, 3, |i, j| g[i][j]);
    assert!((g - DMatrix::identity(3, 3)).amax() < 1e-12);
    assert!(v["witness"].is_null());
}

#[test]
fn certify_parallel_model_reports_witness() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_model(&dir, "parallel.json", PARALLEL);
    let out = run(&["certify", "--model", &path]);
    assert_eq!(out.status, Status::Failed);
    let v: Value = serde_json::from_str(&out.body).unwrap();
    assert_eq!(v["status"], "not-found");
    assert!(v["G"].is_null());
    let y: Vec<f64> = serde_json::from_value(v["witness"]["y"].clone()).unwrap();
    assert!((y[0].abs() - 1.0).abs() < 1e-8, "{y:?}");
    assert!(v["witness"]["lambda"].as_f64().unwrap().abs() > 0.5);
}

#[test]
fn invalid_inputs_exit_2_with_field_names() {
    let dir = tempfile::tempdir().unwrap();
    let truncated = write_model(&dir, "t.json", r#"{"n": 3, "B": [[[1, 0"#);
    let out = run(&["certify", "--model", &truncated]);
    assert_eq!(out.status, Status::Invalid);
    assert!(out.message.unwrap().contains("malformed"));

    let bad_entry = write_model(&dir, "b.json", r#"{"n":2,"B":[[[0,0],[0,null]],[[0,0],[0,0]]]}"#);
    let out = run(&["certify", "--model", &bad_entry]);
    assert_eq!(out.status, Status::Invalid);
    assert!(out.message.unwrap().contains("B[0][1][1]"));

    let cases: &[&[&str]] = &[
        &["certify", "--model", "/nonexistent/model.json"],
        &["certify"],
        &["certify", "--gate", "wheel"],
        &["certify", "--gate", "rotor", "--params", "beta=1"],
        &["certify", "--gate", "rotor", "--tol", "-1"],
        &["verify", "--gate", "rotor", "--samples", "0"],
        &["simulate", "--gate", "rotor", "--step", "-1"],
        &["simulate", "--gate", "rotor", "--tspan", "5:1"],
        &["simulate", "--gate", "rotor", "--y0", "1,2"],
        &["simulate", "--gate", "rotor", "--method", "euler"],
        &["frobnicate"],
    ];
    for args in cases {
        assert_eq!(run(args).status, Status::Invalid, "{args:?}");
    }
}

#[test]
fn verify_rotor_and_pump_pass() {
    for gate in ["rotor", "pump"] {
        let out = run(&["verify", "--gate", gate]);
        assert_eq!(out.status, Status::Ok, "{gate}: {:?}\n{}", out.message, out.body);
        let checks: Vec<Value> = out.body.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(checks.len(), 7);
        assert!(checks.iter().all(|c| c["pass"] == true));
        assert_eq!(checks[0]["check"], "transport");
        assert_eq!(checks[6]["check"], "l2_gram");
    }
}

#[test]
fn verify_fault_injection_fails() {
    let out = run(&[
        "verify",
        "--gate",
        "rotor",
        "--inject-fault",
        "skew",
        "--samples",
        "20",
        "--mc-samples",
        "2000",
    ]);
    assert_eq!(out.status, Status::Failed);
    let transport: Value = serde_json::from_str(out.body.lines().next().unwrap()).unwrap();
    assert_eq!(transport["pass"], false);
}

#[test]
fn verify_non_embeddable_is_invalid() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_model(&dir, "parallel.json", PARALLEL);
    assert_eq!(run(&["verify", "--model", &path]).status, Status::Invalid);
}

#[test]
fn simulate_rotor_matches_closed_form() {
    let out = run(&[
        "simulate", "--gate", "rotor", "--y0", "0,1,1", "--step", "1e-3", "--tspan", "0:10",
    ]);
    assert_eq!(out.status, Status::Ok);
    let (header, rows) = csv_rows(&out.body);
    assert_eq!(header, ["t", "y1", "y2", "y3", "energy"]);
    assert_eq!(rows.len(), 10_001);
    let mut worst = 0.0f64;
    for row in &rows {
        let exact = closed_form(GateId::Rotor, &[1.0, 1.0, 0.0, 1.0], row[0]).unwrap();
        worst = worst.max((DVector::from_column_slice(&row[1..4]) - exact).amax());
    }
    assert!(worst < 1e-6, "{worst}");
}

#[test]
fn simulate_pump_midpoint_conserves_energy() {
    let out = run(&["simulate", "--gate", "pump", "--y0", "1,0", "--method", "midpoint"]);
    assert_eq!(out.status, Status::Ok);
    let (_, rows) = csv_rows(&out.body);
    assert!(rows.iter().all(|r| (r[3] - 1.0).abs() < 1e-10));
}

#[test]
fn simulate_zero_state_stays_zero() {
    let out = run(&[
        "simulate",
        "--gate",
        "amplifier",
        "--y0",
        "0,0",
        "--tspan",
        "0:1",
        "--step",
        "0.01",
    ]);
    let (_, rows) = csv_rows(&out.body);
    assert_eq!(rows.len(), 101);
    assert!(rows.iter().all(|r| r[1..].iter().all(|&v| v == 0.0)));
}

#[test]
fn simulate_failure_keeps_partial_output() {
    let out = run(&[
        "simulate", "--gate", "pump", "--y0", "100,0", "--method", "midpoint", "--step", "5", "--tspan", "0:20",
    ]);
    assert_eq!(out.status, Status::Failed);
    let last = out.body.lines().last().unwrap();
    assert!(last.starts_with("# status: failed"), "{last}");
    assert!(out.body.starts_with("t,y1,y2,energy\n0.0"));
}

#[test]
fn particle_columns_stay_orthogonal() {
    let out = run(&[
        "simulate",
        "--gate",
        "rigid_body",
        "--y0",
        "1,0.5,-0.2",
        "--tspan",
        "0:2",
        "--step",
        "0.01",
        "--particles",
    ]);
    assert_eq!(out.status, Status::Ok, "{:?}", out.message);
    let (header, rows) = csv_rows(&out.body);
    assert_eq!(header.len(), 1 + 3 + 1 + 9);
    assert_eq!(header[5], "q11");
    assert_eq!(header[13], "q33");
    for row in &rows {
        let q = DMatrix::from_row_slice(3, 3, &row[5..]);
        assert!(orthogonality_defect(&q) < 1e-10);
    }
    let last = DMatrix::from_row_slice(3, 3, &rows.last().unwrap()[5..]);
    assert!((last - DMatrix::identity(3, 3)).amax() > 1e-3);
}

#[test]
fn outputs_are_deterministic() {
    for args in [
        &[
            "verify",
            "--gate",
            "amplifier",
            "--seed",
            "7",
            "--samples",
            "10",
            "--mc-samples",
            "1000",
        ][..],
        &[
            "simulate",
            "--gate",
            "rotor",
            "--seed",
            "3",
            "--particles",
            "--tspan",
            "0:1",
            "--step",
            "0.01",
        ][..],
        &["embed", "--gate", "pump", "--seed", "5"][..],
    ] {
        assert_eq!(run(args), run(args), "{args:?}");
    }
    let a = run(&[
        "simulate", "--gate", "rotor", "--seed", "1", "--tspan", "0:1", "--step", "0.1",
    ]);
    let b = run(&[
        "simulate", "--gate", "rotor", "--seed", "2", "--tspan", "0:1", "--step", "0.1",
    ]);
    assert_ne!(a.body, b.body);
}

#[test]
fn out_flag_writes_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cert.json");
    let out = run(&["certify", "--gate", "pump", "--out", path.to_str().unwrap()]);
    assert_eq!(out.status, Status::Ok);
    assert!(out.body.is_empty());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(v["status"], "found");
}

#[test]
fn exported_gate_round_trips_through_model_file() {
    let list = run(&["gates"]);
    let names: Vec<String> = list
        .body
        .lines()
        .map(|l| {
            serde_json::from_str::<Value>(l).unwrap()["gate"]
                .as_str()
                .unwrap()
                .to_string()
        })
        .collect();
    assert_eq!(names, ["rotor", "pump", "amplifier", "rigid_body"]);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rb.json");
    let p = path.to_str().unwrap();
    assert_eq!(
        run(&[
            "gates",
            "--gate",
            "rigid_body",
            "--params",
            "i1=2,i2=3,i3=5",
            "--out",
            p
        ])
        .status,
        Status::Ok
    );
    let out = run(&["certify", "--model", p]);
    assert_eq!(out.status, Status::Ok);
    let v: Value = serde_json::from_str(&out.body).unwrap();
    assert_eq!(v["model"], "custom");
}

#[test]
fn embed_reports_generators_and_charts() {
    let out = run(&["embed", "--gate", "rigid_body"]);
    assert_eq!(out.status, Status::Ok);
    let v: Value = serde_json::from_str(&out.body).unwrap();
    assert_eq!(v["n"], 3);
    assert_eq!(v["manifold_dim"], 7);
    assert!(v["C"].as_f64().unwrap() >= 1.0);
    let gens: Vec<Vec<Vec<f64>>> = serde_json::from_value(v["generators"].clone()).unwrap();
    assert_eq!(gens.len(), 3);
    for s in &gens {
        let s = DMatrix::from_fn(3, 3, |i, j| s[i][j]);
        assert!((&s + s.transpose()).amax() < 1e-14);
    }
    assert_eq!(v["charts"].as_array().unwrap().len(), 4);
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_euler-embed");
    let dir = tempfile::tempdir().unwrap();
    let path = write_model(&dir, "parallel.json", PARALLEL);
    let code = |args: &[&str]| Command::new(bin).args(args).output().unwrap().status.code();
    assert_eq!(code(&["certify", "--gate", "rotor"]), Some(0));
    assert_eq!(code(&["certify", "--model", &path]), Some(1));
    assert_eq!(code(&["certify", "--gate", "nope"]), Some(2));
    assert_eq!(code(&["--help"]), Some(0));
}
