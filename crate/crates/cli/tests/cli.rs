use std::process::{Command, Output};

use wlax::diffalg::DiffPoly;
use wlax::rational::q;
use wlax_cli::payload::{FlowPayload, OperatorPayload};

fn wlax(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wlax")).args(args).env_remove("WLAX_FLOOR").output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn w(i: i32) -> DiffPoly {
    DiffPoly::g("w", &[i])
}

fn d(p: &DiffPoly, k: u32) -> DiffPoly {
    p.nth_derivative(k)
}

#[test]
fn build_generic_scalar_operator() {
    let o = wlax(&["build", "gl-principal", "--n", "3"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("L = ∂^3 + w_2∂^2 - w_1∂ + (w_0 + eps)"), "{}", stdout(&o));
}

#[test]
fn build_rejects_bad_input() {
    assert_eq!(wlax(&["build", "gl-principal", "--n", "0"]).status.code(), Some(2));
    assert_eq!(wlax(&["build", "no-such-tag", "--n", "3"]).status.code(), Some(2));
    assert_eq!(wlax(&["build", "bc-principal", "--n", "3", "--epsilon", "x"]).status.code(), Some(2));
    assert_eq!(wlax(&["flow", "nowhere", "--n", "1"]).status.code(), Some(2));
}

#[test]
fn epsilon_value_is_substituted() {
    let o = wlax(&["build", "bc-principal", "--n", "3", "--epsilon", "1/2"]);
    assert!(stdout(&o).contains("(-w_1 - 1/2)∂"), "{}", stdout(&o));
    let o = wlax(&["build", "bc-principal", "--n", "3", "--epsilon", "off"]);
    assert!(!stdout(&o).contains("eps"));
}

#[test]
fn distinguished_latex() {
    let o = wlax(&["build", "so4n-distinguished", "--n", "1", "--latex", "--floor", "-4"]);
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    assert!(s.contains("\\partial^{3}") && s.contains("\\frac{1}{4} w_{0,1}^{2} \\partial^{-1}"), "{s}");
}

#[test]
fn operator_json_round_trip() {
    let o = wlax(&["build", "d-principal", "--n", "4", "--format", "json", "--floor", "-5", "--generic"]);
    let text = stdout(&o);
    let p: OperatorPayload = serde_json::from_str(&text).unwrap();
    assert!(p.generic.is_some());
    assert_eq!(serde_json::to_string_pretty(&p).unwrap() + "\n", text);
}

#[test]
fn kdv_flow() {
    let o = wlax(&["flow", "sl2", "--n", "3"]);
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    assert!(s.contains("dw_0/dt = -3/2*w_0*w_0' + 1/4*w_0'''"), "{s}");
    assert!(s.contains("h2 = 0"));
}

#[test]
fn even_kdv_flow_vanishes() {
    let o = wlax(&["flow", "sl2", "--n", "2", "--format", "json"]);
    let p: FlowPayload = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(p.flows.values().all(|f| f.is_zero()));
}

#[test]
fn kaup_kupershmidt_flow_json() {
    let o = wlax(&["flow", "so3", "--n", "5", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let p: FlowPayload = serde_json::from_str(&text).unwrap();
    assert_eq!(serde_json::to_string_pretty(&p).unwrap() + "\n", text);
    let x = w(1);
    let mut want = d(&x, 5).scale(&q(-1, 9));
    want.add_scaled(&d(&x, 1).mul(&d(&x, 2)), &q(25, 18));
    want.add_scaled(&x.mul(&d(&x, 3)), &q(5, 9));
    want.add_scaled(&x.mul(&x).mul(&d(&x, 1)), &q(-5, 9));
    assert_eq!(p.flows["w_1"], want);
    assert_eq!(p.densities.len(), 5);
}

#[test]
fn modified_flow() {
    let o = wlax(&["flow", "sl2", "--n", "3", "--modified"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("de_11/dt = -3/2*e_11^2*e_11' + 1/4*e_11'''"), "{}", stdout(&o));
}

#[test]
fn shallow_floor_is_a_window_error() {
    assert_eq!(wlax(&["flow", "so3", "--n", "5", "--floor", "0"]).status.code(), Some(3));
}

#[test]
fn floor_from_environment() {
    let o = Command::new(env!("CARGO_BIN_EXE_wlax")).args(["build", "d-principal", "--n", "4"]).env("WLAX_FLOOR", "-2").output().unwrap();
    let s = stdout(&o);
    assert!(s.contains("floor=-2") && s.contains("O(∂^-3)"), "{s}");
}

#[test]
fn output_is_deterministic() {
    let a = wlax(&["flow", "gl-min-3", "--n", "2", "--format", "json"]);
    let b = wlax(&["flow", "gl-min-3", "--n", "2", "--format", "json"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn out_file() {
    let path = std::env::temp_dir().join(format!("wlax-cli-{}.txt", std::process::id()));
    let o = wlax(&["list", "--out", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let s = std::fs::read_to_string(&path).unwrap();
    std::fs::remove_file(&path).ok();
    assert!(s.contains("so4n-distinguished") && s.contains("sp-min-4-dinv"));
}

#[test]
fn scalar_table_suite() {
    let o = wlax(&["verify", "--suite", "scalar-table"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("5/5 passed"));
}

#[test]
fn adler_suite() {
    let o = wlax(&["verify", "--suite", "adler", "--max-n", "2", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["adler"].as_array().unwrap().len(), 3);
    assert_eq!(v["passed"], serde_json::Value::Bool(true));
}

#[test]
fn examples_suite() {
    let o = wlax(&["verify", "--suite", "examples"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let again = wlax(&["verify", "--suite", "examples"]);
    assert_eq!(o.stdout, again.stdout);
}
