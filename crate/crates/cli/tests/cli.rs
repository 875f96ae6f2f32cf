//! End-to-end tests of the binary: the documented exit-code contract, the
//! worked pricing examples, report determinism, and fixture round-trips.

use std::path::PathBuf;
use std::process::{Command, Output};

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("..")
        .join("..")
        .join("fixtures")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_risktree"))
        .args(args)
        .env_remove("RISKTREE_TOL")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf8 stdout")
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("utf8 stderr")
}

#[test]
fn eval_prices_the_conditional_expectation_example() {
    let out = run(&[
        "eval",
        "--model",
        &fixture("conditional-expectation.model"),
        "--x-inline",
        "4,0,2,2",
        "--t",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("atom 0: -2.0"), "{text}");
    assert!(text.contains("atom 1: -2.0"), "{text}");
}

#[test]
fn eval_prices_the_premium_constant_loss_at_one_half() {
    let out = run(&[
        "eval",
        "--model",
        &fixture("put-premium.model"),
        "--x-inline",
        "-1,-1,-1,-1",
        "--t",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("atom 0: 0.5"));
}

#[test]
fn malformed_weights_exit_two_with_a_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.model");
    std::fs::write(
        &path,
        "model dynamic\nhorizon 1\nbranching 2\nweights 0.3 0.8\noptions\npair\ndiscount factors 1.0\nmeasure 0.5 0.5\n",
    )
    .unwrap();
    let out = run(&["eval", "--model", path.to_str().unwrap(), "--x-inline", "1,2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 4"), "{}", stderr(&out));
}

#[test]
fn wrong_payoff_length_exits_three() {
    let out = run(&[
        "eval",
        "--model",
        &fixture("conditional-expectation.model"),
        "--x-inline",
        "1,2,3",
    ]);
    assert_eq!(out.status.code(), Some(3), "stderr: {}", stderr(&out));
}

#[test]
fn expected_failure_of_the_premium_recursion_reports_one_quarter() {
    let out = run(&[
        "check",
        "strong",
        "--model",
        &fixture("put-premium.model"),
        "--x-inline",
        "-1,-1,-1,-1",
        "--expect-fail",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("FAIL"));
    let quarter_at_triple = text
        .lines()
        .any(|l| l.contains("s=0 t=1 u=2") && l.contains("0.25"));
    assert!(quarter_at_triple, "{text}");
}

#[test]
fn theorem_harness_accepts_the_discounted_cocycle_fixture() {
    let out = run(&[
        "check",
        "theorem",
        "--model",
        &fixture("discounted-cocycle.model"),
        "--battery",
        "40",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("recursivity"), "{text}");
    assert!(text.contains("penalty-cocycle"), "{text}");
}

#[test]
fn broken_cocycle_ablation_fails_with_its_delta() {
    let out = run(&[
        "check",
        "cocycle",
        "--model",
        &fixture("broken-cocycle-0.05.model"),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let text = stdout(&out);
    let fail_line = text
        .lines()
        .find(|l| l.contains("FAIL") && l.contains("s=0"))
        .expect("a failing row");
    assert!(fail_line.contains("0.05"), "{fail_line}");
}

#[test]
fn tolerance_env_var_overrides_the_default() {
    let out = Command::new(env!("CARGO_BIN_EXE_risktree"))
        .args([
            "check",
            "cocycle",
            "--model",
            &fixture("broken-cocycle-0.05.model"),
        ])
        .env("RISKTREE_TOL", "1.0")
        .output()
        .expect("binary runs");
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
}

#[test]
fn premium_table_checks_run_on_the_dictionary_expansion() {
    let out = run(&["check", "cocycle", "--model", &fixture("put-premium.model")]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("dictionary expansion"));
}

#[test]
fn weak_consistency_holds_for_the_premium() {
    let out = run(&[
        "check",
        "weak",
        "--model",
        &fixture("put-premium.model"),
        "--battery",
        "120",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("non-vacuous"));
}

#[test]
fn too_few_premise_pairs_exit_four() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("skew.model");
    std::fs::write(
        &path,
        "model dynamic\nhorizon 1\nbranching 2\nweights 0.3 0.7\noptions\npair\ndiscount factors 1.0\nmeasure 0.3 0.7\n",
    )
    .unwrap();
    let out = run(&["check", "weakstar", "--model", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4), "stderr: {}", stderr(&out));
}

#[test]
fn conjugate_of_a_single_entry_dictionary_at_its_own_point_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("single.model");
    std::fs::write(
        &path,
        "model static\nhorizon 1\nbranching 2\nweights 0.5 0.5\nnormalization accept\nentry 0.0 0.5 0.5\n",
    )
    .unwrap();
    let out = run(&[
        "conjugate",
        "--model",
        path.to_str().unwrap(),
        "--x-inline",
        "0.5,0.5",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("minimal_penalty: 0.0"));
}

#[test]
fn conjugate_outside_the_hull_prints_the_infinity_token() {
    let out = run(&[
        "conjugate",
        "--model",
        &fixture("two-entry-dictionary.model"),
        "--x-inline",
        "0.9,0.05",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("minimal_penalty: +inf"));
}

#[test]
fn oracle_discrepancy_stays_within_two_grid_steps() {
    let out = run(&[
        "conjugate",
        "--model",
        &fixture("two-entry-dictionary.model"),
        "--x-inline",
        "0.625,0.375",
        "--oracle",
        "--format",
        "json",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let parsed: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let step = parsed["grid_step"].as_f64().unwrap();
    let discrepancy = parsed["discrepancy"].as_f64().unwrap();
    assert!(discrepancy <= 2.0 * step, "discrepancy {discrepancy}, step {step}");
}

#[test]
fn reports_are_byte_identical_at_a_fixed_seed() {
    let args = [
        "check",
        "strong",
        "--model",
        &fixture("coherent-grid.model"),
        "--battery",
        "50",
        "--seed",
        "42",
        "--format",
        "json",
    ];
    let a = run(&args);
    let b = run(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(stdout(&a), stdout(&b));
    assert_eq!(stdout(&a).is_empty(), false);
}

#[test]
fn every_shipped_fixture_round_trips_through_the_parser() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("..")
        .join("..")
        .join("fixtures");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("model") {
            continue;
        }
        seen += 1;
        let text = std::fs::read_to_string(&path).unwrap();
        let model = risktree_core::parse_model(&text)
            .unwrap_or_else(|e| panic!("{} does not parse: {e}", path.display()));
        assert_eq!(model.render(), text, "{} is not canonical", path.display());
    }
    assert!(seen >= 8, "expected the full zoo, found {seen} files");
}

#[test]
fn csv_reports_carry_the_documented_header() {
    let out = run(&[
        "check",
        "locality",
        "--model",
        &fixture("discounted-cocycle.model"),
        "--format",
        "csv",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).starts_with("check,scope,verdict,violation,witness\n"));
}
