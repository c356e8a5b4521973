mod common;

use approx_logic::model::FiniteMetricModel;
use approx_logic::ultra::check_isometric;

use common::*;

#[test]
fn apcheck_reports_failing_depth() {
    let run = cli(&[
        "apcheck",
        "--model",
        &fixture_arg("m3.json"),
        "--formula",
        &fixture_arg("corpus/metric/c_atom.sexp"),
        "--assign",
        "0=b",
        "--format",
        "csv",
    ]);
    assert_eq!(run.code, 1, "{}", run.stderr);
    assert_eq!(run.stdout, "formula,branch,depth,verdict\nc_atom,1,4,fail\nc_atom,-,4,refuted\n");
}

#[test]
fn apcheck_exit_codes_follow_verdicts() {
    let ap = |formula: &str, assign: &str| {
        cli(&["apcheck", "--model", &fixture_arg("m3.json"), "--formula", &fixture_arg(formula), "--assign", assign, "--branches", "16"]).code
    };
    assert_eq!(ap("corpus/metric/c_atom.sexp", "0=a"), 0);
    assert_eq!(ap("corpus/metric/not_c.sexp", "0=b"), 0);
    assert_eq!(ap("corpus/metric/not_c.sexp", "0=a"), 3);
}

#[test]
fn check_enumerates_free_variables() {
    let run = cli(&["check", "--model", &fixture_arg("m3.json"), "--formula", &fixture_arg("corpus/metric/c_atom.sexp")]);
    assert_eq!(run.code, 1);
    assert_eq!(run.stdout, "c_atom[0=a]: satisfied\nc_atom[0=b]: not-satisfied\nc_atom[0=c]: not-satisfied\n");
}

#[test]
fn approx_prints_atom_encoding() {
    let run = cli(&[
        "approx",
        "--formula",
        &fixture_arg("corpus/metric/c_atom.sexp"),
        "--sig",
        &fixture_arg("m3.sig"),
        "--branch",
        "leaf",
        "--depth",
        "3",
    ]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert_eq!(run.stdout, "(exists (C) (1) (and (in (interval 0 1/3) (realfun rho (var 0) (var 1)))))\n");
}

#[test]
fn approx_uniform_convexity_matches_golden() {
    let run = cli(&[
        "approx",
        "--formula",
        &fixture_arg("corpus/normed/uniform_convexity.sexp"),
        "--model",
        &fixture_arg("grid1d.json"),
        "--dense",
        "1",
        "--depth",
        "2",
    ]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert_eq!(run.stdout, read_fixture("golden/uniform_convexity_dense1_depth2.sexp"));
}

#[test]
fn inadequate_and_misshapen_codes_exit_2() {
    let base = ["approx", "--formula", "", "--sig", "", "--branch", "", "--depth", "3"];
    let formula = fixture_arg("corpus/metric/not_c.sexp");
    let sig = fixture_arg("m3.sig");
    for code in ["(neg (leaf 1))", "leaf", "(tuple (1 leaf))"] {
        let mut args = base.to_vec();
        args[2] = &formula;
        args[4] = &sig;
        args[6] = code;
        let run = cli(&args);
        assert_eq!(run.code, 2, "{code}");
        assert!(run.stderr.starts_with("error: "), "{}", run.stderr);
    }
}

#[test]
fn validate_grid_with_and_without_slack() {
    let pass = cli(&["validate", "--model", &fixture_arg("grid1d.json"), "--slack", "1"]);
    assert_eq!(pass.code, 0, "{}", pass.stdout);
    let fail = cli(&["validate", "--model", &fixture_arg("grid1d.json"), "--slack", "0", "--format", "csv"]);
    assert_eq!(fail.code, 1);
    assert!(fail.stdout.contains("violation: continuity"), "{}", fail.stdout);
    assert!(fail.stdout.ends_with("grid1d,-,-,fail\n"));
}

#[test]
fn ultra_rejects_invalid_oracle() {
    let m = fixture_arg("m3.json");
    let run = cli(&["ultra", "--factors", &m, &m, "--oracle", &fixture_arg("oracle_invalid.json")]);
    assert_eq!(run.code, 2);
    assert!(run.stderr.contains("exactly one of a set and its complement"), "{}", run.stderr);
}

#[test]
fn ultra_writes_product_isometric_to_generator() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("prod.json");
    let out_arg = out.display().to_string();
    let run = cli(&[
        "ultra",
        "--factors",
        &fixture_arg("m3.json"),
        &fixture_arg("m3_c.json"),
        "--generator",
        "2",
        "--out",
        &out_arg,
    ]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let product = FiniteMetricModel::from_json(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(check_isometric(&product, &load_model("m3_c.json")).is_some());
    assert!(check_isometric(&product, &m3()).is_none());

    let table = cli(&[
        "ultra",
        "--factors",
        &fixture_arg("m3.json"),
        &fixture_arg("m3_c.json"),
        "--oracle",
        &fixture_arg("oracle_second.json"),
    ]);
    assert_eq!(table.code, 0, "{}", table.stderr);
    assert_eq!(table.stdout, product.to_json());
}

#[test]
fn parse_prints_fragment() {
    let run = cli(&["parse", "--formula", &fixture_arg("corpus/metric/bounded_diameter.sexp"), "--sig", &fixture_arg("m3.sig")]);
    assert_eq!(run.code, 0);
    assert_eq!(run.stdout, "(forall (U U) (0 1) (in (interval 0 1) (realfun rho (var 0) (var 1)))) ; fragment: L_PBA\n");
}

#[test]
fn input_errors_exit_2() {
    assert_eq!(cli(&["check", "--model", "/nonexistent.json", "--formula", "/nonexistent.sexp"]).code, 2);
    assert_eq!(cli(&["apcheck", "--model", &fixture_arg("m3.json")]).code, 2);
    let unknown_symbol = cli(&["parse", "--formula", &fixture_arg("corpus/normed/small_norm.sexp"), "--sig", &fixture_arg("m3.sig")]);
    assert_eq!(unknown_symbol.code, 2);
    assert!(unknown_symbol.stderr.contains("norm"), "{}", unknown_symbol.stderr);
}

#[test]
fn dense_lists_codes() {
    let run = cli(&[
        "dense",
        "--formula",
        &fixture_arg("corpus/metric/not_c.sexp"),
        "--sig",
        &fixture_arg("m3.sig"),
        "--branches",
        "2",
        "--depth",
        "2",
    ]);
    assert_eq!(run.code, 0);
    assert_eq!(run.stdout, "1: (neg (leaf 1) (leaf 1))\n2: (neg (leaf 2) (leaf 2))\n");
}

#[test]
fn profile_accepts_negative_scalars() {
    let run = cli(&["profile", "--radii", "1,2", "--scalars", "-1,1/2"]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert!(run.stdout.contains("\"scale_-1\""));
    assert!(!run.stdout.contains("\"scale_2\""));
}
