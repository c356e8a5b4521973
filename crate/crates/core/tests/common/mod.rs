#![allow(dead_code)]

use std::fs;
use std::path::PathBuf;
use std::process::Command;

use approx_logic::formula::Formula;
use approx_logic::model::FiniteMetricModel;
use approx_logic::sexp::{self, Sexp};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn read_fixture(name: &str) -> String {
    fs::read_to_string(fixture(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn load_model(name: &str) -> FiniteMetricModel {
    FiniteMetricModel::from_json(&read_fixture(name)).unwrap()
}

pub fn m3() -> FiniteMetricModel {
    load_model("m3.json")
}

pub fn grid1d() -> FiniteMetricModel {
    load_model("grid1d.json")
}

pub fn grid2d() -> FiniteMetricModel {
    load_model("grid2d.json")
}

/// Every corpus file as `(sublanguage/stem, path, form)`, sorted by path.
pub fn corpus_files() -> Vec<(String, PathBuf, Sexp)> {
    let mut out = Vec::new();
    for sub in ["metric", "normed"] {
        let dir = fixture("corpus").join(sub);
        let mut paths: Vec<_> = fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).collect();
        paths.sort();
        for path in paths {
            let text = fs::read_to_string(&path).unwrap();
            let form = sexp::parse_one(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            let id = format!("{sub}/{}", path.file_stem().unwrap().to_string_lossy());
            out.push((id, path, form));
        }
    }
    out
}

/// Corpus formulas that type-check against the model's signature.
pub fn corpus_for(model: &FiniteMetricModel) -> Vec<(String, Formula)> {
    let sig = model.signature().unwrap();
    corpus_files()
        .into_iter()
        .filter_map(|(id, _, form)| Formula::from_sexp(&form, Some(&sig)).ok().map(|phi| (id, phi)))
        .collect()
}

pub struct CliRun {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn cli(args: &[&str]) -> CliRun {
    let out = Command::new(env!("CARGO_BIN_EXE_approx-logic")).args(args).output().expect("binary runs");
    CliRun {
        code: out.status.code().expect("exit code"),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

pub fn fixture_arg(name: &str) -> String {
    fixture(name).display().to_string()
}
