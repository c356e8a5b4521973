//! Command-line front end.
//!
//! Exit codes: 0 satisfied or pass, 1 refuted or fail, 3 unknown, 2 input error.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use itertools::Itertools;
use thiserror::Error;

use crate::approx::{approximate, check_code, dense_branches, ApproxError, BranchCode};
use crate::formula::{core_form, Formula, FormulaError};
use crate::model::{ap_search, satisfies, ApVerdict, FiniteMetricModel, ModelError, Valuation};
use crate::rational::{parse_rational, Rational};
use crate::sexp;
use crate::signature::{default_radii, default_scalars, Signature, SignatureError};
use crate::ultra::{build_ultraproduct, UltraError, UltrafilterOracle};
use crate::uniform::{grid_model, normed_profile, validate_membership, GridNorm, GridSpec, UniformError, UniformProfile};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_UNKNOWN: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Input { path: String, message: String },
    #[error(transparent)]
    Formula(#[from] FormulaError),
    #[error(transparent)]
    Approx(#[from] ApproxError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Uniform(#[from] UniformError),
    #[error(transparent)]
    Ultra(#[from] UltraError),
    #[error(transparent)]
    Signature(#[from] SignatureError),
    #[error("{0}")]
    Usage(String),
}

#[derive(Debug, Parser)]
#[command(name = "approx-logic", version, about = "Approximate logic over finite rational metric models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Csv,
}

#[derive(Debug, Args)]
pub struct Output {
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Language {
    /// Signature file; defaults to the signature of `--model`.
    #[arg(long)]
    pub sig: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print formulas canonically with their fragment.
    Parse {
        #[arg(long, required = true, num_args = 1..)]
        formula: Vec<PathBuf>,
        #[command(flatten)]
        lang: Language,
        #[command(flatten)]
        output: Output,
    },
    /// Print the approximation of a formula along a branch at a depth.
    Approx {
        #[arg(long)]
        formula: PathBuf,
        #[command(flatten)]
        lang: Language,
        /// Branch code, e.g. `leaf` or `(tuple (1 leaf) (2 leaf))`.
        #[arg(long, conflicts_with = "dense", required_unless_present = "dense")]
        branch: Option<String>,
        /// Use the k-th code of the dense stream (1-based).
        #[arg(long)]
        dense: Option<usize>,
        #[arg(long)]
        depth: u64,
        #[command(flatten)]
        output: Output,
    },
    /// List the first codes of the dense stream.
    Dense {
        #[arg(long)]
        formula: PathBuf,
        #[command(flatten)]
        lang: Language,
        #[arg(long, default_value_t = 8)]
        branches: usize,
        #[arg(long, default_value_t = 8)]
        depth: u64,
        #[command(flatten)]
        output: Output,
    },
    /// Exact satisfaction.
    Check {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        formula: Vec<PathBuf>,
        /// Partial assignment `0=a,1=b`; unassigned free variables range over the universe.
        #[arg(long, default_value = "")]
        assign: String,
        #[command(flatten)]
        output: Output,
    },
    /// Budgeted approximate satisfaction.
    Apcheck {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        formula: Vec<PathBuf>,
        #[arg(long, default_value = "")]
        assign: String,
        #[arg(long, default_value_t = 8)]
        branches: usize,
        #[arg(long, default_value_t = 8)]
        depth: u64,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[command(flatten)]
        output: Output,
    },
    /// Check a model against a uniform profile.
    Validate {
        #[arg(long)]
        model: PathBuf,
        /// Profile file; defaults to the normed profile on the default radii and scalars.
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long, default_value = "0")]
        slack: String,
        #[command(flatten)]
        output: Output,
    },
    /// Build the ultraproduct of finitely many models.
    Ultra {
        #[arg(long, required = true, num_args = 1..)]
        factors: Vec<PathBuf>,
        /// Principal ultrafilter at this index (1-based).
        #[arg(long, conflicts_with = "oracle", required_unless_present = "oracle")]
        generator: Option<usize>,
        /// Explicit ultrafilter table `{"size": m, "members": [[..], ..]}`.
        #[arg(long)]
        oracle: Option<PathBuf>,
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit a grid model of a small normed space.
    Grid {
        #[arg(long, default_value_t = 1)]
        dimension: usize,
        #[arg(long, default_value = "linf")]
        norm: GridNorm,
        #[arg(long)]
        m: u64,
        #[arg(long, default_value = "1")]
        radius: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit the normed profile for the given radii and scalars.
    Profile {
        /// Comma separated radii.
        #[arg(long)]
        radii: Option<String>,
        /// Comma separated nonzero scalars.
        #[arg(long, allow_hyphen_values = true)]
        scalars: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io { path: path.display().to_string(), source })
}

fn write_out(out: Option<&Path>, text: &str, stdout: &mut String) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, text).map_err(|source| CliError::Io { path: path.display().to_string(), source }),
        None => {
            stdout.push_str(text);
            Ok(())
        }
    }
}

fn rational_arg(text: &str) -> Result<Rational, CliError> {
    parse_rational(text.trim()).map_err(|e| CliError::Usage(format!("`{text}`: {e}")))
}

fn rational_list(text: &str) -> Result<Vec<Rational>, CliError> {
    text.split(',').filter(|s| !s.trim().is_empty()).map(rational_arg).collect()
}

fn load_model(path: &Path) -> Result<FiniteMetricModel, CliError> {
    FiniteMetricModel::from_json(&read(path)?)
        .map_err(|e| CliError::Input { path: path.display().to_string(), message: e.to_string() })
}

fn load_signature(lang: &Language) -> Result<Option<Signature>, CliError> {
    if let Some(path) = &lang.sig {
        let sig = Signature::parse(&read(path)?)
            .map_err(|e| CliError::Input { path: path.display().to_string(), message: e.to_string() })?;
        return Ok(Some(sig));
    }
    match &lang.model {
        Some(path) => Ok(Some(load_model(path)?.signature()?)),
        None => Ok(None),
    }
}

fn require_signature(lang: &Language) -> Result<Signature, CliError> {
    load_signature(lang)?.ok_or_else(|| CliError::Usage("a signature is needed: pass --sig or --model".into()))
}

/// Formulas of a file, identified by the file stem (suffixed `#k` when the
/// file holds several).
fn load_formulas(path: &Path, sig: Option<&Signature>) -> Result<Vec<(String, Formula)>, CliError> {
    let text = read(path)?;
    let input = |message: String| CliError::Input { path: path.display().to_string(), message };
    let forms = sexp::parse_all(&text).map_err(|e| input(e.to_string()))?;
    if forms.is_empty() {
        return Err(input("no formula found".into()));
    }
    let stem = path.file_stem().map_or_else(|| "formula".to_string(), |s| s.to_string_lossy().into_owned());
    let many = forms.len() > 1;
    forms
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let phi = Formula::from_sexp(s, sig).map_err(|e| input(e.to_string()))?;
            let id = if many { format!("{stem}#{}", i + 1) } else { stem.clone() };
            Ok((id, phi))
        })
        .collect()
}

fn load_one_formula(path: &Path, sig: &Signature) -> Result<Formula, CliError> {
    let mut all = load_formulas(path, Some(sig))?;
    if all.len() != 1 {
        return Err(CliError::Input { path: path.display().to_string(), message: "expected exactly one formula".into() });
    }
    Ok(all.remove(0).1)
}

/// Extensions of `partial` to the free variables of `phi`, each with a label
/// naming the enumerated variables.
fn valuations_for(model: &FiniteMetricModel, phi: &Formula, partial: &Valuation) -> Vec<(String, Valuation)> {
    let missing: BTreeSet<_> = phi.free_variables().into_iter().filter(|v| !partial.contains_key(v)).collect();
    if missing.is_empty() {
        return vec![(String::new(), partial.clone())];
    }
    model
        .valuations(&missing)
        .into_iter()
        .map(|extra| {
            let label = format!("[{}]", model.format_valuation(&extra).replace(',', ";"));
            let mut v = partial.clone();
            v.extend(extra);
            (label, v)
        })
        .collect()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn csv_row(fields: &[&str]) -> String {
    fields.iter().map(|f| csv_field(f)).join(",") + "\n"
}

const CSV_HEADER: &str = "formula,branch,depth,verdict\n";

fn combine(codes: impl IntoIterator<Item = i32>) -> i32 {
    let codes: Vec<i32> = codes.into_iter().collect();
    if codes.contains(&EXIT_FAIL) {
        EXIT_FAIL
    } else if codes.contains(&EXIT_UNKNOWN) {
        EXIT_UNKNOWN
    } else {
        EXIT_OK
    }
}

fn verdict_exit(v: &ApVerdict) -> i32 {
    match v {
        ApVerdict::Satisfied { .. } => EXIT_OK,
        ApVerdict::Refuted { .. } => EXIT_FAIL,
        ApVerdict::Unknown { .. } => EXIT_UNKNOWN,
    }
}

/// Runs a parsed command, appending stdout text to `stdout`. Returns the exit code.
pub fn run(cli: &Cli, stdout: &mut String) -> Result<i32, CliError> {
    match &cli.command {
        Command::Parse { formula, lang, output } => {
            let sig = load_signature(lang)?;
            let mut report = String::new();
            if output.format == Format::Csv {
                report.push_str("formula,fragment,canonical\n");
            }
            for path in formula {
                for (id, phi) in load_formulas(path, sig.as_ref())? {
                    match output.format {
                        Format::Text => writeln!(report, "{phi} ; fragment: {}", phi.classify()).unwrap(),
                        Format::Csv => report.push_str(&csv_row(&[&id, &phi.classify().to_string(), &phi.to_string()])),
                    }
                }
            }
            write_out(output.out.as_deref(), &report, stdout)?;
            Ok(EXIT_OK)
        }
        Command::Approx { formula, lang, branch, dense, depth, output } => {
            let sig = require_signature(lang)?;
            let phi = load_one_formula(formula, &sig)?;
            if *depth == 0 {
                return Err(ApproxError::ZeroDepth.into());
            }
            let code = match (branch, dense) {
                (Some(text), _) => {
                    let code = BranchCode::parse(text)?;
                    check_code(&core_form(&phi), &code, Some(*depth))?;
                    code
                }
                (None, Some(k)) => {
                    let k = k.checked_sub(1).ok_or_else(|| CliError::Usage("--dense is 1-based".into()))?;
                    let mut stream = dense_branches(&phi, *depth)?;
                    crate::approx::DenseBranches::get(&mut stream, k)
                        .ok_or_else(|| CliError::Usage(format!("the dense stream has a single code, not {}", k + 1)))?
                        .code
                }
                (None, None) => return Err(CliError::Usage("pass --branch or --dense".into())),
            };
            let a = approximate(&phi, &code, *depth, sig.metric_symbol())?;
            write_out(output.out.as_deref(), &format!("{}\n", a.formula), stdout)?;
            Ok(EXIT_OK)
        }
        Command::Dense { formula, lang, branches, depth, output } => {
            let sig = require_signature(lang)?;
            let phi = load_one_formula(formula, &sig)?;
            let mut report = String::new();
            if output.format == Format::Csv {
                report.push_str("branch,size,code\n");
            }
            for b in dense_branches(&phi, (*depth).max(1))?.take((*branches).max(1)) {
                match output.format {
                    Format::Text => writeln!(report, "{}: {}", b.index + 1, b.code).unwrap(),
                    Format::Csv => {
                        report.push_str(&csv_row(&[&(b.index + 1).to_string(), &b.code.size().to_string(), &b.code.to_string()]))
                    }
                }
            }
            write_out(output.out.as_deref(), &report, stdout)?;
            Ok(EXIT_OK)
        }
        Command::Check { model, formula, assign, output } => {
            let m = load_model(model)?;
            let sig = m.signature()?;
            let partial = m.parse_assignment(assign)?;
            let mut report = String::new();
            if output.format == Format::Csv {
                report.push_str(CSV_HEADER);
            }
            let mut codes = Vec::new();
            for path in formula {
                for (id, phi) in load_formulas(path, Some(&sig))? {
                    for (label, v) in valuations_for(&m, &phi, &partial) {
                        let holds = satisfies(&m, &phi, &v)?;
                        let verdict = if holds { "satisfied" } else { "not-satisfied" };
                        codes.push(if holds { EXIT_OK } else { EXIT_FAIL });
                        match output.format {
                            Format::Text => writeln!(report, "{id}{label}: {verdict}").unwrap(),
                            Format::Csv => report.push_str(&csv_row(&[&format!("{id}{label}"), "-", "-", verdict])),
                        }
                    }
                }
            }
            write_out(output.out.as_deref(), &report, stdout)?;
            Ok(combine(codes))
        }
        Command::Apcheck { model, formula, assign, branches, depth, jobs, output } => {
            let m = load_model(model)?;
            let sig = m.signature()?;
            let partial = m.parse_assignment(assign)?;
            let mut report = String::new();
            if output.format == Format::Csv {
                report.push_str(CSV_HEADER);
            }
            let mut codes = Vec::new();
            for path in formula {
                for (id, phi) in load_formulas(path, Some(&sig))? {
                    for (label, v) in valuations_for(&m, &phi, &partial) {
                        let r = ap_search(&m, &phi, &v, *branches, *depth, *jobs)?;
                        codes.push(verdict_exit(&r.verdict));
                        write_ap_report(&mut report, output.format, &format!("{id}{label}"), &r.trace, &r.verdict);
                    }
                }
            }
            write_out(output.out.as_deref(), &report, stdout)?;
            Ok(combine(codes))
        }
        Command::Validate { model, profile, slack, output } => {
            let m = load_model(model)?;
            let p = match profile {
                Some(path) => UniformProfile::from_json(&read(path)?)
                    .map_err(|e| CliError::Input { path: path.display().to_string(), message: e.to_string() })?,
                None => normed_profile(&default_radii(), &default_scalars())?,
            };
            let slack = rational_arg(slack)?;
            let r = validate_membership(&m, &p, &slack)?;
            let id = model.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
            let verdict = if r.passed() { "pass" } else { "fail" };
            let mut report = String::new();
            match output.format {
                Format::Text => {
                    for w in &r.warnings {
                        writeln!(report, "warning: {w}").unwrap();
                    }
                    for v in &r.violations {
                        writeln!(report, "violation: {v}").unwrap();
                    }
                    writeln!(report, "{id}: {verdict} at slack {slack} ({} violations)", r.violations.len()).unwrap();
                }
                Format::Csv => {
                    report.push_str(CSV_HEADER);
                    for v in &r.violations {
                        report.push_str(&csv_row(&[&id, "-", "-", &format!("violation: {v}")]));
                    }
                    report.push_str(&csv_row(&[&id, "-", "-", verdict]));
                }
            }
            write_out(output.out.as_deref(), &report, stdout)?;
            Ok(if r.passed() { EXIT_OK } else { EXIT_FAIL })
        }
        Command::Ultra { factors, generator, oracle, profile, out } => {
            let models = factors.iter().map(|p| load_model(p)).collect::<Result<Vec<_>, _>>()?;
            let o = match (generator, oracle) {
                (Some(g), _) => UltrafilterOracle::principal(models.len(), *g)?,
                (None, Some(path)) => UltrafilterOracle::from_json(&read(path)?)?,
                (None, None) => return Err(CliError::Usage("pass --generator or --oracle".into())),
            };
            let p = match profile {
                Some(path) => Some(
                    UniformProfile::from_json(&read(path)?)
                        .map_err(|e| CliError::Input { path: path.display().to_string(), message: e.to_string() })?,
                ),
                None => None,
            };
            let product = build_ultraproduct(&models, &o, p.as_ref())?;
            let json = product.model.to_json();
            match out {
                Some(path) => {
                    write_out(Some(path), &json, stdout)?;
                    writeln!(stdout, "ultraproduct of {} factors: {} classes", models.len(), product.model.size()).unwrap();
                }
                None => stdout.push_str(&json),
            }
            Ok(EXIT_OK)
        }
        Command::Grid { dimension, norm, m, radius, out } => {
            if *m == 0 || *dimension == 0 {
                return Err(CliError::Usage("--m and --dimension must be positive".into()));
            }
            let spec = GridSpec::new(*dimension, *norm, *m, rational_arg(radius)?);
            write_out(out.as_deref(), &grid_model(&spec)?.to_json(), stdout)?;
            Ok(EXIT_OK)
        }
        Command::Profile { radii, scalars, out } => {
            let radii = radii.as_deref().map_or_else(|| Ok(default_radii()), rational_list)?;
            let scalars = scalars.as_deref().map_or_else(|| Ok(default_scalars()), rational_list)?;
            write_out(out.as_deref(), &normed_profile(&radii, &scalars)?.to_json(), stdout)?;
            Ok(EXIT_OK)
        }
    }
}

fn write_ap_report(report: &mut String, format: Format, id: &str, trace: &[crate::model::BranchTrace], verdict: &ApVerdict) {
    let summary_depth = match verdict {
        ApVerdict::Satisfied { depth_checked, .. } => *depth_checked,
        ApVerdict::Refuted { depth } | ApVerdict::Unknown { depth, .. } => *depth,
    };
    let summary_branch = match verdict {
        ApVerdict::Satisfied { branch_index, .. } => (branch_index + 1).to_string(),
        _ => "-".to_string(),
    };
    match format {
        Format::Text => {
            for t in trace {
                match t.first_failure {
                    Some(n) => writeln!(report, "  branch {} {}: fails at depth {n}", t.index + 1, t.code).unwrap(),
                    None => writeln!(report, "  branch {} {}: holds up to depth {summary_depth}", t.index + 1, t.code).unwrap(),
                }
            }
            let detail = match verdict {
                ApVerdict::Satisfied { branch_index, .. } => format!("branch {}, depth {summary_depth}", branch_index + 1),
                ApVerdict::Refuted { depth } => format!("every branch fails by depth {depth}"),
                ApVerdict::Unknown { branches_explored, depth } => format!("{branches_explored} branches to depth {depth}"),
            };
            writeln!(report, "{id}: {} ({detail})", verdict.label()).unwrap();
        }
        Format::Csv => {
            for t in trace {
                let (depth, v) = match t.first_failure {
                    Some(n) => (n, "fail"),
                    None => (summary_depth, "pass"),
                };
                report.push_str(&csv_row(&[id, &(t.index + 1).to_string(), &depth.to_string(), v]));
            }
            report.push_str(&csv_row(&[id, &summary_branch, &summary_depth.to_string(), verdict.label()]));
        }
    }
}

/// Parses arguments and runs; errors become exit code 2 with a message on stderr.
pub fn main_with_args<I, T>(args: I) -> (i32, String, String)
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            return (code, String::new(), e.render().to_string());
        }
    };
    let mut stdout = String::new();
    match run(&cli, &mut stdout) {
        Ok(code) => (code, stdout, String::new()),
        Err(e) => (EXIT_INPUT, stdout, format!("error: {e}\n")),
    }
}
