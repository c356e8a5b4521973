//! Finite metric models, exact satisfaction and the budgeted search for
//! approximate satisfaction.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use num_traits::{Signed, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::approx::{approximate, check_code, dense_branches, stabilization_bound, ApproxError, BranchCode};
use crate::formula::{core_form, BoundVector, Family, Formula, Limit, Term, VarBlock, VarId};
use crate::rational::{parse_rational, Rational};
use crate::signature::{CompactRealSet, Signature, SignatureError, SymbolKind};

pub type PointId = usize;

/// Assignment of points to variables.
pub type Valuation = BTreeMap<VarId, PointId>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("invalid model file: {0}")]
    Json(String),
    #[error("empty universe")]
    EmptyUniverse,
    #[error("duplicate point `{0}`")]
    DuplicatePoint(String),
    #[error("unknown point `{0}`")]
    UnknownPoint(String),
    #[error("invalid rational in {context}: {message}")]
    Rational { context: String, message: String },
    #[error("metric matrix must be {0}x{0}")]
    MetricShape(usize),
    #[error("metric violates {axiom} at ({a}, {b})")]
    MetricAxiom { axiom: &'static str, a: String, b: String },
    #[error("triangle inequality fails: rho({a},{c}) > rho({a},{b}) + rho({b},{c})")]
    Triangle { a: String, b: String, c: String },
    #[error("symbol `{0}` is declared twice")]
    DuplicateSymbol(String),
    #[error("`{name}`: {message}")]
    Table { name: String, message: String },
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
    #[error("`{name}` has arity {expected}, used with {found} argument(s)")]
    Arity { name: String, expected: usize, found: usize },
    #[error("no value for variable {0}")]
    MissingValuation(VarId),
    #[error("formula is not finitary")]
    NotFinitary,
    #[error("quantifier bounds cover {expected} variable(s), block has {found}")]
    BoundArity { expected: usize, found: usize },
    #[error("model does not match the signature: {0}")]
    SignatureMismatch(String),
    #[error("invalid assignment `{0}`")]
    Assignment(String),
    #[error(transparent)]
    Signature(#[from] SignatureError),
    #[error(transparent)]
    Approx(#[from] ApproxError),
}

/// A total table `universe^arity -> T`, indexed in mixed radix with the first
/// argument most significant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunTable<T> {
    pub arity: usize,
    pub values: Vec<T>,
}

impl<T> FunTable<T> {
    fn index(&self, size: usize, args: &[PointId]) -> usize {
        args.iter().fold(0, |acc, a| acc * size + a)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationTable {
    pub arity: usize,
    pub tuples: BTreeSet<Vec<PointId>>,
}

/// A finite structure with an exact rational metric.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FiniteMetricModel {
    points: Vec<String>,
    index: HashMap<String, PointId>,
    metric_symbol: String,
    metric: Vec<Vec<Rational>>,
    model_functions: BTreeMap<String, FunTable<PointId>>,
    real_functions: BTreeMap<String, FunTable<Rational>>,
    relations: BTreeMap<String, RelationTable>,
    constants: BTreeMap<String, PointId>,
}

/// Value of a term.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Value {
    Point(PointId),
    Real(Rational),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    universe: Vec<String>,
    #[serde(default = "default_metric_symbol")]
    metric_symbol: String,
    metric: Vec<Vec<String>>,
    #[serde(default)]
    relations: BTreeMap<String, RelationFile>,
    #[serde(default)]
    model_functions: BTreeMap<String, TableFile>,
    #[serde(default)]
    real_functions: BTreeMap<String, TableFile>,
    #[serde(default)]
    constants: BTreeMap<String, String>,
}

fn default_metric_symbol() -> String {
    "rho".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RelationFile {
    arity: usize,
    tuples: Vec<Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableFile {
    arity: usize,
    table: Vec<TableRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableRow {
    args: Vec<String>,
    value: String,
}

fn tuples(size: usize, arity: usize) -> impl Iterator<Item = Vec<PointId>> {
    let total = size.pow(arity as u32);
    (0..total).map(move |mut k| {
        let mut out = vec![0; arity];
        for slot in out.iter_mut().rev() {
            *slot = k % size;
            k /= size;
        }
        out
    })
}

impl FiniteMetricModel {
    /// Starts a model from its universe and metric; symbols are added with the
    /// `with_*` methods and everything is checked by [`Self::validate`].
    pub fn new(points: Vec<String>, metric_symbol: impl Into<String>, metric: Vec<Vec<Rational>>) -> Result<Self, ModelError> {
        if points.is_empty() {
            return Err(ModelError::EmptyUniverse);
        }
        let mut index = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            if index.insert(p.clone(), i).is_some() {
                return Err(ModelError::DuplicatePoint(p.clone()));
            }
        }
        let model = FiniteMetricModel {
            points,
            index,
            metric_symbol: metric_symbol.into(),
            metric,
            model_functions: BTreeMap::new(),
            real_functions: BTreeMap::new(),
            relations: BTreeMap::new(),
            constants: BTreeMap::new(),
        };
        model.check_metric()?;
        Ok(model)
    }

    fn claim(&self, name: &str) -> Result<(), ModelError> {
        if self.contains_symbol(name) {
            return Err(ModelError::DuplicateSymbol(name.to_string()));
        }
        Ok(())
    }

    pub fn with_relation(mut self, name: &str, arity: usize, tuples: impl IntoIterator<Item = Vec<PointId>>) -> Result<Self, ModelError> {
        self.claim(name)?;
        if arity == 0 {
            return Err(ModelError::Table { name: name.into(), message: "relations need arity >= 1".into() });
        }
        let mut set = BTreeSet::new();
        for t in tuples {
            if t.len() != arity || t.iter().any(|p| *p >= self.size()) {
                return Err(ModelError::Table { name: name.into(), message: format!("bad tuple {t:?}") });
            }
            set.insert(t);
        }
        self.relations.insert(name.to_string(), RelationTable { arity, tuples: set });
        Ok(self)
    }

    pub fn with_model_function(mut self, name: &str, arity: usize, values: Vec<PointId>) -> Result<Self, ModelError> {
        self.claim(name)?;
        if arity == 0 || values.len() != self.size().pow(arity as u32) || values.iter().any(|p| *p >= self.size()) {
            return Err(ModelError::Table { name: name.into(), message: "table is not total over the universe".into() });
        }
        self.model_functions.insert(name.to_string(), FunTable { arity, values });
        Ok(self)
    }

    pub fn with_real_function(mut self, name: &str, arity: usize, values: Vec<Rational>) -> Result<Self, ModelError> {
        self.claim(name)?;
        if arity == 0 || values.len() != self.size().pow(arity as u32) {
            return Err(ModelError::Table { name: name.into(), message: "table is not total over the universe".into() });
        }
        self.real_functions.insert(name.to_string(), FunTable { arity, values });
        Ok(self)
    }

    pub fn with_constant(mut self, name: &str, point: PointId) -> Result<Self, ModelError> {
        self.claim(name)?;
        if point >= self.size() {
            return Err(ModelError::UnknownPoint(point.to_string()));
        }
        self.constants.insert(name.to_string(), point);
        Ok(self)
    }

    pub fn size(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[String] {
        &self.points
    }

    pub fn point_name(&self, p: PointId) -> &str {
        &self.points[p]
    }

    pub fn point(&self, name: &str) -> Result<PointId, ModelError> {
        self.index.get(name).copied().ok_or_else(|| ModelError::UnknownPoint(name.to_string()))
    }

    pub fn metric_symbol(&self) -> &str {
        &self.metric_symbol
    }

    pub fn distance(&self, a: PointId, b: PointId) -> &Rational {
        &self.metric[a][b]
    }

    pub fn relations(&self) -> &BTreeMap<String, RelationTable> {
        &self.relations
    }

    pub fn relation(&self, name: &str) -> Option<&RelationTable> {
        self.relations.get(name)
    }

    pub fn model_functions(&self) -> &BTreeMap<String, FunTable<PointId>> {
        &self.model_functions
    }

    pub fn real_functions(&self) -> &BTreeMap<String, FunTable<Rational>> {
        &self.real_functions
    }

    pub fn constants(&self) -> &BTreeMap<String, PointId> {
        &self.constants
    }

    pub fn contains_symbol(&self, name: &str) -> bool {
        name == self.metric_symbol
            || self.model_functions.contains_key(name)
            || self.real_functions.contains_key(name)
            || self.relations.contains_key(name)
            || self.constants.contains_key(name)
    }

    pub fn apply_model(&self, fun: &str, args: &[PointId]) -> Result<PointId, ModelError> {
        if let Some(c) = self.constants.get(fun) {
            return if args.is_empty() { Ok(*c) } else { Err(arity_error(fun, 0, args.len())) };
        }
        let table = self.model_functions.get(fun).ok_or_else(|| ModelError::UnknownSymbol(fun.into()))?;
        if table.arity != args.len() {
            return Err(arity_error(fun, table.arity, args.len()));
        }
        Ok(table.values[table.index(self.size(), args)])
    }

    pub fn apply_real(&self, fun: &str, args: &[PointId]) -> Result<Rational, ModelError> {
        if fun == self.metric_symbol {
            return match args {
                [a, b] => Ok(self.metric[*a][*b].clone()),
                _ => Err(arity_error(fun, 2, args.len())),
            };
        }
        let table = self.real_functions.get(fun).ok_or_else(|| ModelError::UnknownSymbol(fun.into()))?;
        if table.arity != args.len() {
            return Err(arity_error(fun, table.arity, args.len()));
        }
        Ok(table.values[table.index(self.size(), args)].clone())
    }

    /// Every value a real-valued term can take in this model.
    pub fn real_values(&self) -> BTreeSet<Rational> {
        let mut out: BTreeSet<Rational> = self.metric.iter().flatten().cloned().collect();
        for table in self.real_functions.values() {
            out.extend(table.values.iter().cloned());
        }
        out
    }

    fn check_metric(&self) -> Result<(), ModelError> {
        let n = self.size();
        if self.metric.len() != n || self.metric.iter().any(|row| row.len() != n) {
            return Err(ModelError::MetricShape(n));
        }
        let name = |i: usize| self.points[i].clone();
        for a in 0..n {
            if !self.metric[a][a].is_zero() {
                return Err(ModelError::MetricAxiom { axiom: "rho(x,x) = 0", a: name(a), b: name(a) });
            }
            for b in 0..n {
                if self.metric[a][b] != self.metric[b][a] {
                    return Err(ModelError::MetricAxiom { axiom: "symmetry", a: name(a), b: name(b) });
                }
                if a != b && !self.metric[a][b].is_positive() {
                    return Err(ModelError::MetricAxiom { axiom: "positivity", a: name(a), b: name(b) });
                }
            }
        }
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    if self.metric[a][c] > &self.metric[a][b] + &self.metric[b][c] {
                        return Err(ModelError::Triangle { a: name(a), b: name(b), c: name(c) });
                    }
                }
            }
        }
        Ok(())
    }

    /// Re-checks every invariant: metric axioms, distinct symbols, total tables.
    pub fn validate(&self) -> Result<(), ModelError> {
        self.check_metric()?;
        let mut seen = BTreeSet::from([self.metric_symbol.clone()]);
        let names = self
            .model_functions
            .keys()
            .chain(self.real_functions.keys())
            .chain(self.relations.keys())
            .chain(self.constants.keys());
        for name in names {
            if !seen.insert(name.clone()) {
                return Err(ModelError::DuplicateSymbol(name.clone()));
            }
        }
        let n = self.size();
        for (name, t) in &self.model_functions {
            if t.values.len() != n.pow(t.arity as u32) || t.values.iter().any(|p| *p >= n) {
                return Err(ModelError::Table { name: name.clone(), message: "table is not total".into() });
            }
        }
        for (name, t) in &self.real_functions {
            if t.values.len() != n.pow(t.arity as u32) {
                return Err(ModelError::Table { name: name.clone(), message: "table is not total".into() });
            }
        }
        Ok(())
    }

    /// The signature interpreted by this model.
    pub fn signature(&self) -> Result<Signature, ModelError> {
        let mut b = Signature::builder().real_function(&self.metric_symbol, 2).metric(&self.metric_symbol);
        for (name, t) in &self.model_functions {
            b = b.model_function(name, t.arity);
        }
        for (name, t) in &self.real_functions {
            b = b.real_function(name, t.arity);
        }
        for (name, r) in &self.relations {
            b = b.relation(name, r.arity);
        }
        for name in self.constants.keys() {
            b = b.constant(name);
        }
        Ok(b.build()?)
    }

    /// Checks that every symbol of `sig` is interpreted with its declared arity.
    pub fn conforms_to(&self, sig: &Signature) -> Result<(), ModelError> {
        if sig.metric_symbol() != self.metric_symbol {
            return Err(ModelError::SignatureMismatch(format!(
                "metric symbol `{}` vs `{}`",
                sig.metric_symbol(),
                self.metric_symbol
            )));
        }
        let mismatch = |name: &str| ModelError::SignatureMismatch(format!("`{name}` is not interpreted as declared"));
        for (name, arity) in sig.model_functions() {
            if self.model_functions.get(name).map(|t| t.arity) != Some(*arity) {
                return Err(mismatch(name));
            }
        }
        for (name, arity) in sig.real_functions() {
            let ok = if name == &self.metric_symbol { *arity == 2 } else { self.real_functions.get(name).map(|t| t.arity) == Some(*arity) };
            if !ok {
                return Err(mismatch(name));
            }
        }
        for (name, arity) in sig.relations() {
            if self.relations.get(name).map(|r| r.arity) != Some(*arity) {
                return Err(mismatch(name));
            }
        }
        for name in sig.constants() {
            if !self.constants.contains_key(name) {
                return Err(mismatch(name));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| ModelError::Json(e.to_string()))?;
        Self::from_file(file)
    }

    fn from_file(file: ModelFile) -> Result<Self, ModelError> {
        let rational = |context: String, text: &str| {
            parse_rational(text).map_err(|e| ModelError::Rational { context, message: e.to_string() })
        };
        let mut metric = Vec::with_capacity(file.metric.len());
        for (i, row) in file.metric.iter().enumerate() {
            let parsed = row
                .iter()
                .enumerate()
                .map(|(j, v)| rational(format!("metric[{i}][{j}]"), v))
                .collect::<Result<Vec<_>, _>>()?;
            metric.push(parsed);
        }
        let mut model = FiniteMetricModel::new(file.universe, file.metric_symbol, metric)?;
        let lookup = |model: &FiniteMetricModel, args: &[String]| -> Result<Vec<PointId>, ModelError> {
            args.iter().map(|a| model.point(a)).collect()
        };
        for (name, rel) in &file.relations {
            let ts = rel.tuples.iter().map(|t| lookup(&model, t)).collect::<Result<Vec<_>, _>>()?;
            model = model.with_relation(name, rel.arity, ts)?;
        }
        for (name, table) in &file.model_functions {
            let values = fill_table(&model, name, table, |v| model.point(v))?;
            model = model.with_model_function(name, table.arity, values)?;
        }
        for (name, table) in &file.real_functions {
            let values = fill_table(&model, name, table, |v| rational(format!("`{name}`"), v))?;
            model = model.with_real_function(name, table.arity, values)?;
        }
        for (name, point) in &file.constants {
            let p = model.point(point)?;
            model = model.with_constant(name, p)?;
        }
        model.validate()?;
        Ok(model)
    }

    /// Canonical JSON form: tables listed in argument order.
    pub fn to_json(&self) -> String {
        let names = |args: &[PointId]| args.iter().map(|a| self.points[*a].clone()).collect::<Vec<_>>();
        let file = ModelFile {
            universe: self.points.clone(),
            metric_symbol: self.metric_symbol.clone(),
            metric: self.metric.iter().map(|row| row.iter().map(|v| v.to_string()).collect()).collect(),
            relations: self
                .relations
                .iter()
                .map(|(k, r)| (k.clone(), RelationFile { arity: r.arity, tuples: r.tuples.iter().map(|t| names(t)).collect() }))
                .collect(),
            model_functions: self
                .model_functions
                .iter()
                .map(|(k, t)| {
                    let table = tuples(self.size(), t.arity)
                        .zip(&t.values)
                        .map(|(args, v)| TableRow { args: names(&args), value: self.points[*v].clone() })
                        .collect();
                    (k.clone(), TableFile { arity: t.arity, table })
                })
                .collect(),
            real_functions: self
                .real_functions
                .iter()
                .map(|(k, t)| {
                    let table = tuples(self.size(), t.arity)
                        .zip(&t.values)
                        .map(|(args, v)| TableRow { args: names(&args), value: v.to_string() })
                        .collect();
                    (k.clone(), TableFile { arity: t.arity, table })
                })
                .collect(),
            constants: self.constants.iter().map(|(k, p)| (k.clone(), self.points[*p].clone())).collect(),
        };
        serde_json::to_string_pretty(&file).expect("model serializes") + "\n"
    }

    /// Parses `0=a,1=b`.
    pub fn parse_assignment(&self, text: &str) -> Result<Valuation, ModelError> {
        let mut out = Valuation::new();
        for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (var, point) = part.split_once('=').ok_or_else(|| ModelError::Assignment(part.into()))?;
            let var: VarId = var.trim().parse().map_err(|_| ModelError::Assignment(part.into()))?;
            out.insert(var, self.point(point.trim())?);
        }
        Ok(out)
    }

    /// Every valuation of `vars`, in universe order.
    pub fn valuations(&self, vars: &BTreeSet<VarId>) -> Vec<Valuation> {
        let vars: Vec<VarId> = vars.iter().copied().collect();
        tuples(self.size(), vars.len())
            .map(|t| vars.iter().copied().zip(t).collect())
            .collect()
    }

    pub fn format_valuation(&self, v: &Valuation) -> String {
        v.iter().map(|(k, p)| format!("{k}={}", self.points[*p])).collect::<Vec<_>>().join(",")
    }
}

fn arity_error(name: &str, expected: usize, found: usize) -> ModelError {
    ModelError::Arity { name: name.to_string(), expected, found }
}

fn fill_table<T: Clone>(
    model: &FiniteMetricModel,
    name: &str,
    table: &TableFile,
    mut value: impl FnMut(&str) -> Result<T, ModelError>,
) -> Result<Vec<T>, ModelError> {
    let n = model.size();
    let mut values: Vec<Option<T>> = vec![None; n.pow(table.arity as u32)];
    for row in &table.table {
        if row.args.len() != table.arity {
            return Err(arity_error(name, table.arity, row.args.len()));
        }
        let args = row.args.iter().map(|a| model.point(a)).collect::<Result<Vec<_>, _>>()?;
        let k = args.iter().fold(0, |acc, a| acc * n + a);
        if values[k].replace(value(&row.value)?).is_some() {
            return Err(ModelError::Table { name: name.into(), message: format!("duplicate row for {:?}", row.args) });
        }
    }
    values
        .into_iter()
        .enumerate()
        .map(|(k, v)| {
            v.ok_or_else(|| {
                let args: Vec<_> = tuples(n, table.arity).nth(k).unwrap().iter().map(|p| model.points[*p].clone()).collect();
                ModelError::Table { name: name.into(), message: format!("missing row for {args:?}") }
            })
        })
        .collect()
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Point(p) => write!(f, "point {p}"),
            Value::Real(r) => write!(f, "{r}"),
        }
    }
}

pub fn eval_term(model: &FiniteMetricModel, t: &Term, v: &Valuation) -> Result<Value, ModelError> {
    let points = |args: &[Term]| -> Result<Vec<PointId>, ModelError> {
        args.iter()
            .map(|a| match eval_term(model, a, v)? {
                Value::Point(p) => Ok(p),
                Value::Real(_) => Err(ModelError::SignatureMismatch(format!("real-valued argument `{a}`"))),
            })
            .collect()
    };
    Ok(match t {
        Term::Var(x) => Value::Point(*v.get(x).ok_or(ModelError::MissingValuation(*x))?),
        Term::Const(c) => Value::Point(model.apply_model(c, &[])?),
        Term::Model { fun, args } => Value::Point(model.apply_model(fun, &points(args)?)?),
        Term::Real { fun, args } => Value::Real(model.apply_real(fun, &points(args)?)?),
    })
}

enum CTerm<'m> {
    Var(usize),
    Point(PointId),
    Model(&'m FunTable<PointId>, Vec<CTerm<'m>>),
    Real(&'m FunTable<Rational>, Vec<CTerm<'m>>),
    Metric(Box<CTerm<'m>>, Box<CTerm<'m>>),
}

struct Block<'m> {
    tuples: &'m BTreeSet<Vec<PointId>>,
    slots: Vec<Option<usize>>,
}

enum Compiled<'m> {
    Const(bool),
    Rel(&'m BTreeSet<Vec<PointId>>, Vec<CTerm<'m>>),
    In(CompactRealSet, CTerm<'m>),
    And(Vec<Compiled<'m>>),
    Not(Box<Compiled<'m>>),
    Exists(Vec<Block<'m>>, Box<Compiled<'m>>),
}

struct Compiler<'m> {
    model: &'m FiniteMetricModel,
}

impl<'m> Compiler<'m> {
    fn term(&self, t: &Term) -> Result<CTerm<'m>, ModelError> {
        let m = self.model;
        Ok(match t {
            Term::Var(x) => CTerm::Var(*x as usize),
            Term::Const(c) => CTerm::Point(m.apply_model(c, &[])?),
            Term::Model { fun, args } => {
                let table = m.model_functions.get(fun).ok_or_else(|| ModelError::UnknownSymbol(fun.clone()))?;
                if table.arity != args.len() {
                    return Err(arity_error(fun, table.arity, args.len()));
                }
                CTerm::Model(table, self.model_args(args)?)
            }
            Term::Real { fun, args } if fun == &m.metric_symbol => match args.as_slice() {
                [a, b] => CTerm::Metric(Box::new(self.model_arg(a)?), Box::new(self.model_arg(b)?)),
                _ => return Err(arity_error(fun, 2, args.len())),
            },
            Term::Real { fun, args } => {
                let table = m.real_functions.get(fun).ok_or_else(|| ModelError::UnknownSymbol(fun.clone()))?;
                if table.arity != args.len() {
                    return Err(arity_error(fun, table.arity, args.len()));
                }
                CTerm::Real(table, self.model_args(args)?)
            }
        })
    }

    fn model_arg(&self, t: &Term) -> Result<CTerm<'m>, ModelError> {
        if let Term::Real { .. } = t {
            return Err(ModelError::SignatureMismatch(format!("real-valued argument `{t}`")));
        }
        self.term(t)
    }

    fn model_args(&self, args: &[Term]) -> Result<Vec<CTerm<'m>>, ModelError> {
        args.iter().map(|a| self.model_arg(a)).collect()
    }

    fn relation(&self, name: &str) -> Result<&'m RelationTable, ModelError> {
        self.model.relations.get(name).ok_or_else(|| ModelError::UnknownSymbol(name.to_string()))
    }

    fn formula(&self, phi: &Formula) -> Result<Compiled<'m>, ModelError> {
        Ok(match phi {
            Formula::Rel { rel, args } => {
                let table = self.relation(rel)?;
                if table.arity != args.len() {
                    return Err(arity_error(rel, table.arity, args.len()));
                }
                Compiled::Rel(&table.tuples, self.model_args(args)?)
            }
            Formula::In { set, term } => {
                let t = self.term(term)?;
                if matches!(t, CTerm::Var(_) | CTerm::Point(_) | CTerm::Model(..)) {
                    return Err(ModelError::SignatureMismatch(format!("`{term}` is model valued")));
                }
                Compiled::In(set.clone(), t)
            }
            Formula::And { family, limit } => {
                let Limit::Finite(k) = limit else { return Err(ModelError::NotFinitary) };
                let members = match family {
                    Family::Explicit(list) => list[..*k].to_vec(),
                    Family::Generated(_) => family.members(*k).map_err(ApproxError::from)?,
                };
                Compiled::And(members.iter().map(|m| self.formula(m)).collect::<Result<_, _>>()?)
            }
            Formula::Not(body) => Compiled::Not(Box::new(self.formula(body)?)),
            Formula::Exists { bound, vars, body } => self.exists(bound, vars, body)?,
            Formula::Or { .. } | Formula::Implies(..) | Formula::Forall { .. } => {
                unreachable!("compiled formulas are core")
            }
        })
    }

    fn exists(&self, bound: &BoundVector, vars: &VarBlock, body: &Formula) -> Result<Compiled<'m>, ModelError> {
        let occurring = body.free_variables();
        let mut blocks = Vec::new();
        let mut all_nonempty = true;
        let mut offset = 0;
        for name in &bound.head {
            let rel = self.relation(name)?;
            let block: Vec<VarId> = vars.head.get(offset..offset + rel.arity).map(<[VarId]>::to_vec).unwrap_or_default();
            if block.len() != rel.arity {
                return Err(ModelError::BoundArity { expected: offset + rel.arity, found: vars.head.len() });
            }
            offset += rel.arity;
            if block.iter().any(|v| occurring.contains(v)) {
                let slots = block.iter().map(|v| occurring.contains(v).then_some(*v as usize)).collect();
                blocks.push(Block { tuples: &rel.tuples, slots });
            } else {
                all_nonempty &= !rel.tuples.is_empty();
            }
        }
        if offset != vars.head.len() {
            return Err(ModelError::BoundArity { expected: offset, found: vars.head.len() });
        }
        if let (Some(name), Some(pattern)) = (&bound.tail, vars.tail) {
            let rel = self.relation(name)?;
            all_nonempty &= !rel.tuples.is_empty();
            let mut used: BTreeSet<usize> = BTreeSet::new();
            for v in &occurring {
                if let Some(k) = pattern.index_of(*v) {
                    used.insert(k / rel.arity);
                }
            }
            for b in used {
                let slots = (0..rel.arity)
                    .map(|i| {
                        let v = pattern.nth(b * rel.arity + i);
                        occurring.contains(&v).then_some(v as usize)
                    })
                    .collect();
                blocks.push(Block { tuples: &rel.tuples, slots });
            }
        } else if bound.tail.is_some() != vars.tail.is_some() {
            return Err(ModelError::BoundArity { expected: offset, found: vars.head.len() });
        }
        if !all_nonempty {
            return Ok(Compiled::Const(false));
        }
        Ok(Compiled::Exists(blocks, Box::new(self.formula(body)?)))
    }
}

fn eval_cterm_point(t: &CTerm<'_>, val: &[PointId], size: usize) -> PointId {
    match t {
        CTerm::Var(x) => val[*x],
        CTerm::Point(p) => *p,
        CTerm::Model(table, args) => {
            let k = args.iter().fold(0, |acc, a| acc * size + eval_cterm_point(a, val, size));
            table.values[k]
        }
        _ => unreachable!("checked at compile time"),
    }
}

fn eval_cterm_real<'a>(t: &'a CTerm<'_>, val: &[PointId], model: &'a FiniteMetricModel) -> &'a Rational {
    let size = model.size();
    match t {
        CTerm::Metric(a, b) => &model.metric[eval_cterm_point(a, val, size)][eval_cterm_point(b, val, size)],
        CTerm::Real(table, args) => {
            let k = args.iter().fold(0, |acc, a| acc * size + eval_cterm_point(a, val, size));
            &table.values[k]
        }
        _ => unreachable!("checked at compile time"),
    }
}

fn eval(c: &Compiled<'_>, val: &mut Vec<PointId>, model: &FiniteMetricModel) -> bool {
    match c {
        Compiled::Const(b) => *b,
        Compiled::Rel(tuples, args) => {
            let t: Vec<PointId> = args.iter().map(|a| eval_cterm_point(a, val, model.size())).collect();
            tuples.contains(&t)
        }
        Compiled::In(set, term) => set.contains(eval_cterm_real(term, val, model)),
        Compiled::And(parts) => parts.iter().all(|p| eval(p, val, model)),
        Compiled::Not(body) => !eval(body, val, model),
        Compiled::Exists(blocks, body) => search(blocks, body, val, model),
    }
}

fn search(blocks: &[Block<'_>], body: &Compiled<'_>, val: &mut Vec<PointId>, model: &FiniteMetricModel) -> bool {
    let Some((first, rest)) = blocks.split_first() else { return eval(body, val, model) };
    let saved: Vec<PointId> = first.slots.iter().map(|s| s.map_or(0, |s| val[s])).collect();
    let mut found = false;
    for tuple in first.tuples {
        for (slot, p) in first.slots.iter().zip(tuple) {
            if let Some(s) = slot {
                val[*s] = *p;
            }
        }
        if search(rest, body, val, model) {
            found = true;
            break;
        }
    }
    for (slot, p) in first.slots.iter().zip(saved) {
        if let Some(s) = slot {
            val[*s] = p;
        }
    }
    found
}

/// A formula prepared for repeated evaluation in one model.
pub struct Evaluator<'m> {
    model: &'m FiniteMetricModel,
    compiled: Compiled<'m>,
    free: BTreeSet<VarId>,
    slots: usize,
}

impl<'m> Evaluator<'m> {
    pub fn new(model: &'m FiniteMetricModel, phi: &Formula) -> Result<Self, ModelError> {
        let core = core_form(phi);
        if !core.is_finitary() {
            return Err(ModelError::NotFinitary);
        }
        let compiled = Compiler { model }.formula(&core)?;
        let slots = core.max_var_id().map_or(0, |v| v as usize + 1);
        Ok(Evaluator { model, compiled, free: core.free_variables(), slots })
    }

    pub fn free_variables(&self) -> &BTreeSet<VarId> {
        &self.free
    }

    pub fn eval(&self, v: &Valuation) -> Result<bool, ModelError> {
        let mut val = vec![0; self.slots];
        for x in &self.free {
            let p = *v.get(x).ok_or(ModelError::MissingValuation(*x))?;
            val[*x as usize] = p;
        }
        Ok(eval(&self.compiled, &mut val, self.model))
    }
}

/// Exact satisfaction `M ⊨ φ[v]` for finitary formulas.
pub fn satisfies(model: &FiniteMetricModel, phi: &Formula, v: &Valuation) -> Result<bool, ModelError> {
    Evaluator::new(model, phi)?.eval(v)
}

/// Outcome of the budgeted search for approximate satisfaction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ApVerdict {
    Satisfied { branch_index: usize, branch: BranchCode, certified: bool, depth_checked: u64 },
    Refuted { depth: u64 },
    Unknown { branches_explored: usize, depth: u64 },
}

impl ApVerdict {
    pub fn label(&self) -> &'static str {
        match self {
            ApVerdict::Satisfied { certified: true, .. } => "satisfied-certified",
            ApVerdict::Satisfied { .. } => "satisfied",
            ApVerdict::Refuted { .. } => "refuted",
            ApVerdict::Unknown { .. } => "unknown",
        }
    }

    pub fn is_satisfied(&self) -> bool {
        matches!(self, ApVerdict::Satisfied { .. })
    }
}

/// Per-branch outcome of the search.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BranchTrace {
    pub index: usize,
    pub code: BranchCode,
    /// First failing depth, `None` when every depth up to the budget passed.
    pub first_failure: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApReport {
    pub verdict: ApVerdict,
    /// Explored branches in stream order, ending at the first satisfying one.
    pub trace: Vec<BranchTrace>,
}

/// True when a depth-`N` success of a branch implies success at every depth:
/// the formula is finitary and negations only wrap negation-free bodies.
pub fn certifiable(phi: &Formula) -> bool {
    fn nots_ok(f: &Formula) -> bool {
        match f {
            Formula::Not(body) => body.is_positive(),
            _ => f.children().into_iter().all(nots_ok),
        }
    }
    let core = core_form(phi);
    core.is_finitary() && nots_ok(&core)
}

fn first_failure(model: &FiniteMetricModel, phi: &Formula, code: &BranchCode, v: &Valuation, depth: u64) -> Result<Option<u64>, ModelError> {
    for n in 1..=depth {
        let a = approximate(phi, code, n, model.metric_symbol())?;
        if !satisfies(model, &a.formula, v)? {
            return Ok(Some(n));
        }
    }
    Ok(None)
}

/// Explores the first `branches` dense codes at depths `1..=depth`.
/// `jobs > 1` evaluates branches in parallel; the report is the same.
pub fn ap_search(
    model: &FiniteMetricModel,
    phi: &Formula,
    v: &Valuation,
    branches: usize,
    depth: u64,
    jobs: usize,
) -> Result<ApReport, ModelError> {
    let branches = branches.max(1);
    let depth = depth.max(1);
    let mut stream = dense_branches(phi, depth)?;
    let single = stream.is_single();
    let candidates: Vec<_> = stream.by_ref().take(branches).collect();
    let exhausted = single;
    let cert_base = certifiable(phi) && stabilization_bound(&core_form(phi), model).is_ok_and(|b| b <= depth);

    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().map_err(|e| ModelError::Json(e.to_string()))?;
    let mut trace = Vec::new();
    let chunk = if jobs > 1 { jobs * 2 } else { 1 };
    for group in candidates.chunks(chunk) {
        let results: Vec<Result<Option<u64>, ModelError>> = if jobs > 1 {
            pool.install(|| group.par_iter().map(|b| first_failure(model, phi, &b.code, v, depth)).collect())
        } else {
            group.iter().map(|b| first_failure(model, phi, &b.code, v, depth)).collect()
        };
        for (b, r) in group.iter().zip(results) {
            let failure = r?;
            trace.push(BranchTrace { index: b.index, code: b.code.clone(), first_failure: failure });
            if failure.is_none() {
                let certified = cert_base && b.neg_seed_len as u64 <= depth;
                let verdict = ApVerdict::Satisfied { branch_index: b.index, branch: b.code.clone(), certified, depth_checked: depth };
                return Ok(ApReport { verdict, trace });
            }
        }
    }
    let verdict = if exhausted {
        let worst = trace.iter().filter_map(|t| t.first_failure).max().unwrap_or(1);
        ApVerdict::Refuted { depth: worst }
    } else {
        ApVerdict::Unknown { branches_explored: trace.len(), depth }
    };
    Ok(ApReport { verdict, trace })
}

/// Budgeted semi-decision of `M ⊨_AP φ[v]`.
pub fn ap_satisfies(model: &FiniteMetricModel, phi: &Formula, v: &Valuation, branches: usize, depth: u64) -> Result<ApVerdict, ModelError> {
    Ok(ap_search(model, phi, v, branches, depth, 1)?.verdict)
}

/// `[M ⊨ φ_{h,1}, ..., M ⊨ φ_{h,N}]`.
pub fn ap_satisfies_on_branch(model: &FiniteMetricModel, phi: &Formula, v: &Valuation, h: &BranchCode, depth: u64) -> Result<Vec<bool>, ModelError> {
    check_code(&core_form(phi), h, Some(depth.max(1)))?;
    (1..=depth)
        .map(|n| {
            let a = approximate(phi, h, n, model.metric_symbol())?;
            satisfies(model, &a.formula, v)
        })
        .collect()
}

/// Signature kind of a model symbol, if interpreted.
pub fn symbol_kind(model: &FiniteMetricModel, name: &str) -> Option<SymbolKind> {
    if name == model.metric_symbol || model.real_functions.contains_key(name) {
        let arity = model.real_functions.get(name).map_or(2, |t| t.arity);
        return Some(SymbolKind::RealFunction { arity });
    }
    if let Some(t) = model.model_functions.get(name) {
        return Some(SymbolKind::ModelFunction { arity: t.arity });
    }
    if let Some(r) = model.relations.get(name) {
        return Some(SymbolKind::Relation { arity: r.arity });
    }
    model.constants.contains_key(name).then_some(SymbolKind::Constant)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{frac, int};

    pub(crate) fn m3() -> FiniteMetricModel {
        let third = frac(1, 3);
        let metric = vec![
            vec![int(0), third.clone(), int(1)],
            vec![third, int(0), int(1)],
            vec![int(1), int(1), int(0)],
        ];
        FiniteMetricModel::new(vec!["a".into(), "b".into(), "c".into()], "rho", metric)
            .unwrap()
            .with_relation("C", 1, [vec![0]])
            .unwrap()
            .with_relation("U", 1, [vec![0], vec![1], vec![2]])
            .unwrap()
    }

    fn at(p: PointId) -> Valuation {
        Valuation::from([(0, p)])
    }

    fn c0() -> Formula {
        Formula::rel("C", vec![Term::var(0)])
    }

    #[test]
    fn json_roundtrip_and_errors() {
        let m = m3();
        let again = FiniteMetricModel::from_json(&m.to_json()).unwrap();
        assert_eq!(again, m);
        let bad = r#"{"universe":["a","b","c"],"metric":[["0","1","3"],["1","0","1"],["3","1","0"]]}"#;
        assert_eq!(
            FiniteMetricModel::from_json(bad),
            Err(ModelError::Triangle { a: "a".into(), b: "b".into(), c: "c".into() })
        );
        let missing = r#"{"universe":["a"],"metric":[["0"]],"real_functions":{"f":{"arity":1,"table":[]}}}"#;
        assert!(matches!(FiniteMetricModel::from_json(missing), Err(ModelError::Table { .. })));
    }

    #[test]
    fn term_evaluation() {
        let m = m3();
        let v = Valuation::from([(0, 0), (1, 1)]);
        assert_eq!(eval_term(&m, &Term::var(0), &v).unwrap(), Value::Point(0));
        let rho = Term::real("rho", vec![Term::var(0), Term::var(1)]);
        assert_eq!(eval_term(&m, &rho, &v).unwrap(), Value::Real(frac(1, 3)));
        assert_eq!(eval_term(&m, &Term::var(7), &v), Err(ModelError::MissingValuation(7)));
    }

    #[test]
    fn satisfaction_of_approximations() {
        let m = m3();
        let a3 = approximate(&c0(), &BranchCode::Leaf, 3, "rho").unwrap().formula;
        let a4 = approximate(&c0(), &BranchCode::Leaf, 4, "rho").unwrap().formula;
        assert!(satisfies(&m, &a3, &at(1)).unwrap());
        assert!(!satisfies(&m, &a4, &at(1)).unwrap());
        assert!(satisfies(&m, &Formula::and(vec![]), &Valuation::new()).unwrap());
    }

    #[test]
    fn ap_verdicts_on_m3() {
        let m = m3();
        let sat = ap_satisfies(&m, &c0(), &at(0), 1, 8).unwrap();
        assert!(matches!(sat, ApVerdict::Satisfied { certified: true, depth_checked: 8, .. }), "{sat:?}");
        assert_eq!(ap_satisfies(&m, &c0(), &at(1), 1, 8).unwrap(), ApVerdict::Refuted { depth: 4 });
        let neg = ap_satisfies(&m, &Formula::not(c0()), &at(1), 16, 8).unwrap();
        let ApVerdict::Satisfied { branch, .. } = neg else { panic!("{neg:?}") };
        let BranchCode::Neg(pairs) = branch else { panic!() };
        assert!(pairs.iter().all(|(_, d)| *d >= 4));
        assert_eq!(
            ap_satisfies_on_branch(&m, &c0(), &at(1), &BranchCode::Leaf, 6).unwrap(),
            vec![true, true, true, false, false, false]
        );
        assert_eq!(ap_satisfies_on_branch(&m, &c0(), &at(0), &BranchCode::Leaf, 6).unwrap(), vec![true; 6]);
    }

    #[test]
    fn stabilization_examples() {
        let m = m3();
        assert_eq!(stabilization_bound(&c0(), &m).unwrap(), 4);
        let one = m.clone().with_real_function("k", 1, vec![int(1); 3]).unwrap();
        let k = Formula::within(CompactRealSet::interval(int(0), int(1)).unwrap(), Term::real("k", vec![Term::var(0)]));
        let only_k = FiniteMetricModel::new(vec!["p".into()], "rho", vec![vec![int(0)]])
            .unwrap()
            .with_real_function("k", 1, vec![int(1)])
            .unwrap();
        assert_eq!(stabilization_bound(&k, &only_k).unwrap(), 1);
        let half = FiniteMetricModel::new(vec!["p".into()], "rho", vec![vec![int(0)]])
            .unwrap()
            .with_real_function("k", 1, vec![frac(3, 2)])
            .unwrap();
        assert_eq!(stabilization_bound(&k, &half).unwrap(), 3);
        assert!(stabilization_bound(&k, &one).is_ok());
    }

    #[test]
    fn parallel_search_matches_sequential() {
        let m = m3();
        let phi = Formula::and(vec![Formula::not(c0()), Formula::not(Formula::rel("C", vec![Term::var(1)]))]);
        let v = Valuation::from([(0, 1), (1, 2)]);
        let seq = ap_search(&m, &phi, &v, 40, 5, 1).unwrap();
        let par = ap_search(&m, &phi, &v, 40, 5, 4).unwrap();
        assert_eq!(seq, par);
    }
}
