//! Uniform-collection profiles: bound, directedness and continuity
//! assignments, a validator for finite models, the normed-space profile and a
//! builder for grid models of small normed spaces.

use std::collections::BTreeMap;
use std::fmt;

use itertools::Itertools;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{FiniteMetricModel, ModelError, PointId};
use crate::rational::{frac, int, parse_rational, Rational};
use crate::signature::{default_radii, default_scalars, normed, CompactRealSet, Interval};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UniformError {
    #[error("invalid profile file: {0}")]
    Json(String),
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("profile does not match the model: {0}")]
    SignatureMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Where the values of `f` on `K⃗` must land.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BoundTarget {
    Relation(String),
    Compact(CompactRealSet),
}

impl fmt::Display for BoundTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundTarget::Relation(r) => f.write_str(r),
            BoundTarget::Compact(set) => write!(f, "{set}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunBound {
    pub function: String,
    pub bounds: Vec<String>,
    pub target: BoundTarget,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairCover {
    pub first: String,
    pub second: String,
    pub cover: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Modulus {
    pub function: String,
    pub bounds: Vec<String>,
    pub epsilon: Rational,
    pub delta: Rational,
}

/// The assignments defining a uniform collection, restricted to finitely
/// many symbols, bound vectors and tolerances.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct UniformProfile {
    pub fun_bounds: Vec<FunBound>,
    pub pair_covers: Vec<PairCover>,
    pub moduli: Vec<Modulus>,
    pub epsilon_grid: Vec<Rational>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileFile {
    #[serde(default)]
    fun_bounds: Vec<FunBoundFile>,
    #[serde(default)]
    pair_covers: Vec<PairCoverFile>,
    #[serde(default)]
    moduli: Vec<ModulusFile>,
    #[serde(default)]
    epsilon_grid: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FunBoundFile {
    function: String,
    bounds: Vec<String>,
    target: TargetFile,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum TargetFile {
    Relation(String),
    Compact(Vec<[String; 2]>),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairCoverFile {
    first: String,
    second: String,
    cover: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModulusFile {
    function: String,
    bounds: Vec<String>,
    epsilon: String,
    delta: String,
}

fn rational(text: &str) -> Result<Rational, UniformError> {
    parse_rational(text).map_err(|e| UniformError::InvalidProfile(e.to_string()))
}

impl UniformProfile {
    pub fn fun_bound(&self, function: &str, bounds: &[&str]) -> Option<&BoundTarget> {
        self.fun_bounds
            .iter()
            .find(|b| b.function == function && b.bounds.iter().map(String::as_str).eq(bounds.iter().copied()))
            .map(|b| &b.target)
    }

    pub fn modulus(&self, function: &str, bounds: &[&str], epsilon: &Rational) -> Option<&Rational> {
        self.moduli
            .iter()
            .find(|m| {
                m.function == function && &m.epsilon == epsilon && m.bounds.iter().map(String::as_str).eq(bounds.iter().copied())
            })
            .map(|m| &m.delta)
    }

    pub fn pair_cover(&self, first: &str, second: &str) -> Option<&str> {
        self.pair_covers.iter().find(|c| c.first == first && c.second == second).map(|c| c.cover.as_str())
    }

    /// Checks that tolerances and moduli are positive.
    pub fn check(&self) -> Result<(), UniformError> {
        if let Some(e) = self.epsilon_grid.iter().find(|e| !e.is_positive()) {
            return Err(UniformError::InvalidProfile(format!("epsilon {e} is not positive")));
        }
        for m in &self.moduli {
            if !m.epsilon.is_positive() || !m.delta.is_positive() {
                return Err(UniformError::InvalidProfile(format!(
                    "modulus of `{}` on ({}) at epsilon {} must be positive, found {}",
                    m.function,
                    m.bounds.join(", "),
                    m.epsilon,
                    m.delta
                )));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, UniformError> {
        let file: ProfileFile = serde_json::from_str(text).map_err(|e| UniformError::Json(e.to_string()))?;
        let mut fun_bounds = Vec::new();
        for b in file.fun_bounds {
            let target = match b.target {
                TargetFile::Relation(r) => BoundTarget::Relation(r),
                TargetFile::Compact(intervals) => {
                    let parsed = intervals
                        .iter()
                        .map(|[lo, hi]| {
                            Interval::new(rational(lo)?, rational(hi)?).map_err(|e| UniformError::InvalidProfile(e.to_string()))
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    BoundTarget::Compact(CompactRealSet::new(parsed).map_err(|e| UniformError::InvalidProfile(e.to_string()))?)
                }
            };
            fun_bounds.push(FunBound { function: b.function, bounds: b.bounds, target });
        }
        let pair_covers =
            file.pair_covers.into_iter().map(|c| PairCover { first: c.first, second: c.second, cover: c.cover }).collect();
        let moduli = file
            .moduli
            .into_iter()
            .map(|m| {
                Ok(Modulus { function: m.function, bounds: m.bounds, epsilon: rational(&m.epsilon)?, delta: rational(&m.delta)? })
            })
            .collect::<Result<Vec<_>, UniformError>>()?;
        let epsilon_grid = file.epsilon_grid.iter().map(|e| rational(e)).collect::<Result<Vec<_>, _>>()?;
        let profile = UniformProfile { fun_bounds, pair_covers, moduli, epsilon_grid };
        profile.check()?;
        Ok(profile)
    }

    pub fn to_json(&self) -> String {
        let file = ProfileFile {
            fun_bounds: self
                .fun_bounds
                .iter()
                .map(|b| FunBoundFile {
                    function: b.function.clone(),
                    bounds: b.bounds.clone(),
                    target: match &b.target {
                        BoundTarget::Relation(r) => TargetFile::Relation(r.clone()),
                        BoundTarget::Compact(set) => TargetFile::Compact(
                            set.intervals().iter().map(|i| [i.lo.to_string(), i.hi.to_string()]).collect(),
                        ),
                    },
                })
                .collect(),
            pair_covers: self
                .pair_covers
                .iter()
                .map(|c| PairCoverFile { first: c.first.clone(), second: c.second.clone(), cover: c.cover.clone() })
                .collect(),
            moduli: self
                .moduli
                .iter()
                .map(|m| ModulusFile {
                    function: m.function.clone(),
                    bounds: m.bounds.clone(),
                    epsilon: m.epsilon.to_string(),
                    delta: m.delta.to_string(),
                })
                .collect(),
            epsilon_grid: self.epsilon_grid.iter().map(|e| e.to_string()).collect(),
        };
        serde_json::to_string_pretty(&file).expect("profile serializes") + "\n"
    }
}

/// A violated instance of one of the three membership clauses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    Bound { function: String, bounds: Vec<String>, args: Vec<String>, value: String, target: String },
    Cover { first: String, second: String, point: String, cover: String },
    Uncovered { point: String },
    Continuity {
        function: String,
        bounds: Vec<String>,
        epsilon: Rational,
        delta: Rational,
        x: Vec<String>,
        y: Vec<String>,
        distance: Rational,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Bound { function, bounds, args, value, target } => write!(
                f,
                "bound: {function}({}) = {value} with arguments in ({}) is outside {target}",
                args.join(", "),
                bounds.join(", ")
            ),
            Violation::Cover { first, second, point, cover } => {
                write!(f, "cover: point {point} of ({first}, {second}) is outside {cover}")
            }
            Violation::Uncovered { point } => write!(f, "cover: point {point} lies in no unary relation"),
            Violation::Continuity { function, bounds, epsilon, delta, x, y, distance } => write!(
                f,
                "continuity: {function} on ({}) at epsilon {epsilon}, delta {delta}: x = ({}), y = ({}) give distance {distance}",
                bounds.join(", "),
                x.join(", "),
                y.join(", ")
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

enum FunKind {
    Model,
    Real,
}

enum Out {
    Point(PointId),
    Real(Rational),
}

fn lookup_function(model: &FiniteMetricModel, name: &str) -> Result<(FunKind, usize), UniformError> {
    if name == model.metric_symbol() {
        return Ok((FunKind::Real, 2));
    }
    if let Some(t) = model.model_functions().get(name) {
        return Ok((FunKind::Model, t.arity));
    }
    if let Some(t) = model.real_functions().get(name) {
        return Ok((FunKind::Real, t.arity));
    }
    Err(UniformError::SignatureMismatch(format!("the model has no function `{name}`")))
}

fn apply(model: &FiniteMetricModel, kind: &FunKind, name: &str, args: &[PointId]) -> Out {
    match kind {
        FunKind::Model => Out::Point(model.apply_model(name, args).expect("checked arity")),
        FunKind::Real => Out::Real(model.apply_real(name, args).expect("checked arity")),
    }
}

/// Argument tuples `x⃗ ∈ K⃗`: one tuple of each bounding relation, concatenated.
fn bounded_args(model: &FiniteMetricModel, bounds: &[String]) -> Option<Vec<Vec<PointId>>> {
    let rels = bounds.iter().map(|b| model.relation(b)).collect::<Option<Vec<_>>>()?;
    Some(
        rels.iter()
            .map(|r| r.tuples.iter().cloned().collect::<Vec<_>>())
            .multi_cartesian_product()
            .map(|parts| parts.concat())
            .collect(),
    )
}

fn near_relation(model: &FiniteMetricModel, rel: &str, p: PointId, slack: &Rational) -> bool {
    model.relation(rel).is_some_and(|r| r.tuples.iter().any(|t| t.len() == 1 && model.distance(p, t[0]) <= slack))
}

/// Checks the three membership clauses by exhaustive enumeration. Model
/// valued bounds and covers are relaxed to their `slack` metric deformation,
/// compact bounds are dilated by `slack` and continuity tolerates `ε + slack`.
pub fn validate_membership(
    model: &FiniteMetricModel,
    profile: &UniformProfile,
    slack: &Rational,
) -> Result<ValidationReport, UniformError> {
    profile.check()?;
    if slack.is_negative() {
        return Err(UniformError::InvalidProfile("slack must be nonnegative".into()));
    }
    let mut report = ValidationReport::default();
    let names = |args: &[PointId]| args.iter().map(|p| model.point_name(*p).to_string()).collect::<Vec<_>>();
    let arity_of_bounds = |bounds: &[String]| -> usize {
        bounds.iter().filter_map(|b| model.relation(b)).map(|r| r.arity).sum()
    };

    for b in &profile.fun_bounds {
        let (kind, arity) = lookup_function(model, &b.function)?;
        let Some(domain) = bounded_args(model, &b.bounds) else {
            report.warnings.push(format!("bound for `{}` on ({}) skipped: missing relation", b.function, b.bounds.join(", ")));
            continue;
        };
        if arity_of_bounds(&b.bounds) != arity {
            return Err(UniformError::SignatureMismatch(format!(
                "bounds ({}) do not match the arity of `{}`",
                b.bounds.join(", "),
                b.function
            )));
        }
        match (&kind, &b.target) {
            (FunKind::Model, BoundTarget::Relation(target)) => {
                if model.relation(target).is_none() {
                    report.warnings.push(format!("bound for `{}` on ({}) skipped: missing relation {target}", b.function, b.bounds.join(", ")));
                    continue;
                }
            }
            (FunKind::Real, BoundTarget::Compact(_)) => {}
            _ => {
                return Err(UniformError::SignatureMismatch(format!(
                    "`{}` needs a {} bound",
                    b.function,
                    if matches!(kind, FunKind::Model) { "relation" } else { "compact" }
                )))
            }
        }
        for args in &domain {
            let (ok, value) = match (apply(model, &kind, &b.function, args), &b.target) {
                (Out::Point(p), BoundTarget::Relation(target)) => {
                    (near_relation(model, target, p, slack), model.point_name(p).to_string())
                }
                (Out::Real(v), BoundTarget::Compact(set)) => (set.dilate(slack).contains(&v), v.to_string()),
                _ => unreachable!(),
            };
            if !ok {
                report.violations.push(Violation::Bound {
                    function: b.function.clone(),
                    bounds: b.bounds.clone(),
                    args: names(args),
                    value,
                    target: b.target.to_string(),
                });
            }
        }
    }

    for c in &profile.pair_covers {
        let (Some(first), Some(second)) = (model.relation(&c.first), model.relation(&c.second)) else {
            report.warnings.push(format!("cover for ({}, {}) skipped: missing relation", c.first, c.second));
            continue;
        };
        if model.relation(&c.cover).is_none() {
            report.warnings.push(format!("cover for ({}, {}) skipped: missing relation {}", c.first, c.second, c.cover));
            continue;
        }
        let points: std::collections::BTreeSet<PointId> =
            first.tuples.iter().chain(second.tuples.iter()).flatten().copied().collect();
        for p in points {
            if !near_relation(model, &c.cover, p, slack) {
                report.violations.push(Violation::Cover {
                    first: c.first.clone(),
                    second: c.second.clone(),
                    point: model.point_name(p).to_string(),
                    cover: c.cover.clone(),
                });
            }
        }
    }
    for p in 0..model.size() {
        let covered = model.relations().values().any(|r| r.arity == 1 && r.tuples.contains(&vec![p]));
        if !covered {
            report.violations.push(Violation::Uncovered { point: model.point_name(p).to_string() });
        }
    }

    let mut declared: BTreeMap<(String, Vec<String>), Vec<Rational>> = BTreeMap::new();
    for m in &profile.moduli {
        declared.entry((m.function.clone(), m.bounds.clone())).or_default().push(m.epsilon.clone());
        let (kind, arity) = lookup_function(model, &m.function)?;
        let Some(domain) = bounded_args(model, &m.bounds) else {
            report.warnings.push(format!("modulus for `{}` on ({}) skipped: missing relation", m.function, m.bounds.join(", ")));
            continue;
        };
        if arity_of_bounds(&m.bounds) != arity {
            return Err(UniformError::SignatureMismatch(format!(
                "bounds ({}) do not match the arity of `{}`",
                m.bounds.join(", "),
                m.function
            )));
        }
        let tolerance = &m.epsilon + slack;
        for x in &domain {
            let fx = apply(model, &kind, &m.function, x);
            for y in &domain {
                if !x.iter().zip(y).all(|(a, b)| model.distance(*a, *b) < &m.delta) {
                    continue;
                }
                let distance = match (&fx, apply(model, &kind, &m.function, y)) {
                    (Out::Point(a), Out::Point(b)) => model.distance(*a, b).clone(),
                    (Out::Real(a), Out::Real(b)) => (a - b).abs(),
                    _ => unreachable!(),
                };
                if distance > tolerance {
                    report.violations.push(Violation::Continuity {
                        function: m.function.clone(),
                        bounds: m.bounds.clone(),
                        epsilon: m.epsilon.clone(),
                        delta: m.delta.clone(),
                        x: names(x),
                        y: names(y),
                        distance,
                    });
                }
            }
        }
    }
    for b in &profile.fun_bounds {
        let have = declared.get(&(b.function.clone(), b.bounds.clone()));
        for e in &profile.epsilon_grid {
            if !have.is_some_and(|list| list.contains(e)) {
                report.warnings.push(format!("no modulus for `{}` on ({}) at epsilon {e}", b.function, b.bounds.join(", ")));
            }
        }
    }
    Ok(report)
}

pub fn default_epsilon_grid() -> Vec<Rational> {
    vec![int(1), frac(1, 2), frac(1, 3), frac(1, 4)]
}

/// The normed-space assignments on the declared radii and scalars.
pub fn normed_profile(radii: &[Rational], scalars: &[Rational]) -> Result<UniformProfile, UniformError> {
    normed_profile_with_grid(radii, scalars, &default_epsilon_grid())
}

pub fn normed_profile_with_grid(
    radii: &[Rational],
    scalars: &[Rational],
    epsilon_grid: &[Rational],
) -> Result<UniformProfile, UniformError> {
    if let Some(q) = radii.iter().find(|q| !q.is_positive()) {
        return Err(UniformError::InvalidProfile(format!("radius {q} is not positive")));
    }
    if scalars.iter().any(Zero::is_zero) {
        return Err(UniformError::InvalidProfile("scalar 0 has no modulus".into()));
    }
    let two = int(2);
    let mut p = UniformProfile { epsilon_grid: epsilon_grid.to_vec(), ..Default::default() };
    let bound = |function: &str, bounds: Vec<String>, target: BoundTarget| FunBound { function: function.into(), bounds, target };
    for (q1, q2) in radii.iter().cartesian_product(radii) {
        let pair = vec![normed::ball(q1), normed::ball(q2)];
        let sum = q1 + q2;
        let range = CompactRealSet::interval(Rational::zero(), sum.clone()).expect("positive radii");
        p.fun_bounds.push(bound(normed::RHO, pair.clone(), BoundTarget::Compact(range)));
        p.fun_bounds.push(bound(normed::PLUS, pair.clone(), BoundTarget::Relation(normed::ball(&sum))));
        p.pair_covers.push(PairCover { first: pair[0].clone(), second: pair[1].clone(), cover: normed::ball(&sum) });
        for e in epsilon_grid {
            for f in [normed::RHO, normed::PLUS] {
                p.moduli.push(Modulus { function: f.into(), bounds: pair.clone(), epsilon: e.clone(), delta: e / &two });
            }
        }
    }
    for q in radii {
        let ball = vec![normed::ball(q)];
        let range = CompactRealSet::interval(Rational::zero(), q.clone()).expect("positive radius");
        p.fun_bounds.push(bound(normed::NORM, ball.clone(), BoundTarget::Compact(range)));
        for e in epsilon_grid {
            p.moduli.push(Modulus { function: normed::NORM.into(), bounds: ball.clone(), epsilon: e.clone(), delta: e.clone() });
        }
        for r in scalars {
            let f = normed::scale(r);
            p.fun_bounds.push(bound(&f, ball.clone(), BoundTarget::Relation(normed::ball(&(r.abs() * q)))));
            for e in epsilon_grid {
                p.moduli.push(Modulus { function: f.clone(), bounds: ball.clone(), epsilon: e.clone(), delta: e / r.abs() });
            }
        }
    }
    p.check()?;
    Ok(p)
}

/// Norms available on grid models; the surrogate `(ℓ1 + ℓ∞)/2` stands in for
/// the Euclidean norm and keeps every distance rational.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridNorm {
    L1,
    L2Surrogate,
    LInf,
}

impl GridNorm {
    pub fn eval(self, v: &[Rational]) -> Rational {
        let l1 = v.iter().fold(Rational::zero(), |acc, x| acc + x.abs());
        let linf = v.iter().map(|x| x.abs()).max().unwrap_or_else(Rational::zero);
        match self {
            GridNorm::L1 => l1,
            GridNorm::LInf => linf,
            GridNorm::L2Surrogate => (l1 + linf) / int(2),
        }
    }
}

impl std::str::FromStr for GridNorm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "l1" => Ok(GridNorm::L1),
            "l2" => Ok(GridNorm::L2Surrogate),
            "linf" => Ok(GridNorm::LInf),
            other => Err(format!("unknown norm `{other}` (expected l1, l2 or linf)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridSpec {
    pub dimension: usize,
    pub norm: GridNorm,
    /// Grid step is `1/m`.
    pub m: u64,
    pub radius: Rational,
    pub radii: Vec<Rational>,
    pub scalars: Vec<Rational>,
}

impl GridSpec {
    pub fn new(dimension: usize, norm: GridNorm, m: u64, radius: Rational) -> Self {
        GridSpec { dimension, norm, m, radius, radii: default_radii(), scalars: default_scalars() }
    }
}

fn round_to_grid(x: &Rational, m: u64) -> Rational {
    let scaled = x * int(m as i64);
    let lower = scaled.floor();
    let frac_part = &scaled - &lower;
    let half = frac(1, 2);
    let k = if frac_part > half || (frac_part == half && scaled.is_negative()) { lower + Rational::one() } else { lower };
    k / int(m as i64)
}

/// Clamps `v` radially into the `R`-ball, rounds each coordinate to the grid
/// (ties toward the origin) and, if rounding left the ball, moves the largest
/// coordinate one step toward the origin until it is inside.
fn snap(v: &[Rational], spec: &GridSpec) -> Vec<Rational> {
    let norm = spec.norm.eval(v);
    let clamped: Vec<Rational> =
        if norm > spec.radius { v.iter().map(|x| x * &spec.radius / &norm).collect() } else { v.to_vec() };
    let mut out: Vec<Rational> = clamped.iter().map(|x| round_to_grid(x, spec.m)).collect();
    let step = frac(1, spec.m as i64);
    while spec.norm.eval(&out) > spec.radius {
        let (i, _) = out.iter().enumerate().max_by_key(|(_, x)| x.abs()).expect("nonempty");
        let toward = if out[i].is_positive() { -step.clone() } else { step.clone() };
        out[i] += toward;
    }
    out
}

fn point_name(v: &[Rational]) -> String {
    if v.len() == 1 {
        v[0].to_string()
    } else {
        format!("({})", v.iter().join(","))
    }
}

/// A finite model of a grid of step `1/m` inside the `R`-ball of a small
/// normed space, with clamped and rounded vector operations.
pub fn grid_model(spec: &GridSpec) -> Result<FiniteMetricModel, UniformError> {
    if !(1..=2).contains(&spec.dimension) || spec.m == 0 || !spec.radius.is_positive() {
        return Err(UniformError::InvalidProfile("grid needs dimension 1 or 2, m >= 1 and R > 0".into()));
    }
    let scaled_r = &spec.radius * int(spec.m as i64);
    if !scaled_r.is_integer() {
        return Err(UniformError::InvalidProfile("R must be a multiple of 1/m".into()));
    }
    let k = scaled_r.to_integer();
    let k: i64 = num_traits::ToPrimitive::to_i64(&k).ok_or_else(|| UniformError::InvalidProfile("grid too large".into()))?;
    let coords: Vec<Rational> = (-k..=k).map(|i| frac(i, spec.m as i64)).collect();
    let points: Vec<Vec<Rational>> = (0..spec.dimension)
        .map(|_| coords.iter().cloned())
        .multi_cartesian_product()
        .filter(|v| spec.norm.eval(v) <= spec.radius)
        .collect();
    let index: BTreeMap<Vec<Rational>, PointId> = points.iter().cloned().enumerate().map(|(i, v)| (v, i)).collect();
    let diff = |a: &[Rational], b: &[Rational]| a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>();
    let metric = points.iter().map(|a| points.iter().map(|b| spec.norm.eval(&diff(a, b))).collect()).collect();
    let names = points.iter().map(|v| point_name(v)).collect();
    let mut model = FiniteMetricModel::new(names, normed::RHO, metric)?;
    let lookup = |v: Vec<Rational>| index[&snap(&v, spec)];
    let plus: Vec<PointId> = points
        .iter()
        .cartesian_product(&points)
        .map(|(a, b)| lookup(a.iter().zip(b).map(|(x, y)| x + y).collect()))
        .collect();
    model = model.with_model_function(normed::PLUS, 2, plus)?;
    for r in &spec.scalars {
        let table = points.iter().map(|a| lookup(a.iter().map(|x| x * r).collect())).collect();
        model = model.with_model_function(&normed::scale(r), 1, table)?;
    }
    let origin = index[&vec![Rational::zero(); spec.dimension]];
    model = model.with_constant(normed::ZERO, origin)?;
    model = model.with_real_function(normed::NORM, 1, points.iter().map(|v| spec.norm.eval(v)).collect())?;
    for q in &spec.radii {
        let members = points.iter().enumerate().filter(|(_, v)| &spec.norm.eval(v) <= q).map(|(i, _)| vec![i]);
        model = model.with_relation(&normed::ball(q), 1, members.collect::<Vec<_>>())?;
    }
    model.validate()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normed_assignments() {
        let p = normed_profile(&default_radii(), &default_scalars()).unwrap();
        assert_eq!(
            p.fun_bound("rho", &["B_1", "B_1"]),
            Some(&BoundTarget::Compact(CompactRealSet::interval(int(0), int(2)).unwrap()))
        );
        assert_eq!(p.modulus("plus", &["B_1", "B_1"], &frac(1, 2)), Some(&frac(1, 4)));
        assert_eq!(p.modulus("norm", &["B_1"], &frac(1, 3)), Some(&frac(1, 3)));
        assert_eq!(p.fun_bound("scale_-1", &["B_2"]), Some(&BoundTarget::Relation("B_2".into())));
        assert_eq!(p.modulus("scale_1/2", &["B_1"], &frac(1, 4)), Some(&frac(1, 2)));
        assert!(normed_profile(&[int(0)], &[]).is_err());
        assert!(normed_profile(&[int(1)], &[int(0)]).is_err());
        let again = UniformProfile::from_json(&p.to_json()).unwrap();
        assert_eq!(again, p);
    }

    #[test]
    fn grid_universe() {
        let m = grid_model(&GridSpec::new(1, GridNorm::LInf, 2, int(1))).unwrap();
        assert_eq!(m.points(), ["-1", "-1/2", "0", "1/2", "1"]);
        assert_eq!(m.apply_real("norm", &[m.point("1/2").unwrap()]).unwrap(), frac(1, 2));
        assert_eq!(m.apply_model("plus", &[m.point("1").unwrap(), m.point("1/2").unwrap()]).unwrap(), m.point("1").unwrap());
        assert_eq!(m.apply_model("scale_1/2", &[m.point("1/2").unwrap()]).unwrap(), m.point("0").unwrap());
        assert_eq!(m.apply_model("scale_1/2", &[m.point("-1/2").unwrap()]).unwrap(), m.point("0").unwrap());
    }

    #[test]
    fn rounding_ties_go_toward_origin() {
        assert_eq!(round_to_grid(&frac(1, 4), 2), int(0));
        assert_eq!(round_to_grid(&frac(-1, 4), 2), int(0));
        assert_eq!(round_to_grid(&frac(3, 4), 2), frac(1, 2));
        assert_eq!(round_to_grid(&frac(-3, 4), 2), frac(-1, 2));
        assert_eq!(round_to_grid(&frac(2, 3), 2), frac(1, 2));
    }

    #[test]
    fn continuity_violation_has_witness() {
        let metric = vec![vec![int(0), frac(1, 4), int(2)], vec![frac(1, 4), int(0), int(2)], vec![int(2), int(2), int(0)]];
        let model = FiniteMetricModel::new(vec!["p".into(), "q".into(), "s".into()], "rho", metric)
            .unwrap()
            .with_relation("U", 1, [vec![0], vec![1], vec![2]])
            .unwrap()
            .with_model_function("f", 1, vec![0, 2, 2])
            .unwrap();
        let profile = UniformProfile {
            moduli: vec![Modulus { function: "f".into(), bounds: vec!["U".into()], epsilon: int(1), delta: frac(1, 2) }],
            epsilon_grid: vec![int(1)],
            ..Default::default()
        };
        let report = validate_membership(&model, &profile, &int(0)).unwrap();
        assert!(report.violations.contains(&Violation::Continuity {
            function: "f".into(),
            bounds: vec!["U".into()],
            epsilon: int(1),
            delta: frac(1, 2),
            x: vec!["p".into()],
            y: vec!["q".into()],
            distance: int(2),
        }));
    }
}
