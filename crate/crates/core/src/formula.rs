//! Terms and formulas of the infinitary logic, the s-expression text format,
//! the fragment classifier and the desugaring of derived connectives.
//!
//! Countable conjunctions are backed by a [`Family`]: either an explicit
//! finite list or a generated family whose members are instantiations of a
//! template s-expression. Template parameters may only occur in numeric
//! positions (interval endpoints and arithmetic over them), so every member
//! of a generated family has the same shape and the same variables as its
//! first member.

use std::collections::BTreeSet;
use std::fmt;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

use crate::rational::{parse_rational, Rational};
use crate::sexp::{self, Pos, Sexp, SexpKind, SyntaxError};
use crate::signature::{CompactRealSet, Interval, Signature, SymbolKind};

pub type VarId = u32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormulaError {
    #[error("syntax error at {0}")]
    Syntax(#[from] SyntaxError),
    #[error("{pos}: unknown symbol `{name}`")]
    UnknownSymbol { pos: Pos, name: String },
    #[error("{pos}: `{name}` expects {expected} argument(s), found {found}")]
    Arity { pos: Pos, name: String, expected: usize, found: usize },
    #[error("{pos}: sort mismatch: {message}")]
    Sort { pos: Pos, message: String },
    #[error("family error: {0}")]
    Family(String),
}

fn syntax(pos: Pos, message: impl Into<String>) -> FormulaError {
    FormulaError::Syntax(SyntaxError::new(pos, message))
}

/// Model-valued or real-valued.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sort {
    Model,
    Real,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Term {
    Var(VarId),
    Const(String),
    Model { fun: String, args: Vec<Term> },
    Real { fun: String, args: Vec<Term> },
}

impl Term {
    pub fn var(id: VarId) -> Term {
        Term::Var(id)
    }

    pub fn constant(name: impl Into<String>) -> Term {
        Term::Const(name.into())
    }

    pub fn model(fun: impl Into<String>, args: Vec<Term>) -> Term {
        Term::Model { fun: fun.into(), args }
    }

    pub fn real(fun: impl Into<String>, args: Vec<Term>) -> Term {
        Term::Real { fun: fun.into(), args }
    }

    pub fn sort(&self) -> Sort {
        match self {
            Term::Real { .. } => Sort::Real,
            _ => Sort::Model,
        }
    }

    pub fn collect_vars(&self, out: &mut BTreeSet<VarId>) {
        match self {
            Term::Var(v) => {
                out.insert(*v);
            }
            Term::Const(_) => {}
            Term::Model { args, .. } | Term::Real { args, .. } => {
                args.iter().for_each(|a| a.collect_vars(out));
            }
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let app = |f: &mut fmt::Formatter<'_>, head: &str, fun: &str, args: &[Term]| {
            write!(f, "({head} {fun}")?;
            for a in args {
                write!(f, " {a}")?;
            }
            write!(f, ")")
        };
        match self {
            Term::Var(v) => write!(f, "(var {v})"),
            Term::Const(c) => write!(f, "(const {c})"),
            Term::Model { fun, args } => app(f, "modelfun", fun, args),
            Term::Real { fun, args } => app(f, "realfun", fun, args),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Limit {
    Finite(usize),
    Infinite,
}

/// Infinite tail `base, base + stride, base + 2 stride, ...` of a variable block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarPattern {
    pub base: VarId,
    pub stride: VarId,
}

impl VarPattern {
    pub fn contains(&self, v: VarId) -> bool {
        v >= self.base && (v - self.base) % self.stride == 0
    }

    /// Position of `v` inside the pattern.
    pub fn index_of(&self, v: VarId) -> Option<usize> {
        self.contains(v).then(|| ((v - self.base) / self.stride) as usize)
    }

    pub fn nth(&self, k: usize) -> VarId {
        self.base + self.stride * k as VarId
    }
}

/// The variables bound by a quantifier: a finite head plus an optional
/// infinite arithmetic tail.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct VarBlock {
    pub head: Vec<VarId>,
    pub tail: Option<VarPattern>,
}

impl VarBlock {
    pub fn finite(head: Vec<VarId>) -> Self {
        VarBlock { head, tail: None }
    }

    pub fn binds(&self, v: VarId) -> bool {
        self.head.contains(&v) || self.tail.is_some_and(|t| t.contains(v))
    }
}

/// The bounding relation symbols of a quantifier; `tail` repeats forever.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BoundVector {
    pub head: Vec<String>,
    pub tail: Option<String>,
}

impl BoundVector {
    pub fn finite(head: Vec<String>) -> Self {
        BoundVector { head, tail: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GeneratorKind {
    /// `n = 1, 2, 3, ...`
    Range { param: String },
    /// Rationals of `[lo, hi]` by increasing denominator, then value.
    Grid { param: String, lo: Rational, hi: Rational },
    /// `CO(s)`: nonnegative rational `s`-tuples summing to 1.
    Convex { params: Vec<String> },
}

impl GeneratorKind {
    fn params(&self) -> Vec<&str> {
        match self {
            GeneratorKind::Range { param } | GeneratorKind::Grid { param, .. } => vec![param.as_str()],
            GeneratorKind::Convex { params } => params.iter().map(String::as_str).collect(),
        }
    }
}

/// A generated family: member `i` is the template with its parameters bound
/// to the `i`-th value of the fixed enumeration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generator {
    kind: GeneratorKind,
    template: Sexp,
    sample: Box<Formula>,
}

impl Generator {
    pub fn new(kind: GeneratorKind, template: Sexp) -> Result<Self, FormulaError> {
        let params = kind.params();
        for p in &params {
            if p.is_empty() || parse_rational(p).is_ok() {
                return Err(syntax(template.pos, format!("invalid parameter name `{p}`")));
            }
        }
        if let GeneratorKind::Grid { lo, hi, .. } = &kind {
            if lo >= hi {
                return Err(syntax(template.pos, "grid family needs lo < hi"));
            }
        }
        if let Some(pos) = param_in_variable_position(&template, &params) {
            return Err(syntax(pos, "template parameters may only occur in numeric positions"));
        }
        let mut generator = Generator { kind, template, sample: Box::new(Formula::And { family: Family::Explicit(vec![]), limit: Limit::Finite(0) }) };
        generator.sample = Box::new(generator.member(1)?);
        Ok(generator)
    }

    pub fn kind(&self) -> &GeneratorKind {
        &self.kind
    }

    pub fn template(&self) -> &Sexp {
        &self.template
    }

    /// The first member; every member shares its shape and variables.
    pub fn sample(&self) -> &Formula {
        &self.sample
    }

    /// Number of members, `None` when infinite.
    pub fn len(&self) -> Option<usize> {
        match &self.kind {
            GeneratorKind::Convex { params } if params.len() == 1 => Some(1),
            _ => None,
        }
    }

    fn bindings(&self, upto: usize) -> Result<Vec<Vec<(String, Rational)>>, FormulaError> {
        let out = match &self.kind {
            GeneratorKind::Range { param } => (1..=upto)
                .map(|i| vec![(param.clone(), Rational::from_integer(BigInt::from(i)))])
                .collect(),
            GeneratorKind::Grid { param, lo, hi } => {
                grid_rationals(lo.clone(), hi.clone()).take(upto).map(|q| vec![(param.clone(), q)]).collect()
            }
            GeneratorKind::Convex { params } => convex_tuples(params.len())
                .take(upto)
                .map(|tuple| params.iter().cloned().zip(tuple).collect())
                .collect::<Vec<_>>(),
        };
        if out.len() < upto {
            return Err(FormulaError::Family(format!("family has only {} member(s), {upto} requested", out.len())));
        }
        Ok(out)
    }

    fn instantiate(&self, binding: &[(String, Rational)]) -> Result<Formula, FormulaError> {
        let text = substitute(&self.template, binding);
        Parser { sig: None }.formula(&text)
    }

    /// Member `index` (1-based).
    pub fn member(&self, index: usize) -> Result<Formula, FormulaError> {
        if index == 0 {
            return Err(FormulaError::Family("members are numbered from 1".into()));
        }
        let binding = self.bindings(index)?.pop().expect("nonempty");
        self.instantiate(&binding)
    }

    pub fn members(&self, upto: usize) -> Result<Vec<Formula>, FormulaError> {
        self.bindings(upto)?.iter().map(|b| self.instantiate(b)).collect()
    }

    fn map_template(&self, f: impl FnOnce(Sexp) -> Sexp) -> Generator {
        let template = f(self.template.clone());
        Generator::new(self.kind.clone(), template).expect("wrapping a valid template stays valid")
    }
}

/// Rationals of `[lo, hi]` ordered by denominator, then by value.
pub fn grid_rationals(lo: Rational, hi: Rational) -> impl Iterator<Item = Rational> {
    (1u64..).flat_map(move |q| {
        let qb = BigInt::from(q);
        let first = (lo.clone() * Rational::from_integer(qb.clone())).ceil().to_integer();
        let last = (hi.clone() * Rational::from_integer(qb.clone())).floor().to_integer();
        let mut out = Vec::new();
        let mut p = first;
        while p <= last {
            if p.gcd(&qb).is_one() {
                out.push(Rational::new(p.clone(), qb.clone()));
            }
            p += 1;
        }
        out
    })
}

/// `CO(s)` in its fixed order: by the sum of the (reduced) denominators,
/// then lexicographically.
pub fn convex_tuples(s: usize) -> Box<dyn Iterator<Item = Vec<Rational>>> {
    if s == 0 {
        return Box::new(std::iter::empty());
    }
    if s == 1 {
        return Box::new(std::iter::once(vec![Rational::one()]));
    }
    Box::new((s as u64..).flat_map(move |total| {
        let mut level = Vec::new();
        let mut dens = Vec::with_capacity(s);
        collect_convex(total, s, &mut dens, &mut level);
        level.sort();
        level
    }))
}

fn collect_convex(remaining: u64, slots: usize, dens: &mut Vec<u64>, out: &mut Vec<Vec<Rational>>) {
    if slots == 0 {
        if remaining == 0 {
            let mut current = Vec::with_capacity(dens.len());
            convex_numerators(dens, &mut current, Rational::zero(), out);
        }
        return;
    }
    let max = remaining.saturating_sub(slots as u64 - 1);
    for q in 1..=max {
        dens.push(q);
        collect_convex(remaining - q, slots - 1, dens, out);
        dens.pop();
    }
}

fn convex_numerators(dens: &[u64], current: &mut Vec<Rational>, sum: Rational, out: &mut Vec<Vec<Rational>>) {
    let i = current.len();
    if i == dens.len() {
        if sum.is_one() {
            out.push(current.clone());
        }
        return;
    }
    let q = dens[i];
    for p in 0..=q {
        if num_integer::gcd(p, q) != 1 {
            continue;
        }
        let value = Rational::new(BigInt::from(p), BigInt::from(q));
        let next = &sum + &value;
        if next > Rational::one() {
            break;
        }
        current.push(value);
        convex_numerators(dens, current, next, out);
        current.pop();
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Family {
    Explicit(Vec<Formula>),
    Generated(Generator),
}

impl Family {
    /// Number of members, `None` when infinite.
    pub fn len(&self) -> Option<usize> {
        match self {
            Family::Explicit(list) => Some(list.len()),
            Family::Generated(g) => g.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == Some(0)
    }

    /// The first `upto` members in the fixed enumeration order.
    pub fn members(&self, upto: usize) -> Result<Vec<Formula>, FormulaError> {
        match self {
            Family::Explicit(list) if list.len() >= upto => Ok(list[..upto].to_vec()),
            Family::Explicit(list) => Err(FormulaError::Family(format!(
                "explicit family has {} member(s), {upto} requested",
                list.len()
            ))),
            Family::Generated(g) => g.members(upto),
        }
    }

    /// Members that determine shape and variables: every explicit member, or
    /// the first member of a generated family.
    pub fn representatives(&self) -> Vec<&Formula> {
        match self {
            Family::Explicit(list) => list.iter().collect(),
            Family::Generated(g) => vec![g.sample()],
        }
    }
}

/// `enumerate_family`: the first `upto >= 1` members.
pub fn enumerate_family(family: &Family, upto: usize) -> Result<Vec<Formula>, FormulaError> {
    if upto == 0 {
        return Err(FormulaError::Family("enumeration length must be at least 1".into()));
    }
    family.members(upto)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Formula {
    Rel { rel: String, args: Vec<Term> },
    In { set: CompactRealSet, term: Term },
    And { family: Family, limit: Limit },
    Not(Box<Formula>),
    Exists { bound: BoundVector, vars: VarBlock, body: Box<Formula> },
    /// Surface form of `not and not`.
    Or { family: Family, limit: Limit },
    /// Surface form of `not (a and not b)`.
    Implies(Box<Formula>, Box<Formula>),
    /// Surface form of `not exists not`.
    Forall { bound: BoundVector, vars: VarBlock, body: Box<Formula> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Fragment {
    Positive,
    Pba,
    General,
}

impl fmt::Display for Fragment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Fragment::Positive => "positive",
            Fragment::Pba => "L_PBA",
            Fragment::General => "general",
        })
    }
}

impl Formula {
    pub fn rel(rel: impl Into<String>, args: Vec<Term>) -> Formula {
        Formula::Rel { rel: rel.into(), args }
    }

    pub fn within(set: CompactRealSet, term: Term) -> Formula {
        Formula::In { set, term }
    }

    /// Finite explicit conjunction.
    pub fn and(members: Vec<Formula>) -> Formula {
        let n = members.len();
        Formula::And { family: Family::Explicit(members), limit: Limit::Finite(n) }
    }

    pub fn or(members: Vec<Formula>) -> Formula {
        let n = members.len();
        Formula::Or { family: Family::Explicit(members), limit: Limit::Finite(n) }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(body: Formula) -> Formula {
        Formula::Not(Box::new(body))
    }

    pub fn implies(a: Formula, b: Formula) -> Formula {
        Formula::Implies(Box::new(a), Box::new(b))
    }

    pub fn exists(bound: BoundVector, vars: VarBlock, body: Formula) -> Formula {
        Formula::Exists { bound, vars, body: Box::new(body) }
    }

    pub fn forall(bound: BoundVector, vars: VarBlock, body: Formula) -> Formula {
        Formula::Forall { bound, vars, body: Box::new(body) }
    }

    /// Parses and sort-checks against `sig`.
    pub fn parse(text: &str, sig: &Signature) -> Result<Formula, FormulaError> {
        Parser { sig: Some(sig) }.formula(&sexp::parse_one(text)?)
    }

    /// Parses without a signature; sorts still follow the syntactic heads.
    pub fn parse_unchecked(text: &str) -> Result<Formula, FormulaError> {
        Parser { sig: None }.formula(&sexp::parse_one(text)?)
    }

    pub fn from_sexp(form: &Sexp, sig: Option<&Signature>) -> Result<Formula, FormulaError> {
        Parser { sig }.formula(form)
    }

    pub fn to_sexp(&self) -> Sexp {
        sexp::parse_one(&self.to_string()).expect("printer emits well-formed s-expressions")
    }

    /// Immediate subformulas that determine structure (see [`Family::representatives`]).
    pub fn children(&self) -> Vec<&Formula> {
        match self {
            Formula::Rel { .. } | Formula::In { .. } => vec![],
            Formula::And { family, .. } | Formula::Or { family, .. } => family.representatives(),
            Formula::Not(b) => vec![b],
            Formula::Implies(a, b) => vec![a, b],
            Formula::Exists { body, .. } | Formula::Forall { body, .. } => vec![body],
        }
    }

    fn any_node(&self, pred: &impl Fn(&Formula) -> bool) -> bool {
        pred(self) || self.children().into_iter().any(|c| c.any_node(pred))
    }

    /// True when no surface connective (`or`, `implies`, `forall`) occurs.
    pub fn is_core(&self) -> bool {
        !self.any_node(&|f| matches!(f, Formula::Or { .. } | Formula::Implies(..) | Formula::Forall { .. }))
    }

    /// True when no countable connective has an infinite limit.
    pub fn is_finitary(&self) -> bool {
        !self.any_node(&|f| {
            matches!(f, Formula::And { limit: Limit::Infinite, .. } | Formula::Or { limit: Limit::Infinite, .. })
        })
    }

    /// True when no negation occurs, counting the negations introduced by
    /// the derived connectives.
    pub fn is_positive(&self) -> bool {
        !self.any_node(&|f| {
            matches!(f, Formula::Not(_) | Formula::Or { .. } | Formula::Implies(..) | Formula::Forall { .. })
        })
    }

    pub fn free_variables(&self) -> BTreeSet<VarId> {
        let mut out = BTreeSet::new();
        self.collect_free(&mut out);
        out
    }

    fn collect_free(&self, out: &mut BTreeSet<VarId>) {
        match self {
            Formula::Rel { args, .. } => args.iter().for_each(|t| t.collect_vars(out)),
            Formula::In { term, .. } => term.collect_vars(out),
            Formula::Exists { vars, body, .. } | Formula::Forall { vars, body, .. } => {
                out.extend(body.free_variables().into_iter().filter(|v| !vars.binds(*v)));
            }
            _ => self.children().into_iter().for_each(|c| c.collect_free(out)),
        }
    }

    /// Largest variable id written anywhere in the formula.
    pub fn max_var_id(&self) -> Option<VarId> {
        let mut best: Option<VarId> = None;
        self.visit_var_ids(&mut |v| best = Some(best.map_or(v, |b| b.max(v))));
        best
    }

    fn visit_var_ids(&self, f: &mut impl FnMut(VarId)) {
        let mut terms = BTreeSet::new();
        match self {
            Formula::Rel { args, .. } => args.iter().for_each(|t| t.collect_vars(&mut terms)),
            Formula::In { term, .. } => term.collect_vars(&mut terms),
            Formula::Exists { vars, .. } | Formula::Forall { vars, .. } => {
                vars.head.iter().for_each(|v| f(*v));
                if let Some(t) = vars.tail {
                    f(t.base);
                }
            }
            _ => {}
        }
        terms.into_iter().for_each(&mut *f);
        for c in self.children() {
            c.visit_var_ids(f);
        }
    }

    pub fn classify(&self) -> Fragment {
        classify_fragment(self)
    }
}

/// Positive: no negation at all. `L_PBA`: atoms closed under countable
/// conjunction, finite disjunction and bounded quantifiers. Otherwise general.
pub fn classify_fragment(phi: &Formula) -> Fragment {
    fn in_pba(phi: &Formula) -> bool {
        match phi {
            Formula::Not(_) | Formula::Implies(..) => false,
            Formula::Or { limit: Limit::Infinite, .. } => false,
            _ => phi.children().into_iter().all(in_pba),
        }
    }
    if phi.is_positive() {
        Fragment::Positive
    } else if in_pba(phi) {
        Fragment::Pba
    } else {
        Fragment::General
    }
}

/// Rewrites `or`, `implies` and `forall` into `not`/`and`/`exists`.
pub fn derived_connectives(phi: &Formula) -> Formula {
    let family = |fam: &Family| match fam {
        Family::Explicit(list) => Family::Explicit(list.iter().map(derived_connectives).collect()),
        Family::Generated(g) => Family::Generated(g.map_template(|t| desugar_sexp(&t))),
    };
    match phi {
        Formula::Rel { .. } | Formula::In { .. } => phi.clone(),
        Formula::And { family: fam, limit } => Formula::And { family: family(fam), limit: *limit },
        Formula::Not(b) => Formula::not(derived_connectives(b)),
        Formula::Exists { bound, vars, body } => {
            Formula::exists(bound.clone(), vars.clone(), derived_connectives(body))
        }
        Formula::Or { family: fam, limit } => {
            let negated = match fam {
                Family::Explicit(list) => {
                    Family::Explicit(list.iter().map(|m| Formula::not(derived_connectives(m))).collect())
                }
                Family::Generated(g) => Family::Generated(g.map_template(|t| not_sexp(desugar_sexp(&t)))),
            };
            Formula::not(Formula::And { family: negated, limit: *limit })
        }
        Formula::Implies(a, b) => Formula::not(Formula::and(vec![
            derived_connectives(a),
            Formula::not(derived_connectives(b)),
        ])),
        Formula::Forall { bound, vars, body } => Formula::not(Formula::exists(
            bound.clone(),
            vars.clone(),
            Formula::not(derived_connectives(body)),
        )),
    }
}

/// Returns the core form, cloning only when desugaring is needed.
pub fn core_form(phi: &Formula) -> std::borrow::Cow<'_, Formula> {
    if phi.is_core() {
        std::borrow::Cow::Borrowed(phi)
    } else {
        std::borrow::Cow::Owned(derived_connectives(phi))
    }
}

fn not_sexp(inner: Sexp) -> Sexp {
    Sexp::list(vec![Sexp::atom("not"), inner])
}

fn is_family_form(s: &Sexp) -> bool {
    matches!(s.head(), Some("range" | "grid" | "co"))
}

/// Desugars derived connectives on the text form; used for generated templates.
pub fn desugar_sexp(s: &Sexp) -> Sexp {
    let Some(items) = s.as_list() else { return s.clone() };
    let map_family = |fam: &Sexp, negate: bool| -> Sexp {
        let mut parts = fam.as_list().unwrap_or_default().to_vec();
        if let Some(last) = parts.pop() {
            let body = desugar_sexp(&last);
            parts.push(if negate { not_sexp(body) } else { body });
        }
        Sexp::list(parts)
    };
    match s.head() {
        Some("or") => {
            if items.len() == 3 && items[1].as_atom().is_some() && is_family_form(&items[2]) {
                not_sexp(Sexp::list(vec![Sexp::atom("and"), items[1].clone(), map_family(&items[2], true)]))
            } else {
                let mut conj = vec![Sexp::atom("and")];
                conj.extend(items[1..].iter().map(|m| not_sexp(desugar_sexp(m))));
                not_sexp(Sexp::list(conj))
            }
        }
        Some("or-inf") if items.len() == 2 => {
            not_sexp(Sexp::list(vec![Sexp::atom("and-inf"), map_family(&items[1], true)]))
        }
        Some("implies") if items.len() == 3 => not_sexp(Sexp::list(vec![
            Sexp::atom("and"),
            desugar_sexp(&items[1]),
            not_sexp(desugar_sexp(&items[2])),
        ])),
        Some("forall") if items.len() == 4 => not_sexp(Sexp::list(vec![
            Sexp::atom("exists"),
            items[1].clone(),
            items[2].clone(),
            not_sexp(desugar_sexp(&items[3])),
        ])),
        Some("range" | "grid" | "co") => map_family(s, false),
        _ => Sexp::list(items.iter().map(desugar_sexp).collect()),
    }
}

/// Replaces free occurrences of template parameters by numeric literals.
/// Nested families rebinding the same name shadow it.
fn substitute(template: &Sexp, binding: &[(String, Rational)]) -> Sexp {
    match &template.kind {
        SexpKind::Atom(a) => match binding.iter().find(|(name, _)| name == a) {
            Some((_, value)) => Sexp { kind: SexpKind::Atom(value.to_string()), pos: template.pos },
            None => template.clone(),
        },
        SexpKind::List(items) => {
            let shadowed: Vec<String> = match template.head() {
                Some("range") => items.get(1).and_then(Sexp::as_atom).map(|p| vec![p.to_string()]).unwrap_or_default(),
                Some("grid") => items.get(1).and_then(Sexp::as_atom).map(|p| vec![p.to_string()]).unwrap_or_default(),
                Some("co") => items
                    .get(1)
                    .and_then(Sexp::as_list)
                    .map(|ps| ps.iter().filter_map(Sexp::as_atom).map(str::to_string).collect())
                    .unwrap_or_default(),
                _ => vec![],
            };
            let inner: Vec<(String, Rational)> =
                binding.iter().filter(|(n, _)| !shadowed.contains(n)).cloned().collect();
            let last = items.len().saturating_sub(1);
            let mapped = items
                .iter()
                .enumerate()
                .map(|(i, item)| {
                    if i == 0 {
                        item.clone()
                    } else if !shadowed.is_empty() && (i == last || (template.head() != Some("grid") && i == 1)) {
                        // the template (and the binder list itself) live in the inner scope
                        if i == 1 { item.clone() } else { substitute(item, &inner) }
                    } else if template.head() == Some("grid") && i == 1 {
                        item.clone()
                    } else {
                        substitute(item, binding)
                    }
                })
                .collect();
            Sexp { kind: SexpKind::List(mapped), pos: template.pos }
        }
    }
}

/// Finds a parameter written where a variable id is expected.
fn param_in_variable_position(s: &Sexp, params: &[&str]) -> Option<Pos> {
    fn mentions(s: &Sexp, params: &[&str]) -> Option<Pos> {
        match &s.kind {
            SexpKind::Atom(a) => params.contains(&a.as_str()).then_some(s.pos),
            SexpKind::List(items) => items.iter().find_map(|i| mentions(i, params)),
        }
    }
    let items = s.as_list()?;
    match s.head() {
        Some("var") => items.get(1..).and_then(|rest| rest.iter().find_map(|i| mentions(i, params))),
        Some("exists" | "forall") => items
            .get(2)
            .and_then(|vars| mentions(vars, params))
            .or_else(|| items.iter().skip(3).find_map(|i| param_in_variable_position(i, params))),
        _ => items.iter().skip(1).find_map(|i| param_in_variable_position(i, params)),
    }
}

struct Parser<'a> {
    sig: Option<&'a Signature>,
}

impl Parser<'_> {
    fn items<'s>(&self, s: &'s Sexp) -> Result<(&'s str, &'s [Sexp]), FormulaError> {
        let items = s.as_list().ok_or_else(|| syntax(s.pos, format!("expected a list, found `{s}`")))?;
        let head = items
            .first()
            .and_then(Sexp::as_atom)
            .ok_or_else(|| syntax(s.pos, "expected a list with a head symbol"))?;
        Ok((head, &items[1..]))
    }

    fn expect_len(&self, s: &Sexp, args: &[Sexp], n: usize) -> Result<(), FormulaError> {
        if args.len() != n {
            return Err(syntax(s.pos, format!("`{}` takes {n} argument(s), found {}", s.head().unwrap_or(""), args.len())));
        }
        Ok(())
    }

    fn name<'s>(&self, s: &'s Sexp) -> Result<&'s str, FormulaError> {
        s.as_atom().ok_or_else(|| syntax(s.pos, format!("expected a symbol, found `{s}`")))
    }

    fn check_symbol(&self, pos: Pos, name: &str, want: &str, found_args: usize) -> Result<(), FormulaError> {
        let Some(sig) = self.sig else { return Ok(()) };
        let kind = sig.kind(name).ok_or_else(|| FormulaError::UnknownSymbol { pos, name: name.to_string() })?;
        let ok = matches!(
            (want, kind),
            ("modelfun", SymbolKind::ModelFunction { .. })
                | ("modelfun", SymbolKind::Constant)
                | ("const", SymbolKind::Constant)
                | ("realfun", SymbolKind::RealFunction { .. })
                | ("rel", SymbolKind::Relation { .. })
        );
        if !ok {
            return Err(FormulaError::Sort { pos, message: format!("`{name}` is a {kind:?}, used as `{want}`") });
        }
        if kind.arity() != found_args {
            return Err(FormulaError::Arity { pos, name: name.to_string(), expected: kind.arity(), found: found_args });
        }
        Ok(())
    }

    fn model_args(&self, args: &[Sexp]) -> Result<Vec<Term>, FormulaError> {
        args.iter()
            .map(|a| {
                let t = self.term(a)?;
                if t.sort() != Sort::Model {
                    return Err(FormulaError::Sort { pos: a.pos, message: format!("argument `{t}` is real valued") });
                }
                Ok(t)
            })
            .collect()
    }

    fn var_id(&self, s: &Sexp) -> Result<VarId, FormulaError> {
        let text = self.name(s)?;
        text.parse().map_err(|_| syntax(s.pos, format!("invalid variable id `{text}`")))
    }

    fn term(&self, s: &Sexp) -> Result<Term, FormulaError> {
        let (head, args) = self.items(s)?;
        match head {
            "var" => {
                self.expect_len(s, args, 1)?;
                Ok(Term::Var(self.var_id(&args[0])?))
            }
            "const" => {
                self.expect_len(s, args, 1)?;
                let name = self.name(&args[0])?;
                self.check_symbol(args[0].pos, name, "const", 0)?;
                Ok(Term::Const(name.to_string()))
            }
            "modelfun" | "realfun" => {
                let fun = self.name(args.first().ok_or_else(|| syntax(s.pos, "missing function symbol"))?)?;
                let rest = &args[1..];
                self.check_symbol(args[0].pos, fun, head, rest.len())?;
                let targs = self.model_args(rest)?;
                Ok(match (head, targs.is_empty()) {
                    ("modelfun", true) => Term::Const(fun.to_string()),
                    ("modelfun", false) => Term::Model { fun: fun.to_string(), args: targs },
                    _ => Term::Real { fun: fun.to_string(), args: targs },
                })
            }
            other => Err(syntax(s.pos, format!("expected a term, found `{other}`"))),
        }
    }

    fn rational(&self, s: &Sexp) -> Result<Rational, FormulaError> {
        if let Some(text) = s.as_atom() {
            return parse_rational(text).map_err(|e| syntax(s.pos, e.to_string()));
        }
        let (head, args) = self.items(s)?;
        let values = args.iter().map(|a| self.rational(a)).collect::<Result<Vec<_>, _>>()?;
        let arity_err = || syntax(s.pos, format!("bad arity for `{head}`"));
        match head {
            "+" => Ok(values.into_iter().fold(Rational::zero(), |a, b| a + b)),
            "*" => Ok(values.into_iter().fold(Rational::one(), |a, b| a * b)),
            "-" => match values.as_slice() {
                [x] => Ok(-x.clone()),
                [x, rest @ ..] if !rest.is_empty() => Ok(rest.iter().fold(x.clone(), |a, b| a - b)),
                _ => Err(arity_err()),
            },
            "/" => match values.as_slice() {
                [x, y] if y.is_zero() => Err(syntax(s.pos, format!("division by zero: {x} / 0"))),
                [x, y] => Ok(x / y),
                _ => Err(arity_err()),
            },
            other => Err(syntax(s.pos, format!("expected a rational expression, found `{other}`"))),
        }
    }

    fn compact(&self, s: &Sexp) -> Result<CompactRealSet, FormulaError> {
        let mut intervals = Vec::new();
        self.collect_intervals(s, &mut intervals)?;
        CompactRealSet::new(intervals).map_err(|e| syntax(s.pos, e.to_string()))
    }

    fn collect_intervals(&self, s: &Sexp, out: &mut Vec<Interval>) -> Result<(), FormulaError> {
        let (head, args) = self.items(s)?;
        match head {
            "interval" => {
                self.expect_len(s, args, 2)?;
                let iv = Interval::new(self.rational(&args[0])?, self.rational(&args[1])?)
                    .map_err(|e| syntax(s.pos, e.to_string()))?;
                out.push(iv);
                Ok(())
            }
            "union" if !args.is_empty() => args.iter().try_for_each(|a| self.collect_intervals(a, out)),
            other => Err(syntax(s.pos, format!("expected `interval` or `union`, found `{other}`"))),
        }
    }

    fn family(&self, s: &Sexp) -> Result<Generator, FormulaError> {
        let (head, args) = self.items(s)?;
        let param = |a: &Sexp| -> Result<String, FormulaError> {
            let p = self.name(a)?;
            if let Some(sig) = self.sig {
                if sig.contains(p) {
                    return Err(syntax(a.pos, format!("parameter `{p}` clashes with a signature symbol")));
                }
            }
            Ok(p.to_string())
        };
        let (kind, template) = match head {
            "range" => {
                self.expect_len(s, args, 2)?;
                (GeneratorKind::Range { param: param(&args[0])? }, &args[1])
            }
            "grid" => {
                self.expect_len(s, args, 4)?;
                let kind = GeneratorKind::Grid {
                    param: param(&args[0])?,
                    lo: self.rational(&args[1])?,
                    hi: self.rational(&args[2])?,
                };
                (kind, &args[3])
            }
            "co" => {
                self.expect_len(s, args, 2)?;
                let names = args[0].as_list().ok_or_else(|| syntax(args[0].pos, "expected a parameter list"))?;
                if names.is_empty() {
                    return Err(syntax(args[0].pos, "CO(s) needs s >= 1 parameters"));
                }
                let params = names.iter().map(param).collect::<Result<Vec<_>, _>>()?;
                (GeneratorKind::Convex { params }, &args[1])
            }
            other => return Err(syntax(s.pos, format!("expected a family (`range`, `grid`, `co`), found `{other}`"))),
        };
        let generator = Generator::new(kind, template.clone())?;
        if self.sig.is_some() {
            // checks sorts and arities of the template through its first member
            let first = substitute(template, &generator.bindings(1)?[0]);
            self.formula(&first)?;
        }
        Ok(generator)
    }

    fn connective(&self, s: &Sexp, args: &[Sexp], infinite: bool) -> Result<(Family, Limit), FormulaError> {
        if infinite {
            self.expect_len(s, args, 1)?;
            let g = self.family(&args[0])?;
            if g.len().is_some() {
                return Err(syntax(args[0].pos, "an infinite connective needs an infinite family"));
            }
            return Ok((Family::Generated(g), Limit::Infinite));
        }
        if args.len() == 2 && args[0].as_atom().is_some() && is_family_form(&args[1]) {
            let k: usize = self
                .name(&args[0])?
                .parse()
                .map_err(|_| syntax(args[0].pos, "expected a member count"))?;
            let g = self.family(&args[1])?;
            if g.len().is_some_and(|len| len < k) {
                return Err(syntax(args[1].pos, format!("family has fewer than {k} members")));
            }
            return Ok((Family::Generated(g), Limit::Finite(k)));
        }
        let members = args.iter().map(|a| self.formula(a)).collect::<Result<Vec<_>, _>>()?;
        let n = members.len();
        Ok((Family::Explicit(members), Limit::Finite(n)))
    }

    fn quantifier(&self, s: &Sexp, args: &[Sexp]) -> Result<(BoundVector, VarBlock, Formula), FormulaError> {
        self.expect_len(s, args, 3)?;
        let bound_items = args[0].as_list().ok_or_else(|| syntax(args[0].pos, "expected a list of bounds"))?;
        let mut bound = BoundVector { head: vec![], tail: None };
        for (i, b) in bound_items.iter().enumerate() {
            if b.head() == Some("repeat") {
                let inner = b.as_list().unwrap();
                if i + 1 != bound_items.len() || inner.len() != 2 {
                    return Err(syntax(b.pos, "`(repeat K)` must be the last bound"));
                }
                bound.tail = Some(self.bound_relation(&inner[1])?);
            } else {
                bound.head.push(self.bound_relation(b)?);
            }
        }
        let var_items = args[1].as_list().ok_or_else(|| syntax(args[1].pos, "expected a list of variables"))?;
        let mut vars = VarBlock { head: vec![], tail: None };
        for (i, v) in var_items.iter().enumerate() {
            if v.head() == Some("repeat") {
                let inner = v.as_list().unwrap();
                if i + 1 != var_items.len() || inner.len() != 3 {
                    return Err(syntax(v.pos, "`(repeat base stride)` must be the last variable entry"));
                }
                let stride = self.var_id(&inner[2])?;
                if stride == 0 {
                    return Err(syntax(v.pos, "stride must be positive"));
                }
                vars.tail = Some(VarPattern { base: self.var_id(&inner[1])?, stride });
            } else {
                vars.head.push(self.var_id(v)?);
            }
        }
        let distinct: BTreeSet<_> = vars.head.iter().collect();
        if distinct.len() != vars.head.len() || vars.tail.is_some_and(|t| vars.head.iter().any(|v| t.contains(*v))) {
            return Err(syntax(args[1].pos, "bound variables must be distinct"));
        }
        if bound.tail.is_some() != vars.tail.is_some() {
            return Err(syntax(s.pos, "an infinite bound vector needs an infinite variable block and vice versa"));
        }
        if let Some(sig) = self.sig {
            let head_arity: usize = bound.head.iter().map(|b| sig.arity(b).unwrap_or(0)).sum();
            let ok = if bound.tail.is_some() { head_arity == vars.head.len() } else { head_arity == vars.head.len() };
            if !ok {
                return Err(FormulaError::Arity {
                    pos: args[1].pos,
                    name: "bound vector".into(),
                    expected: head_arity,
                    found: vars.head.len(),
                });
            }
        }
        let body = self.formula(&args[2])?;
        Ok((bound, vars, body))
    }

    fn bound_relation(&self, s: &Sexp) -> Result<String, FormulaError> {
        let name = self.name(s)?;
        if let Some(sig) = self.sig {
            match sig.kind(name) {
                Some(SymbolKind::Relation { .. }) => {}
                Some(_) => return Err(FormulaError::Sort { pos: s.pos, message: format!("bound `{name}` is not a relation") }),
                None => return Err(FormulaError::UnknownSymbol { pos: s.pos, name: name.to_string() }),
            }
        }
        Ok(name.to_string())
    }

    fn formula(&self, s: &Sexp) -> Result<Formula, FormulaError> {
        let (head, args) = self.items(s)?;
        match head {
            "rel" => {
                let rel = self.name(args.first().ok_or_else(|| syntax(s.pos, "missing relation symbol"))?)?;
                self.check_symbol(args[0].pos, rel, "rel", args.len() - 1)?;
                Ok(Formula::Rel { rel: rel.to_string(), args: self.model_args(&args[1..])? })
            }
            "in" => {
                self.expect_len(s, args, 2)?;
                let set = self.compact(&args[0])?;
                let term = self.term(&args[1])?;
                if term.sort() != Sort::Real {
                    return Err(FormulaError::Sort { pos: args[1].pos, message: format!("`{term}` is model valued") });
                }
                Ok(Formula::In { set, term })
            }
            "and" | "and-inf" => {
                let (family, limit) = self.connective(s, args, head == "and-inf")?;
                Ok(Formula::And { family, limit })
            }
            "or" | "or-inf" => {
                let (family, limit) = self.connective(s, args, head == "or-inf")?;
                Ok(Formula::Or { family, limit })
            }
            "not" => {
                self.expect_len(s, args, 1)?;
                Ok(Formula::not(self.formula(&args[0])?))
            }
            "implies" => {
                self.expect_len(s, args, 2)?;
                Ok(Formula::implies(self.formula(&args[0])?, self.formula(&args[1])?))
            }
            "exists" => {
                let (bound, vars, body) = self.quantifier(s, args)?;
                Ok(Formula::exists(bound, vars, body))
            }
            "forall" => {
                let (bound, vars, body) = self.quantifier(s, args)?;
                Ok(Formula::forall(bound, vars, body))
            }
            other => Err(syntax(s.pos, format!("unknown formula head `{other}`"))),
        }
    }
}

fn write_family(f: &mut fmt::Formatter<'_>, g: &Generator) -> fmt::Result {
    match &g.kind {
        GeneratorKind::Range { param } => write!(f, "(range {param} {})", g.template),
        GeneratorKind::Grid { param, lo, hi } => write!(f, "(grid {param} {lo} {hi} {})", g.template),
        GeneratorKind::Convex { params } => write!(f, "(co ({}) {})", params.join(" "), g.template),
    }
}

fn write_connective(f: &mut fmt::Formatter<'_>, name: &str, family: &Family, limit: Limit) -> fmt::Result {
    match (family, limit) {
        (Family::Generated(g), Limit::Infinite) => {
            write!(f, "({name}-inf ")?;
            write_family(f, g)?;
            write!(f, ")")
        }
        (Family::Generated(g), Limit::Finite(k)) => {
            write!(f, "({name} {k} ")?;
            write_family(f, g)?;
            write!(f, ")")
        }
        (Family::Explicit(list), limit) => {
            let k = match limit {
                Limit::Finite(k) => k.min(list.len()),
                Limit::Infinite => list.len(),
            };
            write!(f, "({name}")?;
            for m in &list[..k] {
                write!(f, " {m}")?;
            }
            write!(f, ")")
        }
    }
}

fn write_quantifier(f: &mut fmt::Formatter<'_>, name: &str, bound: &BoundVector, vars: &VarBlock, body: &Formula) -> fmt::Result {
    write!(f, "({name} (")?;
    let mut first = true;
    for b in &bound.head {
        write!(f, "{}{b}", if first { "" } else { " " })?;
        first = false;
    }
    if let Some(t) = &bound.tail {
        write!(f, "{}(repeat {t})", if first { "" } else { " " })?;
    }
    write!(f, ") (")?;
    let mut first = true;
    for v in &vars.head {
        write!(f, "{}{v}", if first { "" } else { " " })?;
        first = false;
    }
    if let Some(t) = vars.tail {
        write!(f, "{}(repeat {} {})", if first { "" } else { " " }, t.base, t.stride)?;
    }
    write!(f, ") {body})")
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::Rel { rel, args } => {
                write!(f, "(rel {rel}")?;
                for a in args {
                    write!(f, " {a}")?;
                }
                write!(f, ")")
            }
            Formula::In { set, term } => write!(f, "(in {set} {term})"),
            Formula::And { family, limit } => write_connective(f, "and", family, *limit),
            Formula::Or { family, limit } => write_connective(f, "or", family, *limit),
            Formula::Not(b) => write!(f, "(not {b})"),
            Formula::Implies(a, b) => write!(f, "(implies {a} {b})"),
            Formula::Exists { bound, vars, body } => write_quantifier(f, "exists", bound, vars, body),
            Formula::Forall { bound, vars, body } => write_quantifier(f, "forall", bound, vars, body),
        }
    }
}

/// Integer helper for callers that need `k` as a rational.
pub fn rational_of(k: usize) -> Rational {
    Rational::from_integer(BigInt::from(k))
}

/// `true` when `x` is a nonnegative integer.
pub fn is_natural(x: &Rational) -> bool {
    x.is_integer() && !x.is_negative() && x.to_integer().to_u64().is_some()
}
