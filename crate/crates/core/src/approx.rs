//! Branch codes, the approximate formulas `φ_{h,n}`, the `Dense(φ)`
//! enumerator and stabilization bounds.
//!
//! A [`BranchCode`] is a finite prefix of a branch of the approximation tree,
//! long enough to produce `φ_{h,n}` for the depths it is adequate for.
//!
//! Dense branches are enumerated through seeds. A conjunction seed lists, per
//! conjunct, an index into that conjunct's own dense stream (missing entries
//! mean index 0). A negation seed lists `(index, depth)` pairs; past the seed
//! the branch keeps the last depth and cycles through the dense stream of the
//! body, which makes it a full branch satisfying the weak surjectivity
//! condition. Seeds are ordered by level (sum of entries plus length, or sum
//! of `index + depth` for negations), then lexicographically.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_traits::{One, Zero};
use thiserror::Error;

use crate::formula::{core_form, Family, Formula, FormulaError, Limit, Term, VarBlock, VarId};
use crate::model::FiniteMetricModel;
use crate::rational::{ceil_u64, reciprocal, Rational};
use crate::sexp::{self, Sexp};
use crate::signature::{CompactRealSet, Interval};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ApproxError {
    #[error("depth must be at least 1")]
    ZeroDepth,
    #[error("branch code does not match the formula at {path}: {message}")]
    Shape { path: String, message: String },
    #[error("branch code is not adequate at {path}: {message}")]
    Inadequate { path: String, message: String },
    #[error("formula is not finitary")]
    NotFinitary,
    #[error(transparent)]
    Formula(#[from] FormulaError),
    #[error("invalid branch code: {0}")]
    Parse(String),
}

/// Finite prefix of a branch of the approximation tree.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BranchCode {
    Leaf,
    Tuple(BTreeMap<usize, BranchCode>),
    Neg(Vec<(BranchCode, u64)>),
    Pass(Box<BranchCode>),
}

impl BranchCode {
    pub fn tuple(entries: impl IntoIterator<Item = BranchCode>) -> BranchCode {
        BranchCode::Tuple(entries.into_iter().enumerate().map(|(i, c)| (i + 1, c)).collect())
    }

    pub fn neg(pairs: impl IntoIterator<Item = (BranchCode, u64)>) -> BranchCode {
        BranchCode::Neg(pairs.into_iter().collect())
    }

    pub fn pass(inner: BranchCode) -> BranchCode {
        BranchCode::Pass(Box::new(inner))
    }

    /// Structural size: conjunction entries cost 1, negation pairs cost their depth.
    pub fn size(&self) -> u64 {
        match self {
            BranchCode::Leaf => 0,
            BranchCode::Pass(inner) => inner.size(),
            BranchCode::Tuple(entries) => entries.values().map(|c| 1 + c.size()).sum(),
            BranchCode::Neg(pairs) => pairs.iter().map(|(c, d)| d + c.size()).sum(),
        }
    }

    pub fn parse(text: &str) -> Result<BranchCode, ApproxError> {
        let form = sexp::parse_one(text).map_err(|e| ApproxError::Parse(e.to_string()))?;
        Self::from_sexp(&form)
    }

    fn from_sexp(s: &Sexp) -> Result<BranchCode, ApproxError> {
        let bad = |msg: &str| ApproxError::Parse(format!("{}: {msg}", s.pos));
        if s.as_atom() == Some("leaf") {
            return Ok(BranchCode::Leaf);
        }
        let items = s.as_list().ok_or_else(|| bad("expected `leaf` or a list"))?;
        fn pair(p: &Sexp) -> Result<(&Sexp, &Sexp), ApproxError> {
            match p.as_list() {
                Some([a, b]) => Ok((a, b)),
                _ => Err(ApproxError::Parse(format!("{}: expected a pair", p.pos))),
            }
        }
        let number = |p: &Sexp| -> Result<u64, ApproxError> {
            p.as_atom()
                .and_then(|a| a.parse().ok())
                .ok_or_else(|| ApproxError::Parse(format!("{}: expected a natural number", p.pos)))
        };
        match s.head() {
            Some("tuple") => {
                let mut entries = BTreeMap::new();
                for p in &items[1..] {
                    let (k, c) = pair(p)?;
                    let k = number(k)? as usize;
                    if k == 0 || entries.insert(k, Self::from_sexp(c)?).is_some() {
                        return Err(bad("tuple indices must be distinct and start at 1"));
                    }
                }
                Ok(BranchCode::Tuple(entries))
            }
            Some("neg") => {
                let mut pairs = Vec::new();
                for p in &items[1..] {
                    let (c, d) = pair(p)?;
                    pairs.push((Self::from_sexp(c)?, number(d)?));
                }
                Ok(BranchCode::Neg(pairs))
            }
            Some("pass") if items.len() == 2 => Ok(BranchCode::pass(Self::from_sexp(&items[1])?)),
            _ => Err(bad("expected `tuple`, `neg` or `pass`")),
        }
    }
}

impl fmt::Display for BranchCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BranchCode::Leaf => f.write_str("leaf"),
            BranchCode::Pass(inner) => write!(f, "(pass {inner})"),
            BranchCode::Tuple(entries) => {
                f.write_str("(tuple")?;
                for (k, c) in entries {
                    write!(f, " ({k} {c})")?;
                }
                f.write_str(")")
            }
            BranchCode::Neg(pairs) => {
                f.write_str("(neg")?;
                for (c, d) in pairs {
                    write!(f, " ({c} {d})")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// `φ_{h,n}` together with where it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApproxFormula {
    pub formula: Formula,
    pub source: Formula,
    pub code: BranchCode,
    pub depth: u64,
}

fn member_at<'a>(family: &'a Family, i: usize) -> &'a Formula {
    match family {
        Family::Explicit(list) => &list[i - 1],
        Family::Generated(g) => g.sample(),
    }
}

fn needed_entries(limit: Limit, depth: u64) -> usize {
    match limit {
        Limit::Finite(k) => k,
        Limit::Infinite => depth as usize,
    }
}

/// Checks that `code` has the shape of `phi` (a core formula) and, when
/// `depth` is given, that it is adequate for that depth.
pub fn check_code(phi: &Formula, code: &BranchCode, depth: Option<u64>) -> Result<(), ApproxError> {
    check_at(phi, code, depth, &mut String::new())
}

fn check_at(phi: &Formula, code: &BranchCode, depth: Option<u64>, path: &mut String) -> Result<(), ApproxError> {
    let shape = |path: &str, message: String| ApproxError::Shape { path: display_path(path), message };
    match (phi, code) {
        (Formula::Rel { .. } | Formula::In { .. }, BranchCode::Leaf) => Ok(()),
        (Formula::And { family, limit }, BranchCode::Tuple(entries)) => {
            let cap = match (family, limit) {
                (_, Limit::Finite(k)) => Some(*k),
                (Family::Explicit(list), Limit::Infinite) => Some(list.len()),
                (Family::Generated(_), Limit::Infinite) => None,
            };
            if let Some((&k, _)) = entries.iter().find(|(k, _)| **k == 0 || cap.is_some_and(|c| **k > c)) {
                return Err(shape(path, format!("conjunction has no member {k}")));
            }
            if let Some(n) = depth {
                let m = needed_entries(*limit, n);
                if let Some(i) = (1..=m).find(|i| !entries.contains_key(i)) {
                    return Err(ApproxError::Inadequate {
                        path: display_path(path),
                        message: format!("depth {n} needs conjunction entries 1..{m}, entry {i} is missing"),
                    });
                }
            }
            for (k, c) in entries {
                let len = path.len();
                path.push_str(&format!("/and[{k}]"));
                check_at(member_at(family, *k), c, depth, path)?;
                path.truncate(len);
            }
            Ok(())
        }
        (Formula::Not(body), BranchCode::Neg(pairs)) => {
            if let Some(n) = depth {
                if (pairs.len() as u64) < n {
                    return Err(ApproxError::Inadequate {
                        path: display_path(path),
                        message: format!("depth {n} needs {n} negation pairs, found {}", pairs.len()),
                    });
                }
            }
            for (i, (c, d)) in pairs.iter().enumerate() {
                let len = path.len();
                path.push_str(&format!("/not[{}]", i + 1));
                if *d == 0 {
                    return Err(shape(path, "negation pair depths must be positive".into()));
                }
                check_at(body, c, Some(*d), path)?;
                path.truncate(len);
            }
            Ok(())
        }
        (Formula::Exists { body, .. }, BranchCode::Pass(inner)) => {
            let len = path.len();
            path.push_str("/exists");
            check_at(body, inner, depth, path)?;
            path.truncate(len);
            Ok(())
        }
        (Formula::Or { .. } | Formula::Implies(..) | Formula::Forall { .. }, _) => {
            unreachable!("codes are checked against core formulas")
        }
        (phi, code) => {
            let want = match phi {
                Formula::Rel { .. } | Formula::In { .. } => "leaf",
                Formula::And { .. } => "tuple",
                Formula::Not(_) => "neg",
                _ => "pass",
            };
            Err(shape(path, format!("expected `{want}`, found `{code}`")))
        }
    }
}

fn display_path(path: &str) -> String {
    if path.is_empty() {
        "/".to_string()
    } else {
        path.to_string()
    }
}

/// Computes `φ_{h,n}`. Relation atoms `C(t⃗)` become
/// `∃y⃗∈C ⋀ᵢ ρ(tᵢ,yᵢ) ∈ [0,1/n]` with fresh variables above every id in `phi`.
pub fn approximate(phi: &Formula, h: &BranchCode, n: u64, metric: &str) -> Result<ApproxFormula, ApproxError> {
    if n == 0 {
        return Err(ApproxError::ZeroDepth);
    }
    let core = core_form(phi);
    check_code(&core, h, Some(n))?;
    let fresh = core.max_var_id().map_or(0, |v| v + 1);
    let formula = Approximator { metric, fresh }.approx(&core, h, n)?;
    Ok(ApproxFormula { formula, source: phi.clone(), code: h.clone(), depth: n })
}

struct Approximator<'a> {
    metric: &'a str,
    fresh: VarId,
}

impl Approximator<'_> {
    fn approx(&self, phi: &Formula, h: &BranchCode, n: u64) -> Result<Formula, ApproxError> {
        Ok(match (phi, h) {
            (Formula::Rel { rel, args }, _) => {
                let ys: Vec<VarId> = (0..args.len() as VarId).map(|i| self.fresh + i).collect();
                let ball = CompactRealSet::interval(Rational::zero(), reciprocal(n)).expect("0 <= 1/n");
                let conjuncts = args
                    .iter()
                    .zip(&ys)
                    .map(|(t, y)| Formula::In {
                        set: ball.clone(),
                        term: Term::real(self.metric, vec![t.clone(), Term::Var(*y)]),
                    })
                    .collect();
                Formula::exists(
                    crate::formula::BoundVector::finite(vec![rel.clone()]),
                    VarBlock::finite(ys),
                    Formula::and(conjuncts),
                )
            }
            (Formula::In { set, term }, _) => Formula::In {
                set: set.deform(n).expect("n >= 1"),
                term: term.clone(),
            },
            (Formula::And { family, limit }, BranchCode::Tuple(entries)) => {
                let m = needed_entries(*limit, n);
                let members = family.members(m)?;
                let parts = members
                    .iter()
                    .enumerate()
                    .map(|(i, member)| self.approx(member, &entries[&(i + 1)], n))
                    .collect::<Result<Vec<_>, _>>()?;
                Formula::and(parts)
            }
            (Formula::Not(body), BranchCode::Neg(pairs)) => {
                let parts = pairs[..n as usize]
                    .iter()
                    .map(|(c, d)| Ok(Formula::not(self.approx(body, c, *d)?)))
                    .collect::<Result<Vec<_>, ApproxError>>()?;
                Formula::and(parts)
            }
            (Formula::Exists { bound, vars, body }, BranchCode::Pass(inner)) => {
                Formula::exists(bound.clone(), vars.clone(), self.approx(body, inner, n)?)
            }
            _ => unreachable!("code was checked"),
        })
    }
}

/// Position in the dense stream of some node.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Seed {
    Unit,
    Tuple(Vec<usize>),
    Neg(Vec<(usize, u64)>),
}

enum Members {
    Each(Vec<Node>),
    Shared(Box<Node>),
}

enum NodeKind {
    Leaf,
    Pass(Box<Node>),
    And { members: Members, limit: Limit },
    Not(Box<Node>),
}

struct Node {
    kind: NodeKind,
    single: bool,
    seeds: Vec<Seed>,
    next_level: u64,
}

impl Node {
    fn build(phi: &Formula) -> Result<Node, ApproxError> {
        let kind = match phi {
            Formula::Rel { .. } | Formula::In { .. } => NodeKind::Leaf,
            Formula::Exists { body, .. } => NodeKind::Pass(Box::new(Node::build(body)?)),
            Formula::Not(body) => NodeKind::Not(Box::new(Node::build(body)?)),
            Formula::And { family, limit } => {
                let members = match (family, limit) {
                    (Family::Explicit(list), Limit::Finite(k)) => {
                        Members::Each(list.iter().take(*k).map(Node::build).collect::<Result<_, _>>()?)
                    }
                    (Family::Explicit(_), Limit::Infinite) => {
                        return Err(ApproxError::Formula(FormulaError::Family(
                            "an explicit family cannot back an infinite conjunction".into(),
                        )))
                    }
                    (Family::Generated(g), _) => Members::Shared(Box::new(Node::build(g.sample())?)),
                };
                NodeKind::And { members, limit: *limit }
            }
            _ => unreachable!("dense nodes are built from core formulas"),
        };
        let single = match &kind {
            NodeKind::Leaf => true,
            NodeKind::Pass(body) => body.single,
            NodeKind::Not(_) => false,
            NodeKind::And { members: Members::Each(list), .. } => list.iter().all(|m| m.single),
            NodeKind::And { members: Members::Shared(m), limit } => m.single || *limit == Limit::Finite(0),
        };
        Ok(Node { kind, single, seeds: Vec::new(), next_level: 0 })
    }

    fn member(&mut self, i: usize) -> &mut Node {
        match &mut self.kind {
            NodeKind::And { members: Members::Each(list), .. } => &mut list[i - 1],
            NodeKind::And { members: Members::Shared(m), .. } => m,
            _ => unreachable!(),
        }
    }

    fn member_single(&self, i: usize) -> bool {
        match &self.kind {
            NodeKind::And { members: Members::Each(list), .. } => list[i - 1].single,
            NodeKind::And { members: Members::Shared(m), .. } => m.single,
            _ => unreachable!(),
        }
    }

    /// Upper bound on the number of conjunct positions, `None` if unbounded.
    fn positions(&self) -> Option<usize> {
        match &self.kind {
            NodeKind::And { limit: Limit::Finite(k), .. } => Some(*k),
            NodeKind::And { members: Members::Each(list), .. } => Some(list.len()),
            _ => None,
        }
    }

    fn nth(&mut self, j: usize) -> Seed {
        if let NodeKind::Pass(body) = &mut self.kind {
            return body.nth(j);
        }
        if self.single {
            return match self.kind {
                NodeKind::And { .. } => Seed::Tuple(vec![]),
                _ => Seed::Unit,
            };
        }
        while self.seeds.len() <= j {
            let level = self.next_level;
            self.next_level += 1;
            let mut batch = match &self.kind {
                NodeKind::And { .. } => self.and_level(level),
                NodeKind::Not(body) => not_level(level, body.single),
                _ => unreachable!(),
            };
            batch.sort();
            self.seeds.extend(batch);
        }
        self.seeds[j].clone()
    }

    fn and_level(&self, level: u64) -> Vec<Seed> {
        if level == 0 {
            return vec![Seed::Tuple(vec![])];
        }
        let mut out = Vec::new();
        let max_len = self.positions().map_or(level as usize, |p| p.min(level as usize));
        for len in 1..=max_len {
            if self.member_single(len) {
                continue;
            }
            let budget = level - len as u64;
            if budget == 0 {
                continue;
            }
            let mut current = Vec::with_capacity(len);
            self.fill_and(len, budget, &mut current, &mut out);
        }
        out
    }

    fn fill_and(&self, len: usize, budget: u64, current: &mut Vec<usize>, out: &mut Vec<Seed>) {
        let i = current.len() + 1;
        if i == len {
            // the last entry is nonzero and takes the rest
            current.push(budget as usize);
            out.push(Seed::Tuple(current.clone()));
            current.pop();
            return;
        }
        let max = if self.member_single(i) { 0 } else { budget - 1 };
        for j in 0..=max {
            current.push(j as usize);
            self.fill_and(len, budget - j, current, out);
            current.pop();
        }
    }

    fn materialize(&mut self, seed: &Seed, depth: u64) -> BranchCode {
        match &mut self.kind {
            NodeKind::Leaf => BranchCode::Leaf,
            NodeKind::Pass(body) => BranchCode::pass(body.materialize(seed, depth)),
            NodeKind::And { limit, .. } => {
                let m = needed_entries(*limit, depth);
                let Seed::Tuple(indices) = seed else { unreachable!() };
                let mut entries = BTreeMap::new();
                for i in 1..=m {
                    let j = indices.get(i - 1).copied().unwrap_or(0);
                    let member = self.member(i);
                    let s = member.nth(j);
                    entries.insert(i, member.materialize(&s, depth));
                }
                BranchCode::Tuple(entries)
            }
            NodeKind::Not(body) => {
                let Seed::Neg(pairs) = seed else { unreachable!() };
                let (_, last_depth) = *pairs.last().expect("negation seeds are nonempty");
                let mut out = Vec::with_capacity(depth as usize);
                for i in 0..depth.max(pairs.len() as u64) as usize {
                    let (j, d) = match pairs.get(i) {
                        Some(p) => *p,
                        None => {
                            let k = i - pairs.len();
                            (if body.single { 0 } else { k }, last_depth)
                        }
                    };
                    let s = body.nth(j);
                    out.push((body.materialize(&s, d), d));
                }
                BranchCode::Neg(out)
            }
        }
    }

    /// Longest negation seed reachable from `seed` within the first `depth` positions.
    fn neg_seed_len(&mut self, seed: &Seed, depth: u64) -> usize {
        match &mut self.kind {
            NodeKind::Leaf => 0,
            NodeKind::Pass(body) => body.neg_seed_len(seed, depth),
            NodeKind::And { limit, .. } => {
                let m = needed_entries(*limit, depth);
                let Seed::Tuple(indices) = seed else { unreachable!() };
                let mut best = 0;
                for i in 1..=m.min(indices.len() + 1) {
                    let j = indices.get(i - 1).copied().unwrap_or(0);
                    let member = self.member(i);
                    let s = member.nth(j);
                    best = best.max(member.neg_seed_len(&s, depth));
                }
                if let NodeKind::And { members: Members::Each(_), .. } = self.kind {
                    for i in indices.len() + 2..=m {
                        let member = self.member(i);
                        let s = member.nth(0);
                        best = best.max(member.neg_seed_len(&s, depth));
                    }
                }
                best
            }
            NodeKind::Not(_) => {
                let Seed::Neg(pairs) = seed else { unreachable!() };
                pairs.len()
            }
        }
    }
}

fn not_level(level: u64, body_single: bool) -> Vec<Seed> {
    fn fill(budget: u64, body_single: bool, current: &mut Vec<(usize, u64)>, out: &mut Vec<Seed>) {
        if budget == 0 {
            // with a single body, a repeated last pair is what extension adds anyway
            let redundant = body_single && current.len() >= 2 && current[current.len() - 1] == current[current.len() - 2];
            if !current.is_empty() && !redundant {
                out.push(Seed::Neg(current.clone()));
            }
            return;
        }
        let max_j = if body_single { 0 } else { budget - 1 };
        for j in 0..=max_j {
            for d in 1..=budget - j {
                current.push((j as usize, d));
                fill(budget - j - d, body_single, current, out);
                current.pop();
            }
        }
    }
    let mut out = Vec::new();
    fill(level, body_single, &mut Vec::new(), &mut out);
    out
}

/// One element of the dense stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenseBranch {
    /// Position in the stream, starting at 0.
    pub index: usize,
    pub seed: Seed,
    pub code: BranchCode,
    /// Length of the longest negation seed; past it every negation repeats
    /// its last depth.
    pub neg_seed_len: usize,
}

/// Enumerator of `Dense(φ)`, materializing codes adequate for every depth
/// up to a fixed one.
pub struct DenseBranches {
    root: Node,
    depth: u64,
    next: usize,
}

impl DenseBranches {
    pub fn new(phi: &Formula, depth: u64) -> Result<Self, ApproxError> {
        if depth == 0 {
            return Err(ApproxError::ZeroDepth);
        }
        let core = core_form(phi);
        Ok(DenseBranches { root: Node::build(&core)?, depth, next: 0 })
    }

    /// True when `Dense(φ)` has a single element.
    pub fn is_single(&self) -> bool {
        self.root.single
    }

    /// The code for position `index` of the stream.
    pub fn get(&mut self, index: usize) -> Option<DenseBranch> {
        if self.root.single && index > 0 {
            return None;
        }
        let seed = self.root.nth(index);
        let code = self.root.materialize(&seed, self.depth);
        let neg_seed_len = self.root.neg_seed_len(&seed, self.depth);
        Some(DenseBranch { index, seed, code, neg_seed_len })
    }
}

impl Iterator for DenseBranches {
    type Item = DenseBranch;

    fn next(&mut self) -> Option<DenseBranch> {
        let item = self.get(self.next)?;
        self.next += 1;
        Some(item)
    }
}

/// Lazy stream of dense branch codes, each adequate for all depths `<= depth`.
pub fn dense_branches(phi: &Formula, depth: u64) -> Result<DenseBranches, ApproxError> {
    DenseBranches::new(phi, depth)
}

/// Every shape-correct code of structural size `<= max_size` that is
/// adequate for `depth`, with conjunction keys `1..m` and no gaps.
pub fn codes_up_to_size(phi: &Formula, max_size: u64, depth: u64) -> Vec<BranchCode> {
    let core = core_form(phi);
    codes_within(&core, max_size, depth).into_iter().map(|(c, _)| c).collect()
}

fn codes_within(phi: &Formula, budget: u64, depth: u64) -> Vec<(BranchCode, u64)> {
    match phi {
        Formula::Rel { .. } | Formula::In { .. } => vec![(BranchCode::Leaf, 0)],
        Formula::Exists { body, .. } => codes_within(body, budget, depth)
            .into_iter()
            .map(|(c, s)| (BranchCode::pass(c), s))
            .collect(),
        Formula::And { family, limit } => {
            let needed = needed_entries(*limit, depth);
            let cap = match (family, limit) {
                (_, Limit::Finite(k)) => *k,
                (Family::Explicit(list), _) => list.len(),
                _ => usize::MAX,
            };
            let mut out = Vec::new();
            let max_len = cap.min(needed.max(budget as usize));
            for len in needed..=max_len {
                let mut current = Vec::new();
                tuple_codes(family, len, budget, depth, &mut current, 0, &mut out);
            }
            out
        }
        Formula::Not(body) => {
            let mut out = Vec::new();
            neg_codes(body, budget, depth as usize, &mut Vec::new(), 0, &mut out);
            out
        }
        _ => unreachable!("core formula"),
    }
}

fn tuple_codes(
    family: &Family,
    len: usize,
    budget: u64,
    depth: u64,
    current: &mut Vec<BranchCode>,
    used: u64,
    out: &mut Vec<(BranchCode, u64)>,
) {
    if current.len() == len {
        out.push((BranchCode::tuple(current.iter().cloned()), used));
        return;
    }
    if used + 1 > budget {
        return;
    }
    let member = member_at(family, current.len() + 1);
    for (c, s) in codes_within(member, budget - used - 1, depth) {
        current.push(c);
        tuple_codes(family, len, budget, depth, current, used + 1 + s, out);
        current.pop();
    }
}

fn neg_codes(
    body: &Formula,
    budget: u64,
    min_len: usize,
    current: &mut Vec<(BranchCode, u64)>,
    used: u64,
    out: &mut Vec<(BranchCode, u64)>,
) {
    if current.len() >= min_len {
        out.push((BranchCode::Neg(current.clone()), used));
    }
    for d in 1..=budget.saturating_sub(used) {
        for (c, s) in codes_within(body, budget - used - d, d) {
            current.push((c, d));
            neg_codes(body, budget, min_len, current, used + d + s, out);
            current.pop();
        }
    }
}

/// Compact sets whose deformations the approximations test, one `{0}` per
/// relation atom.
fn compact_sets(phi: &Formula, out: &mut Vec<CompactRealSet>) -> Result<(), ApproxError> {
    match phi {
        Formula::Rel { .. } => out.push(CompactRealSet::point(Rational::zero())),
        Formula::In { set, .. } => out.push(set.clone()),
        Formula::And { family, limit } => {
            let Limit::Finite(k) = limit else { return Err(ApproxError::NotFinitary) };
            for m in family.members(*k)? {
                compact_sets(&m, out)?;
            }
        }
        Formula::Not(body) | Formula::Exists { body, .. } => compact_sets(body, out)?,
        _ => unreachable!("core formula"),
    }
    Ok(())
}

/// Depth from which every atom verdict in `φ_{h,n}` is constant in `M`:
/// `⌈1/g⌉ + 1` where `g` is the least positive distance from a real value
/// of `M` to a compact set of `φ` not containing it, or 1 when no such gap exists.
pub fn stabilization_bound(phi: &Formula, model: &FiniteMetricModel) -> Result<u64, ApproxError> {
    let core = core_form(phi);
    if !core.is_finitary() {
        return Err(ApproxError::NotFinitary);
    }
    let mut sets = Vec::new();
    compact_sets(&core, &mut sets)?;
    let sets: BTreeSet<_> = sets.into_iter().map(|s| s.intervals().to_vec()).collect();
    let values = model.real_values();
    let mut gap: Option<Rational> = None;
    for intervals in &sets {
        let set = CompactRealSet::new(intervals.iter().cloned().collect::<Vec<Interval>>()).expect("nonempty");
        for v in &values {
            let d = set.distance_to(v);
            if !d.is_zero() && gap.as_ref().is_none_or(|g| &d < g) {
                gap = Some(d);
            }
        }
    }
    Ok(match gap {
        None => 1,
        Some(g) => ceil_u64(&(Rational::one() / g)) + 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::BoundVector;
    use crate::signature::closed;

    fn c0() -> Formula {
        Formula::rel("C", vec![Term::var(0)])
    }

    #[test]
    fn code_text_roundtrip() {
        for text in ["leaf", "(tuple (1 leaf) (2 (pass leaf)))", "(neg (leaf 3) (leaf 5))", "(tuple)"] {
            let code = BranchCode::parse(text).unwrap();
            assert_eq!(code.to_string(), text);
        }
        assert!(BranchCode::parse("(tuple (0 leaf))").is_err());
        assert!(BranchCode::parse("(neg (leaf x))").is_err());
    }

    #[test]
    fn atomic_compact_case() {
        let phi = Formula::within(closed("0", "1").unwrap(), Term::real("norm", vec![Term::var(0)]));
        let a = approximate(&phi, &BranchCode::Leaf, 4, "rho").unwrap();
        assert_eq!(a.formula.to_string(), "(in (interval -1/4 5/4) (realfun norm (var 0)))");
    }

    #[test]
    fn relation_case_uses_fresh_variables() {
        let a = approximate(&c0(), &BranchCode::Leaf, 3, "rho").unwrap();
        assert_eq!(
            a.formula.to_string(),
            "(exists (C) (1) (and (in (interval 0 1/3) (realfun rho (var 0) (var 1)))))"
        );
    }

    #[test]
    fn conjunction_and_negation_cases() {
        let sig = crate::signature::Signature::builder().real_function("rho", 2).relation("C", 1).metric("rho").build().unwrap();
        let inf = Formula::parse("(and-inf (range n (in (interval 0 n) (realfun rho (var 0) (var 0)))))", &sig).unwrap();
        let code = BranchCode::tuple([BranchCode::Leaf, BranchCode::Leaf]);
        let a = approximate(&inf, &code, 2, "rho").unwrap();
        assert_eq!(
            a.formula.to_string(),
            "(and (in (interval -1/2 3/2) (realfun rho (var 0) (var 0))) (in (interval -1/2 5/2) (realfun rho (var 0) (var 0))))"
        );
        let neg = Formula::not(c0());
        let code = BranchCode::neg([(BranchCode::Leaf, 3), (BranchCode::Leaf, 5)]);
        let a = approximate(&neg, &code, 2, "rho").unwrap();
        let c3 = approximate(&c0(), &BranchCode::Leaf, 3, "rho").unwrap().formula;
        let c5 = approximate(&c0(), &BranchCode::Leaf, 5, "rho").unwrap().formula;
        assert_eq!(a.formula, Formula::and(vec![Formula::not(c3), Formula::not(c5)]));
    }

    #[test]
    fn inadequate_codes_report_position() {
        let neg = Formula::and(vec![c0(), Formula::not(c0())]);
        let code = BranchCode::tuple([BranchCode::Leaf, BranchCode::neg([(BranchCode::Leaf, 1)])]);
        let err = approximate(&neg, &code, 2, "rho").unwrap_err();
        assert_eq!(
            err,
            ApproxError::Inadequate { path: "/and[2]".into(), message: "depth 2 needs 2 negation pairs, found 1".into() }
        );
        assert_eq!(approximate(&c0(), &BranchCode::Leaf, 0, "rho"), Err(ApproxError::ZeroDepth));
        assert!(matches!(approximate(&c0(), &BranchCode::tuple([]), 1, "rho"), Err(ApproxError::Shape { .. })));
    }

    #[test]
    fn positive_formulas_have_one_dense_branch() {
        let ex = Formula::exists(BoundVector::finite(vec!["C".into()]), VarBlock::finite(vec![1]), Formula::and(vec![c0()]));
        let codes: Vec<_> = dense_branches(&ex, 3).unwrap().collect();
        assert_eq!(codes.len(), 1);
        assert_eq!(codes[0].code.to_string(), "(pass (tuple (1 leaf)))");
    }

    #[test]
    fn negation_stream_prefix() {
        let neg = Formula::not(c0());
        let seeds: Vec<_> = dense_branches(&neg, 2).unwrap().take(4).map(|b| b.seed).collect();
        assert_eq!(
            seeds,
            vec![
                Seed::Neg(vec![(0, 1)]),
                Seed::Neg(vec![(0, 2)]),
                Seed::Neg(vec![(0, 1), (0, 2)]),
                Seed::Neg(vec![(0, 2), (0, 1)]),
            ]
        );
        let codes: Vec<_> = dense_branches(&neg, 6).unwrap().take(60).map(|b| b.code).collect();
        assert_eq!(codes.iter().collect::<std::collections::BTreeSet<_>>().len(), codes.len());
        // a constant depth-4 branch appears early
        let hit = dense_branches(&neg, 3)
            .unwrap()
            .take(16)
            .find(|b| b.code == BranchCode::neg(vec![(BranchCode::Leaf, 4); 3]));
        assert!(hit.is_some());
    }

    #[test]
    fn dense_codes_are_adequate_and_prefix_stable() {
        let phi = Formula::and(vec![Formula::not(c0()), Formula::not(Formula::not(c0()))]);
        for b in dense_branches(&phi, 4).unwrap().take(200) {
            check_code(&phi, &b.code, Some(4)).unwrap();
        }
    }

    #[test]
    fn small_codes_are_realized_by_dense_codes() {
        let phi = Formula::and(vec![c0(), Formula::not(c0())]);
        for n in 1..=3 {
            let dense: Vec<_> = dense_branches(&phi, n)
                .unwrap()
                .take(500)
                .map(|b| approximate(&phi, &b.code, n, "rho").unwrap().formula)
                .collect();
            for code in codes_up_to_size(&phi, 4, n) {
                let target = approximate(&phi, &code, n, "rho").unwrap().formula;
                assert!(dense.contains(&target), "{code} at {n}");
            }
        }
    }
}
