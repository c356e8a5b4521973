//! Ultraproducts of finitely many finite metric models.
//!
//! The construction follows the general clauses (carrier restriction,
//! quotient by `U`-vanishing distance, limits along `U`) and consults the
//! ultrafilter only through [`UltrafilterOracle::decide`]. On a finite index
//! set every ultrafilter is principal; the tests check the resulting collapse
//! onto the generating factor instead of building it in.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use itertools::Itertools;
use num_traits::Zero;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::approx::{approximate, dense_branches, stabilization_bound, BranchCode};
use crate::formula::{Formula, Term, VarId};
use crate::model::{ap_satisfies, satisfies, ApVerdict, Evaluator, FiniteMetricModel, ModelError, PointId, Valuation};
use crate::rational::Rational;
use crate::signature::{CompactRealSet, Interval};
use crate::uniform::{BoundTarget, UniformProfile};

/// Largest index set handled by the bitmask representation.
pub const MAX_INDEX_SET: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UltraError {
    #[error("invalid ultrafilter: {axiom} fails for {}", fmt_set(witness))]
    InvalidOracle { axiom: &'static str, witness: Vec<usize> },
    #[error("invalid oracle description: {0}")]
    OracleFormat(String),
    #[error("value {value} lies outside the domain {domain}")]
    OutsideDomain { value: Rational, domain: String },
    #[error("no U-limit exists for the sequence")]
    NoLimit,
    #[error("{0}")]
    Factors(String),
    #[error("sequence {0} is not in the carrier")]
    NotInCarrier(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn fmt_set(s: &[usize]) -> String {
    format!("{{{}}}", s.iter().join(","))
}

/// A total predicate on subsets of `{1..m}`, stored as a table over bitmasks
/// (bit `i - 1` stands for index `i`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UltrafilterOracle {
    size: usize,
    table: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OracleFile {
    size: usize,
    members: Vec<Vec<usize>>,
}

fn mask_to_set(mask: u32, size: usize) -> Vec<usize> {
    (1..=size).filter(|i| mask & (1 << (i - 1)) != 0).collect()
}

impl UltrafilterOracle {
    /// `decide(S)` iff `S` is one of `members`. Not validated.
    pub fn from_members(size: usize, members: &[Vec<usize>]) -> Result<Self, UltraError> {
        if size == 0 || size > MAX_INDEX_SET {
            return Err(UltraError::OracleFormat(format!("index set size must be in 1..={MAX_INDEX_SET}")));
        }
        let mut table = vec![false; 1 << size];
        for set in members {
            let mut mask = 0u32;
            for &i in set {
                if i == 0 || i > size {
                    return Err(UltraError::OracleFormat(format!("index {i} outside 1..={size}")));
                }
                mask |= 1 << (i - 1);
            }
            table[mask as usize] = true;
        }
        Ok(UltrafilterOracle { size, table })
    }

    /// The principal ultrafilter at `generator`.
    pub fn principal(size: usize, generator: usize) -> Result<Self, UltraError> {
        if generator == 0 || generator > size {
            return Err(UltraError::OracleFormat(format!("generator {generator} outside 1..={size}")));
        }
        let members: Vec<Vec<usize>> =
            (0u32..1 << size).filter(|m| m & (1 << (generator - 1)) != 0).map(|m| mask_to_set(m, size)).collect();
        Self::from_members(size, &members)
    }

    /// Parses `{"size": m, "members": [[1, 2], ...]}` and validates it.
    pub fn from_json(text: &str) -> Result<Self, UltraError> {
        let file: OracleFile = serde_json::from_str(text).map_err(|e| UltraError::OracleFormat(e.to_string()))?;
        let oracle = Self::from_members(file.size, &file.members)?;
        oracle.validate()?;
        Ok(oracle)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    fn full(&self) -> u32 {
        (1u32 << self.size) - 1
    }

    pub fn decide_mask(&self, mask: u32) -> bool {
        self.table[(mask & self.full()) as usize]
    }

    /// `decide(S)` for a set of 1-based indices.
    pub fn decide(&self, set: &[usize]) -> bool {
        let mask = set.iter().filter(|i| **i >= 1 && **i <= self.size).fold(0u32, |m, i| m | 1 << (i - 1));
        self.decide_mask(mask)
    }

    /// Decides `{i : pred(i)}`.
    pub fn decide_where(&self, mut pred: impl FnMut(usize) -> bool) -> bool {
        let mask = (1..=self.size).filter(|i| pred(*i)).fold(0u32, |m, i| m | 1 << (i - 1));
        self.decide_mask(mask)
    }

    /// Exhaustive check of the ultrafilter axioms; the error names the
    /// violated axiom and a witness set.
    pub fn validate(&self) -> Result<(), UltraError> {
        let full = self.full();
        let err = |axiom, mask: u32| Err(UltraError::InvalidOracle { axiom, witness: mask_to_set(mask, self.size) });
        if self.decide_mask(0) {
            return err("the empty set is excluded", 0);
        }
        if !self.decide_mask(full) {
            return err("the whole index set is included", full);
        }
        for s in 0..=full {
            if self.decide_mask(s) == self.decide_mask(full & !s) {
                return err("exactly one of a set and its complement is included", s);
            }
        }
        for s in (0..=full).filter(|s| self.decide_mask(*s)) {
            for t in 0..=full {
                if t & s == s && !self.decide_mask(t) {
                    return err("closure under supersets", t);
                }
                if self.decide_mask(t) && !self.decide_mask(s & t) {
                    return err("closure under intersections", s & t);
                }
            }
        }
        Ok(())
    }

    /// The index `i₀` with `decide(S) ⟺ i₀ ∈ S`, if there is one.
    pub fn generator(&self) -> Option<usize> {
        let i0 = (1..=self.size).find(|i| self.decide(&[*i]))?;
        let principal = (0..=self.full()).all(|s| self.decide_mask(s) == (s & (1 << (i0 - 1)) != 0));
        principal.then_some(i0)
    }

    pub fn to_json(&self) -> String {
        let members = (0..=self.full()).filter(|s| self.decide_mask(*s)).map(|s| mask_to_set(s, self.size)).collect();
        serde_json::to_string_pretty(&OracleFile { size: self.size, members }).expect("serializes") + "\n"
    }
}

/// The `U`-limit of a finite sequence: the unique `v ∈ domain` such that for
/// every `ε > 0` some `p ∈ U` has `|sᵢ - v| <= ε` for all `i ∈ p`. For
/// sufficiently small `ε` that set is `{i : sᵢ = v}`.
pub fn u_limit(seq: &[Rational], oracle: &UltrafilterOracle, domain: &CompactRealSet) -> Result<Rational, UltraError> {
    if let Some(v) = seq.iter().find(|v| !domain.contains(v)) {
        return Err(UltraError::OutsideDomain { value: v.clone(), domain: domain.to_string() });
    }
    let distinct: BTreeSet<&Rational> = seq.iter().collect();
    let mut limits = distinct.into_iter().filter(|v| oracle.decide_where(|i| seq.get(i - 1) == Some(*v)));
    let limit = limits.next().ok_or(UltraError::NoLimit)?;
    if limits.next().is_some() {
        return Err(UltraError::NoLimit);
    }
    Ok(limit.clone())
}

/// The quotient structure together with its carrier.
#[derive(Debug, Clone)]
pub struct UltraproductModel {
    pub model: FiniteMetricModel,
    pub oracle: UltrafilterOracle,
    /// Members of each class; the first one is the representative.
    pub classes: Vec<Vec<Vec<PointId>>>,
}

impl UltraproductModel {
    pub fn representative(&self, class: PointId) -> &[PointId] {
        &self.classes[class][0]
    }

    /// The class containing `seq`.
    pub fn class_of(&self, seq: &[PointId]) -> Option<PointId> {
        self.classes.iter().position(|members| members.iter().any(|m| m == seq))
    }
}

fn sequence_name(factors: &[FiniteMetricModel], seq: &[PointId]) -> String {
    format!("[{}]", seq.iter().zip(factors).map(|(p, f)| f.point_name(*p)).join(","))
}

fn check_factors(factors: &[FiniteMetricModel], oracle: &UltrafilterOracle) -> Result<(), UltraError> {
    if factors.is_empty() {
        return Err(UltraError::Factors("at least one factor is needed".into()));
    }
    if factors.len() != oracle.size() {
        return Err(UltraError::Factors(format!(
            "{} factors but the oracle is over {} indices",
            factors.len(),
            oracle.size()
        )));
    }
    let sig = factors[0].signature()?;
    for (i, f) in factors.iter().enumerate().skip(1) {
        if f.signature()? != sig {
            return Err(UltraError::Factors(format!("factor {} has a different signature than factor 1", i + 1)));
        }
    }
    oracle.validate()
}

/// Depth after which relation-atom verdicts no longer change in any factor.
fn atom_depth(factors: &[FiniteMetricModel], rel: &str, arity: usize) -> Result<u64, UltraError> {
    let atom = Formula::rel(rel, (0..arity as VarId).map(Term::var).collect());
    let mut depth = 1;
    for f in factors {
        depth = depth.max(stabilization_bound(&atom, f).map_err(ModelError::from)?);
    }
    Ok(depth)
}

/// `{i : Eᵢ ⊨ (K(x⃗(i)))_n}` is in `U` for every `n` up to stabilization.
fn atom_holds(
    factors: &[FiniteMetricModel],
    oracle: &UltrafilterOracle,
    rel: &str,
    args: &[&[PointId]],
    depth: u64,
) -> Result<bool, UltraError> {
    let atom = Formula::rel(rel, (0..args.len() as VarId).map(Term::var).collect());
    for n in 1..=depth {
        let mut ok = BTreeSet::new();
        for (i, f) in factors.iter().enumerate() {
            let a = approximate(&atom, &BranchCode::Leaf, n, f.metric_symbol()).map_err(ModelError::from)?;
            let v: Valuation = args.iter().enumerate().map(|(k, seq)| (k as VarId, seq[i])).collect();
            if satisfies(f, &a.formula, &v)? {
                ok.insert(i + 1);
            }
        }
        if !oracle.decide_where(|i| ok.contains(&i)) {
            return Ok(false);
        }
    }
    Ok(true)
}

fn real_domain(profile: Option<&UniformProfile>, function: &str, values: &[Rational]) -> CompactRealSet {
    let declared: Vec<Interval> = profile
        .into_iter()
        .flat_map(|p| &p.fun_bounds)
        .filter(|b| b.function == function)
        .filter_map(|b| match &b.target {
            BoundTarget::Compact(set) => Some(set.intervals().to_vec()),
            BoundTarget::Relation(_) => None,
        })
        .flatten()
        .collect();
    if !declared.is_empty() {
        return CompactRealSet::new(declared).expect("nonempty");
    }
    let lo = values.iter().min().cloned().unwrap_or_else(Rational::zero).min(Rational::zero());
    let hi = values.iter().max().cloned().unwrap_or_else(Rational::zero).max(Rational::zero());
    CompactRealSet::interval(lo, hi).expect("lo <= hi")
}

/// Builds `∏_U Eᵢ`. Real-valued limits are taken in the compact bounds the
/// profile declares for the symbol, or in the hull of the observed values.
pub fn build_ultraproduct(
    factors: &[FiniteMetricModel],
    oracle: &UltrafilterOracle,
    profile: Option<&UniformProfile>,
) -> Result<UltraproductModel, UltraError> {
    check_factors(factors, oracle)?;
    let sig = factors[0].signature()?;
    let metric = sig.metric_symbol().to_string();

    let unary: Vec<String> = sig.unary_relations().map(str::to_string).collect();
    let unary_depths = unary.iter().map(|k| atom_depth(factors, k, 1)).collect::<Result<Vec<_>, _>>()?;
    let mut carrier = Vec::new();
    for seq in factors.iter().map(|f| 0..f.size()).multi_cartesian_product() {
        let admitted = unary.is_empty()
            || unary
                .iter()
                .zip(&unary_depths)
                .map(|(k, d)| atom_holds(factors, oracle, k, &[&seq], *d))
                .collect::<Result<Vec<_>, _>>()?
                .into_iter()
                .any(|b| b);
        if admitted {
            carrier.push(seq);
        }
    }
    if carrier.is_empty() {
        return Err(UltraError::Factors("the carrier is empty".into()));
    }

    let all_distances: Vec<Rational> =
        factors.iter().flat_map(|f| (0..f.size()).cartesian_product(0..f.size()).map(|(a, b)| f.distance(a, b).clone())).collect();
    let metric_domain = real_domain(profile, &metric, &all_distances);
    let distance = |x: &[PointId], y: &[PointId]| -> Result<Rational, UltraError> {
        let seq: Vec<Rational> = factors.iter().enumerate().map(|(i, f)| f.distance(x[i], y[i]).clone()).collect();
        u_limit(&seq, oracle, &metric_domain)
    };

    let mut classes: Vec<Vec<Vec<PointId>>> = Vec::new();
    for seq in carrier {
        let mut home = None;
        for (c, members) in classes.iter().enumerate() {
            if distance(&members[0], &seq)?.is_zero() {
                home = Some(c);
                break;
            }
        }
        match home {
            Some(c) => classes[c].push(seq),
            None => classes.push(vec![seq]),
        }
    }
    let find_class = |seq: &[PointId]| -> Result<PointId, UltraError> {
        for (c, members) in classes.iter().enumerate() {
            if members.iter().any(|m| m == seq) {
                return Ok(c);
            }
        }
        for (c, members) in classes.iter().enumerate() {
            if distance(&members[0], seq)?.is_zero() {
                return Ok(c);
            }
        }
        Err(UltraError::NotInCarrier(sequence_name(factors, seq)))
    };

    let reps: Vec<&Vec<PointId>> = classes.iter().map(|c| &c[0]).collect();
    let names = reps.iter().map(|r| sequence_name(factors, r)).collect();
    let matrix = reps
        .iter()
        .map(|x| reps.iter().map(|y| distance(x, y)).collect::<Result<Vec<_>, _>>())
        .collect::<Result<Vec<_>, _>>()?;
    let mut model = FiniteMetricModel::new(names, metric.clone(), matrix)?;
    let size = reps.len();

    for (name, arity) in sig.model_functions() {
        let mut table = Vec::with_capacity(size.pow(*arity as u32));
        for args in (0..*arity).map(|_| 0..size).multi_cartesian_product() {
            let image: Vec<PointId> = factors
                .iter()
                .enumerate()
                .map(|(i, f)| f.apply_model(name, &args.iter().map(|a| reps[*a][i]).collect::<Vec<_>>()))
                .collect::<Result<_, _>>()?;
            table.push(find_class(&image)?);
        }
        model = model.with_model_function(name, *arity, table)?;
    }
    for (name, arity) in sig.real_functions() {
        if name == &metric {
            continue;
        }
        let observed: Vec<Rational> = factors.iter().flat_map(|f| f.real_functions()[name].values.iter().cloned()).collect();
        let domain = real_domain(profile, name, &observed);
        let mut table = Vec::with_capacity(size.pow(*arity as u32));
        for args in (0..*arity).map(|_| 0..size).multi_cartesian_product() {
            let seq: Vec<Rational> = factors
                .iter()
                .enumerate()
                .map(|(i, f)| f.apply_real(name, &args.iter().map(|a| reps[*a][i]).collect::<Vec<_>>()))
                .collect::<Result<_, _>>()?;
            table.push(u_limit(&seq, oracle, &domain)?);
        }
        model = model.with_real_function(name, *arity, table)?;
    }
    for (name, arity) in sig.relations() {
        let depth = atom_depth(factors, name, *arity)?;
        let mut members = Vec::new();
        for args in (0..*arity).map(|_| 0..size).multi_cartesian_product() {
            let seqs: Vec<&[PointId]> = args.iter().map(|a| reps[*a].as_slice()).collect();
            if atom_holds(factors, oracle, name, &seqs, depth)? {
                members.push(args);
            }
        }
        model = model.with_relation(name, *arity, members)?;
    }
    for name in sig.constants() {
        let seq: Vec<PointId> = factors.iter().map(|f| f.apply_model(name, &[])).collect::<Result<_, _>>()?;
        model = model.with_constant(name, find_class(&seq)?)?;
    }
    model.validate()?;
    Ok(UltraproductModel { model, oracle: oracle.clone(), classes })
}

/// A bijection `A → B` preserving the metric, relations, function tables and
/// constants, found by backtracking with distance-profile pruning.
pub fn check_isometric(a: &FiniteMetricModel, b: &FiniteMetricModel) -> Option<Vec<PointId>> {
    if a.size() != b.size() || a.signature().ok()? != b.signature().ok()? {
        return None;
    }
    let n = a.size();
    let unary_profile = |m: &FiniteMetricModel, p: PointId| -> Vec<bool> {
        m.relations().values().filter(|r| r.arity == 1).map(|r| r.tuples.contains(&vec![p])).collect()
    };
    let profile = |m: &FiniteMetricModel, p: PointId| {
        let mut d: Vec<Rational> = (0..n).map(|q| m.distance(p, q).clone()).collect();
        d.sort();
        (d, unary_profile(m, p))
    };
    let pa: Vec<_> = (0..n).map(|p| profile(a, p)).collect();
    let pb: Vec<_> = (0..n).map(|p| profile(b, p)).collect();
    let candidates: Vec<Vec<PointId>> = (0..n).map(|p| (0..n).filter(|q| pa[p] == pb[*q]).collect()).collect();

    fn extend(
        a: &FiniteMetricModel,
        b: &FiniteMetricModel,
        candidates: &[Vec<PointId>],
        map: &mut Vec<PointId>,
        used: &mut Vec<bool>,
    ) -> bool {
        let p = map.len();
        if p == a.size() {
            return preserves_structure(a, b, map);
        }
        for &q in &candidates[p] {
            if used[q] || (0..p).any(|r| a.distance(p, r) != b.distance(q, map[r])) {
                continue;
            }
            map.push(q);
            used[q] = true;
            if extend(a, b, candidates, map, used) {
                return true;
            }
            used[q] = false;
            map.pop();
        }
        false
    }
    let mut map = Vec::with_capacity(n);
    let mut used = vec![false; n];
    extend(a, b, &candidates, &mut map, &mut used).then_some(map)
}

fn preserves_structure(a: &FiniteMetricModel, b: &FiniteMetricModel, map: &[PointId]) -> bool {
    let image = |t: &[PointId]| t.iter().map(|p| map[*p]).collect::<Vec<_>>();
    for (name, r) in a.relations() {
        let Some(rb) = b.relation(name) else { return false };
        let mapped: BTreeSet<Vec<PointId>> = r.tuples.iter().map(|t| image(t)).collect();
        if mapped != rb.tuples {
            return false;
        }
    }
    for (name, t) in a.model_functions() {
        for args in (0..t.arity).map(|_| 0..a.size()).multi_cartesian_product() {
            let (Ok(x), Ok(y)) = (a.apply_model(name, &args), b.apply_model(name, &image(&args))) else { return false };
            if map[x] != y {
                return false;
            }
        }
    }
    for (name, t) in a.real_functions() {
        for args in (0..t.arity).map(|_| 0..a.size()).multi_cartesian_product() {
            if a.apply_real(name, &args).ok() != b.apply_real(name, &image(&args)).ok() {
                return false;
            }
        }
    }
    a.constants().iter().all(|(name, p)| b.constants().get(name) == Some(&map[*p]))
}

/// An eventually constant sequence `(a⃗_r)` of tuples of carrier sequences.
/// Statements "for almost all r" are decided at the tail.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValuationSequence {
    pub prefix: Vec<BTreeMap<VarId, Vec<PointId>>>,
    pub tail: BTreeMap<VarId, Vec<PointId>>,
}

impl ValuationSequence {
    pub fn constant(tail: BTreeMap<VarId, Vec<PointId>>) -> Self {
        ValuationSequence { prefix: Vec::new(), tail }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Disagreement {
    pub formula: String,
    pub valuation: String,
    pub branch_index: usize,
    pub depth: u64,
    pub product_side: bool,
    pub factor_side: bool,
}

impl fmt::Display for Disagreement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} at {} branch {} depth {}: product {} vs factors {}",
            self.formula, self.valuation, self.branch_index, self.depth, self.product_side, self.factor_side
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TransferReport {
    pub comparisons: usize,
    pub disagreements: Vec<Disagreement>,
    /// `∃h ∀n` on each side, restricted to the explored branches and depths.
    pub product_ap: bool,
    pub factor_ap: bool,
}

/// Compares `∏_U Eᵢ ⊨ φ_{h,n}(a⃗)` with `{i : Eᵢ ⊨ φ_{h,n}(a⃗(i))} ∈ U` for
/// the first `branches` dense codes and every depth `n <= depth`.
pub fn check_limit_transfer(
    factors: &[FiniteMetricModel],
    oracle: &UltrafilterOracle,
    phi: &Formula,
    valuations: &ValuationSequence,
    branches: usize,
    depth: u64,
) -> Result<TransferReport, UltraError> {
    let product = build_ultraproduct(factors, oracle, None)?;
    check_limit_transfer_on(&product, factors, phi, valuations, branches, depth)
}

/// As [`check_limit_transfer`], reusing an already built product.
pub fn check_limit_transfer_on(
    product: &UltraproductModel,
    factors: &[FiniteMetricModel],
    phi: &Formula,
    valuations: &ValuationSequence,
    branches: usize,
    depth: u64,
) -> Result<TransferReport, UltraError> {
    let a = &valuations.tail;
    let mut product_val = Valuation::new();
    for (v, seq) in a {
        let class = product.class_of(seq).ok_or_else(|| UltraError::NotInCarrier(sequence_name(factors, seq)))?;
        product_val.insert(*v, class);
    }
    let factor_vals: Vec<Valuation> =
        (0..factors.len()).map(|i| a.iter().map(|(v, seq)| (*v, seq[i])).collect()).collect();
    let mut report = TransferReport::default();
    let metric = product.model.metric_symbol();
    for branch in dense_branches(phi, depth).map_err(ModelError::from)?.take(branches.max(1)) {
        let mut product_all = true;
        let mut factor_all = true;
        for n in 1..=depth {
            let approx = approximate(phi, &branch.code, n, metric).map_err(ModelError::from)?;
            let product_side = Evaluator::new(&product.model, &approx.formula)?.eval(&product_val)?;
            let mut holds = BTreeSet::new();
            for (i, f) in factors.iter().enumerate() {
                if satisfies(f, &approx.formula, &factor_vals[i])? {
                    holds.insert(i + 1);
                }
            }
            let factor_side = product.oracle.decide_where(|i| holds.contains(&i));
            report.comparisons += 1;
            product_all &= product_side;
            factor_all &= factor_side;
            if product_side != factor_side {
                report.disagreements.push(Disagreement {
                    formula: phi.to_string(),
                    valuation: product.model.format_valuation(&product_val),
                    branch_index: branch.index,
                    depth: n,
                    product_side,
                    factor_side,
                });
            }
        }
        report.product_ap |= product_all;
        report.factor_ap |= factor_all;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RichnessReport {
    pub compared: usize,
    pub skipped: usize,
    pub disagreements: Vec<String>,
}

/// Compares certified `⊨_AP` verdicts with `⊨` on the ultraproduct for every
/// corpus formula and valuation of its free variables. Unknown and
/// uncertified verdicts, and non-finitary formulas, are skipped.
pub fn check_richness(
    factors: &[FiniteMetricModel],
    oracle: &UltrafilterOracle,
    corpus: &[Formula],
    branches: usize,
    depth: u64,
) -> Result<RichnessReport, UltraError> {
    let product = build_ultraproduct(factors, oracle, None)?;
    check_richness_on(&product.model, corpus, branches, depth)
}

/// As [`check_richness`] on a given model.
pub fn check_richness_on(model: &FiniteMetricModel, corpus: &[Formula], branches: usize, depth: u64) -> Result<RichnessReport, UltraError> {
    let mut report = RichnessReport::default();
    for phi in corpus {
        let Ok(evaluator) = Evaluator::new(model, phi) else {
            report.skipped += 1;
            continue;
        };
        for v in model.valuations(evaluator.free_variables()) {
            let exact = evaluator.eval(&v)?;
            let ap = ap_satisfies(model, phi, &v, branches, depth)?;
            let verdict = match ap {
                ApVerdict::Satisfied { certified: true, .. } => true,
                ApVerdict::Refuted { .. } => false,
                _ => {
                    report.skipped += 1;
                    continue;
                }
            };
            report.compared += 1;
            if verdict != exact {
                report.disagreements.push(format!(
                    "{phi} at {}: approximate {} vs exact {exact}",
                    model.format_valuation(&v),
                    ap.label()
                ));
            }
        }
    }
    Ok(report)
}
