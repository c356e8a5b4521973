//! Metric languages: symbol tables, arities, the distinguished metric symbol
//! and compact real predicates.

use std::collections::BTreeSet;
use std::fmt;

use num_traits::{Signed, Zero};
use thiserror::Error;

use crate::rational::{frac, int, parse_rational, reciprocal, Rational, RationalError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SignatureError {
    #[error("duplicate symbol `{0}`")]
    Duplicate(String),
    #[error("metric symbol `{0}` must be declared as a real function of arity 2")]
    BadMetric(String),
    #[error("missing `metric` declaration")]
    MissingMetric,
    #[error("real function `{0}` must have arity >= 1")]
    NullaryRealFunction(String),
    #[error("relation `{0}` must have arity >= 1")]
    NullaryRelation(String),
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("radius {0} is not positive")]
    NonPositiveRadius(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CompactSetError {
    #[error("a compact set needs at least one interval")]
    Empty,
    #[error("interval [{lo}, {hi}] has lo > hi")]
    Inverted { lo: String, hi: String },
    #[error("deformation depth must be positive")]
    ZeroDepth,
    #[error(transparent)]
    Rational(#[from] RationalError),
}

/// What a symbol denotes in a metric language.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymbolKind {
    ModelFunction { arity: usize },
    RealFunction { arity: usize },
    Relation { arity: usize },
    Constant,
}

impl SymbolKind {
    pub fn arity(self) -> usize {
        match self {
            SymbolKind::ModelFunction { arity }
            | SymbolKind::RealFunction { arity }
            | SymbolKind::Relation { arity } => arity,
            SymbolKind::Constant => 0,
        }
    }
}

/// A metric language `L(M_R)`.
///
/// Nullary model functions are stored as constants.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signature {
    model_functions: Vec<(String, usize)>,
    real_functions: Vec<(String, usize)>,
    relations: Vec<(String, usize)>,
    constants: Vec<String>,
    metric_symbol: String,
}

#[derive(Debug, Default, Clone)]
pub struct SignatureBuilder {
    model_functions: Vec<(String, usize)>,
    real_functions: Vec<(String, usize)>,
    relations: Vec<(String, usize)>,
    constants: Vec<String>,
    metric_symbol: Option<String>,
}

impl SignatureBuilder {
    pub fn model_function(mut self, name: impl Into<String>, arity: usize) -> Self {
        if arity == 0 {
            self.constants.push(name.into());
        } else {
            self.model_functions.push((name.into(), arity));
        }
        self
    }

    pub fn real_function(mut self, name: impl Into<String>, arity: usize) -> Self {
        self.real_functions.push((name.into(), arity));
        self
    }

    pub fn relation(mut self, name: impl Into<String>, arity: usize) -> Self {
        self.relations.push((name.into(), arity));
        self
    }

    pub fn constant(mut self, name: impl Into<String>) -> Self {
        self.constants.push(name.into());
        self
    }

    pub fn metric(mut self, name: impl Into<String>) -> Self {
        self.metric_symbol = Some(name.into());
        self
    }

    pub fn build(self) -> Result<Signature, SignatureError> {
        let metric_symbol = self.metric_symbol.ok_or(SignatureError::MissingMetric)?;
        let mut seen = BTreeSet::new();
        let names = self
            .model_functions
            .iter()
            .map(|(n, _)| n)
            .chain(self.real_functions.iter().map(|(n, _)| n))
            .chain(self.relations.iter().map(|(n, _)| n))
            .chain(self.constants.iter());
        for name in names {
            if !seen.insert(name.clone()) {
                return Err(SignatureError::Duplicate(name.clone()));
            }
        }
        if let Some((name, _)) = self.real_functions.iter().find(|(_, a)| *a == 0) {
            return Err(SignatureError::NullaryRealFunction(name.clone()));
        }
        if let Some((name, _)) = self.relations.iter().find(|(_, a)| *a == 0) {
            return Err(SignatureError::NullaryRelation(name.clone()));
        }
        if !self.real_functions.iter().any(|(n, a)| *n == metric_symbol && *a == 2) {
            return Err(SignatureError::BadMetric(metric_symbol));
        }
        Ok(Signature {
            model_functions: self.model_functions,
            real_functions: self.real_functions,
            relations: self.relations,
            constants: self.constants,
            metric_symbol,
        })
    }
}

impl Signature {
    pub fn builder() -> SignatureBuilder {
        SignatureBuilder::default()
    }

    pub fn metric_symbol(&self) -> &str {
        &self.metric_symbol
    }

    pub fn model_functions(&self) -> &[(String, usize)] {
        &self.model_functions
    }

    pub fn real_functions(&self) -> &[(String, usize)] {
        &self.real_functions
    }

    pub fn relations(&self) -> &[(String, usize)] {
        &self.relations
    }

    pub fn constants(&self) -> &[String] {
        &self.constants
    }

    pub fn kind(&self, name: &str) -> Option<SymbolKind> {
        let find = |list: &[(String, usize)]| list.iter().find(|(n, _)| n == name).map(|(_, a)| *a);
        if let Some(arity) = find(&self.model_functions) {
            return Some(SymbolKind::ModelFunction { arity });
        }
        if let Some(arity) = find(&self.real_functions) {
            return Some(SymbolKind::RealFunction { arity });
        }
        if let Some(arity) = find(&self.relations) {
            return Some(SymbolKind::Relation { arity });
        }
        self.constants.iter().any(|c| c == name).then_some(SymbolKind::Constant)
    }

    pub fn arity(&self, name: &str) -> Option<usize> {
        self.kind(name).map(SymbolKind::arity)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.kind(name).is_some()
    }

    /// Unary relation symbols, in declaration order.
    pub fn unary_relations(&self) -> impl Iterator<Item = &str> {
        self.relations.iter().filter(|(_, a)| *a == 1).map(|(n, _)| n.as_str())
    }

    /// Reads the line-oriented signature format
    /// (`modelfun f 2`, `realfun g 1`, `rel C 1`, `const c`, `metric rho`).
    pub fn parse(text: &str) -> Result<Signature, SignatureError> {
        let mut builder = Signature::builder();
        for (index, raw) in text.lines().enumerate() {
            let line_no = index + 1;
            let line = raw.split(';').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let words: Vec<&str> = line.split_whitespace().collect();
            let syntax = |message: String| SignatureError::Syntax { line: line_no, message };
            let arity = |w: Option<&&str>| -> Result<usize, SignatureError> {
                let w = w.ok_or_else(|| syntax("missing arity".into()))?;
                w.parse().map_err(|_| syntax(format!("invalid arity `{w}`")))
            };
            let name = words.get(1).ok_or_else(|| syntax("missing symbol name".into()))?;
            let expected_len = match words[0] {
                "modelfun" | "realfun" | "rel" => 3,
                _ => 2,
            };
            if words.len() != expected_len {
                return Err(syntax(format!("expected {expected_len} fields, found {}", words.len())));
            }
            builder = match words[0] {
                "modelfun" => builder.model_function(*name, arity(words.get(2))?),
                "realfun" => builder.real_function(*name, arity(words.get(2))?),
                "rel" => builder.relation(*name, arity(words.get(2))?),
                "const" => builder.constant(*name),
                "metric" => builder.metric(*name),
                other => return Err(syntax(format!("unknown declaration `{other}`"))),
            };
        }
        builder.build()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (n, a) in &self.model_functions {
            out.push_str(&format!("modelfun {n} {a}\n"));
        }
        for (n, a) in &self.real_functions {
            out.push_str(&format!("realfun {n} {a}\n"));
        }
        for (n, a) in &self.relations {
            out.push_str(&format!("rel {n} {a}\n"));
        }
        for c in &self.constants {
            out.push_str(&format!("const {c}\n"));
        }
        out.push_str(&format!("metric {}\n", self.metric_symbol));
        out
    }
}

/// Symbol names of the language for normed structures.
pub mod normed {
    use crate::rational::Rational;

    pub const PLUS: &str = "plus";
    pub const ZERO: &str = "zero";
    pub const RHO: &str = "rho";
    pub const NORM: &str = "norm";

    /// `B_q`: the ball of radius `q` around the origin.
    pub fn ball(q: &Rational) -> String {
        format!("B_{q}")
    }

    /// `scale_r`: multiplication by the scalar `r`.
    pub fn scale(r: &Rational) -> String {
        format!("scale_{r}")
    }
}

/// Default radius list of [`make_normed_signature`].
pub fn default_radii() -> Vec<Rational> {
    vec![int(1), int(2)]
}

/// Default scalar list of [`make_normed_signature`].
pub fn default_scalars() -> Vec<Rational> {
    vec![int(-1), frac(1, 2), int(2)]
}

/// The language for normed structures with the default radius and scalar lists.
pub fn make_normed_signature() -> Signature {
    normed_signature(&default_radii(), &default_scalars()).expect("default lists are valid")
}

/// The language for normed structures over finite radius and scalar lists.
pub fn normed_signature(radii: &[Rational], scalars: &[Rational]) -> Result<Signature, SignatureError> {
    let mut builder = Signature::builder()
        .model_function(normed::PLUS, 2)
        .constant(normed::ZERO)
        .real_function(normed::RHO, 2)
        .real_function(normed::NORM, 1)
        .metric(normed::RHO);
    for r in dedup(scalars) {
        builder = builder.model_function(normed::scale(&r), 1);
    }
    for q in dedup(radii) {
        if !q.is_positive() {
            return Err(SignatureError::NonPositiveRadius(q.to_string()));
        }
        builder = builder.relation(normed::ball(&q), 1);
    }
    builder.build()
}

fn dedup(values: &[Rational]) -> Vec<Rational> {
    let mut out: Vec<Rational> = Vec::new();
    for v in values {
        if !out.contains(v) {
            out.push(v.clone());
        }
    }
    out
}

/// A closed interval with rational endpoints.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Interval {
    pub lo: Rational,
    pub hi: Rational,
}

impl Interval {
    pub fn new(lo: Rational, hi: Rational) -> Result<Self, CompactSetError> {
        if lo > hi {
            return Err(CompactSetError::Inverted { lo: lo.to_string(), hi: hi.to_string() });
        }
        Ok(Interval { lo, hi })
    }

    pub fn contains(&self, x: &Rational) -> bool {
        &self.lo <= x && x <= &self.hi
    }

    pub fn distance_to(&self, x: &Rational) -> Rational {
        if x < &self.lo {
            &self.lo - x
        } else if x > &self.hi {
            x - &self.hi
        } else {
            Rational::zero()
        }
    }
}

/// A finite union of closed rational intervals, kept in canonical form:
/// sorted, with overlapping or touching intervals merged.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CompactRealSet {
    intervals: Vec<Interval>,
}

impl CompactRealSet {
    pub fn new(intervals: Vec<Interval>) -> Result<Self, CompactSetError> {
        if intervals.is_empty() {
            return Err(CompactSetError::Empty);
        }
        Ok(CompactRealSet { intervals: canonicalize(intervals) })
    }

    pub fn interval(lo: Rational, hi: Rational) -> Result<Self, CompactSetError> {
        Self::new(vec![Interval::new(lo, hi)?])
    }

    pub fn point(x: Rational) -> Self {
        CompactRealSet { intervals: vec![Interval { lo: x.clone(), hi: x }] }
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn contains(&self, x: &Rational) -> bool {
        self.intervals.iter().any(|i| i.contains(x))
    }

    /// The `1/n` deformation `{y : exists x in B, |x - y| <= 1/n}`.
    pub fn deform(&self, n: u64) -> Result<Self, CompactSetError> {
        if n == 0 {
            return Err(CompactSetError::ZeroDepth);
        }
        Ok(self.dilate(&reciprocal(n)))
    }

    /// Enlarges every interval by `r >= 0` on both sides.
    pub fn dilate(&self, r: &Rational) -> Self {
        let widened = self
            .intervals
            .iter()
            .map(|i| Interval { lo: &i.lo - r, hi: &i.hi + r })
            .collect();
        CompactRealSet { intervals: canonicalize(widened) }
    }

    /// Distance from `x` to the set (zero inside).
    pub fn distance_to(&self, x: &Rational) -> Rational {
        self.intervals
            .iter()
            .map(|i| i.distance_to(x))
            .min()
            .expect("compact sets are nonempty")
    }

    pub fn is_subset_of(&self, other: &CompactRealSet) -> bool {
        // canonical intervals are disjoint, so each piece must sit inside a single interval of `other`
        self.intervals
            .iter()
            .all(|i| other.intervals.iter().any(|o| o.lo <= i.lo && i.hi <= o.hi))
    }

    pub fn max_abs(&self) -> Rational {
        self.intervals
            .iter()
            .flat_map(|i| [i.lo.abs(), i.hi.abs()])
            .max()
            .expect("compact sets are nonempty")
    }
}

fn canonicalize(mut intervals: Vec<Interval>) -> Vec<Interval> {
    intervals.sort();
    let mut out: Vec<Interval> = Vec::with_capacity(intervals.len());
    for next in intervals {
        match out.last_mut() {
            Some(last) if next.lo <= last.hi => {
                if next.hi > last.hi {
                    last.hi = next.hi;
                }
            }
            _ => out.push(next),
        }
    }
    out
}

impl fmt::Display for CompactRealSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let write_interval = |f: &mut fmt::Formatter<'_>, i: &Interval| write!(f, "(interval {} {})", i.lo, i.hi);
        if let [only] = self.intervals.as_slice() {
            return write_interval(f, only);
        }
        write!(f, "(union")?;
        for i in &self.intervals {
            write!(f, " ")?;
            write_interval(f, i)?;
        }
        write!(f, ")")
    }
}

/// Convenience for tests and fixtures: `[lo, hi]` from literals.
pub fn closed(lo: &str, hi: &str) -> Result<CompactRealSet, CompactSetError> {
    CompactRealSet::interval(parse_rational(lo)?, parse_rational(hi)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(pairs: &[(Rational, Rational)]) -> CompactRealSet {
        CompactRealSet::new(pairs.iter().map(|(l, h)| Interval::new(l.clone(), h.clone()).unwrap()).collect())
            .unwrap()
    }

    #[test]
    fn normed_signature_symbols() {
        let sig = make_normed_signature();
        for name in ["plus", "zero", "rho", "norm", "B_1"] {
            assert!(sig.contains(name), "{name}");
        }
        assert_eq!(sig.metric_symbol(), "rho");
        assert_eq!(sig.kind("rho"), Some(SymbolKind::RealFunction { arity: 2 }));
        assert_eq!(sig.arity("norm"), Some(1));
        assert_eq!(sig.kind("zero"), Some(SymbolKind::Constant));
        assert_eq!(sig.kind("scale_1/2"), Some(SymbolKind::ModelFunction { arity: 1 }));
    }

    #[test]
    fn signature_validation() {
        let dup = Signature::builder().relation("C", 1).constant("C").real_function("d", 2).metric("d").build();
        assert_eq!(dup, Err(SignatureError::Duplicate("C".into())));
        let bad = Signature::builder().real_function("d", 1).metric("d").build();
        assert_eq!(bad, Err(SignatureError::BadMetric("d".into())));
        assert_eq!(Signature::builder().build(), Err(SignatureError::MissingMetric));
        let nullary = Signature::builder().model_function("o", 0).real_function("d", 2).metric("d").build().unwrap();
        assert_eq!(nullary.kind("o"), Some(SymbolKind::Constant));
    }

    #[test]
    fn signature_text_roundtrip() {
        let text = "; test\nmodelfun f 1\nrealfun rho 2\nrel C 1\nconst c\nmetric rho\n";
        let sig = Signature::parse(text).unwrap();
        assert_eq!(Signature::parse(&sig.to_text()).unwrap(), sig);
        assert!(matches!(Signature::parse("rel C\nmetric rho"), Err(SignatureError::Syntax { line: 1, .. })));
        assert!(matches!(Signature::parse("bogus x\n"), Err(SignatureError::Syntax { .. })));
    }

    #[test]
    fn deform_examples() {
        let unit = closed("0", "1").unwrap();
        assert_eq!(unit.deform(2).unwrap(), closed("-1/2", "3/2").unwrap());
        let two = set(&[(int(0), int(1)), (int(2), int(2))]);
        assert_eq!(
            two.deform(4).unwrap(),
            set(&[(frac(-1, 4), frac(5, 4)), (frac(7, 4), frac(9, 4))])
        );
        assert_eq!(two.deform(4).unwrap().intervals().len(), 2);
        assert_eq!(unit.deform(0), Err(CompactSetError::ZeroDepth));
    }

    #[test]
    fn deform_merges_against_grid_oracle() {
        // membership oracle on a 1/8 grid: y in B_n iff some x of B lies within 1/n
        let two = set(&[(int(0), int(1)), (int(2), int(2))]);
        let deformed = two.deform(1).unwrap();
        assert_eq!(deformed, closed("-1", "3").unwrap());
        for k in -40..=40 {
            let y = frac(k, 8);
            let brute = two.distance_to(&y) <= int(1);
            assert_eq!(deformed.contains(&y), brute, "y = {y}");
        }
    }

    #[test]
    fn contains_examples() {
        let unit = closed("0", "1").unwrap();
        assert!(unit.contains(&frac(1, 2)));
        assert!(!unit.contains(&frac(3, 2)));
        let two = set(&[(frac(-1, 4), frac(5, 4)), (frac(7, 4), frac(9, 4))]);
        assert!(!two.contains(&frac(3, 2)));
        assert!(two.contains(&int(2)));
    }

    #[test]
    fn rejects_bad_sets() {
        assert_eq!(CompactRealSet::new(vec![]), Err(CompactSetError::Empty));
        assert!(matches!(closed("1", "0"), Err(CompactSetError::Inverted { .. })));
    }

    fn arb_set() -> impl Strategy<Value = CompactRealSet> {
        prop::collection::vec((-20i64..20, 0i64..10, 1i64..5), 1..5).prop_map(|raw| {
            let intervals = raw
                .into_iter()
                .map(|(lo, len, den)| Interval::new(frac(lo, den), frac(lo, den) + frac(len, den)).unwrap())
                .collect();
            CompactRealSet::new(intervals).unwrap()
        })
    }

    proptest! {
        #[test]
        fn deformation_is_nested(b in arb_set(), n in 1u64..20) {
            let outer = b.deform(n).unwrap();
            let inner = b.deform(n + 1).unwrap();
            prop_assert!(inner.is_subset_of(&outer));
            prop_assert!(b.is_subset_of(&inner));
        }

        #[test]
        fn canonical_form_is_idempotent(b in arb_set()) {
            let again = CompactRealSet::new(b.intervals().to_vec()).unwrap();
            prop_assert_eq!(&again, &b);
            for pair in b.intervals().windows(2) {
                prop_assert!(pair[0].hi < pair[1].lo);
            }
        }
    }
}
