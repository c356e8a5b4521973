mod common;

use approx_logic::formula::{convex_tuples, derived_connectives, desugar_sexp, BoundVector, Formula, Fragment, Term, VarBlock};
use approx_logic::rational::{frac, Rational};
use approx_logic::signature::{CompactRealSet, Signature};
use num_traits::{One, Zero};
use proptest::prelude::*;

use common::*;

fn m3_sig() -> Signature {
    Signature::parse(&read_fixture("m3.sig")).unwrap()
}

#[test]
fn corpus_is_large_enough_and_parses() {
    let files = corpus_files();
    assert!(files.len() >= 30, "{} corpus formulas", files.len());
    let models = [m3(), grid1d()];
    for (id, _, form) in &files {
        let typed = models.iter().filter(|m| Formula::from_sexp(form, Some(&m.signature().unwrap())).is_ok()).count();
        assert!(typed > 0, "{id} fits no fixture model");
    }
}

#[test]
fn corpus_print_parse_roundtrip() {
    for (id, _, form) in corpus_files() {
        let phi = Formula::from_sexp(&form, None).unwrap();
        let printed = phi.to_string();
        assert_eq!(Formula::parse_unchecked(&printed).unwrap(), phi, "{id}");
        assert_eq!(Formula::parse_unchecked(&printed).unwrap().to_string(), printed, "{id}");
    }
}

#[test]
fn corpus_desugaring_routes_agree() {
    for (id, _, form) in corpus_files() {
        let phi = Formula::from_sexp(&form, None).unwrap();
        let via_text = Formula::from_sexp(&desugar_sexp(&form), None).unwrap();
        let via_tree = derived_connectives(&phi);
        assert_eq!(via_text, via_tree, "{id}");
        assert!(via_tree.is_core(), "{id}");
    }
}

#[test]
fn named_corpus_fragments() {
    let sig = m3_sig();
    let fragment = |name: &str| {
        let text = read_fixture(&format!("corpus/metric/{name}.sexp"));
        Formula::parse(&text, &sig).unwrap().classify()
    };
    assert_eq!(fragment("c_atom"), Fragment::Positive);
    assert_eq!(fragment("equal_points"), Fragment::Positive);
    assert_eq!(fragment("bounded_diameter"), Fragment::Pba);
    assert_eq!(fragment("not_c"), Fragment::General);
}

/// Brute force: all pairs `(p/q, r/s)` in lowest terms with `q, s <= 4`
/// summing to 1, ordered by `q + s` and then lexicographically.
fn co2_oracle(count: usize) -> Vec<(Rational, Rational)> {
    let mut all = Vec::new();
    for q in 1..=4i64 {
        for s in 1..=4i64 {
            for p in 0..=q {
                for r in 0..=s {
                    let (a, b) = (frac(p, q), frac(r, s));
                    let reduced = *a.denom() == q.into() && *b.denom() == s.into();
                    if reduced && &a + &b == Rational::one() {
                        all.push((q + s, a, b));
                    }
                }
            }
        }
    }
    all.sort();
    all.into_iter().take(count).map(|(_, a, b)| (a, b)).collect()
}

#[test]
fn co2_prefix_matches_golden_and_oracle() {
    let golden: Vec<String> = read_fixture("golden/co2_prefix.txt").lines().map(str::to_string).collect();
    let ours: Vec<String> =
        convex_tuples(2).take(3).map(|t| format!("({})", t.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","))).collect();
    assert_eq!(ours, golden);
    let oracle: Vec<_> = co2_oracle(3).into_iter().map(|(a, b)| vec![a, b]).collect();
    assert_eq!(convex_tuples(2).take(3).collect::<Vec<_>>(), oracle);
    assert_eq!(convex_tuples(1).take(2).collect::<Vec<_>>(), vec![vec![Rational::one()]]);
}

#[test]
fn co3_members_are_convex_and_distinct() {
    let tuples: Vec<_> = convex_tuples(3).take(40).collect();
    for t in &tuples {
        assert!(t.iter().all(|x| *x >= Rational::zero()));
        assert_eq!(t.iter().cloned().sum::<Rational>(), Rational::one());
    }
    let distinct: std::collections::BTreeSet<_> = tuples.iter().collect();
    assert_eq!(distinct.len(), tuples.len());
}

fn term_strategy() -> impl Strategy<Value = Term> {
    (0u32..3, 0u32..3).prop_map(|(a, b)| Term::real("rho", vec![Term::var(a), Term::var(b)]))
}

fn interval_strategy() -> impl Strategy<Value = CompactRealSet> {
    (0i64..6, 0i64..6, 1i64..4).prop_map(|(a, w, q)| CompactRealSet::interval(frac(a, q), frac(a + w, q)).unwrap())
}

fn formula_strategy() -> impl Strategy<Value = Formula> {
    let leaf = prop_oneof![
        (prop_oneof![Just("C"), Just("U")], 0u32..3).prop_map(|(r, v)| Formula::rel(r, vec![Term::var(v)])),
        (interval_strategy(), term_strategy()).prop_map(|(s, t)| Formula::within(s, t)),
    ];
    leaf.prop_recursive(4, 24, 3, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..3).prop_map(Formula::and),
            prop::collection::vec(inner.clone(), 1..3).prop_map(Formula::or),
            inner.clone().prop_map(Formula::not),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Formula::implies(a, b)),
            (prop_oneof![Just("C"), Just("U")], 0u32..3, inner.clone()).prop_map(|(r, v, b)| {
                Formula::exists(BoundVector::finite(vec![r.into()]), VarBlock::finite(vec![v]), b)
            }),
            (0u32..3, inner).prop_map(|(v, b)| Formula::forall(BoundVector::finite(vec!["U".into()]), VarBlock::finite(vec![v]), b)),
        ]
    })
}

proptest! {
    #[test]
    fn printed_formulas_parse_back(phi in formula_strategy()) {
        let sig = m3_sig();
        let text = phi.to_string();
        prop_assert_eq!(Formula::parse(&text, &sig).unwrap(), phi.clone());
        prop_assert_eq!(Formula::from_sexp(&phi.to_sexp(), Some(&sig)).unwrap(), phi);
    }

    #[test]
    fn desugaring_routes_agree(phi in formula_strategy()) {
        let via_tree = derived_connectives(&phi);
        let via_text = Formula::from_sexp(&desugar_sexp(&phi.to_sexp()), None).unwrap();
        prop_assert!(via_tree.is_core());
        prop_assert_eq!(via_text, via_tree);
    }

    #[test]
    fn free_variables_survive_desugaring(phi in formula_strategy()) {
        prop_assert_eq!(derived_connectives(&phi).free_variables(), phi.free_variables());
    }
}
