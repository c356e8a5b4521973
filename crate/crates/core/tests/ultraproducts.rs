mod common;

use std::collections::BTreeMap;

use approx_logic::formula::{Formula, Term};
use approx_logic::model::{ap_satisfies, satisfies, ApVerdict, FiniteMetricModel};
use approx_logic::ultra::{
    build_ultraproduct, check_isometric, check_limit_transfer, check_richness, UltraError, UltrafilterOracle, ValuationSequence,
};
use proptest::prelude::*;

use common::*;

fn subsets(m: usize) -> Vec<Vec<usize>> {
    (0u32..1 << m).map(|s| (1..=m).filter(|i| s & (1 << (i - 1)) != 0).collect()).collect()
}

/// Every table on `{1..m}`, as lists of member sets.
fn all_tables(m: usize) -> Vec<Vec<Vec<usize>>> {
    let subsets = subsets(m);
    (0u64..1 << subsets.len())
        .map(|pick| subsets.iter().enumerate().filter(|(k, _)| pick & (1 << k) != 0).map(|(_, s)| s.clone()).collect())
        .collect()
}

#[test]
fn valid_tables_are_exactly_the_principal_ones() {
    for m in 1..=3 {
        let mut valid = Vec::new();
        for members in all_tables(m) {
            let oracle = UltrafilterOracle::from_members(m, &members).unwrap();
            let principal_at = (1..=m).find(|i| {
                let generated: Vec<Vec<usize>> = subsets(m).into_iter().filter(|s| s.contains(i)).collect();
                members.len() == generated.len() && generated.iter().all(|s| members.contains(s))
            });
            assert_eq!(oracle.validate().is_ok(), principal_at.is_some(), "{members:?}");
            if oracle.validate().is_ok() {
                assert_eq!(oracle.generator(), principal_at);
                valid.push(principal_at.unwrap());
            }
        }
        assert_eq!(valid.len(), m);
    }
}

#[test]
fn principal_collapse_examples() {
    let (a, b) = (m3(), load_model("m3_c.json"));
    let o = UltrafilterOracle::principal(2, 2).unwrap();
    let p = build_ultraproduct(&[a.clone(), b.clone()], &o, None).unwrap();
    assert!(check_isometric(&p.model, &b).is_some());
    assert!(check_isometric(&p.model, &a).is_none());

    let single = build_ultraproduct(&[a.clone()], &UltrafilterOracle::principal(1, 1).unwrap(), None).unwrap();
    assert_eq!(check_isometric(&single.model, &a), Some(vec![0, 1, 2]));

    for members in all_tables(2) {
        let oracle = UltrafilterOracle::from_members(2, &members).unwrap();
        match build_ultraproduct(&[a.clone(), a.clone()], &oracle, None) {
            Ok(p) => assert!(check_isometric(&p.model, &a).is_some()),
            Err(e) => assert!(matches!(e, UltraError::InvalidOracle { .. }), "{e}"),
        }
    }
}

#[test]
fn isometry_search_examples() {
    let a = m3();
    assert_eq!(check_isometric(&a, &a), Some(vec![0, 1, 2]));
    // renaming b and c is an isometry once the distances move with the names
    assert_eq!(check_isometric(&a, &load_model("m3_swapped.json")), Some(vec![0, 2, 1]));
    assert_eq!(check_isometric(&a, &load_model("m3_c.json")), None);
    assert_eq!(check_isometric(&a, &grid1d()), None);
}

#[test]
fn mixed_factor_signatures_are_rejected() {
    let err = build_ultraproduct(&[m3(), grid1d()], &UltrafilterOracle::principal(2, 1).unwrap(), None).unwrap_err();
    assert!(matches!(err, UltraError::Factors(_)), "{err}");
}

#[test]
fn limit_transfer_for_negated_atom() {
    let factors = [m3(), load_model("m3_c.json")];
    let phi = Formula::not(Formula::rel("C", vec![Term::var(0)]));
    for g in 1..=2 {
        let oracle = UltrafilterOracle::principal(2, g).unwrap();
        for x in 0..3 {
            for y in 0..3 {
                let tail: BTreeMap<_, _> = [(0, vec![x, y])].into();
                let r = check_limit_transfer(&factors, &oracle, &phi, &ValuationSequence::constant(tail), 16, 8).unwrap();
                assert!(r.disagreements.is_empty(), "{:?}", r.disagreements);
                assert_eq!(r.comparisons, 16 * 8);
                // the r-criterion on the generating factor
                let point = if g == 1 { x } else { y };
                let refutable = (1..=8u64).any(|n| {
                    factors[g - 1].relation("C").unwrap().tuples.iter().all(|t| *factors[g - 1].distance(point, t[0]) > approx_logic::rational::frac(1, n as i64))
                });
                assert_eq!(r.product_ap, refutable);
                assert_eq!(r.factor_ap, refutable);
            }
        }
    }
}

#[test]
fn richness_on_three_point_product() {
    let factors = [m3(), m3()];
    let corpus: Vec<Formula> = corpus_for(&m3()).into_iter().map(|(_, phi)| phi).filter(Formula::is_finitary).collect();
    let r = check_richness(&factors, &UltrafilterOracle::principal(2, 1).unwrap(), &corpus, 16, 8).unwrap();
    assert!(r.disagreements.is_empty(), "{:?}", r.disagreements);
    assert!(r.compared > 20, "{r:?}");

    let m = m3();
    let c = Formula::rel("C", vec![Term::var(0)]);
    let b = [(0, 1)].into();
    assert!(!satisfies(&m, &c, &b).unwrap());
    assert_eq!(ap_satisfies(&m, &c, &b, 8, 8).unwrap(), ApVerdict::Refuted { depth: 4 });
}

fn random_factor(points: usize, seed: Vec<u8>) -> FiniteMetricModel {
    use approx_logic::rational::frac;
    let mut metric = vec![vec![frac(0, 1); points]; points];
    let mut k = 0;
    for i in 0..points {
        for j in i + 1..points {
            let d = frac(2 + (seed[k % seed.len()] % 3) as i64, 2);
            metric[i][j] = d.clone();
            metric[j][i] = d;
            k += 1;
        }
    }
    let names = (0..points).map(|i| format!("q{i}")).collect();
    let c: Vec<Vec<usize>> = (0..points).filter(|i| seed[(i + 7) % seed.len()] % 2 == 0).map(|i| vec![i]).collect();
    FiniteMetricModel::new(names, "rho", metric)
        .unwrap()
        .with_relation("C", 1, c)
        .unwrap()
        .with_relation("U", 1, (0..points).map(|i| vec![i]))
        .unwrap()
        .with_model_function("f", 1, (0..points).map(|i| (seed[i % seed.len()] as usize) % points).collect())
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn principal_products_collapse(
        sizes in prop::collection::vec(1usize..4, 1..4),
        seed in prop::collection::vec(any::<u8>(), 8),
        g in 0usize..3,
    ) {
        let factors: Vec<_> = sizes.iter().enumerate().map(|(i, n)| {
            let s: Vec<u8> = seed.iter().map(|b| b.wrapping_add(i as u8 * 37)).collect();
            random_factor(*n, s)
        }).collect();
        let g = g % factors.len() + 1;
        let p = build_ultraproduct(&factors, &UltrafilterOracle::principal(factors.len(), g).unwrap(), None).unwrap();
        prop_assert!(check_isometric(&p.model, &factors[g - 1]).is_some());
    }
}
