mod common;

use approx_logic::rational::{frac, int, Rational};
use approx_logic::signature::{default_radii, default_scalars, CompactRealSet};
use approx_logic::uniform::{
    default_epsilon_grid, grid_model, normed_profile, validate_membership, BoundTarget, GridNorm, GridSpec, UniformProfile, Violation,
};
use num_traits::{Signed, Zero};
use proptest::prelude::*;

use common::*;

fn ball(q: &Rational) -> String {
    format!("B_{q}")
}

#[test]
fn normed_profile_assignments() {
    let p = normed_profile(&default_radii(), &default_scalars()).unwrap();
    let eps = [int(1), frac(1, 2), frac(1, 3), frac(1, 4)];
    assert_eq!(p.epsilon_grid, eps);
    let radii = [int(1), int(2)];
    for q1 in &radii {
        for q2 in &radii {
            let (b1, b2, sum) = (ball(q1), ball(q2), ball(&(q1 + q2)));
            let pair = [b1.as_str(), b2.as_str()];
            assert_eq!(
                p.fun_bound("rho", &pair),
                Some(&BoundTarget::Compact(CompactRealSet::interval(int(0), q1 + q2).unwrap()))
            );
            assert_eq!(p.fun_bound("plus", &pair), Some(&BoundTarget::Relation(sum.clone())));
            assert_eq!(p.pair_cover(&b1, &b2), Some(sum.as_str()));
            for e in &eps {
                assert_eq!(p.modulus("rho", &pair, e), Some(&(e / int(2))));
                assert_eq!(p.modulus("plus", &pair, e), Some(&(e / int(2))));
            }
        }
    }
    for q in &radii {
        let b = ball(q);
        assert_eq!(p.fun_bound("norm", &[&b]), Some(&BoundTarget::Compact(CompactRealSet::interval(int(0), q.clone()).unwrap())));
        for e in &eps {
            assert_eq!(p.modulus("norm", &[&b], e), Some(e));
        }
        for (name, r) in [("scale_-1", int(-1)), ("scale_1/2", frac(1, 2)), ("scale_2", int(2))] {
            assert_eq!(p.fun_bound(name, &[&b]), Some(&BoundTarget::Relation(ball(&(r.abs() * q)))));
            for e in &eps {
                assert_eq!(p.modulus(name, &[&b], e), Some(&(e / r.abs())));
            }
        }
    }
}

#[test]
fn normed_profile_rejects_degenerate_parameters() {
    assert!(normed_profile(&[int(1)], &[int(0)]).is_err());
    assert!(normed_profile(&[int(0)], &[int(1)]).is_err());
    assert!(normed_profile(&[frac(-1, 2)], &[int(1)]).is_err());
}

#[test]
fn profile_fixture_roundtrips() {
    let text = read_fixture("normed_profile.json");
    let p = UniformProfile::from_json(&text).unwrap();
    assert_eq!(p, normed_profile(&default_radii(), &default_scalars()).unwrap());
    assert_eq!(p.to_json(), text);
    assert_eq!(default_epsilon_grid().len(), 4);
}

#[test]
fn grid_models_need_slack_two_over_m() {
    let p = normed_profile(&default_radii(), &default_scalars()).unwrap();
    for (name, m) in [("grid1d.json", 2), ("grid2d.json", 2)] {
        let model = load_model(name);
        let pass = validate_membership(&model, &p, &frac(2, m)).unwrap();
        assert!(pass.passed(), "{name}: {:?}", pass.violations);
        let fail = validate_membership(&model, &p, &Rational::zero()).unwrap();
        assert!(!fail.passed(), "{name}");
        let witness = fail.violations.iter().find(|v| matches!(v, Violation::Continuity { .. })).expect("continuity witness");
        let Violation::Continuity { epsilon, distance, .. } = witness else { unreachable!() };
        assert!(distance > epsilon);
    }
}

#[test]
fn m3_with_its_own_sorts_passes() {
    let profile = r#"{
        "fun_bounds": [{"function": "rho", "bounds": ["U", "U"], "target": {"compact": [["0", "1"]]}}],
        "pair_covers": [{"first": "C", "second": "U", "cover": "U"}],
        "moduli": [
            {"function": "rho", "bounds": ["U", "U"], "epsilon": "1", "delta": "1"},
            {"function": "rho", "bounds": ["U", "U"], "epsilon": "1/2", "delta": "1/2"}
        ],
        "epsilon_grid": ["1", "1/2"]
    }"#;
    let p = UniformProfile::from_json(profile).unwrap();
    let r = validate_membership(&m3(), &p, &Rational::zero()).unwrap();
    assert!(r.passed(), "{:?}", r.violations);
    assert!(r.warnings.is_empty(), "{:?}", r.warnings);
    let tight = UniformProfile::from_json(&profile.replace(r#"[["0", "1"]]"#, r#"[["0", "1/2"]]"#)).unwrap();
    let r = validate_membership(&m3(), &tight, &Rational::zero()).unwrap();
    assert!(r.violations.iter().any(|v| matches!(v, Violation::Bound { .. })));
    assert!(validate_membership(&m3(), &tight, &frac(1, 2)).unwrap().passed());
}

#[test]
fn profile_naming_a_missing_function_is_an_error() {
    let p = normed_profile(&default_radii(), &default_scalars()).unwrap();
    assert!(validate_membership(&m3(), &p, &Rational::zero()).is_err());
}

fn spec_strategy() -> impl Strategy<Value = GridSpec> {
    (1usize..3, prop_oneof![Just(GridNorm::L1), Just(GridNorm::L2Surrogate), Just(GridNorm::LInf)], 1u64..4, 1i64..3)
        .prop_filter("small universes", |(d, _, m, r)| *d == 1 || m * (*r as u64) <= 4)
        .prop_map(|(d, norm, m, r)| GridSpec::new(d, norm, m, int(r)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn grid_models_are_closed_symmetric_and_bounded(spec in spec_strategy()) {
        let g = grid_model(&spec).unwrap();
        let zero = g.constants()["zero"];
        let neg = |p: usize| g.apply_model("scale_-1", &[p]).unwrap();
        for p in 0..g.size() {
            prop_assert!(g.apply_real("norm", &[p]).unwrap() <= spec.radius);
            prop_assert_eq!(neg(neg(p)), p);
            prop_assert_eq!(g.apply_model("plus", &[p, zero]).unwrap(), p);
            prop_assert_eq!(g.apply_real("norm", &[p]).unwrap(), g.distance(p, zero).clone());
            for q in 0..g.size() {
                prop_assert_eq!(g.apply_model("plus", &[p, q]).unwrap(), g.apply_model("plus", &[q, p]).unwrap());
            }
        }
    }
}
