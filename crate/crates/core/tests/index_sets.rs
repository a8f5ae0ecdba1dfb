use std::collections::BTreeSet;

use midlmc::index_sets::{admissibility_violation, boundary, find_dominating, ProfitExponents};
use midlmc::{build_index_set, complexity_constants, compute_weights, ExactRates, MultiIndex, Rates, Rational64};
use proptest::prelude::*;

fn universe(bound: usize) -> Vec<MultiIndex> {
    (0..=bound).flat_map(|a| (0..=bound).map(move |b| MultiIndex::new(a, b))).collect()
}

#[test]
fn exact_kuramoto_constants() {
    let q = Rational64::new;
    let r = ExactRates::kuramoto();
    let w = compute_weights(&r).unwrap();
    assert_eq!(w.delta_bar, [q(2, 3), q(1, 3)]);
    assert_eq!(w.delta_bbar, [q(2, 5), q(3, 5)]);
    let c = complexity_constants(&r).unwrap();
    assert_eq!((c.varsigma, c.varrho, c.psi), (q(0, 1), q(1, 1), q(2, 3)));
    assert!(c.condition_holds);
}

#[test]
fn first_level_is_the_origin() {
    let w = compute_weights(&ExactRates::kuramoto()).unwrap();
    let s = build_index_set(&w, 2.0).unwrap();
    assert_eq!(s.members, [MultiIndex::ZERO].into_iter().collect());
    assert_eq!(boundary(&s), [MultiIndex::ZERO].into_iter().collect());
}

#[test]
fn swapped_set_is_dominated() {
    // Trading a cheap, high-bias index for an expensive, low-bias one makes
    // the set worse on both counts, so the search must find a better set.
    let e = ProfitExponents::from_rates(&Rates::kuramoto());
    let mut levels: Vec<f64> = universe(3).iter().map(|&a| e.profit(a)).collect();
    levels.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let set: BTreeSet<MultiIndex> = universe(3).into_iter().filter(|&a| e.profit(a) >= levels[5]).collect();
    let (out, into) = set
        .iter()
        .filter(|&&a| a != MultiIndex::ZERO)
        .flat_map(|&a| universe(3).into_iter().filter(|b| !set.contains(b)).map(move |b| (a, b)))
        .find(|&(a, b)| e.bias(a) > e.bias(b) && e.work(b) > e.work(a))
        .expect("a cheaper, higher-bias member");
    let mut swapped = set.clone();
    swapped.remove(&out);
    swapped.insert(into);
    assert!(find_dominating(&set, &e, 3).unwrap().undominated());
    let check = find_dominating(&swapped, &e, 3).unwrap();
    assert!(!check.undominated());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]
    #[test]
    fn level_sets_are_undominated(
        b1 in 0.5_f64..2.0, b2 in 0.5_f64..2.0,
        w1 in 1.0_f64..3.0, w2 in 1.0_f64..3.0,
        s1 in 1.0_f64..3.0, s2 in 1.0_f64..3.0,
        pick in 0usize..16,
    ) {
        let r = Rates::new([b1, b2], [w1, w2], [s1, s2], [1.0, 1.0], 2);
        prop_assume!(admissibility_violation(&r).is_none());
        let e = ProfitExponents::from_rates(&r);
        let mut levels: Vec<f64> = universe(3).iter().map(|&a| e.profit(a)).collect();
        levels.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let set: BTreeSet<MultiIndex> = universe(3).into_iter().filter(|&a| e.profit(a) >= levels[pick]).collect();
        prop_assert!(find_dominating(&set, &e, 3).unwrap().undominated());
    }

    #[test]
    fn index_sets_grow_with_level(l in 2.0_f64..500.0, f in 1.01_f64..3.0) {
        let w = compute_weights(&Rates::kuramoto()).unwrap();
        let small = build_index_set(&w, l).unwrap();
        let large = build_index_set(&w, l * f).unwrap();
        prop_assert!(small.members.is_subset(&large.members));
        prop_assert!(large.is_downward_closed());
    }
}
