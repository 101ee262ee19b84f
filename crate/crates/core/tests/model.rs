mod common;

use fixtail::model::{
    check_allowable, exchangeify, find_positive_product, sample_family, ZERO_TOL,
};
use fixtail::rng::seeded;
use fixtail::Mat;
use proptest::prelude::*;

fn sorted_entries(ms: &[Mat<f64>]) -> Vec<Vec<u64>> {
    let mut v: Vec<Vec<u64>> = ms
        .iter()
        .map(|m| m.as_slice().iter().map(|x| x.to_bits()).collect())
        .collect();
    v.sort();
    v
}

proptest! {
    #[test]
    fn exchangeify_keeps_the_multiset(
        entries in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 1..8),
        seed in any::<u64>(),
    ) {
        let mut ms: Vec<Mat<f64>> = entries
            .iter()
            .map(|e| Mat::from_rows(&[vec![e[0], e[1]], vec![e[2], e[3]]]))
            .collect();
        let before = sorted_entries(&ms);
        exchangeify(&mut ms, &mut seeded(seed));
        prop_assert_eq!(before, sorted_entries(&ms));
    }

    #[test]
    fn family_sampling_is_reproducible(seed in any::<u64>()) {
        for spec in [common::ref1(), common::ref2(), common::rotation(3), common::signed_random_n()] {
            let (mut r1, mut r2) = (seeded(seed), seeded(seed));
            for _ in 0..5 {
                let a = sample_family::<f64, _>(&spec, &mut r1).unwrap();
                let b = sample_family::<f64, _>(&spec, &mut r2).unwrap();
                prop_assert_eq!(a.n, b.n);
                prop_assert_eq!(&a.q, &b.q);
                for (x, y) in a.a.iter().zip(&b.a) {
                    prop_assert_eq!(x.as_slice(), y.as_slice());
                }
            }
        }
    }

    #[test]
    fn positive_product_witness_is_positive(
        a in prop::array::uniform4(prop_oneof![Just(0.0f64), 0.1f64..2.0]),
        b in prop::array::uniform4(prop_oneof![Just(0.0f64), 0.1f64..2.0]),
        seed in any::<u64>(),
    ) {
        let spec = common::nonnegative_pair(a, b);
        if let Some(w) = find_positive_product::<f64, _>(&spec, 64, &mut seeded(seed)) {
            let min = w.matrix.iter().flatten().copied().fold(f64::INFINITY, f64::min);
            prop_assert!(min > 0.0, "witness {:?}", w.matrix);
        }
    }
}

#[test]
fn allowability_matches_brute_force_on_every_zero_pattern() {
    for d in 1..=3usize {
        for pattern in 0u32..1 << (d * d) {
            let entry = |i: usize, j: usize| pattern >> (i * d + j) & 1 == 1;
            let m = Mat::<f64>::from_fn(d, |i, j| if entry(i, j) { 0.7 } else { 0.0 });
            let mut rows_ok = true;
            for i in 0..d {
                let mut any = false;
                for j in 0..d {
                    any |= entry(i, j);
                }
                rows_ok &= any;
            }
            let mut cols_ok = true;
            for j in 0..d {
                let mut any = false;
                for i in 0..d {
                    any |= entry(i, j);
                }
                cols_ok &= any;
            }
            assert_eq!(
                check_allowable(&m, ZERO_TOL),
                rows_ok && cols_ok,
                "d = {d}, pattern {pattern:b}"
            );
        }
    }
}

#[test]
fn entries_below_tolerance_count_as_zero() {
    let m = Mat::<f64>::from_rows(&[vec![1.0, 0.0], vec![0.0, 1e-14]]);
    assert!(!check_allowable(&m, ZERO_TOL));
}
