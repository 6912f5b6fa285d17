use crashrepro::bench_harness::{cohen_kappa, mcnemar_exact};
use crashrepro_oracles::stats as oracle;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn mcnemar_on_ten_six() {
    let p = mcnemar_exact(10, 6);
    assert!((p.p - oracle::mcnemar_exact(10, 6)).abs() < 1e-12);
    assert_eq!(format!("{:.2}", p.p), "0.45");
}

#[test]
fn kappa_on_two_hundred_random_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let mut checked = 0;
    while checked < 200 {
        let m: Vec<Vec<u64>> = (0..3).map(|_| (0..3).map(|_| rng.random_range(0..40)).collect()).collect();
        let Some((want, agreement)) = oracle::cohen_kappa(&m) else { continue };
        let got = cohen_kappa(&m).unwrap();
        assert!((got.kappa.unwrap() - want).abs() < 1e-9, "{m:?}");
        assert!((got.agreement - agreement).abs() < 1e-12, "{m:?}");
        checked += 1;
    }
}

#[test]
fn kappa_extremes() {
    let diag = vec![vec![5, 0, 0], vec![0, 7, 0], vec![0, 0, 3]];
    assert_eq!(cohen_kappa(&diag).unwrap().kappa, Some(1.0));
    // Outer product of the marginals: agreement is exactly what chance predicts.
    let indep = vec![vec![4, 2, 2], vec![6, 3, 3], vec![10, 5, 5]];
    assert!(cohen_kappa(&indep).unwrap().kappa.unwrap().abs() < 1e-12);
}

proptest! {
    #[test]
    fn mcnemar_matches_exact_fractions(b in 0u64..120, c in 0u64..120) {
        let got = mcnemar_exact(b, c).p;
        prop_assert!((got - oracle::mcnemar_exact(b, c)).abs() < 1e-12, "b={} c={} got={}", b, c, got);
    }

    #[test]
    fn mcnemar_is_symmetric(b in 0u64..200, c in 0u64..200) {
        prop_assert_eq!(mcnemar_exact(b, c).p, mcnemar_exact(c, b).p);
    }

    #[test]
    fn kappa_bounds(m in prop::collection::vec(prop::collection::vec(0u64..30, 3), 3)) {
        if let Ok(k) = cohen_kappa(&m) {
            prop_assert!((0.0..=1.0).contains(&k.agreement));
            if let Some(v) = k.kappa {
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&v));
                let off_diagonal: u64 = (0..3).flat_map(|i| (0..3).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[i][j]).sum();
                prop_assert_eq!((v - 1.0).abs() < 1e-12, off_diagonal == 0);
            }
        }
    }
}
