mod common;

use featurelens::dge::{bh_correct, welch_t};
use featurelens::enrichment::{midranks, mwu_enrichment};
use featurelens::matching::{assignment_cost, hungarian};
use featurelens::stats::binomial_upper_tail;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn welch_matches_reference_fixtures() {
    for (i, case) in common::welch_cases().iter().enumerate() {
        let r = welch_t(&case.a, &case.b).unwrap();
        assert!((r.t - case.t).abs() <= 1e-10 * case.t.abs().max(1.0), "case {i}: t {} vs {}", r.t, case.t);
        assert!((r.p - case.p).abs() <= 1e-10, "case {i}: p {} vs {}", r.p, case.p);
    }
}

#[test]
fn mwu_matches_reference_fixtures() {
    for (i, case) in common::mwu_cases().iter().enumerate() {
        let r = mwu_enrichment(&case.values, &case.term).unwrap();
        let n1 = case.term.len() as f64;
        let n2 = case.values.len() as f64 - n1;
        assert!((n1 * n2 - r.u1 - case.u_term).abs() < 1e-9, "case {i}");
        assert!((r.p - case.p).abs() <= 1e-10, "case {i}: p {} vs {}", r.p, case.p);
    }
}

#[test]
fn mwu_exact_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..100 {
        let n = rng.random_range(2..=12);
        let n1 = rng.random_range(1..n);
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64).collect();
        if values.iter().all(|&v| v == values[0]) {
            continue;
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let term = &idx[..n1];
        let r = mwu_enrichment(&values, term).unwrap();
        assert!((r.p - common::mwu_enumeration_p(&values, term)).abs() < 1e-10);
    }
}

#[test]
fn midranks_match_counting_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..50 {
        let values: Vec<f64> = (0..rng.random_range(1..60)).map(|_| rng.random_range(0..10) as f64).collect();
        assert_eq!(midranks(&values), common::midranks_oracle(&values));
    }
}

#[test]
fn bh_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    for _ in 0..100 {
        let p: Vec<f64> = (0..rng.random_range(1..200)).map(|_| rng.random::<f64>().powi(3)).collect();
        for (a, b) in bh_correct(&p).iter().zip(common::bh_oracle(&p)) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn hungarian_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    for (r, c) in [(6, 6), (2, 3), (5, 3)] {
        for _ in 0..20 {
            let cost = Array2::from_shape_simple_fn((r, c), || rng.random_range(0.0..10.0));
            let a = hungarian(&cost);
            assert!((assignment_cost(&cost, &a) - common::brute_force_assignment(&cost)).abs() < 1e-9);
        }
    }
}

#[test]
fn binomial_tail_matches_exact_sums() {
    for c in common::binomial_tail_cases() {
        let got = binomial_upper_tail(c.k, c.n, c.p);
        assert!((got - c.tail).abs() < 1e-12, "k {} n {} p {}: {got} vs {}", c.k, c.n, c.p, c.tail);
        assert!((got - c.tail).abs() <= 1e-9 * c.tail, "relative: k {} n {} p {}", c.k, c.n, c.p);
    }
}
