//! Independent reference implementations checked against the library.

use proptest::prelude::*;
use semleak_core::similarity::{bertscore, EmbeddingVector, TokenEmbeddings};
use semleak_core::stats::{self, kendall_tau, StatsError};

fn tokens(vectors: &[Vec<f64>]) -> TokenEmbeddings {
    TokenEmbeddings::new(
        (0..vectors.len()).map(|i| format!("t{i}")).collect(),
        vectors
            .iter()
            .map(|v| EmbeddingVector::new(v.clone()).unwrap())
            .collect(),
    )
    .unwrap()
}

fn plain_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Enumerates every (candidate, reference) pair, then takes the best partner
/// of each token from that list.
fn bertscore_oracle(cand: &[Vec<f64>], reference: &[Vec<f64>]) -> (f64, f64, f64) {
    let mut pairs = Vec::new();
    for (i, c) in cand.iter().enumerate() {
        for (j, r) in reference.iter().enumerate() {
            pairs.push((i, j, plain_cosine(c, r)));
        }
    }
    let best = |side: usize, idx: usize| {
        pairs
            .iter()
            .filter(|p| if side == 0 { p.0 == idx } else { p.1 == idx })
            .map(|p| p.2)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let p = (0..cand.len()).map(|i| best(0, i)).sum::<f64>() / cand.len() as f64;
    let r = (0..reference.len()).map(|j| best(1, j)).sum::<f64>() / reference.len() as f64;
    let f = if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    };
    (p, r, f)
}

fn nonzero_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, dim)
        .prop_filter("non-zero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

fn token_set(dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(nonzero_vec(dim), 1..=5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn bertscore_matches_enumeration(
        (cand, reference) in (1usize..=8).prop_flat_map(|d| (token_set(d), token_set(d)))
    ) {
        let got = bertscore(&tokens(&cand), &tokens(&reference)).unwrap();
        let (p, r, f) = bertscore_oracle(&cand, &reference);
        prop_assert!((got.precision - p).abs() <= 1e-9);
        prop_assert!((got.recall - r).abs() <= 1e-9);
        prop_assert!((got.f1 - f).abs() <= 1e-9);
    }

    #[test]
    fn bertscore_self_is_one(x in (1usize..=8).prop_flat_map(token_set)) {
        let t = tokens(&x);
        let s = bertscore(&t, &t).unwrap();
        prop_assert!((s.precision - 1.0).abs() <= 1e-12);
        prop_assert!((s.recall - 1.0).abs() <= 1e-12);
        prop_assert!((s.f1 - 1.0).abs() <= 1e-12);
    }
}

/// O(n^2) tau-b: counts every pair directly.
fn tau_oracle(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    let n = x.len();
    let (mut cd, mut tie_x, mut tie_y) = (0i64, 0u64, 0u64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            if dx == 0.0 {
                tie_x += 1;
            }
            if dy == 0.0 {
                tie_y += 1;
            }
            if dx != 0.0 && dy != 0.0 {
                cd += if (dx > 0.0) == (dy > 0.0) { 1 } else { -1 };
            }
        }
    }
    let total = (n * (n - 1) / 2) as u64;
    if tie_x == total || tie_y == total {
        return Err(StatsError::AllTied);
    }
    let (a, b) = (total - tie_x, total - tie_y);
    Ok(cd as f64 / ((a as u128 * b as u128) as f64).sqrt())
}

fn ranked(
    n: std::ops::RangeInclusive<usize>,
    levels: i32,
) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    n.prop_flat_map(move |n| {
        (
            prop::collection::vec((0..levels).prop_map(f64::from), n),
            prop::collection::vec((0..levels).prop_map(f64::from), n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn kendall_matches_brute_force((x, y) in ranked(2..=50, 6)) {
        prop_assert_eq!(kendall_tau(&x, &y), tau_oracle(&x, &y));
    }

    #[test]
    fn kendall_matches_brute_force_continuous(
        (x, y) in (2usize..=50).prop_flat_map(|n| (prop::collection::vec(-1.0f64..1.0, n), prop::collection::vec(-1.0f64..1.0, n)))
    ) {
        prop_assert_eq!(kendall_tau(&x, &y), tau_oracle(&x, &y));
    }

    #[test]
    fn kendall_extremes(x in prop::collection::vec(-100i32..100, 2..=50)) {
        let x: Vec<f64> = x.into_iter().map(f64::from).collect();
        prop_assume!(x.iter().any(|v| *v != x[0]));
        let reversed: Vec<f64> = x.iter().map(|v| -v).collect();
        prop_assert_eq!(kendall_tau(&x, &x).unwrap(), 1.0);
        prop_assert_eq!(kendall_tau(&x, &reversed).unwrap(), -1.0);
    }
}

/// Student's t upper tail with two degrees of freedom, in closed form.
fn sf_df2(t: f64) -> f64 {
    0.5 - t / (2.0 * (t * t + 2.0).sqrt())
}

#[test]
fn t_test_fixture_against_closed_form() {
    let r = stats::t_test_one_sample_greater(&[60.0, 70.0, 80.0], 50.0).unwrap();
    let t = 20.0 / (10.0 / 3f64.sqrt());
    assert!((r.t_statistic - t).abs() < 1e-12);
    assert!((r.t_statistic - 3.4641).abs() < 1e-3);
    assert_eq!(r.degrees_of_freedom, 2);
    assert!((r.p_value - sf_df2(t)).abs() < 1e-12);
    assert!((r.p_value - 0.0371).abs() < 1e-3);
}

#[test]
fn student_t_df2_everywhere() {
    for i in -80..=80 {
        let t = f64::from(i) / 8.0;
        assert!(
            (stats::student_t_sf(t, 2.0) - sf_df2(t)).abs() < 1e-12,
            "t={t}"
        );
    }
}
