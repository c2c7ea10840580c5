//! Significance and agreement statistics.
//!
//! One-sided t-tests use the Student-t upper tail expressed through the
//! regularized incomplete beta function, evaluated by a continued fraction
//! (modified Lentz). Kendall's tau is the tie-aware tau-b, computed with
//! Knight's merge-sort algorithm.

use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum StatsError {
    #[error("need at least 2 values, got {0}")]
    TooFew(usize),
    #[error("zero variance: the test statistic is undefined")]
    ZeroVariance,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("non-finite input")]
    NonFinite,
    #[error("all values tied in one input: tau is undefined")]
    AllTied,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alternative {
    Greater,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t_statistic: f64,
    pub degrees_of_freedom: u64,
    pub p_value: f64,
    pub direction: Alternative,
}

const CF_EPS: f64 = 1e-16;
const CF_TINY: f64 = 1e-300;
const CF_MAX_ITER: usize = 20_000;

fn ln_beta(a: f64, b: f64) -> f64 {
    libm::lgamma(a) + libm::lgamma(b) - libm::lgamma(a + b)
}

/// Continued fraction for I_x(a, b), see Numerical Recipes `betacf`.
fn beta_continued_fraction(x: f64, a: f64, b: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let guard = |v: f64| if libm::fabs(v) < CF_TINY { CF_TINY } else { v };
    let mut c = 1.0;
    let mut d = 1.0 / guard(1.0 - qab * x / qap);
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 / guard(1.0 + aa * d);
        c = guard(1.0 + aa / c);
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 / guard(1.0 + aa * d);
        c = guard(1.0 + aa / c);
        let delta = d * c;
        h *= delta;
        if libm::fabs(delta - 1.0) < CF_EPS {
            break;
        }
    }
    h
}

/// I_x(a, b) with `y = 1 - x` passed separately so callers can avoid cancellation.
fn inc_beta_xy(x: f64, y: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if y <= 0.0 {
        return 1.0;
    }
    let ln_front = a * libm::log(x) + b * libm::log(y) - ln_beta(a, b);
    if x < (a + 1.0) / (a + b + 2.0) {
        libm::exp(ln_front) * beta_continued_fraction(x, a, b) / a
    } else {
        1.0 - libm::exp(ln_front) * beta_continued_fraction(y, b, a) / b
    }
}

/// Regularized incomplete beta function I_x(a, b) for `a, b > 0`, `x` in `[0, 1]`.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x.is_nan() || a <= 0.0 || b <= 0.0 {
        return f64::NAN;
    }
    inc_beta_xy(x, 1.0 - x, a, b)
}

/// Upper-tail probability P(T > t) of Student's t with `df` degrees of freedom.
pub fn student_t_sf(t: f64, df: f64) -> f64 {
    if t.is_nan() || df.is_nan() || df <= 0.0 {
        return f64::NAN;
    }
    let t2 = t * t;
    // x = df / (df + t^2), y = t^2 / (df + t^2), both stable for huge t
    let x = 1.0 / (1.0 + t2 / df);
    let y = 1.0 / (1.0 + df / t2);
    let tail = 0.5 * inc_beta_xy(x, y, df / 2.0, 0.5);
    if t > 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

fn mean_and_variance(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, ss / (n - 1.0))
}

/// One-sided test that the mean of `values` exceeds `mu0`.
pub fn t_test_one_sample_greater(values: &[f64], mu0: f64) -> Result<TTestResult, StatsError> {
    if values.len() < 2 {
        return Err(StatsError::TooFew(values.len()));
    }
    if values.iter().any(|v| !v.is_finite()) || !mu0.is_finite() {
        return Err(StatsError::NonFinite);
    }
    let (mean, var) = mean_and_variance(values);
    if var <= 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    let n = values.len();
    let t = (mean - mu0) / libm::sqrt(var / n as f64);
    let df = (n - 1) as u64;
    Ok(TTestResult {
        t_statistic: t,
        degrees_of_freedom: df,
        p_value: student_t_sf(t, df as f64).clamp(0.0, 1.0),
        direction: Alternative::Greater,
    })
}

/// One-sided paired test that `a` exceeds `b` on average.
pub fn t_test_paired_greater(a: &[f64], b: &[f64]) -> Result<TTestResult, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    t_test_one_sample_greater(&diffs, 0.0)
}

fn pairs(t: u64) -> u64 {
    t * (t.saturating_sub(1)) / 2
}

/// Sum of t(t-1)/2 over runs of equal adjacent elements.
fn tied_pairs<T>(sorted: &[T], eq: impl Fn(&T, &T) -> bool) -> u64 {
    let mut total = 0;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if eq(&w[0], &w[1]) {
            run += 1;
        } else {
            total += pairs(run);
            run = 1;
        }
    }
    total + pairs(run)
}

/// Sorts `v` ascending and returns the number of strictly inverted pairs.
fn sort_count_inversions(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps =
        sort_count_inversions(&mut v[..mid], buf) + sort_count_inversions(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j].total_cmp(&v[i]) == Ordering::Less {
            swaps += (mid - i) as u64;
            buf.push(v[j]);
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

/// Kendall's tau-b, `(C - D) / sqrt((C + D + T_x)(C + D + T_y))`, where
/// `T_x`/`T_y` count pairs tied only in x/only in y.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 2 {
        return Err(StatsError::TooFew(n));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    // `+ 0.0` folds -0.0 into 0.0 so total_cmp agrees with `==`
    let mut joint: Vec<(f64, f64)> = x.iter().zip(y).map(|(a, b)| (a + 0.0, b + 0.0)).collect();
    joint.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let n0 = pairs(n as u64);
    let tied_x = tied_pairs(&joint, |a, b| a.0 == b.0);
    let tied_xy = tied_pairs(&joint, |a, b| a.0 == b.0 && a.1 == b.1);
    let mut ys: Vec<f64> = joint.iter().map(|p| p.1).collect();
    let mut buf = Vec::with_capacity(n);
    let swaps = sort_count_inversions(&mut ys, &mut buf);
    let tied_y = tied_pairs(&ys, |a, b| a == b);

    let not_tied_x = n0 - tied_x;
    let not_tied_y = n0 - tied_y;
    if not_tied_x == 0 || not_tied_y == 0 {
        return Err(StatsError::AllTied);
    }
    let s = n0 as i64 - tied_x as i64 - tied_y as i64 + tied_xy as i64 - 2 * swaps as i64;
    Ok(tau_from_counts(s, not_tied_x, not_tied_y))
}

/// Final tau-b division shared by every counting route.
pub fn tau_from_counts(concordant_minus_discordant: i64, not_tied_x: u64, not_tied_y: u64) -> f64 {
    let denom = (not_tied_x as u128 * not_tied_y as u128) as f64;
    concordant_minus_discordant as f64 / libm::sqrt(denom)
}

/// Which side a judgment favours.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComparisonLabel {
    Test,
    Control,
    Neither,
}

impl ComparisonLabel {
    /// Ordinal encoding used for rank correlation: control = -1, neither = 0, test = +1.
    pub fn as_real(self) -> f64 {
        match self {
            ComparisonLabel::Control => -1.0,
            ComparisonLabel::Neither => 0.0,
            ComparisonLabel::Test => 1.0,
        }
    }

    /// Leak credit: test = 1, control = 0, neither = 0.5.
    pub fn leak_value(self) -> crate::metric::LeakValue {
        match self {
            ComparisonLabel::Test => crate::metric::LeakValue::Leak,
            ComparisonLabel::Control => crate::metric::LeakValue::NoLeak,
            ComparisonLabel::Neither => crate::metric::LeakValue::Tie,
        }
    }

    pub fn swapped(self) -> Self {
        match self {
            ComparisonLabel::Test => ComparisonLabel::Control,
            ComparisonLabel::Control => ComparisonLabel::Test,
            ComparisonLabel::Neither => ComparisonLabel::Neither,
        }
    }
}

impl fmt::Display for ComparisonLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ComparisonLabel::Test => "test",
            ComparisonLabel::Control => "control",
            ComparisonLabel::Neither => "neither",
        })
    }
}

/// Default slack between human and embedding similarity tolerance.
pub const DEFAULT_EPSILON_SLACK: f64 = 0.03;

/// Maps a similarity difference (test minus control) to a categorical label.
pub fn diff_to_label(diff: f64, epsilon: f64) -> ComparisonLabel {
    if diff > epsilon {
        ComparisonLabel::Test
    } else if diff < -epsilon {
        ComparisonLabel::Control
    } else {
        ComparisonLabel::Neither
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// df = 2: F(t) = 1/2 + t / (2 sqrt(t^2 + 2)).
    fn sf_df2(t: f64) -> f64 {
        0.5 - t / (2.0 * libm::sqrt(t * t + 2.0))
    }

    /// df = 1 (Cauchy): F(t) = 1/2 + atan(t) / pi.
    fn sf_df1(t: f64) -> f64 {
        0.5 - libm::atan(t) / core::f64::consts::PI
    }

    #[test]
    fn student_t_matches_closed_forms() {
        let mut t = -30.0;
        while t <= 30.0 {
            assert!((student_t_sf(t, 1.0) - sf_df1(t)).abs() < 1e-8, "df1 t={t}");
            assert!((student_t_sf(t, 2.0) - sf_df2(t)).abs() < 1e-8, "df2 t={t}");
            t += 0.37;
        }
        assert_eq!(student_t_sf(0.0, 7.0), 0.5);
    }

    #[test]
    fn student_t_approaches_normal() {
        for &t in &[-3.0, -1.0, 0.5, 1.96, 3.0, 4.5] {
            let normal = 0.5 * libm::erfc(t / core::f64::consts::SQRT_2);
            assert!((student_t_sf(t, 1e4) - normal).abs() < 1e-4, "t={t}");
        }
    }

    #[test]
    fn student_t_tiny_tails_stay_positive() {
        let p = student_t_sf(30.0, 200.0);
        assert!((p / 2.8620806044139203e-76 - 1.0).abs() < 1e-6, "{p}");
        assert_eq!(student_t_sf(f64::INFINITY, 3.0), 0.0);
        assert_eq!(student_t_sf(f64::NEG_INFINITY, 3.0), 1.0);
    }

    #[test]
    fn incomplete_beta_symmetry_and_known_value() {
        // I_x(1, 1) = x; I_x(a, b) = 1 - I_{1-x}(b, a)
        assert!((regularized_incomplete_beta(0.3, 1.0, 1.0) - 0.3).abs() < 1e-14);
        let v = regularized_incomplete_beta(0.4, 2.5, 3.5);
        assert!((v - (1.0 - regularized_incomplete_beta(0.6, 3.5, 2.5))).abs() < 1e-13);
        // I_x(2, 3) = 6x^2 - 8x^3 + 3x^4
        let x: f64 = 0.5;
        assert!(
            (regularized_incomplete_beta(x, 2.0, 3.0)
                - (6.0 * x * x - 8.0 * x * x * x + 3.0 * x.powi(4)))
            .abs()
                < 1e-14
        );
    }

    #[test]
    fn one_sample_fixture() {
        let r = t_test_one_sample_greater(&[60.0, 70.0, 80.0], 50.0).unwrap();
        assert!((r.t_statistic - 3.4641).abs() < 1e-3);
        assert_eq!(r.degrees_of_freedom, 2);
        assert!((r.p_value - sf_df2(r.t_statistic)).abs() < 1e-10);
        assert!((r.p_value - 0.0371).abs() < 1e-3);
    }

    #[test]
    fn one_sample_errors_and_direction() {
        assert_eq!(
            t_test_one_sample_greater(&[50.0, 50.0, 50.0], 50.0),
            Err(StatsError::ZeroVariance)
        );
        assert_eq!(
            t_test_one_sample_greater(&[1.0], 0.0),
            Err(StatsError::TooFew(1))
        );
        let r = t_test_one_sample_greater(&[40.0, 45.0, 42.0], 50.0).unwrap();
        assert!(r.t_statistic < 0.0 && r.p_value > 0.5);
    }

    #[test]
    fn paired_reduces_to_one_sample() {
        assert_eq!(
            t_test_paired_greater(&[60.0, 70.0, 80.0], &[50.0, 60.0, 70.0]),
            Err(StatsError::ZeroVariance)
        );
        assert_eq!(
            t_test_paired_greater(&[1.0, 2.0], &[1.0, 2.0]),
            Err(StatsError::ZeroVariance)
        );
        assert_eq!(
            t_test_paired_greater(&[1.0, 2.0], &[1.0]),
            Err(StatsError::LengthMismatch(2, 1))
        );
        let b = [50.0, 61.0, 55.0, 70.0, 64.0, 58.0];
        let jitter = [0.3, -0.2, 0.1, -0.4, 0.25, -0.05];
        let a: Vec<f64> = b.iter().zip(&jitter).map(|(x, j)| x + 10.0 + j).collect();
        let paired = t_test_paired_greater(&a, &b).unwrap();
        let diffs: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        assert_eq!(paired, t_test_one_sample_greater(&diffs, 0.0).unwrap());
        assert!(paired.p_value < 0.05);
    }

    #[test]
    fn p_value_decreases_with_t() {
        for df in [1.0, 2.0, 5.0, 30.0, 1000.0] {
            let mut prev = 1.0;
            let mut t = -10.0;
            while t <= 10.0 {
                let p = student_t_sf(t, df);
                assert!(p <= prev, "df={df} t={t}");
                prev = p;
                t += 0.25;
            }
        }
    }

    #[test]
    fn tau_extremes() {
        let x = [3.0, 1.0, 4.0, 1.5, 9.0, 2.6];
        assert!((kendall_tau(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        let rev: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((kendall_tau(&x, &rev).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(
            kendall_tau(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(StatsError::AllTied)
        );
        assert_eq!(kendall_tau(&[1.0], &[1.0]), Err(StatsError::TooFew(1)));
    }

    #[test]
    fn tau_b_with_ties_matches_reference() {
        // scipy.stats.kendalltau([1,2,2,3,3,3], [1,3,2,2,3,3]) -> 0.5454545454545455
        let t = kendall_tau(
            &[1.0, 2.0, 2.0, 3.0, 3.0, 3.0],
            &[1.0, 3.0, 2.0, 2.0, 3.0, 3.0],
        )
        .unwrap();
        assert!((t - 0.5454545454545455).abs() < 1e-12, "{t}");
    }

    #[test]
    fn labels() {
        assert_eq!(diff_to_label(0.05, 0.03), ComparisonLabel::Test);
        assert_eq!(diff_to_label(-0.05, 0.03), ComparisonLabel::Control);
        assert_eq!(diff_to_label(0.01, 0.03), ComparisonLabel::Neither);
        assert_eq!(diff_to_label(0.03, 0.03), ComparisonLabel::Neither);
        for d in [-0.5, -0.02, 0.0, 0.031, 0.7] {
            assert_eq!(diff_to_label(-d, 0.03), diff_to_label(d, 0.03).swapped());
        }
        assert_eq!(ComparisonLabel::Control.as_real(), -1.0);
    }
}
