//! Descriptive statistics shared across modules, computed in `f64`.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Unbiased sample variance (denominator `n − 1`).
pub fn sample_variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return f64::NAN;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

/// Pearson correlation; `0` when either vector has zero variance.
pub fn pearson(a: ArrayView1<f32>, b: ArrayView1<f32>) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().map(|&v| v as f64).sum::<f64>() / n;
    let mb = b.iter().map(|&v| v as f64).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b.iter()) {
        let (dx, dy) = (x as f64 - ma, y as f64 - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return 0.0;
    }
    (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
}

/// Columns centred and scaled to unit norm; zero-variance columns become
/// all-zero so their correlation with anything is `0`.
pub fn standardize_columns(m: ArrayView2<f32>) -> Array2<f64> {
    let mut out = m.mapv(|v| v as f64);
    for mut col in out.axis_iter_mut(Axis(1)) {
        let mu = col.mean().unwrap_or(0.0);
        col.mapv_inplace(|v| v - mu);
        let norm = col.dot(&col).sqrt();
        if norm > 0.0 {
            col.mapv_inplace(|v| v / norm);
        } else {
            col.fill(0.0);
        }
    }
    out
}

/// Pearson correlations between every column of `a` and every column of `b`
/// (`a.ncols() × b.ncols()`).
pub fn correlation_matrix(a: ArrayView2<f32>, b: ArrayView2<f32>) -> Array2<f64> {
    let sa = standardize_columns(a);
    let sb = standardize_columns(b);
    sa.t().dot(&sb).mapv(|v| v.clamp(-1.0, 1.0))
}

/// Percentile `q ∈ [0, 100]` of sorted data with linear interpolation
/// between closest ranks.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty data");
    let pos = (q / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    percentile_sorted(&v, q)
}

/// `ln(n!) − ((n + ½) ln n − n + ½ ln 2π)`, the error of Stirling's
/// approximation.
fn stirling_error(n: u64) -> f64 {
    const SMALL: [f64; 16] = [
        0.0,
        0.08106146679532726,
        0.0413406959554093,
        0.02767792568499834,
        0.020790672103765093,
        0.016644691189821193,
        0.013876128823070748,
        0.01189670994589177,
        0.010411265261972096,
        0.009255462182712733,
        0.00833056343336287,
        0.007573675487951841,
        0.00694284010720953,
        0.006408994188004207,
        0.0059513701127588475,
        0.005554733551962801,
    ];
    if n <= 15 {
        return SMALL[n as usize];
    }
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    let nf = n as f64;
    let nn = nf * nf;
    if n > 500 {
        (S0 - S1 / nn) / nf
    } else if n > 80 {
        (S0 - (S1 - S2 / nn) / nn) / nf
    } else if n > 35 {
        (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / nf
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / nf
    }
}

/// Deviance term `x ln(x/m) + m − x`, by series when `x` is close to `m`.
fn deviance(x: f64, m: f64) -> f64 {
    if (x - m).abs() < 0.1 * (x + m) {
        let v = (x - m) / (x + m);
        let v2 = v * v;
        let mut s = (x - m) * v;
        let mut ej = 2.0 * x * v;
        for j in 1.. {
            ej *= v2;
            let next = s + ej / (2 * j + 1) as f64;
            if next == s {
                break;
            }
            s = next;
        }
        s
    } else {
        x * (x / m).ln() + m - x
    }
}

/// `P[Bin(n, p) = x]` by the saddle-point expansion, accurate to a few
/// ulps without cancellation for any `n`.
pub fn binomial_pmf(x: u64, n: u64, p: f64) -> f64 {
    let q = 1.0 - p;
    if x > n {
        return 0.0;
    }
    if p <= 0.0 {
        return if x == 0 { 1.0 } else { 0.0 };
    }
    if q <= 0.0 {
        return if x == n { 1.0 } else { 0.0 };
    }
    let nf = n as f64;
    if x == 0 {
        return if p < 0.1 { (-deviance(nf, nf * q) - nf * p).exp() } else { (nf * (-p).ln_1p()).exp() };
    }
    if x == n {
        return if q < 0.1 { (-deviance(nf, nf * p) - nf * q).exp() } else { (nf * p.ln()).exp() };
    }
    let xf = x as f64;
    let lc = stirling_error(n) - stirling_error(x) - stirling_error(n - x) - deviance(xf, nf * p) - deviance(nf - xf, nf * q);
    let lf = std::f64::consts::TAU.ln() + xf.ln() + (-xf / nf).ln_1p();
    (lc - 0.5 * lf).exp()
}

/// `P[Bin(n, p) ≥ k]` as a sum of saddle-point masses. Past the mode the
/// masses decrease, so summation stops once they no longer change the sum.
pub fn binomial_upper_tail(k: u64, n: u64, p: f64) -> f64 {
    if k == 0 || p >= 1.0 {
        return 1.0;
    }
    if k > n || p <= 0.0 {
        return 0.0;
    }
    let mode = ((n + 1) as f64 * p).floor() as u64;
    let mut sum = 0.0;
    for i in k..=n {
        let term = binomial_pmf(i, n, p);
        if i > mode && term <= sum * f64::EPSILON * 1e-3 {
            break;
        }
        sum += term;
    }
    sum.min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};
    use proptest::prelude::*;

    #[test]
    fn percentile_interpolates_linearly() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 100.0), 4.0);
        assert!((percentile(&v, 50.0) - 2.5).abs() < 1e-15);
        assert!((percentile(&[10.0, 0.0], 25.0) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn pearson_cases() {
        let a = array![1.0f32, 2.0, 3.0];
        assert!((pearson(a.view(), a.view()) - 1.0).abs() < 1e-12);
        let neg = array![3.0f32, 2.0, 1.0];
        assert!((pearson(a.view(), neg.view()) + 1.0).abs() < 1e-12);
        let flat = Array1::<f32>::ones(3);
        assert_eq!(pearson(a.view(), flat.view()), 0.0);
    }

    #[test]
    fn sample_variance_uses_n_minus_one() {
        assert!((sample_variance(&[1.0, 2.0, 3.0, 4.0]) - 5.0 / 3.0).abs() < 1e-15);
    }

    fn pmf_sum_oracle(k: u64, n: u64, p: f64) -> f64 {
        let mut choose = 1.0f64;
        let mut total = 0.0;
        for i in 0..=n {
            if i >= k {
                total += choose * p.powi(i as i32) * (1.0 - p).powi((n - i) as i32);
            }
            choose *= (n - i) as f64 / (i + 1) as f64;
        }
        total
    }

    #[test]
    fn pmf_matches_exact_integer_binomials() {
        for n in [1u64, 2, 7, 16, 40, 60] {
            let mut choose: u128 = 1;
            for x in 0..=n {
                let p = 0.3f64;
                let exact = choose as f64 * p.powi(x as i32) * (1.0 - p).powi((n - x) as i32);
                let got = binomial_pmf(x, n, p);
                assert!((got - exact).abs() <= 1e-13 * exact, "n {n} x {x}: {got} vs {exact}");
                choose = choose * (n - x) as u128 / (x + 1) as u128;
            }
        }
        assert_eq!(binomial_pmf(3, 2, 0.5), 0.0);
        assert_eq!(binomial_pmf(0, 5, 0.0), 1.0);
        assert_eq!(binomial_pmf(5, 5, 1.0), 1.0);
    }

    #[test]
    fn stirling_error_matches_high_precision_values() {
        let cases = [
            (1, 0.08106146679532726),
            (15, 0.005554733551962801),
            (16, 0.0052076559196096404),
            (35, 0.002380887608234112),
            (36, 0.002314755290514684),
            (80, 0.0010416612415616192),
            (81, 0.0010288013577107774),
            (500, 0.00016666664444446984),
            (501, 0.0001663339765799327),
            (5000, 1.6666666644444446e-05),
        ];
        for (n, v) in cases {
            assert!((stirling_error(n) - v).abs() < 1e-15, "n {n}");
        }
    }

    #[test]
    fn binomial_tail_cases() {
        assert_eq!(binomial_upper_tail(0, 10, 0.3), 1.0);
        assert!((binomial_upper_tail(5, 5, 0.01) - 1e-10).abs() < 1e-22);
        assert!((binomial_upper_tail(12, 50, 0.1) - pmf_sum_oracle(12, 50, 0.1)).abs() < 1e-12);
        assert_eq!(binomial_upper_tail(11, 10, 0.5), 0.0);
    }

    proptest! {
        #[test]
        fn binomial_tail_matches_pmf_sum(n in 1u64..300, kf in 0.0f64..1.0, p in 0.001f64..0.999) {
            let k = (kf * (n + 1) as f64) as u64;
            let got = binomial_upper_tail(k, n, p);
            prop_assert!((got - pmf_sum_oracle(k, n, p)).abs() < 1e-12);
        }

        #[test]
        fn correlation_matrix_matches_pairwise(seed in 0u64..200) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a = Array2::from_shape_simple_fn((12, 3), || rng.random_range(-1.0f32..1.0));
            let b = Array2::from_shape_simple_fn((12, 2), || rng.random_range(-1.0f32..1.0));
            let c = correlation_matrix(a.view(), b.view());
            for i in 0..3 {
                for j in 0..2 {
                    prop_assert!((c[[i, j]] - pearson(a.column(i), b.column(j))).abs() < 1e-10);
                }
            }
        }
    }
}
