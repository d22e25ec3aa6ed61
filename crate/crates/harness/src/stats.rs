//! Sample moments and the rounded Laplace distribution.

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

pub fn stdev(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

/// `P(round(X) = k)` for `X ~ Laplace(0, b)`.
pub fn rounded_laplace_pmf(b: f64, k: i64) -> f64 {
    if k == 0 {
        return 1.0 - (-0.5 / b).exp();
    }
    let k = k.unsigned_abs() as f64;
    0.5 * ((-(k - 0.5) / b).exp() - (-(k + 0.5) / b).exp())
}

/// Variance of `round(X)` for `X ~ Laplace(0, b)`, to first order in the
/// rounding error.
pub fn rounded_laplace_variance(b: f64) -> f64 {
    2.0 * b * b + 1.0 / 12.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pmf_sums_to_one_and_is_symmetric() {
        for b in [0.1, 1.0, 2.0, 50.0] {
            let total: f64 = (-20_000..=20_000).map(|k| rounded_laplace_pmf(b, k)).sum();
            assert!((total - 1.0).abs() < 1e-9, "b={b}: {total}");
            assert_eq!(rounded_laplace_pmf(b, 3), rounded_laplace_pmf(b, -3));
        }
    }

    #[test]
    fn neighbouring_tail_ratio_is_e_to_one_over_b() {
        let b = 2.0;
        let r = rounded_laplace_pmf(b, 4) / rounded_laplace_pmf(b, 5);
        assert!((r - (0.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn moments() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&xs), 2.5);
        assert!((variance(&xs) - 5.0 / 3.0).abs() < 1e-12);
    }
}
