//! Laplace noise for functional keys.
//!
//! The master authority perturbs every functional key it issues with an
//! integer draw from `Lap(Δq/ε)` rounded to the nearest integer. Decryption
//! subtracts the key, so the analyst observes `Σx − e`; the Laplace law is
//! symmetric, so that is distributed exactly like `Σx + e`.

use rand::Rng;
use thiserror::Error;

use crate::mife::{FunctionalKey, GroupElement};

/// Draws at or beyond this magnitude are discarded and resampled.
pub const NOISE_BOUND: i64 = 1 << 48;

#[derive(Debug, Error, PartialEq)]
pub enum NoiseError {
    #[error("epsilon must be a positive finite number, got {0}")]
    InvalidEpsilon(f64),
    #[error("sensitivity must be a positive finite number, got {0}")]
    InvalidSensitivity(f64),
    #[error("laplace scale must be a positive finite number, got {0}")]
    InvalidScale(f64),
}

/// Privacy factor ε and query sensitivity Δq (in plaintext units).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrivacyParams {
    epsilon: f64,
    sensitivity: f64,
}

impl PrivacyParams {
    pub fn new(epsilon: f64, sensitivity: f64) -> Result<Self, NoiseError> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(NoiseError::InvalidEpsilon(epsilon));
        }
        if !(sensitivity.is_finite() && sensitivity > 0.0) {
            return Err(NoiseError::InvalidSensitivity(sensitivity));
        }
        Ok(Self { epsilon, sensitivity })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn sensitivity(&self) -> f64 {
        self.sensitivity
    }

    /// Laplace scale `b = Δq / ε`.
    pub fn scale(&self) -> f64 {
        self.sensitivity / self.epsilon
    }
}

/// A rounded Laplace draw.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NoiseSample(i64);

impl NoiseSample {
    pub const ZERO: Self = Self(0);

    /// Fixed sample, for deterministic runs. Panics outside `±NOISE_BOUND`.
    pub fn fixed(value: i64) -> Self {
        assert!(value.abs() < NOISE_BOUND, "noise sample out of range");
        Self(value)
    }

    pub fn value(self) -> i64 {
        self.0
    }
}

/// Inverse CDF of `Lap(0, b)` at `u ∈ (−1/2, 1/2)`.
pub fn laplace_from_uniform(scale: f64, u: f64) -> f64 {
    if u == 0.0 {
        return 0.0;
    }
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

pub fn sample_laplace<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> Result<f64, NoiseError> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(NoiseError::InvalidScale(scale));
    }
    loop {
        // gen::<f64>() is uniform on [0, 1); −1/2 itself maps to an infinite draw.
        let u = rng.gen::<f64>() - 0.5;
        if u > -0.5 {
            return Ok(laplace_from_uniform(scale, u));
        }
    }
}

/// `round(Lap(Δq/ε))`, ties away from zero, resampled if `|e| ≥ 2^48`.
pub fn sample_noise<R: Rng + ?Sized>(params: &PrivacyParams, rng: &mut R) -> NoiseSample {
    let scale = params.scale();
    loop {
        let draw = sample_laplace(scale, rng).expect("validated params give a valid scale").round();
        if draw.abs() < NOISE_BOUND as f64 {
            return NoiseSample(draw as i64);
        }
    }
}

/// `sk' = sk + e (mod q)`.
pub fn add_noise(key: &FunctionalKey, noise: NoiseSample) -> FunctionalKey {
    key.shifted(GroupElement::from_signed(noise.value()))
}

pub fn apply_noise<R: Rng + ?Sized>(
    key: &FunctionalKey,
    params: &PrivacyParams,
    rng: &mut R,
) -> (FunctionalKey, NoiseSample) {
    let noise = sample_noise(params, rng);
    (add_noise(key, noise), noise)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::mife::{decrypt, encrypt, keygen, setup};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn moments(xs: impl Iterator<Item = f64>) -> (f64, f64) {
        let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
        for x in xs {
            n += 1.0;
            let d = x - mean;
            mean += d / n;
            m2 += d * (x - mean);
        }
        (mean, m2 / (n - 1.0))
    }

    /// Variance of round(Lap(b)) by summing k² over the exact bin masses
    /// P(k) = F(k + 1/2) − F(k − 1/2).
    fn rounded_laplace_variance(b: f64) -> f64 {
        let cdf = |x: f64| if x < 0.0 { 0.5 * (x / b).exp() } else { 1.0 - 0.5 * (-x / b).exp() };
        let limit = (60.0 * b).ceil() as i64 + 10;
        (-limit..=limit)
            .map(|k| {
                let k = k as f64;
                k * k * (cdf(k + 0.5) - cdf(k - 0.5))
            })
            .sum()
    }

    #[test]
    fn params_validation() {
        assert!(PrivacyParams::new(1.0, 1.0).is_ok());
        assert_eq!(PrivacyParams::new(0.0, 1.0), Err(NoiseError::InvalidEpsilon(0.0)));
        assert_eq!(PrivacyParams::new(1.0, -2.0), Err(NoiseError::InvalidSensitivity(-2.0)));
        assert!(PrivacyParams::new(f64::NAN, 1.0).is_err());
        assert_eq!(PrivacyParams::new(0.1, 120.0).unwrap().scale(), 1200.0);
    }

    #[test]
    fn sample_laplace_rejects_bad_scale() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        assert!(sample_laplace(0.0, &mut rng).is_err());
        assert!(sample_laplace(-1.0, &mut rng).is_err());
    }

    #[test]
    fn median_maps_to_zero() {
        assert_eq!(laplace_from_uniform(3.0, 0.0), 0.0);
        assert!(laplace_from_uniform(1.0, 0.25) > 0.0);
        assert!((laplace_from_uniform(1.0, 0.25) - 2f64.ln()).abs() < 1e-12);
        assert!(laplace_from_uniform(1.0, -0.25) < 0.0);
    }

    #[test]
    fn laplace_mean_and_variance() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let (mean, _) = moments((0..1_000_000).map(|_| sample_laplace(1.0, &mut rng).unwrap()));
        assert!(mean.abs() < 0.01, "mean {mean}");

        let (_, var) = moments((0..1_000_000).map(|_| sample_laplace(2.0, &mut rng).unwrap()));
        assert!((var - 8.0).abs() < 0.05 * 8.0, "variance {var}");
    }

    #[test]
    fn rounded_noise_variance_matches_quadrature() {
        let oracle = rounded_laplace_variance(1.0);
        // close to the Sheppard-corrected 2b² + 1/12
        assert!((oracle - (2.0 + 1.0 / 12.0)).abs() < 0.02, "oracle {oracle}");
        let params = PrivacyParams::new(1.0, 1.0).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let (_, var) = moments((0..1_000_000).map(|_| sample_noise(&params, &mut rng).value() as f64));
        assert!((var - oracle).abs() < 0.05 * oracle, "variance {var} vs {oracle}");
    }

    #[test]
    fn tiny_scale_concentrates_at_zero() {
        let params = PrivacyParams::new(1e6, 1.0).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let zeros = (0..100_000).filter(|_| sample_noise(&params, &mut rng).value() == 0).count();
        assert!(zeros as f64 / 100_000.0 > 0.999);
    }

    #[test]
    fn large_scale_tail_bound() {
        let params = PrivacyParams::new(0.1, 120.0).unwrap();
        let b = params.scale();
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let n = 100_000;
        let inside = (0..n)
            .filter(|_| (sample_noise(&params, &mut rng).value() as f64).abs() <= 10.0 * b)
            .count();
        assert!(inside as f64 / n as f64 >= 1.0 - (-10f64).exp());
    }

    #[test]
    fn add_noise_is_additive_and_wraps() {
        let keys = crate::mife::KeyVector::from_elements(vec![GroupElement::new(12)]).unwrap();
        let sk = keygen(&keys, &BTreeSet::from([0])).unwrap();
        assert_eq!(add_noise(&sk, NoiseSample::fixed(-3)).body(), GroupElement::new(9));

        let zero = crate::mife::KeyVector::from_elements(vec![GroupElement::ZERO]).unwrap();
        let sk0 = keygen(&zero, &BTreeSet::from([0])).unwrap();
        assert_eq!(add_noise(&sk0, NoiseSample::fixed(-5)).body(), GroupElement::new(u64::MAX - 4));
    }

    #[test]
    fn noisy_decryption_differs_by_minus_e() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let keys = setup(4, &mut rng).unwrap();
        let cover: BTreeSet<usize> = (0..4).collect();
        let cts: Vec<_> = [58i64, 41, 27, 65]
            .iter()
            .enumerate()
            .map(|(i, &x)| encrypt(&keys, i, GroupElement::from_signed(x)).unwrap())
            .collect();
        let clean = keygen(&keys, &cover).unwrap();
        let clean_result = decrypt(&clean, &cts).unwrap();
        let params = PrivacyParams::new(0.5, 120.0).unwrap();
        for _ in 0..1000 {
            let (noisy, e) = apply_noise(&clean, &params, &mut rng);
            assert_eq!(decrypt(&noisy, &cts).unwrap(), clean_result - e.value());
        }
    }

    /// Kolmogorov-Smirnov distance between the decrypted error and the
    /// rounded Laplace CDF, F(k) = P(X < k + 1/2), over 10^5 noisy keys.
    #[test]
    fn noisy_decryption_error_is_rounded_laplace() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let keys = setup(3, &mut rng).unwrap();
        let cover: BTreeSet<usize> = (0..3).collect();
        let xs = [75i64, 60, 58];
        let cts: Vec<_> =
            xs.iter().enumerate().map(|(i, &x)| encrypt(&keys, i, GroupElement::from_signed(x)).unwrap()).collect();
        let clean = keygen(&keys, &cover).unwrap();
        let params = PrivacyParams::new(1.0, 120.0).unwrap();
        let b = params.scale();
        let n = 100_000;
        let mut errors: Vec<i64> = (0..n)
            .map(|_| decrypt(&apply_noise(&clean, &params, &mut rng).0, &cts).unwrap() - xs.iter().sum::<i64>())
            .collect();
        errors.sort_unstable();
        let cdf = |x: f64| if x < 0.0 { 0.5 * (x / b).exp() } else { 1.0 - 0.5 * (-x / b).exp() };
        let mut distance = 0.0f64;
        let mut i = 0;
        while i < n {
            let k = errors[i];
            let j = errors.partition_point(|&e| e <= k);
            let below = i as f64 / n as f64;
            let upto = j as f64 / n as f64;
            distance = distance.max((upto - cdf(k as f64 + 0.5)).abs()).max((below - cdf(k as f64 - 0.5)).abs());
            i = j;
        }
        // 1.63/√n is the 1% critical value; conservative for a discrete law.
        assert!(distance < 1.63 / (n as f64).sqrt(), "KS distance {distance}");
    }
}
