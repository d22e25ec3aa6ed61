//! Empirical check of the privacy guarantee: run the same query against
//! two neighbouring datasets many times and compare the output histograms.

use std::collections::BTreeMap;

use psfe_core::dataset::fixtures::table1_extended;
use psfe_core::dataset::PlainDataset;
use psfe_core::wire::FunctionDescriptor;
use psfe_node::{LocalDeployment, LocalOptions, MaPolicy, QueryOutcome};
use serde::Serialize;

use crate::stats::rounded_laplace_pmf;
use crate::HarnessError;

/// Multiplicative slack on `e^ε` for sampling error.
pub const SLACK: f64 = 1.15;
/// Bins with fewer expected hits on either side are not compared.
pub const MIN_EXPECTED_HITS: f64 = 500.0;

/// Row index of the patient left out of the neighbour.
pub const DROPPED_ROW: usize = 2;

/// The count query: `Count` is 1 on every row, with range `[0, 1]`.
pub const VALUE: &str = "flu";
pub const VARIABLE: &str = "Count";

#[derive(Clone, Debug, Serialize)]
pub struct Bin {
    pub output: i64,
    pub hits: u64,
    pub neighbour_hits: u64,
    pub expected: f64,
    pub neighbour_expected: f64,
    /// Larger count over smaller; infinite if one side is empty.
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RatioReport {
    pub epsilon: f64,
    pub trials: usize,
    pub sensitivity: f64,
    pub bound: f64,
    /// Bins with enough expected hits on both sides.
    pub bins: Vec<Bin>,
    pub max_ratio: Option<f64>,
    pub passed: bool,
}

/// Table 1 with a count column, and the same without one flu patient.
pub fn neighbouring_pair() -> (PlainDataset, PlainDataset) {
    let full = table1_extended();
    let neighbour = full.subset(|i, _| i != DROPPED_ROW);
    (full, neighbour)
}

/// Runs `trials` reads of `value`/`variable` against each dataset and
/// compares the histograms.
pub fn ratio_experiment(
    d: &PlainDataset,
    d_prime: &PlainDataset,
    value: &str,
    variable: &str,
    epsilon: f64,
    trials: usize,
    seed: u64,
) -> Result<RatioReport, HarnessError> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(HarnessError::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    let (h, truth, sensitivity) = histogram(d, value, variable, epsilon, trials, seed)?;
    let (h_prime, truth_prime, _) = histogram(d_prime, value, variable, epsilon, trials, seed ^ 0x5eed)?;
    let b = sensitivity / epsilon;
    let expected = |output: i64, truth: i64| trials as f64 * rounded_laplace_pmf(b, output - truth);

    let lo = truth.min(truth_prime) - (40.0 * b).ceil() as i64;
    let hi = truth.max(truth_prime) + (40.0 * b).ceil() as i64;
    let bins: Vec<Bin> = (lo..=hi)
        .filter_map(|output| {
            let (e, e_prime) = (expected(output, truth), expected(output, truth_prime));
            if e.min(e_prime) < MIN_EXPECTED_HITS {
                return None;
            }
            let (a, b) = (h.get(&output).copied().unwrap_or(0), h_prime.get(&output).copied().unwrap_or(0));
            let ratio = if a.min(b) == 0 { f64::INFINITY } else { a.max(b) as f64 / a.min(b) as f64 };
            Some(Bin { output, hits: a, neighbour_hits: b, expected: e, neighbour_expected: e_prime, ratio })
        })
        .collect();
    let bound = epsilon.exp() * SLACK;
    let max_ratio = bins.iter().map(|b| b.ratio).reduce(f64::max);
    Ok(RatioReport {
        epsilon,
        trials,
        sensitivity,
        bound,
        passed: max_ratio.is_none_or(|r| r <= bound),
        bins,
        max_ratio,
    })
}

/// The count-of-flu-rows experiment on [`neighbouring_pair`].
pub fn run_dp_ratio_experiment(epsilon: f64, trials: usize, seed: u64) -> Result<RatioReport, HarnessError> {
    let (d, d_prime) = neighbouring_pair();
    ratio_experiment(&d, &d_prime, VALUE, VARIABLE, epsilon, trials, seed)
}

/// Output histogram, true sum and sensitivity.
fn histogram(
    ds: &PlainDataset,
    value: &str,
    variable: &str,
    epsilon: f64,
    trials: usize,
    seed: u64,
) -> Result<(BTreeMap<i64, u64>, i64, f64), HarnessError> {
    let local = LocalDeployment::new(LocalOptions {
        policy: MaPolicy { epsilon, seed: Some(seed), ..MaPolicy::default() },
        seed,
        ..LocalOptions::default()
    });
    let report = local.setup(ds)?;
    if !report.is_complete() {
        return Err(HarnessError::Deployment(report.to_line()));
    }
    let (truth, _) = ds
        .plaintext_sum(value, variable)
        .ok_or_else(|| HarnessError::InvalidArgument(format!("no variable {variable:?}")))?;
    let mut hist = BTreeMap::new();
    let mut sensitivity = f64::NAN;
    for _ in 0..trials {
        match local.query(value, variable, FunctionDescriptor::Sum)? {
            QueryOutcome::Answer(a) => {
                sensitivity = a.sensitivity;
                *hist.entry(a.sum).or_default() += 1;
            }
            other => return Err(HarnessError::Deployment(format!("read failed: {other:?}"))),
        }
    }
    Ok((hist, truth, sensitivity))
}
