//! The differencing attack: the average age of all patients before and
//! after one patient joins gives that patient's age away, unless the
//! answers are noisy.

use psfe_core::dataset::fixtures::table1_extended;
use psfe_core::dataset::PlainDataset;
use psfe_core::wire::FunctionDescriptor;
use psfe_node::{Answer, LocalDeployment, LocalOptions, MaPolicy, NoiseMode};
use serde::Serialize;

use crate::stats;
use crate::HarnessError;

/// A term every row carries, so its average covers all patients.
pub const EVERYONE: &str = "central";
pub const VARIABLE: &str = "Age";
/// Row index of the patient who joins last.
pub const TARGET_ROW: usize = 3;

/// Noise-free recovery.
#[derive(Clone, Debug, Serialize)]
pub struct ExactRecovery {
    pub avg_before: f64,
    pub avg_after: f64,
    pub recovered: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DifferencingReport {
    pub epsilon: f64,
    pub sensitivity: f64,
    pub trials: usize,
    pub exact: ExactRecovery,
    /// Standard deviation of the single-shot estimate under noise.
    pub estimator_stdev: f64,
    /// `√(2·(2b² + 1/12))` with `b = Δq/ε`: the two noisy sums are independent.
    pub analytic_stdev: f64,
    /// Mean of the estimates over all trials and its standard error. With
    /// no budget cap, averaging many repetitions recovers the age anyway;
    /// an MA budget cap bounds how many repetitions an analyst gets.
    pub averaged_estimate: f64,
    pub averaged_standard_error: f64,
    #[serde(skip)]
    pub estimates: Vec<f64>,
    pub passed: bool,
}

/// The dataset before and after the target joins.
pub fn before_and_after() -> (PlainDataset, PlainDataset) {
    let after = table1_extended();
    (after.subset(|i, _| i != TARGET_ROW), after)
}

fn deploy(ds: &PlainDataset, noise: NoiseMode, epsilon: f64, seed: u64) -> Result<LocalDeployment, HarnessError> {
    let local = LocalDeployment::new(LocalOptions {
        policy: MaPolicy { epsilon, noise, seed: Some(seed), ..MaPolicy::default() },
        seed,
        ..LocalOptions::default()
    });
    let report = local.setup(ds)?;
    if !report.is_complete() {
        return Err(HarnessError::Deployment(report.to_line()));
    }
    Ok(local)
}

fn average(local: &LocalDeployment) -> Result<Answer, HarnessError> {
    let outcome = local.query(EVERYONE, VARIABLE, FunctionDescriptor::Avg)?;
    outcome.answer().cloned().ok_or_else(|| HarnessError::Deployment(format!("average query failed: {outcome:?}")))
}

/// `|after|·avg_after − |before|·avg_before`.
fn estimate(before: &Answer, after: &Answer) -> f64 {
    after.count as f64 * after.value - before.count as f64 * before.value
}

pub fn run_differencing_demo(epsilon: f64, trials: usize, seed: u64) -> Result<DifferencingReport, HarnessError> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(HarnessError::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    let (before, after) = before_and_after();

    let exact_before = average(&deploy(&before, NoiseMode::Fixed(0), epsilon, seed)?)?;
    let exact_after = average(&deploy(&after, NoiseMode::Fixed(0), epsilon, seed ^ 1)?)?;
    let exact = ExactRecovery {
        avg_before: exact_before.value,
        avg_after: exact_after.value,
        recovered: estimate(&exact_before, &exact_after),
    };

    let noisy_before = deploy(&before, NoiseMode::Laplace, epsilon, seed ^ 2)?;
    let noisy_after = deploy(&after, NoiseMode::Laplace, epsilon, seed ^ 3)?;
    let estimates = (0..trials)
        .map(|_| Ok(estimate(&average(&noisy_before)?, &average(&noisy_after)?)))
        .collect::<Result<Vec<_>, HarnessError>>()?;

    let sensitivity = exact_after.sensitivity;
    let analytic_stdev = (2.0 * stats::rounded_laplace_variance(sensitivity / epsilon)).sqrt();
    let (estimator_stdev, averaged_estimate) = if trials >= 2 {
        (stats::stdev(&estimates), stats::mean(&estimates))
    } else {
        (f64::NAN, estimates.first().copied().unwrap_or(f64::NAN))
    };
    let truth = plain_age(&before, &after);
    let passed = exact.recovered == truth
        && (trials < 2 || (estimator_stdev / analytic_stdev - 1.0).abs() <= 0.10);
    Ok(DifferencingReport {
        epsilon,
        sensitivity,
        trials,
        exact,
        estimator_stdev,
        analytic_stdev,
        averaged_estimate,
        averaged_standard_error: estimator_stdev / (trials as f64).sqrt(),
        estimates,
        passed,
    })
}

fn plain_age(before: &PlainDataset, after: &PlainDataset) -> f64 {
    let sum = |ds: &PlainDataset| ds.plaintext_sum(EVERYONE, VARIABLE).map_or(0, |(s, _)| s);
    (sum(after) - sum(before)) as f64
}
