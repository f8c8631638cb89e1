//! Nonparametric bootstrap of the final coefficient fit at fixed thresholds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::SurvivalDataset;
use crate::error::{Error, Result};
use crate::penalty::PenaltySpec;
use crate::refining::{final_penalized_fit, subgroup_coefficients};
use crate::simulation::replication_seed;
use crate::splitting::SolverOptions;

/// Draws per resample before it is skipped.
pub const MAX_REDRAWS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSummary {
    pub estimate: f64,
    /// Sample standard deviation over the bootstrap fits.
    pub se: f64,
    /// Percentile interval at 2.5% and 97.5%.
    pub ci_low: f64,
    pub ci_high: f64,
    /// Two-sided normal-approximation p-value of `estimate / se`.
    pub wald_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub b_requested: usize,
    pub b_used: usize,
    pub skipped: usize,
    /// One entry per stacked coefficient `(beta_1, d_1, ..., d_s)`.
    pub theta: Vec<CoefficientSummary>,
    /// One row per subgroup, one entry per regressor.
    pub by_group: Vec<Vec<CoefficientSummary>>,
}

fn check_b(b: usize) -> Result<()> {
    if b < 2 {
        return Err(Error::InfeasibleConfig(format!(
            "bootstrap needs B >= 2, got {b}"
        )));
    }
    Ok(())
}

fn fit_rows(
    data: &SurvivalDataset,
    rows: &[usize],
    thresholds: &[f64],
    spec: &PenaltySpec,
    opts: SolverOptions,
) -> Result<Vec<f64>> {
    let sample = data.resample(rows)?;
    Ok(final_penalized_fit(&sample, thresholds, spec, opts)?.theta)
}

/// Bootstrap standard errors, percentile intervals and Wald p-values with
/// `b` resamples drawn from independent streams of `seed`.
pub fn bootstrap_se(
    data: &SurvivalDataset,
    thresholds: &[f64],
    spec: &PenaltySpec,
    opts: SolverOptions,
    b: usize,
    seed: u64,
) -> Result<BootstrapResult> {
    check_b(b)?;
    let n = data.n();
    let draws: Vec<Option<Vec<f64>>> = (0..b as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(replication_seed(seed, r));
            for _ in 0..MAX_REDRAWS {
                let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                if let Ok(theta) = fit_rows(data, &rows, thresholds, spec, opts) {
                    return Some(theta);
                }
            }
            None
        })
        .collect();
    summarize(data, thresholds, spec, opts, b, draws)
}

/// Same as [`bootstrap_se`] over caller-supplied resamples (row indices).
/// A resample whose fit fails is skipped.
pub fn bootstrap_from_resamples(
    data: &SurvivalDataset,
    thresholds: &[f64],
    spec: &PenaltySpec,
    opts: SolverOptions,
    resamples: &[Vec<usize>],
) -> Result<BootstrapResult> {
    check_b(resamples.len())?;
    let draws: Vec<Option<Vec<f64>>> = resamples
        .par_iter()
        .map(|rows| fit_rows(data, rows, thresholds, spec, opts).ok())
        .collect();
    summarize(data, thresholds, spec, opts, resamples.len(), draws)
}

fn summarize(
    data: &SurvivalDataset,
    thresholds: &[f64],
    spec: &PenaltySpec,
    opts: SolverOptions,
    b_requested: usize,
    draws: Vec<Option<Vec<f64>>>,
) -> Result<BootstrapResult> {
    let p = data.p();
    let point = final_penalized_fit(data, thresholds, spec, opts)?.theta;
    let fits: Vec<Vec<f64>> = draws.into_iter().flatten().collect();
    let skipped = b_requested - fits.len();
    if fits.len() < 2 {
        return Err(Error::InsufficientEvents(format!(
            "only {} of {b_requested} bootstrap resamples could be fitted",
            fits.len()
        )));
    }
    let column = |values: &[Vec<f64>], est: &[f64]| -> Vec<CoefficientSummary> {
        (0..est.len())
            .map(|c| {
                let col: Vec<f64> = values.iter().map(|v| v[c]).collect();
                summary(est[c], &col)
            })
            .collect()
    };
    let theta = column(&fits, &point);

    let group_point: Vec<f64> = subgroup_coefficients(&point, p).concat();
    let group_fits: Vec<Vec<f64>> = fits
        .iter()
        .map(|t| subgroup_coefficients(t, p).concat())
        .collect();
    let by_group = column(&group_fits, &group_point)
        .chunks(p)
        .map(|c| c.to_vec())
        .collect();

    Ok(BootstrapResult {
        b_requested,
        b_used: fits.len(),
        skipped,
        theta,
        by_group,
    })
}

fn summary(estimate: f64, values: &[f64]) -> CoefficientSummary {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    let se = var.sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    CoefficientSummary {
        estimate,
        se,
        ci_low: quantile(&sorted, 0.025),
        ci_high: quantile(&sorted, 0.975),
        wald_p: wald_p(estimate, se),
    }
}

/// Linear interpolation between order statistics (sample quantile type 7).
pub fn quantile(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `2 (1 - Phi(|estimate / se|))`; a zero `se` gives 0 for a nonzero estimate and 1 otherwise.
pub fn wald_p(estimate: f64, se: f64) -> f64 {
    if se == 0.0 {
        return if estimate == 0.0 { 1.0 } else { 0.0 };
    }
    let normal = Normal::standard();
    2.0 * normal.sf((estimate / se).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn quantile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 5.0);
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_abs_diff_eq!(quantile(&v, 0.125), 1.5, epsilon = 1e-15);
    }

    #[test]
    fn wald_reference_values() {
        assert_abs_diff_eq!(wald_p(1.959963984540054, 1.0), 0.05, epsilon = 1e-10);
        assert_eq!(wald_p(0.0, 1.0), 1.0);
        assert_eq!(wald_p(2.0, 0.0), 0.0);
        assert_eq!(wald_p(0.0, 0.0), 1.0);
    }

    #[test]
    fn rejects_single_resample() {
        let data = SurvivalDataset::from_indicators(
            vec![1.0, 2.0, 3.0],
            &[1, 1, 1],
            nalgebra::DMatrix::from_element(3, 1, 1.0),
            vec![0.0, 1.0, 2.0],
        )
        .unwrap();
        let spec = PenaltySpec::mcp(0.0, 3.0).unwrap();
        let err = bootstrap_se(&data, &[], &spec, SolverOptions::default(), 1, 0).unwrap_err();
        assert!(matches!(err, Error::InfeasibleConfig(_)));
    }
}
