//! Simulation designs with two thresholds on a standard normal regressor and
//! the Monte Carlo driver that summarizes repeated fits.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SurvivalDataset;
use crate::error::{Error, Result};
use crate::penalty::PenaltyKind;
use crate::selection::{tsmcd, TuningConfig};

/// 30% and 60% quantiles of the standard normal.
pub const TRUE_THRESHOLDS: [f64; 2] = [-0.5244, 0.2533];

/// `(beta_1, d_1, d_2)` shared by every two-threshold design.
pub const TRUE_THETA: [f64; 18] = [
    2.0, 1.0, 1.0, 1.0, 1.0, 1.0, //
    -1.0, 0.0, 0.0, -1.0, -1.0, -1.0, //
    0.0, -1.0, 1.0, 0.0, 0.0, 0.0,
];

/// Standard deviation of the model error (variance 0.5).
pub const ERROR_SD: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Standard deviation of the log censoring time (variance 16).
pub const CENSOR_SD: f64 = 4.0;

/// Censoring mean of the no-threshold design, placing its censoring rate near 40%.
pub const NULL_CENSOR_MEAN: f64 = 3.175;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExampleId {
    /// n = 150, censoring N(2, 16).
    Ex1,
    /// n = 300, censoring N(2, 16).
    Ex2,
    /// n = 300, censoring mean equal to the sum of the random regressors.
    Ex3,
    /// n = 300, no thresholds (all increments zero), censoring N(2, 16).
    Null,
}

impl fmt::Display for ExampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExampleId::Ex1 => "ex1",
            ExampleId::Ex2 => "ex2",
            ExampleId::Ex3 => "ex3",
            ExampleId::Null => "null",
        })
    }
}

impl FromStr for ExampleId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ex1" => Ok(ExampleId::Ex1),
            "ex2" => Ok(ExampleId::Ex2),
            "ex3" => Ok(ExampleId::Ex3),
            "null" => Ok(ExampleId::Null),
            other => Err(Error::InfeasibleConfig(format!("unknown example '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CensorSpec {
    Normal { mean: f64, sd: f64 },
    /// Normal with mean equal to the sum of the non-intercept regressors.
    CovariateMean { sd: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDesign {
    pub example: ExampleId,
    pub n: usize,
    /// Stacked `(beta_1, d_1, ..., d_s)`, six coefficients per subgroup.
    pub theta_true: Vec<f64>,
    pub thresholds_true: Vec<f64>,
    pub error_sd: f64,
    pub censor: CensorSpec,
    pub seed: u64,
}

pub const N_COVARIATES: usize = 6;

impl SimDesign {
    pub fn example(example: ExampleId, seed: u64) -> Self {
        let normal_censor = CensorSpec::Normal {
            mean: 2.0,
            sd: CENSOR_SD,
        };
        let (n, censor) = match example {
            ExampleId::Ex1 => (150, normal_censor),
            ExampleId::Ex2 => (300, normal_censor),
            ExampleId::Null => (
                300,
                CensorSpec::Normal {
                    mean: NULL_CENSOR_MEAN,
                    sd: CENSOR_SD,
                },
            ),
            ExampleId::Ex3 => (300, CensorSpec::CovariateMean { sd: CENSOR_SD }),
        };
        let (theta_true, thresholds_true) = match example {
            ExampleId::Null => (TRUE_THETA[..N_COVARIATES].to_vec(), Vec::new()),
            _ => (TRUE_THETA.to_vec(), TRUE_THRESHOLDS.to_vec()),
        };
        Self {
            example,
            n,
            theta_true,
            thresholds_true,
            error_sd: ERROR_SD,
            censor,
            seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn true_s(&self) -> usize {
        self.thresholds_true.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta_true.len() != N_COVARIATES * (self.thresholds_true.len() + 1) {
            return Err(Error::InfeasibleConfig(format!(
                "theta has {} entries for {} thresholds",
                self.theta_true.len(),
                self.thresholds_true.len()
            )));
        }
        if self.n == 0 || !(self.error_sd >= 0.0) {
            return Err(Error::InfeasibleConfig("n and error sd must be positive".into()));
        }
        Ok(())
    }
}

/// SplitMix64 finalizer, used to derive independent replication streams.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of replication `r` under base seed `seed`.
pub fn replication_seed(seed: u64, r: u64) -> u64 {
    seed ^ splitmix64(r)
}

fn draw<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Draws one dataset; the intercept is the first column and `z` is the second.
pub fn generate(design: &SimDesign) -> Result<SurvivalDataset> {
    design.validate()?;
    let n = design.n;
    let p = N_COVARIATES;
    let mut rng = ChaCha8Rng::seed_from_u64(design.seed);
    let error = Normal::new(0.0, design.error_sd)
        .map_err(|e| Error::InfeasibleConfig(e.to_string()))?;
    let betas = crate::refining::subgroup_coefficients(&design.theta_true, p);

    let mut x = DMatrix::zeros(n, p);
    let mut y = Vec::with_capacity(n);
    let mut delta = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    for i in 0..n {
        x[(i, 0)] = 1.0;
        for c in 1..p {
            x[(i, c)] = draw(&mut rng);
        }
        let zi = x[(i, 1)];
        let g = design.thresholds_true.partition_point(|&a| a < zi);
        let mean: f64 = (0..p).map(|c| x[(i, c)] * betas[g][c]).sum();
        let t = mean + error.sample(&mut rng);
        let c = match design.censor {
            CensorSpec::Normal { mean, sd } => mean + sd * draw(&mut rng),
            CensorSpec::CovariateMean { sd } => {
                let shift: f64 = (1..p).map(|c| x[(i, c)]).sum();
                shift + sd * draw(&mut rng)
            }
        };
        y.push(t.min(c));
        delta.push(t <= c);
        z.push(zi);
    }
    SurvivalDataset::new(y, delta, x, z)
}

/// One Monte Carlo replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: u64,
    pub seed: u64,
    pub censor_rate: f64,
    pub s_hat: Option<usize>,
    pub a_hat: Vec<f64>,
    pub theta_star: Vec<f64>,
    pub bic: Option<f64>,
    pub m_used: Option<usize>,
    pub lambda_used: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub design: SimDesign,
    pub penalty: PenaltyKind,
    pub reps: usize,
    /// Replications whose pipeline returned a fit.
    pub completed: usize,
    pub failures: usize,
    /// More than 10% of replications failed.
    pub flagged: bool,
    /// Counts of the estimated number of thresholds over completed replications.
    pub s_hat_frequency: BTreeMap<usize, usize>,
    /// Replications with the correct number of thresholds.
    pub n_correct: usize,
    /// Mean of `a_hat - a` per threshold over correct replications.
    pub threshold_bias: Vec<f64>,
    /// Mean squared error per threshold over correct replications (the
    /// column tabulated as "RMSE" in the threshold literature).
    #[serde(rename = "threshold_rmse")]
    pub threshold_mse: Vec<f64>,
    /// Fraction of correct replications estimating each coefficient as exactly zero.
    pub exact_zero_rate: Vec<f64>,
    pub censor_rate_mean: f64,
    pub records: Vec<ReplicationRecord>,
}

impl SimulationReport {
    pub fn frequency_of(&self, s: usize) -> f64 {
        if self.completed == 0 {
            return 0.0;
        }
        *self.s_hat_frequency.get(&s).unwrap_or(&0) as f64 / self.completed as f64
    }

    /// Replications with the correct number of thresholds.
    pub fn correct_records(&self) -> impl Iterator<Item = &ReplicationRecord> {
        let s = self.design.true_s();
        self.records.iter().filter(move |r| r.s_hat == Some(s))
    }
}

pub fn run_replication(design: &SimDesign, r: u64, cfg: &TuningConfig) -> Result<ReplicationRecord> {
    let seed = replication_seed(design.seed, r);
    let data = generate(&design.with_seed(seed))?;
    let censor_rate = data.censoring_rate();
    Ok(match tsmcd(&data, cfg) {
        Ok(fit) => ReplicationRecord {
            replication: r,
            seed,
            censor_rate,
            s_hat: Some(fit.s_hat),
            a_hat: fit.a_hat,
            theta_star: fit.theta_star,
            bic: Some(fit.bic),
            m_used: Some(fit.m_used),
            lambda_used: Some(fit.lambda_used),
            error: None,
        },
        Err(e) => ReplicationRecord {
            replication: r,
            seed,
            censor_rate,
            s_hat: None,
            a_hat: Vec::new(),
            theta_star: Vec::new(),
            bic: None,
            m_used: None,
            lambda_used: None,
            error: Some(e.to_string()),
        },
    })
}

/// Independent seeded replications of the full estimator.
pub fn run_monte_carlo(design: &SimDesign, reps: usize, cfg: &TuningConfig) -> Result<SimulationReport> {
    if reps == 0 {
        return Err(Error::InfeasibleConfig("reps must be >= 1".into()));
    }
    design.validate()?;
    cfg.validate()?;
    let records = (0..reps as u64)
        .into_par_iter()
        .map(|r| run_replication(design, r, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(design, cfg.penalty, records))
}

pub fn summarize(design: &SimDesign, penalty: PenaltyKind, records: Vec<ReplicationRecord>) -> SimulationReport {
    let reps = records.len();
    let failures = records.iter().filter(|r| r.s_hat.is_none()).count();
    let completed = reps - failures;
    let mut s_hat_frequency = BTreeMap::new();
    for s in records.iter().filter_map(|r| r.s_hat) {
        *s_hat_frequency.entry(s).or_insert(0) += 1;
    }
    let s = design.true_s();
    let correct: Vec<&ReplicationRecord> = records.iter().filter(|r| r.s_hat == Some(s)).collect();
    let n_correct = correct.len();
    let mut threshold_bias = vec![f64::NAN; s];
    let mut threshold_mse = vec![f64::NAN; s];
    if n_correct > 0 {
        for k in 0..s {
            let errs: Vec<f64> = correct
                .iter()
                .map(|r| r.a_hat[k] - design.thresholds_true[k])
                .collect();
            threshold_bias[k] = errs.iter().sum::<f64>() / n_correct as f64;
            threshold_mse[k] = errs.iter().map(|e| e * e).sum::<f64>() / n_correct as f64;
        }
    }
    let dim = design.theta_true.len();
    let exact_zero_rate = (0..dim)
        .map(|i| {
            if n_correct == 0 {
                return f64::NAN;
            }
            correct.iter().filter(|r| r.theta_star[i] == 0.0).count() as f64 / n_correct as f64
        })
        .collect();
    let censor_rate_mean = records.iter().map(|r| r.censor_rate).sum::<f64>() / reps.max(1) as f64;
    SimulationReport {
        design: design.clone(),
        penalty,
        reps,
        completed,
        failures,
        flagged: failures * 10 > reps,
        s_hat_frequency,
        n_correct,
        threshold_bias,
        threshold_mse,
        exact_zero_rate,
        censor_rate_mean,
        records,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic_per_seed() {
        let d = SimDesign::example(ExampleId::Ex2, 11);
        assert_eq!(generate(&d).unwrap(), generate(&d).unwrap());
        assert_ne!(generate(&d).unwrap(), generate(&d.with_seed(12)).unwrap());
    }

    #[test]
    fn designs_match_the_documented_settings() {
        let ex1 = SimDesign::example(ExampleId::Ex1, 0);
        assert_eq!(ex1.n, 150);
        let ex3 = SimDesign::example(ExampleId::Ex3, 0);
        assert_eq!(ex3.n, 300);
        assert!(matches!(ex3.censor, CensorSpec::CovariateMean { sd } if sd == 4.0));
        assert_eq!(ex3.theta_true, TRUE_THETA.to_vec());
        assert_eq!(SimDesign::example(ExampleId::Null, 0).true_s(), 0);
        assert!((ERROR_SD * ERROR_SD - 0.5).abs() < 1e-15);
        let data = generate(&ex1).unwrap();
        assert_eq!(data.n(), 150);
        assert_eq!(data.z(), data.x().column(1).as_slice());
    }

    #[test]
    fn replication_streams_differ() {
        assert_ne!(replication_seed(7, 0), replication_seed(7, 1));
        assert_eq!(replication_seed(7, 3), replication_seed(7, 3));
    }
}
