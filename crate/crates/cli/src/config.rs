//! TOML configuration and the flag > file > default merge.

use std::path::Path;

use serde::Deserialize;
use tsmcd::{MRule, PenaltyKind, TuningConfig};

/// Either a grid size or explicit values.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum LambdaGrid {
    Size(usize),
    Values(Vec<f64>),
}

impl std::str::FromStr for LambdaGrid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if let Ok(size) = s.trim().parse::<usize>() {
            return Ok(LambdaGrid::Size(size));
        }
        parse_list(s).map(LambdaGrid::Values)
    }
}

/// Comma-separated numbers given as one flag value.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatList(pub Vec<f64>);

impl std::str::FromStr for FloatList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        parse_list(s).map(FloatList)
    }
}

pub fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| format!("'{}' is not a number", v.trim()))
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ConfigFile {
    pub penalty: Option<PenaltyKind>,
    pub gamma: Option<f64>,
    pub kappa_grid: Option<Vec<f64>>,
    pub lambda_grid: Option<LambdaGrid>,
    pub lambda_min_ratio: Option<f64>,
    pub final_lambda: Option<f64>,
    pub m_rule: Option<MRule>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub seed: Option<u64>,
    pub reps: Option<usize>,
    pub bootstrap_b: Option<usize>,
    pub z: Option<String>,
    pub intercept: Option<bool>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("config {}: {}", path.display(), e.message()))
    }

    /// Overlays `other` on `self`: every key set in `other` wins.
    pub fn overlay(self, other: ConfigFile) -> ConfigFile {
        ConfigFile {
            penalty: other.penalty.or(self.penalty),
            gamma: other.gamma.or(self.gamma),
            kappa_grid: other.kappa_grid.or(self.kappa_grid),
            lambda_grid: other.lambda_grid.or(self.lambda_grid),
            lambda_min_ratio: other.lambda_min_ratio.or(self.lambda_min_ratio),
            final_lambda: other.final_lambda.or(self.final_lambda),
            m_rule: other.m_rule.or(self.m_rule),
            tol: other.tol.or(self.tol),
            max_iter: other.max_iter.or(self.max_iter),
            seed: other.seed.or(self.seed),
            reps: other.reps.or(self.reps),
            bootstrap_b: other.bootstrap_b.or(self.bootstrap_b),
            z: other.z.or(self.z),
            intercept: other.intercept.or(self.intercept),
        }
    }

    pub fn tuning(&self) -> Result<TuningConfig, String> {
        let mut cfg = TuningConfig::default();
        if let Some(v) = self.penalty {
            cfg.penalty = v;
        }
        if let Some(v) = self.gamma {
            cfg.gamma = v;
        }
        if let Some(v) = &self.kappa_grid {
            cfg.kappa_grid = v.clone();
        }
        match &self.lambda_grid {
            Some(LambdaGrid::Size(k)) => cfg.lambda_grid_size = *k,
            Some(LambdaGrid::Values(v)) => cfg.lambda_grid = Some(v.clone()),
            None => {}
        }
        if let Some(v) = self.lambda_min_ratio {
            cfg.lambda_min_ratio = v;
        }
        if self.final_lambda.is_some() {
            cfg.final_lambda = self.final_lambda;
        }
        if let Some(v) = self.m_rule {
            cfg.m_rule = v;
        }
        if let Some(v) = self.tol {
            cfg.tol = v;
        }
        if let Some(v) = self.max_iter {
            cfg.max_iter = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}
