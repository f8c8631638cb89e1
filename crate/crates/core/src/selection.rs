//! BIC-driven tuning and the end-to-end two-stage estimator.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::censored::stute_wls;
use crate::data::SurvivalDataset;
use crate::error::{Error, Result};
use crate::penalty::{PenaltyKind, PenaltySpec};
use crate::refining::{
    final_penalized_fit, refine_threshold, subgroup_coefficients, RefineWindow, ThresholdFit,
};
use crate::splitting::{
    build_group_design, build_segments, group_coordinate_descent, GroupDesign, GroupSolution,
    Segmentation, SolverOptions,
};

/// Relative floor on the BIC fit term; weighted RSS below it is numerically zero.
pub const BIC_RSS_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MRule {
    /// `m = floor(kappa * sqrt(n))`
    #[default]
    SqrtN,
    /// `m = floor(kappa * sqrt(n_events))`
    #[serde(rename = "sqrt-nstar")]
    SqrtNStar,
}

impl std::str::FromStr for MRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sqrt-n" => Ok(MRule::SqrtN),
            "sqrt-nstar" => Ok(MRule::SqrtNStar),
            other => Err(Error::InfeasibleConfig(format!("unknown m rule '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuningConfig {
    pub kappa_grid: Vec<f64>,
    pub lambda_grid_size: usize,
    pub lambda_min_ratio: f64,
    /// Explicit lambda values; replaces the generated path when set.
    pub lambda_grid: Option<Vec<f64>>,
    pub penalty: PenaltyKind,
    pub gamma: f64,
    /// Lambda of the final element-wise fit; the selected splitting lambda when unset.
    pub final_lambda: Option<f64>,
    pub m_rule: MRule,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for TuningConfig {
    fn default() -> Self {
        Self {
            kappa_grid: default_kappa_grid(),
            lambda_grid_size: 50,
            lambda_min_ratio: 0.01,
            lambda_grid: None,
            penalty: PenaltyKind::Mcp,
            gamma: 2.4,
            final_lambda: None,
            m_rule: MRule::SqrtN,
            tol: 1e-6,
            max_iter: 1000,
            seed: 0,
        }
    }
}

/// Twenty equally spaced values on `[0.1, 2.0]`.
pub fn default_kappa_grid() -> Vec<f64> {
    (1..=20).map(|k| k as f64 / 10.0).collect()
}

impl TuningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kappa_grid.is_empty() {
            return Err(Error::InfeasibleConfig("kappa grid is empty".into()));
        }
        if self.kappa_grid.iter().any(|&k| !(k > 0.0) || !k.is_finite()) {
            return Err(Error::InfeasibleConfig("kappa values must be positive".into()));
        }
        if self.kappa_grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InfeasibleConfig("kappa grid must be ascending".into()));
        }
        if !(self.lambda_min_ratio > 0.0 && self.lambda_min_ratio < 1.0) {
            return Err(Error::InfeasibleConfig(format!(
                "lambda_min_ratio = {} must lie in (0, 1)",
                self.lambda_min_ratio
            )));
        }
        match &self.lambda_grid {
            Some(grid) => {
                if grid.is_empty() || grid.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
                    return Err(Error::InfeasibleConfig(
                        "explicit lambda grid must be nonempty and nonnegative".into(),
                    ));
                }
            }
            None => {
                if self.lambda_grid_size == 0 {
                    return Err(Error::InfeasibleConfig("lambda grid size is zero".into()));
                }
            }
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::InfeasibleConfig("tol and max_iter must be positive".into()));
        }
        PenaltySpec::new(self.penalty, 0.0, self.gamma)
            .map_err(|e| Error::InfeasibleConfig(e.to_string()))?;
        Ok(())
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }

    pub fn segment_length(&self, data: &SurvivalDataset, kappa: f64) -> usize {
        let base = match self.m_rule {
            MRule::SqrtN => data.n() as f64,
            MRule::SqrtNStar => data.n_events() as f64,
        };
        (kappa * base.sqrt()).floor() as usize
    }
}

/// Log-spaced path from `lambda_max` down to `ratio * lambda_max`.
pub fn lambda_path(lambda_max: f64, size: usize, ratio: f64) -> Vec<f64> {
    if size == 1 {
        return vec![lambda_max];
    }
    let log_hi = lambda_max.ln();
    let log_lo = (lambda_max * ratio).ln();
    (0..size)
        .map(|k| (log_hi + (log_lo - log_hi) * k as f64 / (size - 1) as f64).exp())
        .collect()
}

/// `n log(sum_j (b_j / n) RSS_j) + p (s + 1) log n` at the given thresholds.
pub fn bic_for_thresholds(data: &SurvivalDataset, thresholds: &[f64]) -> Result<f64> {
    if thresholds.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidThresholds(format!(
            "thresholds must be strictly increasing: {thresholds:?}"
        )));
    }
    let n = data.n() as f64;
    let mut fit = 0.0;
    let mut scale = 0.0;
    for (j, group) in data.split_by_thresholds(thresholds).iter().enumerate() {
        if group.is_empty() {
            return Err(Error::InvalidThresholds(format!("subgroup {} is empty", j + 1)));
        }
        let wls = stute_wls(data, group)
            .map_err(|e| Error::InvalidThresholds(format!("subgroup {}: {e}", j + 1)))?;
        let share = group.len() as f64 / n;
        fit += share * wls.weighted_rss;
        let km = crate::censored::order_subset(data, group)?;
        scale += share
            * km.order
                .iter()
                .zip(&km.w)
                .map(|(&i, &w)| w * data.y()[i] * data.y()[i])
                .sum::<f64>();
    }
    let fit = fit.max(BIC_RSS_FLOOR * scale.max(f64::MIN_POSITIVE));
    let p = data.p() as f64;
    Ok(n * fit.ln() + p * (thresholds.len() as f64 + 1.0) * n.ln())
}

/// One point of a lambda path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub lambda: f64,
    /// Candidate groups from the splitting stage.
    pub candidates: Vec<usize>,
    /// Refined thresholds (candidates whose window was degenerate are dropped).
    pub thresholds: Vec<f64>,
    pub bic: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct LambdaSelection {
    pub best_lambda: f64,
    pub solution: GroupSolution,
    pub thresholds: Vec<f64>,
    pub bic: f64,
    pub path: Vec<PathPoint>,
}

/// Refines every candidate of a segmentation at most once.
struct RefineCache<'a> {
    data: &'a SurvivalDataset,
    seg: &'a Segmentation,
    refined: HashMap<usize, Option<f64>>,
    bic: HashMap<Vec<u64>, f64>,
}

impl<'a> RefineCache<'a> {
    fn new(data: &'a SurvivalDataset, seg: &'a Segmentation) -> Self {
        Self {
            data,
            seg,
            refined: HashMap::new(),
            bic: HashMap::new(),
        }
    }

    fn threshold(&mut self, group: usize) -> Option<f64> {
        let (data, seg) = (self.data, self.seg);
        *self.refined.entry(group).or_insert_with(|| {
            let window = RefineWindow::for_candidate(data, seg, group).ok()?;
            refine_threshold(data, &window).ok().map(|(a, _)| a)
        })
    }

    fn thresholds(&mut self, candidates: &[usize]) -> Vec<f64> {
        let mut out: Vec<f64> = candidates.iter().filter_map(|&g| self.threshold(g)).collect();
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    fn bic(&mut self, thresholds: &[f64]) -> f64 {
        let key: Vec<u64> = thresholds.iter().map(|a| a.to_bits()).collect();
        let data = self.data;
        *self
            .bic
            .entry(key)
            .or_insert_with(|| bic_for_thresholds(data, thresholds).unwrap_or(f64::INFINITY))
    }

    /// True when no candidate group could yield an admissible split.
    fn all_windows_degenerate(&self) -> bool {
        (1..=self.seg.q).all(|g| {
            RefineWindow::for_candidate(self.data, self.seg, g)
                .map(|w| w.candidate_zs.is_empty())
                .unwrap_or(true)
        })
    }
}

/// Generated or explicit lambda grid in descending order.
pub fn lambda_grid(design: &GroupDesign, cfg: &TuningConfig) -> Result<Vec<f64>> {
    let mut grid = match &cfg.lambda_grid {
        Some(explicit) => explicit.clone(),
        None => {
            let lmax = design.lambda_max()?;
            if lmax > 0.0 {
                lambda_path(lmax, cfg.lambda_grid_size, cfg.lambda_min_ratio)
            } else {
                vec![0.0]
            }
        }
    };
    grid.sort_by(|a, b| b.total_cmp(a));
    Ok(grid)
}

/// Walks the lambda grid (descending, warm-started) and keeps the lambda whose
/// refined thresholds give the smallest BIC; ties go to the larger lambda.
pub fn select_lambda(
    data: &SurvivalDataset,
    seg: &Segmentation,
    design: &GroupDesign,
    kind: PenaltyKind,
    gamma: f64,
    grid: &[f64],
    opts: SolverOptions,
) -> Result<LambdaSelection> {
    if grid.is_empty() {
        return Err(Error::InfeasibleConfig("lambda grid is empty".into()));
    }
    let mut cache = RefineCache::new(data, seg);
    let null_bic = cache.bic(&[]);
    let mut path = Vec::with_capacity(grid.len());
    let mut best: Option<(usize, GroupSolution, Vec<f64>, f64)> = None;

    if cache.all_windows_degenerate() {
        // every candidate would be dropped, so each lambda yields the null model
        let spec = PenaltySpec::new(kind, grid[0], gamma)?;
        let sol = group_coordinate_descent(data, design, &spec, opts, None)?;
        for &lambda in grid {
            path.push(PathPoint {
                lambda,
                candidates: Vec::new(),
                thresholds: Vec::new(),
                bic: null_bic,
                converged: true,
            });
        }
        return Ok(LambdaSelection {
            best_lambda: grid[0],
            solution: sol,
            thresholds: Vec::new(),
            bic: null_bic,
            path,
        });
    }

    let mut warm: Option<Vec<f64>> = None;
    for (k, &lambda) in grid.iter().enumerate() {
        let spec = PenaltySpec::new(kind, lambda, gamma)?;
        let sol = group_coordinate_descent(data, design, &spec, opts, warm.as_deref())?;
        let thresholds = cache.thresholds(&sol.candidates);
        let bic = cache.bic(&thresholds);
        path.push(PathPoint {
            lambda,
            candidates: sol.candidates.clone(),
            thresholds: thresholds.clone(),
            bic,
            converged: sol.converged,
        });
        warm = Some(sol.theta.clone());
        let better = match &best {
            None => bic.is_finite(),
            Some((_, _, _, b)) => bic < *b,
        };
        if better {
            best = Some((k, sol, thresholds, bic));
        }
    }

    match best {
        Some((k, solution, thresholds, bic)) => Ok(LambdaSelection {
            best_lambda: grid[k],
            solution,
            thresholds,
            bic,
            path,
        }),
        None => {
            let spec = PenaltySpec::new(kind, grid[0], gamma)?;
            let solution = group_coordinate_descent(data, design, &spec, opts, None)?;
            Ok(LambdaSelection {
                best_lambda: grid[0],
                solution,
                thresholds: Vec::new(),
                bic: null_bic,
                path,
            })
        }
    }
}

/// Splitting, lambda selection and refinement at one segment length.
#[derive(Debug, Clone)]
pub struct KappaResult {
    pub kappa: f64,
    pub m: usize,
    pub selection: LambdaSelection,
}

/// Runs the splitting stage with lambda selection for one kappa; `None` when
/// the segment length is infeasible for this sample.
pub fn run_kappa(data: &SurvivalDataset, cfg: &TuningConfig, kappa: f64) -> Result<Option<KappaResult>> {
    let m = cfg.segment_length(data, kappa);
    if m == 0 || data.n_events() < 2 * m {
        return Ok(None);
    }
    let seg = build_segments(data, m)?;
    let design = match build_group_design(data, &seg) {
        Ok(d) => d,
        Err(e) if e.is_numerical() => return Ok(None),
        Err(e) => return Err(e),
    };
    let grid = match lambda_grid(&design, cfg) {
        Ok(g) => g,
        Err(e) if e.is_numerical() => return Ok(None),
        Err(e) => return Err(e),
    };
    match select_lambda(data, &seg, &design, cfg.penalty, cfg.gamma, &grid, cfg.solver_options()) {
        Ok(selection) => Ok(Some(KappaResult { kappa, m, selection })),
        Err(e) if e.is_numerical() => Ok(None),
        Err(e) => Err(e),
    }
}

/// Every feasible kappa of the grid, in grid order.
pub fn run_kappa_grid(data: &SurvivalDataset, cfg: &TuningConfig) -> Result<Vec<KappaResult>> {
    cfg.validate()?;
    let results: Vec<Result<Option<KappaResult>>> = cfg
        .kappa_grid
        .par_iter()
        .map(|&kappa| run_kappa(data, cfg, kappa))
        .collect();
    let mut out = Vec::new();
    for r in results {
        if let Some(k) = r? {
            out.push(k);
        }
    }
    Ok(out)
}

/// Two-stage multi-threshold estimator.
pub fn tsmcd(data: &SurvivalDataset, cfg: &TuningConfig) -> Result<ThresholdFit> {
    let results = run_kappa_grid(data, cfg)?;
    let best = results
        .iter()
        .filter(|r| r.selection.bic.is_finite())
        .fold(None::<&KappaResult>, |acc, r| match acc {
            Some(b) if b.selection.bic <= r.selection.bic => Some(b),
            _ => Some(r),
        })
        .ok_or_else(|| {
            Error::InfeasibleConfig(format!(
                "no kappa in the grid yields a feasible segmentation (n = {}, events = {})",
                data.n(),
                data.n_events()
            ))
        })?;
    finish_fit(data, cfg, best)
}

/// Final element-wise penalized fit at the thresholds chosen for one kappa.
pub fn finish_fit(data: &SurvivalDataset, cfg: &TuningConfig, chosen: &KappaResult) -> Result<ThresholdFit> {
    let thresholds = chosen.selection.thresholds.clone();
    let final_lambda = cfg.final_lambda.unwrap_or(chosen.selection.best_lambda);
    let spec = PenaltySpec::new(cfg.penalty, final_lambda, cfg.gamma)?;
    let fit = final_penalized_fit(data, &thresholds, &spec, cfg.solver_options())?;
    let p = data.p();
    Ok(ThresholdFit {
        s_hat: thresholds.len(),
        beta_by_group: subgroup_coefficients(&fit.theta, p),
        theta_star: fit.theta,
        a_hat: thresholds,
        bic: chosen.selection.bic,
        p,
        penalty: cfg.penalty,
        gamma: cfg.gamma,
        m_used: chosen.m,
        kappa_used: chosen.kappa,
        lambda_used: chosen.selection.best_lambda,
        final_lambda,
        converged: fit.converged && chosen.selection.solution.converged,
    })
}

/// One `(kappa, lambda)` cell of the BIC surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub kappa: f64,
    pub m: usize,
    pub lambda: f64,
    pub s_hat: usize,
    pub thresholds: Vec<f64>,
    pub bic: f64,
}

/// Full `(kappa, lambda, BIC)` surface; infeasible kappas contribute no rows.
pub fn bic_scan(data: &SurvivalDataset, cfg: &TuningConfig) -> Result<Vec<ScanRow>> {
    let results = run_kappa_grid(data, cfg)?;
    Ok(results
        .into_iter()
        .flat_map(|r| {
            let (kappa, m) = (r.kappa, r.m);
            r.selection.path.into_iter().map(move |pt| ScanRow {
                kappa,
                m,
                lambda: pt.lambda,
                s_hat: pt.thresholds.len(),
                thresholds: pt.thresholds,
                bic: pt.bic,
            })
        })
        .collect())
}
