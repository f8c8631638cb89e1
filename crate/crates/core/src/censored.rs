//! Kaplan-Meier weights and the Stute weighted least-squares fit.
//!
//! Every stage of the estimator evaluates the same building block: order a
//! subset of observations by response, give each ordered observation the jump
//! of the product-limit estimator at its position, and solve the weighted
//! normal equations.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};

use crate::data::SurvivalDataset;
use crate::error::{Error, Result};

/// Reciprocal condition number below which a weighted Gram matrix is treated as singular.
pub const TOL_SINGULAR: f64 = 1e-10;

/// Product-limit jump sizes for an ordered subset.
#[derive(Debug, Clone, PartialEq)]
pub struct KaplanMeierWeights {
    /// Original dataset indices in ascending response order.
    pub order: Vec<usize>,
    /// Weight of the observation at the same position of `order`.
    pub w: Vec<f64>,
}

impl KaplanMeierWeights {
    pub fn total_mass(&self) -> f64 {
        self.w.iter().sum()
    }

    /// Number of observations carrying positive weight.
    pub fn n_positive(&self) -> usize {
        self.w.iter().filter(|&&w| w > 0.0).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WlsFit {
    pub beta: DVector<f64>,
    /// `sum_i w_i (y_i - x_i' beta)^2` at the minimizer.
    pub weighted_rss: f64,
    pub n_events: usize,
}

/// Kaplan-Meier weights for event indicators already sorted by ascending response.
///
/// `w_1 = d_1 / b` and `w_l = d_l / (b - l + 1) * prod_{k<l} ((b - k) / (b - k + 1))^{d_k}`,
/// which are exactly the jumps of the product-limit estimator of the
/// failure-time distribution. The product telescopes to
/// `w_l = d_l / b * prod_{k<l, d_k = 0} (b - k + 1) / (b - k)`, so an
/// uncensored prefix carries exactly `1/b`.
pub fn km_weights(delta_ordered: &[bool]) -> Result<Vec<f64>> {
    let b = delta_ordered.len();
    if b == 0 {
        return Err(Error::InvalidSubset("empty subset".into()));
    }
    let bf = b as f64;
    let mut w = Vec::with_capacity(b);
    let mut lift = 1.0;
    for (pos, &d) in delta_ordered.iter().enumerate() {
        let at_risk = (b - pos) as f64;
        if d {
            w.push(lift / bf);
        } else {
            w.push(0.0);
            if at_risk > 1.0 {
                lift *= at_risk / (at_risk - 1.0);
            }
        }
    }
    Ok(w)
}

/// Ascending response order with events before censored observations on ties,
/// then original index.
pub fn response_order(data: &SurvivalDataset, idx: &[usize]) -> Vec<usize> {
    let y = data.y();
    let delta = data.delta();
    let mut order = idx.to_vec();
    order.sort_by(|&a, &b| {
        y[a].partial_cmp(&y[b])
            .unwrap_or(Ordering::Equal)
            .then_with(|| delta[b].cmp(&delta[a]))
            .then_with(|| a.cmp(&b))
    });
    order
}

/// Sorts the subset by response and attaches its Kaplan-Meier weights.
pub fn order_subset(data: &SurvivalDataset, idx: &[usize]) -> Result<KaplanMeierWeights> {
    if idx.is_empty() {
        return Err(Error::InvalidSubset("empty index set".into()));
    }
    if let Some(&bad) = idx.iter().find(|&&i| i >= data.n()) {
        return Err(Error::InvalidSubset(format!(
            "index {bad} out of range for n = {}",
            data.n()
        )));
    }
    let order = response_order(data, idx);
    let ordered_delta: Vec<bool> = order.iter().map(|&i| data.delta()[i]).collect();
    let w = km_weights(&ordered_delta)?;
    Ok(KaplanMeierWeights { order, w })
}

/// Solves `min_beta sum_k w_k (y_{i_k} - x_{i_k}' beta)^2` over the given rows.
pub fn weighted_least_squares(
    data: &SurvivalDataset,
    rows: &[usize],
    weights: &[f64],
) -> Result<WlsFit> {
    let p = data.p();
    let x = data.x();
    let y = data.y();
    let n_events = weights.iter().filter(|&&w| w > 0.0).count();
    if n_events < p {
        return Err(Error::InsufficientEvents(format!(
            "{n_events} positively weighted observations for {p} coefficients"
        )));
    }
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    for (&i, &w) in rows.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        for a in 0..p {
            let xa = w * x[(i, a)];
            rhs[a] += xa * y[i];
            for b in 0..=a {
                gram[(a, b)] += xa * x[(i, b)];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            gram[(b, a)] = gram[(a, b)];
        }
    }
    let beta = solve_spd(gram, &rhs, rows.len())?;
    let mut rss = 0.0;
    for (&i, &w) in rows.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        let fitted: f64 = (0..p).map(|c| x[(i, c)] * beta[c]).sum();
        let r = y[i] - fitted;
        rss += w * r * r;
    }
    Ok(WlsFit {
        beta,
        weighted_rss: rss,
        n_events,
    })
}

/// Solves a symmetric positive semidefinite system through its SVD, refusing
/// ill-conditioned matrices instead of regularizing them.
pub(crate) fn solve_spd(gram: DMatrix<f64>, rhs: &DVector<f64>, size: usize) -> Result<DVector<f64>> {
    let svd = gram.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let rcond = if smax > 0.0 { smin / smax } else { 0.0 };
    if !(rcond >= TOL_SINGULAR) {
        return Err(Error::SingularDesign { size, rcond });
    }
    svd.solve(rhs, 0.0).map_err(|_| Error::SingularDesign { size, rcond })
}

/// Stute estimator on the subset `idx`.
pub fn stute_wls(data: &SurvivalDataset, idx: &[usize]) -> Result<WlsFit> {
    let km = order_subset(data, idx)?;
    weighted_least_squares(data, &km.order, &km.w)
}
