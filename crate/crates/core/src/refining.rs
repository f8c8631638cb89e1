//! Refining stage: exact threshold location inside each candidate window and
//! the final sparse coefficient fit at the located thresholds.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::censored::{km_weights, response_order, solve_spd, weighted_least_squares};
use crate::data::SurvivalDataset;
use crate::error::{Error, Result};
use crate::penalty::{PenaltyKind, PenaltySpec};
use crate::splitting::{BlockStats, Segmentation, SolverOptions};

/// Relative tolerance under which two scan criteria count as tied.
pub const SCAN_TIE_TOL: f64 = 1e-12;

/// Events required on each side of an admissible split for `p` coefficients.
pub fn min_side_events(p: usize) -> usize {
    (p + 2).max(5)
}

/// Admissible split points inside `(lower, upper]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RefineWindow {
    pub lower: f64,
    pub upper: f64,
    /// Distinct observed z values (events and censored alike) that leave
    /// enough events on both sides.
    pub candidate_zs: Vec<f64>,
    /// Observations with `lower < z <= upper`.
    pub members: Vec<usize>,
}

impl RefineWindow {
    pub fn new(data: &SurvivalDataset, lower: f64, upper: f64, min_side: usize) -> Self {
        let members = data.indices_in(lower, upper);
        let mut zs: Vec<f64> = members.iter().map(|&i| data.z()[i]).collect();
        zs.sort_by(f64::total_cmp);
        zs.dedup();
        let mut event_zs: Vec<f64> = members
            .iter()
            .filter(|&&i| data.delta()[i])
            .map(|&i| data.z()[i])
            .collect();
        event_zs.sort_by(f64::total_cmp);
        let total = event_zs.len();
        let candidate_zs = zs
            .into_iter()
            .filter(|&s| {
                let left = event_zs.partition_point(|&e| e <= s);
                left >= min_side && total - left >= min_side
            })
            .collect();
        Self {
            lower,
            upper,
            candidate_zs,
            members,
        }
    }

    /// Window around candidate group `group` of a segmentation.
    pub fn for_candidate(data: &SurvivalDataset, seg: &Segmentation, group: usize) -> Result<Self> {
        let (lower, upper) = seg.window_bounds(group)?;
        Ok(Self::new(data, lower, upper, min_side_events(data.p())))
    }
}

/// Weighted RSS of the Stute fit over rows already in response order;
/// `+inf` when the fit is not identifiable.
fn presorted_rss(data: &SurvivalDataset, ordered: &[usize]) -> f64 {
    let delta: Vec<bool> = ordered.iter().map(|&i| data.delta()[i]).collect();
    let Ok(w) = km_weights(&delta) else {
        return f64::INFINITY;
    };
    match weighted_least_squares(data, ordered, &w) {
        Ok(fit) => fit.weighted_rss,
        Err(_) => f64::INFINITY,
    }
}

/// Two-sided criterion `Q(s)` for every admissible split of the window.
pub fn scan_window(data: &SurvivalDataset, window: &RefineWindow) -> Vec<(f64, f64)> {
    let ordered = response_order(data, &window.members);
    let total = window.members.len() as f64;
    let z = data.z();
    let mut left = Vec::with_capacity(ordered.len());
    let mut right = Vec::with_capacity(ordered.len());
    window
        .candidate_zs
        .iter()
        .map(|&s| {
            left.clear();
            right.clear();
            for &i in &ordered {
                if z[i] <= s {
                    left.push(i);
                } else {
                    right.push(i);
                }
            }
            let q = left.len() as f64 / total * presorted_rss(data, &left)
                + right.len() as f64 / total * presorted_rss(data, &right);
            (s, q)
        })
        .collect()
}

/// Smallest split point whose criterion is within the tie tolerance of the minimum.
pub(crate) fn tie_aware_argmin(scan: &[(f64, f64)]) -> Option<(f64, f64)> {
    let best = scan
        .iter()
        .map(|&(_, q)| q)
        .filter(|q| q.is_finite())
        .fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return None;
    }
    let cutoff = best + SCAN_TIE_TOL * (1.0 + best.abs());
    scan.iter().copied().find(|&(_, q)| q <= cutoff)
}

/// Threshold inside the window minimizing the two-sided weighted least-squares criterion.
pub fn refine_threshold(data: &SurvivalDataset, window: &RefineWindow) -> Result<(f64, f64)> {
    let scan = scan_window(data, window);
    tie_aware_argmin(&scan).ok_or(Error::DegenerateWindow {
        lower: window.lower,
        upper: window.upper,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinalFit {
    /// `(s + 1) p` coefficients: baseline then one increment per threshold.
    pub theta: Vec<f64>,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// Exact coordinate descent for the subgroup-weighted loss plus an element-wise
/// penalty on every coefficient, thresholds held fixed.
pub fn final_penalized_fit(
    data: &SurvivalDataset,
    thresholds: &[f64],
    spec: &PenaltySpec,
    opts: SolverOptions,
) -> Result<FinalFit> {
    if thresholds.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidThresholds(format!(
            "thresholds must be strictly increasing: {thresholds:?}"
        )));
    }
    let groups = data.split_by_thresholds(thresholds);
    if let Some(k) = groups.iter().position(|g| g.is_empty()) {
        return Err(Error::InvalidThresholds(format!("subgroup {} is empty", k + 1)));
    }
    let stats = BlockStats::from_partition(data, &groups)?;
    let p = stats.p;
    let k = stats.n_blocks();
    let dim = k * p;
    let n = stats.n as f64;

    // Gram of the cumulative design: entry ((j,c),(l,d)) = C_{max(j,l)}[c,d]
    let mut gram = vec![0.0; dim * dim];
    for j in 0..k {
        for l in 0..k {
            let c_block = &stats.suffix_gram[j.max(l)];
            for c in 0..p {
                for d in 0..p {
                    gram[(j * p + c) * dim + l * p + d] = c_block[(c, d)];
                }
            }
        }
    }
    let rhs: Vec<f64> = (0..k)
        .flat_map(|j| stats.suffix_xy[j].iter().copied().collect::<Vec<_>>())
        .collect();
    // start from the unpenalized fit, or from zero when it is not identifiable
    let mut theta = solve_spd(
        DMatrix::from_row_slice(dim, dim, &gram),
        &DVector::from_column_slice(&rhs),
        data.n(),
    )
    .map(|v| v.as_slice().to_vec())
    .unwrap_or_else(|_| vec![0.0; dim]);
    // residual correlations u - G theta
    let mut resid = rhs.clone();
    for i in 0..dim {
        if theta[i] != 0.0 {
            let col = &gram[i * dim..(i + 1) * dim];
            for (r, g) in resid.iter_mut().zip(col) {
                *r -= g * theta[i];
            }
        }
    }
    let curvature: Vec<f64> = (0..dim).map(|i| gram[i * dim + i] / n).collect();
    if let Some(i) = (0..dim).find(|&i| gram[i * dim + i] <= 0.0) {
        return Err(Error::SingularDesign {
            size: data.n(),
            rcond: gram[i * dim + i],
        });
    }

    let objective = |theta: &[f64]| -> f64 {
        stats.loss(data, theta)
            + theta
                .iter()
                .map(|t| spec.value_unchecked(t.abs()))
                .sum::<f64>()
    };
    let mut trace = vec![objective(&theta)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let mut max_change: f64 = 0.0;
        for i in 0..dim {
            let a = curvature[i];
            let v = theta[i] + resid[i] / (n * a);
            let mut new = spec.coordinate_minimizer(v, a)?;
            if new.abs() < crate::splitting::ZERO_GROUP_TOL {
                new = 0.0;
            }
            let d = new - theta[i];
            if d != 0.0 {
                theta[i] = new;
                let col = &gram[i * dim..(i + 1) * dim];
                for (r, g) in resid.iter_mut().zip(col) {
                    *r -= g * d;
                }
                max_change = max_change.max(d.abs());
            }
        }
        trace.push(objective(&theta));
        if max_change < opts.tol {
            converged = true;
            break;
        }
    }
    Ok(FinalFit {
        theta,
        objective_trace: trace,
        converged,
        iterations,
    })
}

/// Per-subgroup coefficients `beta_j = beta_1 + sum_{k<j} d_k` from stacked
/// `(beta_1, d_1, ..., d_s)`.
pub fn subgroup_coefficients(theta: &[f64], p: usize) -> Vec<Vec<f64>> {
    let mut acc = vec![0.0; p];
    theta
        .chunks(p)
        .map(|chunk| {
            for (a, t) in acc.iter_mut().zip(chunk) {
                *a += t;
            }
            acc.clone()
        })
        .collect()
}

/// Stacked `(beta_1, d_1, ..., d_s)` from per-subgroup coefficients.
pub fn coefficient_increments(beta_by_group: &[Vec<f64>]) -> Vec<f64> {
    let mut out = Vec::new();
    for (j, beta) in beta_by_group.iter().enumerate() {
        if j == 0 {
            out.extend_from_slice(beta);
        } else {
            out.extend(beta.iter().zip(&beta_by_group[j - 1]).map(|(b, prev)| b - prev));
        }
    }
    out
}

/// Outcome of the full procedure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdFit {
    pub s_hat: usize,
    pub a_hat: Vec<f64>,
    pub theta_star: Vec<f64>,
    pub beta_by_group: Vec<Vec<f64>>,
    pub bic: f64,
    pub p: usize,
    pub penalty: PenaltyKind,
    pub gamma: f64,
    pub m_used: usize,
    pub kappa_used: f64,
    pub lambda_used: f64,
    /// Lambda of the element-wise penalty in the final fit.
    pub final_lambda: f64,
    pub converged: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn prefix_sums_invert_increments() {
        let theta = [0.791, -0.492, 1.166, 0.0, 0.0, -0.381];
        let groups = subgroup_coefficients(&theta, 2);
        assert_eq!(groups.len(), 3);
        assert_eq!(groups[0], vec![0.791, -0.492]);
        assert!((groups[1][0] - 1.957).abs() < 1e-12);
        assert_eq!(groups[2][1], groups[1][1] - 0.381);
        let back = coefficient_increments(&groups);
        for (a, b) in back.iter().zip(&theta) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(subgroup_coefficients(&[1.0, 2.0], 2), vec![vec![1.0, 2.0]]);
        assert_eq!(
            subgroup_coefficients(&[1.0, 2.0, 0.0, 0.0], 2),
            vec![vec![1.0, 2.0], vec![1.0, 2.0]]
        );
    }

    #[test]
    fn single_admissible_candidate_is_returned() {
        let n = 10;
        let z: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let y: Vec<f64> = z.iter().map(|v| (v * 1.3).cos()).collect();
        let data =
            SurvivalDataset::from_indicators(y, &vec![1; n], DMatrix::from_element(n, 1, 1.0), z)
                .unwrap();
        let window = RefineWindow::new(&data, f64::NEG_INFINITY, f64::INFINITY, 5);
        assert_eq!(window.candidate_zs, vec![4.0]);
        let (a, _) = refine_threshold(&data, &window).unwrap();
        assert_eq!(a, 4.0);

        let empty = RefineWindow::new(&data, f64::NEG_INFINITY, 8.0, 5);
        assert!(matches!(
            refine_threshold(&data, &empty),
            Err(Error::DegenerateWindow { .. })
        ));
    }

    #[test]
    fn final_fit_rejects_bad_thresholds() {
        let n = 6;
        let z: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let data = SurvivalDataset::from_indicators(
            z.clone(),
            &vec![1; n],
            DMatrix::from_element(n, 1, 1.0),
            z,
        )
        .unwrap();
        let spec = PenaltySpec::mcp(0.1, 2.4).unwrap();
        let opts = SolverOptions::default();
        assert!(matches!(
            final_penalized_fit(&data, &[3.0, 1.0], &spec, opts),
            Err(Error::InvalidThresholds(_))
        ));
        assert!(matches!(
            final_penalized_fit(&data, &[10.0], &spec, opts),
            Err(Error::InvalidThresholds(_))
        ));
    }
}
