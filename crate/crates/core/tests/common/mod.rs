#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tsmcd::SurvivalDataset;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Intercept plus `p - 1` standard normal regressors, `z` equal to the
/// second column, linear response with unit slopes and noise `sd`, each
/// observation censored with probability `censor` (the first is always an event).
pub fn random_dataset(seed: u64, n: usize, p: usize, sd: f64, censor: f64) -> SurvivalDataset {
    let mut r = rng(seed);
    let x = DMatrix::from_fn(n, p, |_, c| if c == 0 { 1.0 } else { normal(&mut r) });
    let mut y = Vec::with_capacity(n);
    let mut delta = Vec::with_capacity(n);
    for i in 0..n {
        let mean: f64 = (0..p).map(|c| x[(i, c)]).sum();
        y.push(mean + sd * normal(&mut r));
        delta.push(i == 0 || r.random::<f64>() >= censor);
    }
    let z = (0..n).map(|i| if p > 1 { x[(i, 1)] } else { i as f64 }).collect();
    SurvivalDataset::new(y, delta, x, z).unwrap()
}

/// Piecewise-linear response in `z = x_2` with coefficients `betas[g]` on
/// subgroup `g` (split at `thresholds`), Gaussian noise `sd` and normal censoring.
pub fn piecewise_dataset(
    seed: u64,
    n: usize,
    betas: &[Vec<f64>],
    thresholds: &[f64],
    sd: f64,
    censor_mean: f64,
    censor_sd: f64,
) -> SurvivalDataset {
    let p = betas[0].len();
    let mut r = rng(seed);
    let x = DMatrix::from_fn(n, p, |_, c| if c == 0 { 1.0 } else { normal(&mut r) });
    let mut y = Vec::with_capacity(n);
    let mut delta = Vec::with_capacity(n);
    for i in 0..n {
        let g = thresholds.iter().filter(|&&a| a < x[(i, 1)]).count();
        let t: f64 = (0..p).map(|c| x[(i, c)] * betas[g][c]).sum::<f64>() + sd * normal(&mut r);
        let c = censor_mean + censor_sd * normal(&mut r);
        y.push(t.min(c));
        delta.push(t <= c);
    }
    let z = (0..n).map(|i| x[(i, 1)]).collect();
    SurvivalDataset::new(y, delta, x, z).unwrap()
}

/// Product-limit survival after each position of an already ordered
/// sequence, each position treated as its own time point.
pub fn product_limit_survival(delta: &[bool]) -> Vec<f64> {
    let b = delta.len();
    let mut out = Vec::with_capacity(b);
    for l in 0..b {
        let s: f64 = (0..=l)
            .filter(|&k| delta[k])
            .map(|k| 1.0 - 1.0 / (b - k) as f64)
            .product();
        out.push(s);
    }
    out
}

/// Jumps `S(t-) - S(t)` of the product-limit estimator at each position.
pub fn product_limit_jumps(delta: &[bool]) -> Vec<f64> {
    let s = product_limit_survival(delta);
    (0..delta.len())
        .map(|l| if l == 0 { 1.0 - s[0] } else { s[l - 1] - s[l] })
        .collect()
}

/// Grouped-ties product-limit estimator: `(time, survival)` after each
/// distinct event time.
pub fn product_limit_grouped(y: &[f64], delta: &[bool]) -> Vec<(f64, f64)> {
    let mut times: Vec<f64> = y
        .iter()
        .zip(delta)
        .filter(|(_, &d)| d)
        .map(|(&t, _)| t)
        .collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut s = 1.0;
    times
        .into_iter()
        .map(|t| {
            let at_risk = y.iter().filter(|&&v| v >= t).count() as f64;
            let d = y
                .iter()
                .zip(delta)
                .filter(|(&v, &e)| e && v == t)
                .count() as f64;
            s *= 1.0 - d / at_risk;
            (t, s)
        })
        .collect()
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Indices of `idx` sorted by response, events before censored at ties,
/// then by index.
pub fn oracle_order(data: &SurvivalDataset, idx: &[usize]) -> Vec<usize> {
    let mut order = idx.to_vec();
    order.sort_by(|&a, &b| {
        data.y()[a]
            .total_cmp(&data.y()[b])
            .then(data.delta()[b].cmp(&data.delta()[a]))
            .then(a.cmp(&b))
    });
    order
}

/// Kaplan-Meier weighted least squares by explicit normal equations.
/// Returns `(beta, weighted rss)` or `None` when not identifiable.
pub fn oracle_wls(data: &SurvivalDataset, idx: &[usize]) -> Option<(Vec<f64>, f64)> {
    let p = data.p();
    let order = oracle_order(data, idx);
    let d: Vec<bool> = order.iter().map(|&i| data.delta()[i]).collect();
    let w = product_limit_jumps(&d);
    if w.iter().filter(|&&v| v > 0.0).count() < p {
        return None;
    }
    let mut a = vec![vec![0.0; p]; p];
    let mut b = vec![0.0; p];
    for (k, &i) in order.iter().enumerate() {
        for r in 0..p {
            b[r] += w[k] * data.x()[(i, r)] * data.y()[i];
            for c in 0..p {
                a[r][c] += w[k] * data.x()[(i, r)] * data.x()[(i, c)];
            }
        }
    }
    let beta = gauss_solve(a, b)?;
    let rss = order
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            let fit: f64 = (0..p).map(|c| data.x()[(i, c)] * beta[c]).sum();
            w[k] * (data.y()[i] - fit).powi(2)
        })
        .sum();
    Some((beta, rss))
}

/// Exhaustive two-sided scan over every distinct z in `(lower, upper]` that
/// leaves `min_side` events on each side; smallest split wins ties.
pub fn brute_force_refine(
    data: &SurvivalDataset,
    lower: f64,
    upper: f64,
    min_side: usize,
) -> Option<(f64, f64)> {
    let members: Vec<usize> = (0..data.n())
        .filter(|&i| data.z()[i] > lower && data.z()[i] <= upper)
        .collect();
    let mut zs: Vec<f64> = members.iter().map(|&i| data.z()[i]).collect();
    zs.sort_by(f64::total_cmp);
    zs.dedup();
    let total = members.len() as f64;
    let mut scores = Vec::new();
    for s in zs {
        let left: Vec<usize> = members.iter().copied().filter(|&i| data.z()[i] <= s).collect();
        let right: Vec<usize> = members.iter().copied().filter(|&i| data.z()[i] > s).collect();
        let events = |v: &[usize]| v.iter().filter(|&&i| data.delta()[i]).count();
        if events(&left) < min_side || events(&right) < min_side {
            continue;
        }
        let side = |v: &[usize]| oracle_wls(data, v).map_or(f64::INFINITY, |f| f.1);
        let q = left.len() as f64 / total * side(&left) + right.len() as f64 / total * side(&right);
        scores.push((s, q));
    }
    let best = scores
        .iter()
        .map(|s| s.1)
        .filter(|q| q.is_finite())
        .fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return None;
    }
    scores
        .into_iter()
        .find(|&(_, q)| q <= best + 1e-12 * (1.0 + best.abs()))
}
