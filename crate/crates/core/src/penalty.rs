//! SCAD and MCP penalties with their closed-form thresholding operators.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyKind {
    Scad,
    Mcp,
}

impl PenaltyKind {
    /// Smallest admissible concavity parameter (exclusive).
    pub fn gamma_floor(self) -> f64 {
        match self {
            PenaltyKind::Scad => 1.0,
            PenaltyKind::Mcp => 2.0,
        }
    }
}

impl fmt::Display for PenaltyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PenaltyKind::Scad => "scad",
            PenaltyKind::Mcp => "mcp",
        })
    }
}

impl FromStr for PenaltyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "scad" => Ok(PenaltyKind::Scad),
            "mcp" => Ok(PenaltyKind::Mcp),
            other => Err(Error::InvalidPenalty(format!("unknown penalty '{other}'"))),
        }
    }
}

/// A penalty family with its tuning parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    kind: PenaltyKind,
    lambda: f64,
    gamma: f64,
}

impl PenaltySpec {
    pub fn new(kind: PenaltyKind, lambda: f64, gamma: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidPenalty(format!("lambda = {lambda} must be >= 0")));
        }
        if !(gamma > kind.gamma_floor()) || !gamma.is_finite() {
            return Err(Error::InvalidPenalty(format!(
                "{kind} requires gamma > {}, got {gamma}",
                kind.gamma_floor()
            )));
        }
        Ok(Self { kind, lambda, gamma })
    }

    pub fn mcp(lambda: f64, gamma: f64) -> Result<Self> {
        Self::new(PenaltyKind::Mcp, lambda, gamma)
    }

    pub fn scad(lambda: f64, gamma: f64) -> Result<Self> {
        Self::new(PenaltyKind::Scad, lambda, gamma)
    }

    pub fn kind(&self) -> PenaltyKind {
        self.kind
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(self.kind, lambda, self.gamma)
    }

    /// Curvature a quadratic term must exceed for `a/2 (t - v)^2 + p(|t|)` to be convex.
    pub fn convexity_bound(&self) -> f64 {
        match self.kind {
            PenaltyKind::Mcp => 1.0 / self.gamma,
            PenaltyKind::Scad => 1.0 / (self.gamma - 1.0),
        }
    }

    pub fn value(&self, u: f64) -> Result<f64> {
        check_nonnegative(u)?;
        Ok(self.value_unchecked(u))
    }

    pub(crate) fn value_unchecked(&self, u: f64) -> f64 {
        let (l, g) = (self.lambda, self.gamma);
        match self.kind {
            PenaltyKind::Scad => {
                if u <= l {
                    l * u
                } else if u <= g * l {
                    (g * l * u - 0.5 * (u * u + l * l)) / (g - 1.0)
                } else {
                    l * l * (g * g - 1.0) / (2.0 * (g - 1.0))
                }
            }
            PenaltyKind::Mcp => {
                if u <= g * l {
                    l * u - u * u / (2.0 * g)
                } else {
                    0.5 * g * l * l
                }
            }
        }
    }

    /// Right derivative of [`value`](Self::value).
    pub fn derivative(&self, u: f64) -> Result<f64> {
        check_nonnegative(u)?;
        let (l, g) = (self.lambda, self.gamma);
        Ok(match self.kind {
            PenaltyKind::Scad => {
                if u < l {
                    l
                } else if u < g * l {
                    (g * l - u) / (g - 1.0)
                } else {
                    0.0
                }
            }
            PenaltyKind::Mcp => {
                if u < g * l {
                    l - u / g
                } else {
                    0.0
                }
            }
        })
    }

    /// Global minimizer of `a/2 (t - v)^2 + p(|t|)` over scalar `t`.
    pub fn scalar_threshold(&self, v: f64, a: f64) -> Result<f64> {
        self.check_curvature(a)?;
        Ok(self.threshold_magnitude(v.abs(), a).copysign(v))
    }

    /// Minimizer of `a/2 ||t - v||^2 + p(||t||)`; shrinks `v` along its own direction.
    pub fn group_threshold(&self, v: &[f64], a: f64) -> Result<Vec<f64>> {
        self.check_curvature(a)?;
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(vec![0.0; v.len()]);
        }
        let shrunk = self.threshold_magnitude(norm, a);
        if shrunk == norm {
            return Ok(v.to_vec());
        }
        let scale = shrunk / norm;
        Ok(v.iter().map(|x| x * scale).collect())
    }

    /// Global minimizer of `a/2 (t - v)^2 + p(|t|)` for any `a > 0`.
    /// Below the convexity bound the penalized pieces are concave, so the
    /// minimum sits at a breakpoint, at `v` itself, or (SCAD) on the linear piece.
    pub fn coordinate_minimizer(&self, v: f64, a: f64) -> Result<f64> {
        if !(a > 0.0) {
            return Err(Error::NonconvexSubproblem { curvature: a, bound: 0.0 });
        }
        if a > self.convexity_bound() {
            return self.scalar_threshold(v, a);
        }
        let (l, g) = (self.lambda, self.gamma);
        let u = v.abs();
        let mut candidates = vec![0.0, g * l];
        if u > g * l {
            candidates.push(u);
        }
        if self.kind == PenaltyKind::Scad {
            candidates.push(l);
            let inner = u - l / a;
            if inner > 0.0 && inner <= l {
                candidates.push(inner);
            }
        }
        let obj = |t: f64| 0.5 * a * (t - u).powi(2) + self.value_unchecked(t);
        let mut best = 0.0;
        let mut best_obj = obj(0.0);
        for &t in &candidates[1..] {
            let o = obj(t);
            if o < best_obj {
                best = t;
                best_obj = o;
            }
        }
        Ok(best.copysign(v))
    }

    fn check_curvature(&self, a: f64) -> Result<()> {
        let bound = self.convexity_bound();
        if !(a > bound) {
            return Err(Error::NonconvexSubproblem { curvature: a, bound });
        }
        Ok(())
    }

    // Closed-form minimizer for a nonnegative argument, assuming a exceeds the convexity bound.
    fn threshold_magnitude(&self, v: f64, a: f64) -> f64 {
        let (l, g) = (self.lambda, self.gamma);
        if v <= l / a {
            return 0.0;
        }
        if v > g * l {
            return v;
        }
        match self.kind {
            PenaltyKind::Mcp => ((v - l / a) / (1.0 - 1.0 / (a * g))).min(v),
            PenaltyKind::Scad => {
                if v <= l * (1.0 + 1.0 / a) {
                    v - l / a
                } else {
                    let t = (a * (g - 1.0) * v - g * l) / (a * (g - 1.0) - 1.0);
                    t.min(v)
                }
            }
        }
    }
}

fn check_nonnegative(u: f64) -> Result<()> {
    if !(u >= 0.0) {
        return Err(Error::Domain(format!("penalty argument {u} must be >= 0")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid_argmin(spec: &PenaltySpec, v: f64, a: f64, lo: f64, hi: f64, step: f64) -> f64 {
        let steps = ((hi - lo) / step).round() as usize;
        let mut best = (f64::INFINITY, 0.0);
        for k in 0..=steps {
            let t = lo + k as f64 * step;
            let obj = 0.5 * a * (t - v).powi(2) + spec.value(t.abs()).unwrap();
            if obj < best.0 {
                best = (obj, t);
            }
        }
        best.1
    }

    #[test]
    fn values_at_reference_points() {
        let mcp = PenaltySpec::mcp(1.0, 3.0).unwrap();
        let scad = PenaltySpec::scad(1.0, 2.4).unwrap();
        assert_eq!(mcp.value(0.0).unwrap(), 0.0);
        assert_eq!(scad.value(0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(mcp.value(5.0).unwrap(), 1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(scad.value(10.0).unwrap(), 1.7, epsilon = 1e-14);
        assert!(matches!(mcp.value(-1.0), Err(Error::Domain(_))));
        assert!(matches!(scad.derivative(-0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn derivatives_at_reference_points() {
        for spec in [
            PenaltySpec::mcp(0.7, 2.4).unwrap(),
            PenaltySpec::scad(0.7, 2.4).unwrap(),
        ] {
            assert_eq!(spec.derivative(0.0).unwrap(), 0.7);
            assert_eq!(spec.derivative(2.0 * 2.4 * 0.7).unwrap(), 0.0);
        }
        let mcp = PenaltySpec::mcp(1.0, 3.0).unwrap();
        assert_abs_diff_eq!(mcp.derivative(1.5).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn construction_enforces_gamma_domain() {
        assert!(PenaltySpec::mcp(1.0, 2.0).is_err());
        assert!(PenaltySpec::scad(1.0, 1.0).is_err());
        assert!(PenaltySpec::mcp(-0.1, 3.0).is_err());
        assert!(PenaltySpec::scad(1.0, 1.5).is_ok());
        assert_eq!("MCP".parse::<PenaltyKind>().unwrap(), PenaltyKind::Mcp);
        assert!("lasso".parse::<PenaltyKind>().is_err());
    }

    #[test]
    fn mcp_firm_threshold_matches_grid() {
        let mcp = PenaltySpec::mcp(1.0, 3.0).unwrap();
        let t = mcp.scalar_threshold(2.0, 1.0).unwrap();
        assert_abs_diff_eq!(t, 1.5, epsilon = 1e-15);
        let oracle = grid_argmin(&mcp, 2.0, 1.0, -5.0, 5.0, 1e-5);
        assert_abs_diff_eq!(t, oracle, epsilon = 1e-5);
    }

    #[test]
    fn threshold_edge_cases() {
        let spec = PenaltySpec::scad(0.5, 2.4).unwrap();
        assert_eq!(spec.scalar_threshold(0.0, 1.0).unwrap(), 0.0);
        let far = 10.0 * 2.4 * 0.5;
        assert_eq!(spec.scalar_threshold(far, 1.0).unwrap(), far);
        assert_eq!(spec.scalar_threshold(-far, 1.0).unwrap(), -far);
        assert!(matches!(
            spec.scalar_threshold(1.0, 0.5),
            Err(Error::NonconvexSubproblem { .. })
        ));
        assert_eq!(spec.group_threshold(&[0.0, 0.0], 1.0).unwrap(), vec![0.0, 0.0]);
        let v = [3.0, -4.0];
        assert_eq!(spec.group_threshold(&v, 1.0).unwrap(), v.to_vec());
    }

    #[test]
    fn scad_threshold_matches_grid_in_every_region() {
        let spec = PenaltySpec::scad(1.0, 3.7).unwrap();
        for &a in &[0.5, 1.0, 2.5] {
            for &v in &[0.3, 1.2, 2.1, 2.9, 3.5, 4.5] {
                let t = spec.scalar_threshold(v, a).unwrap();
                let oracle = grid_argmin(&spec, v, a, -6.0, 6.0, 1e-4);
                assert_abs_diff_eq!(t, oracle, epsilon = 2e-4);
            }
        }
    }
}
