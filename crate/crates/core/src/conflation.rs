//! Conflation of reward and value.
//!
//! A proxy `r_hat` conflates `r` and `V` when `c r_hat + k = (1 - beta) r + beta V`
//! for some `c > 0`, real `k` and `beta` in `(0, 1]`; `beta` is the degree of
//! conflation.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::mdp::RewardFunction;

/// Max-norm tolerance for `g1 = c g2 + k` in [`is_equivalent`].
pub const EQUIVALENCE_TOL: f64 = 1e-9;
/// Spread (max - min) below which a vector counts as constant.
pub const CONSTANT_TOL: f64 = 1e-12;
/// Residual below which a least-squares fit is accepted as exact conflation.
pub const FIT_TOL: f64 = 1e-8;
const POSITIVE_TOL: f64 = 1e-12;
const BETA_UPPER_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct UniquenessDiagnostics {
    pub r_constant: bool,
    pub v_constant: bool,
    pub r_equiv_v: bool,
    pub r_equiv_neg_v: bool,
    pub beta_unique: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConflationReport {
    pub is_conflation: bool,
    pub c: f64,
    pub k: f64,
    pub beta: f64,
    pub residual: f64,
    pub uniqueness: UniquenessDiagnostics,
}

fn spread(g: &[f64]) -> f64 {
    let max = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = g.iter().copied().fold(f64::INFINITY, f64::min);
    max - min
}

fn centered(g: &[f64]) -> Vec<f64> {
    let mean = g.iter().sum::<f64>() / g.len() as f64;
    g.iter().map(|x| x - mean).collect()
}

/// Whether `g1 = c g2 + k` for some `c > 0` and `k`.
pub fn is_equivalent(g1: &[f64], g2: &[f64]) -> Result<bool> {
    if g1.len() != g2.len() {
        return invalid(format!("lengths differ: {} vs {}", g1.len(), g2.len()));
    }
    if g1.len() < 2 {
        return invalid("equivalence needs at least two states");
    }
    let (a, b) = (centered(g1), centered(g2));
    if spread(g2) <= CONSTANT_TOL {
        // c g2 + k is constant, so g1 must be too.
        return Ok(spread(g1) <= EQUIVALENCE_TOL);
    }
    if spread(g1) <= CONSTANT_TOL {
        return Ok(false);
    }
    let c = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / b.iter().map(|y| y * y).sum::<f64>();
    if c <= 0.0 {
        return Ok(false);
    }
    let residual = a.iter().zip(&b).map(|(x, y)| (x - c * y).abs()).fold(0.0, f64::max);
    Ok(residual <= EQUIVALENCE_TOL)
}

pub fn uniqueness_check(r: &[f64], v: &[f64]) -> Result<UniquenessDiagnostics> {
    if r.len() != v.len() {
        return invalid(format!("lengths differ: {} vs {}", r.len(), v.len()));
    }
    let r_constant = spread(r) <= CONSTANT_TOL;
    let v_constant = spread(v) <= CONSTANT_TOL;
    let neg_v: Vec<f64> = v.iter().map(|x| -x).collect();
    let r_equiv_v = is_equivalent(r, v)?;
    let r_equiv_neg_v = is_equivalent(r, &neg_v)?;
    Ok(UniquenessDiagnostics {
        r_constant,
        v_constant,
        r_equiv_v,
        r_equiv_neg_v,
        beta_unique: !r_constant && !v_constant && !r_equiv_v && !r_equiv_neg_v,
    })
}

/// Fits `(c, k, beta)` in `c r_hat + k = (1 - beta) r + beta v` by least squares.
pub fn decompose(r_hat: &[f64], r: &[f64], v: &[f64]) -> Result<ConflationReport> {
    let n = r.len();
    if r_hat.len() != n || v.len() != n {
        return invalid("r_hat, r and v must have equal lengths");
    }
    if is_equivalent(r, v)? {
        return Err(Error::IllPosed("r and v are equivalent; beta is not identifiable".into()));
    }
    let uniqueness = uniqueness_check(r, v)?;
    // Unknowns (c, k, beta): c r_hat + k 1 + beta (r - v) = r.
    let a = DMatrix::from_fn(n, 3, |s, j| match j {
        0 => r_hat[s],
        1 => 1.0,
        _ => r[s] - v[s],
    });
    let b = DVector::from_column_slice(r);
    let svd = a.svd(true, true);
    let x = svd
        .solve(&b, 1e-12)
        .map_err(|e| Error::Singular(format!("conflation least squares: {e}")))?;
    let (c, k, beta) = (x[0], x[1], x[2]);
    let residual = (0..n)
        .map(|s| (c * r_hat[s] + k - (1.0 - beta) * r[s] - beta * v[s]).abs())
        .fold(0.0, f64::max);
    let is_conflation =
        residual <= FIT_TOL && c > POSITIVE_TOL && beta > POSITIVE_TOL && beta <= 1.0 + BETA_UPPER_SLACK;
    Ok(ConflationReport { is_conflation, c, k, beta, residual, uniqueness })
}

/// The proxy `((1 - beta) r + beta v - k) / c`.
pub fn make_conflated(r: &[f64], v: &[f64], beta: f64, c: f64, k: f64) -> Result<RewardFunction> {
    if r.len() != v.len() {
        return invalid("r and v must have equal lengths");
    }
    if !(c > 0.0) || !c.is_finite() {
        return invalid(format!("scale c = {c} must be positive"));
    }
    if !(0.0..=1.0).contains(&beta) {
        return invalid(format!("beta = {beta} outside [0, 1]"));
    }
    RewardFunction::new(r.iter().zip(v).map(|(x, y)| ((1.0 - beta) * x + beta * y - k) / c).collect())
}

/// Whether `r_hat` ranks `s` above `s'` whenever both `r` and `v` do.
pub fn preserves_agreement(r_hat: &[f64], r: &[f64], v: &[f64]) -> bool {
    let n = r.len();
    (0..n).all(|s| (0..n).all(|t| !(r[s] > r[t] && v[s] > v[t]) || r_hat[s] > r_hat[t]))
}

/// `max_{s,s'} |c (r_hat(s) - r_hat(s')) - (1 - beta)(r(s) - r(s')) - beta (v(s) - v(s'))|`.
pub fn difference_identity_residual(r_hat: &[f64], r: &[f64], v: &[f64], c: f64, beta: f64) -> f64 {
    let n = r.len();
    let mut worst: f64 = 0.0;
    for s in 0..n {
        for t in 0..n {
            let lhs = c * (r_hat[s] - r_hat[t]);
            let rhs = (1.0 - beta) * (r[s] - r[t]) + beta * (v[s] - v[t]);
            worst = worst.max((lhs - rhs).abs());
        }
    }
    worst
}
