//! Reward learning from trajectory comparisons.
//!
//! Both the empirical loss over a dataset and the asymptotic loss over a
//! comparison distribution are logistic losses in the feature difference
//! `counts(h) - counts(h')`, so they share one objective type. Minimization is
//! a damped Newton method with Armijo backtracking over a gauge-fixed subspace.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::canonical::{self, CanonicalParams};
use crate::chain::average_reward;
use crate::error::{invalid, Result};
use crate::lp::has_positive_null_combination;
use crate::mdp::{Policy, RewardFunction};
use crate::optimize::optimize;
use crate::preference::{
    bootstrapped_return, compares_transitions, sample_dataset, segment_return, ComparisonDistribution,
    PreferenceDataset,
};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_L2: f64 = 1e-6;
pub const MAX_ITERATIONS: usize = 1_000_000;
const ARMIJO: f64 = 1e-4;
const RANK_TOL: f64 = 1e-9;
const POLISH_STEPS: usize = 5_000;
const MIN_SQRT_WEIGHT: f64 = 1e-150;

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `(sigma(x), sigma(-x))`, each with full relative precision.
fn sigmoid_pair(x: f64) -> (f64, f64) {
    if x >= 0.0 {
        let e = (-x).exp();
        (1.0 / (1.0 + e), e / (1.0 + e))
    } else {
        let e = x.exp();
        (e / (1.0 + e), 1.0 / (1.0 + e))
    }
}

#[derive(Debug, Clone)]
struct Row {
    features: Vec<f64>,
    weight: f64,
    /// Target probability that the first segment is chosen, and its complement.
    p_pos: f64,
    p_neg: f64,
    ln_pos: f64,
    ln_neg: f64,
}

impl Row {
    fn target_logit(&self) -> f64 {
        self.ln_pos - self.ln_neg
    }
}

/// Weighted logistic loss `sum_i w_i CE(target_i, sigma(a_i . r))` plus `l2 |r|^2`.
#[derive(Debug, Clone)]
pub struct LogisticObjective {
    n_states: usize,
    rows: Vec<Row>,
    l2: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn difference_features(pair_h: &crate::preference::Trajectory, pair_hp: &crate::preference::Trajectory, n: usize) -> Vec<f64> {
    let (a, b) = (pair_h.state_counts(n), pair_hp.state_counts(n));
    a.iter().zip(&b).map(|(x, y)| x - y).collect()
}

impl LogisticObjective {
    /// Expected loss when pairs are drawn from `d` and choices follow bootstrapped returns.
    pub fn asymptotic(d: &ComparisonDistribution, r: &[f64], v: &[f64]) -> Result<Self> {
        let n = r.len();
        if v.len() != n {
            return invalid("reward and value lengths differ");
        }
        d.check_states(n)?;
        let rows = d
            .support()
            .iter()
            .map(|w| {
                let logit = bootstrapped_return(&w.pair.h, r, v) - bootstrapped_return(&w.pair.h_prime, r, v);
                let (p_pos, p_neg) = sigmoid_pair(logit);
                Row {
                    features: difference_features(&w.pair.h, &w.pair.h_prime, n),
                    weight: w.probability,
                    p_pos,
                    p_neg,
                    ln_pos: -softplus(-logit),
                    ln_neg: -softplus(logit),
                }
            })
            .collect();
        Ok(Self { n_states: n, rows, l2: 0.0 })
    }

    /// Mean loss over a dataset, with records sharing a feature difference merged.
    pub fn empirical(data: &PreferenceDataset, n_states: usize, l2: f64) -> Result<Self> {
        if data.is_empty() {
            return invalid("dataset is empty");
        }
        if !(l2 >= 0.0) || !l2.is_finite() {
            return invalid(format!("l2 = {l2} must be nonnegative"));
        }
        let mut groups: BTreeMap<Vec<i64>, (u64, u64)> = BTreeMap::new();
        for rec in &data.records {
            rec.h.check_states(n_states)?;
            rec.hp.check_states(n_states)?;
            let key: Vec<i64> = difference_features(&rec.h, &rec.hp, n_states).iter().map(|&x| x as i64).collect();
            let entry = groups.entry(key).or_default();
            if rec.y == 1 {
                entry.0 += 1;
            } else {
                entry.1 += 1;
            }
        }
        let total = data.len() as f64;
        let rows = groups
            .into_iter()
            .map(|(key, (pos, neg))| {
                let count = (pos + neg) as f64;
                Row {
                    features: key.into_iter().map(|x| x as f64).collect(),
                    weight: count / total,
                    p_pos: pos as f64 / count,
                    p_neg: neg as f64 / count,
                    ln_pos: (pos as f64 / count).ln(),
                    ln_neg: (neg as f64 / count).ln(),
                }
            })
            .collect();
        Ok(Self { n_states, rows, l2 })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn value(&self, r: &[f64]) -> f64 {
        let data: f64 = self
            .rows
            .iter()
            .map(|row| {
                let x = dot(&row.features, r);
                row.weight * (row.p_pos * softplus(-x) + row.p_neg * softplus(x))
            })
            .sum();
        data + self.l2 * dot(r, r)
    }

    pub fn gradient(&self, r: &[f64]) -> Vec<f64> {
        let mut g: Vec<f64> = r.iter().map(|x| 2.0 * self.l2 * x).collect();
        for row in &self.rows {
            let (sp, sn) = sigmoid_pair(dot(&row.features, r));
            let coef = row.weight * (row.p_neg * sp - row.p_pos * sn);
            for (gi, ai) in g.iter_mut().zip(&row.features) {
                *gi += coef * ai;
            }
        }
        g
    }

    pub fn hessian(&self, r: &[f64]) -> DMatrix<f64> {
        let n = self.n_states;
        let mut h = DMatrix::identity(n, n) * (2.0 * self.l2);
        for row in &self.rows {
            let (sp, sn) = sigmoid_pair(dot(&row.features, r));
            let w = row.weight * sp * sn;
            let a = DVector::from_column_slice(&row.features);
            h += &a * a.transpose() * w;
        }
        h
    }

    /// Full Newton steps from `z`, each solved as a weighted least-squares
    /// problem in logit units so rows with vanishing curvature keep their
    /// precision. Returns the final point and the size of the last step.
    fn polish(&self, basis: &DMatrix<f64>, z: &DVector<f64>, tol: f64) -> Option<(DVector<f64>, f64)> {
        let mut z = z.clone();
        let mut size = f64::INFINITY;
        for _ in 0..POLISH_STEPS {
            let r: Vec<f64> = (basis * &z).iter().copied().collect();
            let step = self.weighted_newton_step(basis, &r)?;
            let full = basis * &step;
            size = full.amax();
            if size <= 1e-3 * tol {
                break;
            }
            // Trust region of one logit unit per comparison.
            let reach = self.rows.iter().map(|row| dot(&row.features, full.as_slice()).abs()).fold(0.0, f64::max);
            z += step * (1.0 / reach.max(1.0));
        }
        Some((z, size))
    }

    fn weighted_newton_step(&self, basis: &DMatrix<f64>, r: &[f64]) -> Option<DVector<f64>> {
        // Log-domain weights and residuals so saturated rows keep their information.
        let mut rows: Vec<(f64, DVector<f64>, f64)> = Vec::new();
        for row in &self.rows {
            if row.weight == 0.0 {
                continue;
            }
            let x = dot(&row.features, r);
            let (ln_sp, ln_sn) = (-softplus(-x), -softplus(x));
            let residual = if x >= 0.0 {
                -(row.ln_neg - ln_sn).exp_m1() / ln_sp.exp()
            } else {
                (row.ln_pos - ln_sp).exp_m1() / ln_sn.exp()
            };
            let a = basis.transpose() * DVector::from_column_slice(&row.features);
            rows.push((row.weight.ln() + ln_sp + ln_sn, a, residual.clamp(-1e12, 1e12)));
        }
        let top = rows.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max);
        for row in &mut rows {
            row.0 = ((row.0 - top) / 2.0).exp().max(MIN_SQRT_WEIGHT);
        }
        let dim = basis.ncols();
        if rows.len() < dim {
            return None;
        }
        // Decreasing weight order keeps pivoted QR stable for stiff weights.
        rows.sort_by(|a, b| b.0.total_cmp(&a.0));
        let m = DMatrix::from_fn(rows.len(), dim, |i, j| rows[i].0 * rows[i].1[j]);
        let rhs = DVector::from_iterator(rows.len(), rows.iter().map(|(s, _, b)| s * b));
        let qr = m.col_piv_qr();
        let (q, rr) = (qr.q(), qr.r());
        if (0..dim).any(|i| rr[(i, i)] == 0.0) {
            return None;
        }
        let mut u = rr.solve_upper_triangular(&(q.transpose() * rhs))?;
        qr.p().inv_permute_rows(&mut u);
        u.iter().all(|x| x.is_finite()).then_some(u)
    }

    /// Weighted least-squares fit of the target logits, exact when every
    /// comparison can be matched at once.
    fn logit_fit(&self, basis: &DMatrix<f64>) -> Option<DVector<f64>> {
        let rows: Vec<&Row> = self.rows.iter().filter(|r| r.weight > 0.0).collect();
        if rows.iter().any(|r| !r.target_logit().is_finite()) {
            return None;
        }
        let dim = basis.ncols();
        let a = DMatrix::from_fn(rows.len(), dim, |i, j| {
            rows[i].weight.sqrt() * (0..self.n_states).map(|s| rows[i].features[s] * basis[(s, j)]).sum::<f64>()
        });
        let b = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.weight.sqrt() * r.target_logit()));
        let z = a.svd(true, true).solve(&b, 1e-12).ok()?;
        z.iter().all(|x| x.is_finite()).then_some(z)
    }

    /// Orthonormal basis (columns) of the span of the feature differences.
    fn identified_basis(&self) -> DMatrix<f64> {
        let n = self.n_states;
        let rows: Vec<&Row> = self.rows.iter().filter(|r| r.features.iter().any(|&x| x != 0.0)).collect();
        if rows.is_empty() {
            return DMatrix::zeros(n, 0);
        }
        let a = DMatrix::from_fn(rows.len(), n, |i, j| rows[i].features[j]);
        let svd = a.svd(false, true);
        let v_t = svd.v_t.expect("requested V^T");
        let max_sv = svd.singular_values.max();
        let cols: Vec<DVector<f64>> = svd
            .singular_values
            .iter()
            .enumerate()
            .filter(|(_, &sv)| sv > RANK_TOL * max_sv.max(1.0))
            .map(|(i, _)| v_t.row(i).transpose())
            .collect();
        if cols.is_empty() {
            DMatrix::zeros(n, 0)
        } else {
            DMatrix::from_columns(&cols)
        }
    }

    fn shift_invariant(&self) -> bool {
        self.l2 == 0.0 && self.rows.iter().all(|r| r.features.iter().sum::<f64>().abs() < 1e-12)
    }

    /// Whether the infimum is attained: no direction improves every row at once.
    fn has_finite_minimizer(&self) -> bool {
        if self.l2 > 0.0 {
            return true;
        }
        let mut signed = Vec::new();
        for row in &self.rows {
            if row.ln_pos > f64::NEG_INFINITY {
                signed.push(row.features.clone());
            }
            if row.ln_neg > f64::NEG_INFINITY {
                signed.push(row.features.iter().map(|x| -x).collect());
            }
        }
        has_positive_null_combination(&signed)
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LossPoint {
    pub iteration: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LearnedReward {
    pub r_hat: RewardFunction,
    pub final_loss: f64,
    /// Max-norm of the gradient projected onto the optimized subspace.
    pub gradient_norm: f64,
    /// Max-norm of the last Newton step, an estimate of the remaining error.
    pub step_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// The data admit a direction along which the loss decreases forever.
    pub separable: bool,
    pub gauge: String,
    /// Whether `r_hat(s) - r_hat(gauge_state)` is pinned down by the comparisons.
    pub identified: Vec<bool>,
    pub loss_curve: Vec<LossPoint>,
}

#[derive(Debug, Clone, Copy)]
pub struct MinimizeOptions {
    pub gauge_state: usize,
    pub tol: f64,
    pub max_iterations: usize,
}

impl MinimizeOptions {
    pub fn new(gauge_state: usize, tol: f64) -> Self {
        Self { gauge_state, tol, max_iterations: MAX_ITERATIONS }
    }
}

pub fn minimize(objective: &LogisticObjective, options: MinimizeOptions) -> Result<LearnedReward> {
    let n = objective.n_states;
    let g_state = options.gauge_state;
    if g_state >= n {
        return invalid(format!("gauge state {g_state} out of range for {n} states"));
    }
    if !(options.tol > 0.0) {
        return invalid("tolerance must be positive");
    }
    let identified_basis = objective.identified_basis();
    let identified: Vec<bool> = (0..n)
        .map(|s| {
            let mut e = DVector::zeros(n);
            e[s] += 1.0;
            e[g_state] -= 1.0;
            let proj = &identified_basis * (identified_basis.transpose() * &e);
            (e - proj).amax() <= 1e-9
        })
        .collect();

    let (basis, gauge) = if objective.l2 > 0.0 {
        let cols: Vec<DVector<f64>> = (0..n)
            .filter(|&s| s != g_state)
            .map(|s| {
                let mut e = DVector::zeros(n);
                e[s] = 1.0;
                e
            })
            .collect();
        let b = if cols.is_empty() { DMatrix::zeros(n, 0) } else { DMatrix::from_columns(&cols) };
        (b, format!("r({g_state}) = 0, l2 = {}", objective.l2))
    } else if objective.shift_invariant() {
        (identified_basis, format!("r({g_state}) = 0; unidentified directions left at 0"))
    } else {
        (identified_basis, "minimum norm within the identified subspace; loss is not shift-invariant".to_string())
    };
    let separable = !objective.has_finite_minimizer();

    let dim = basis.ncols();
    let to_full = |z: &DVector<f64>| -> Vec<f64> { (&basis * z).iter().copied().collect() };
    let mut z = DVector::<f64>::zeros(dim);
    let mut r = to_full(&z);
    let mut f = objective.value(&r);
    if objective.l2 == 0.0 && !separable && dim > 0 {
        if let Some(start) = objective.logit_fit(&basis) {
            let r_start = to_full(&start);
            let f_start = objective.value(&r_start);
            if f_start <= f {
                (z, r, f) = (start, r_start, f_start);
            }
        }
    }
    let mut loss_curve = vec![LossPoint { iteration: 0, loss: f }];
    let mut iterations = 0;
    let mut grad_norm;
    let mut step_norm = 0.0;
    let mut stalled = false;
    loop {
        let g_full = DVector::from_vec(objective.gradient(&r));
        let gz = basis.transpose() * &g_full;
        grad_norm = if dim == 0 { 0.0 } else { (&basis * &gz).amax() };
        if dim == 0 || iterations >= options.max_iterations {
            break;
        }
        let h = basis.transpose() * objective.hessian(&r) * &basis;
        let step = newton_direction(&h, &gz);
        // With a ridge term the Newton step is reliable and measures the error.
        let small_step = objective.l2 == 0.0 || (&basis * &step).amax() <= options.tol;
        if grad_norm <= options.tol && small_step {
            break;
        }
        let slope = gz.dot(&step);
        let mut t = 1.0;
        let accepted = loop {
            let trial = &z + &step * t;
            let r_trial = to_full(&trial);
            let f_trial = objective.value(&r_trial);
            if f_trial <= f + ARMIJO * t * slope + 4.0 * f64::EPSILON * f.abs() {
                break Some((trial, r_trial, f_trial));
            }
            t *= 0.5;
            if t < 1e-20 {
                break None;
            }
        };
        iterations += 1;
        match accepted {
            Some((trial, r_trial, f_trial)) => {
                let moved = (&trial - &z).amax();
                z = trial;
                r = r_trial;
                f = f_trial;
                loss_curve.push(LossPoint { iteration: iterations, loss: f });
                if moved <= f64::EPSILON * (1.0 + z.amax()) {
                    stalled = true;
                }
            }
            None => stalled = true,
        }
        if stalled {
            let g_full = DVector::from_vec(objective.gradient(&r));
            grad_norm = (&basis * (basis.transpose() * g_full)).amax();
            break;
        }
    }

    if !separable && dim > 0 {
        if objective.l2 == 0.0 {
            if let Some((z_polished, remaining)) = objective.polish(&basis, &z, options.tol) {
                z = z_polished;
                r = to_full(&z);
                f = objective.value(&r);
                step_norm = remaining;
                let g_full = DVector::from_vec(objective.gradient(&r));
                grad_norm = (&basis * (basis.transpose() * g_full)).amax();
            } else {
                step_norm = f64::INFINITY;
            }
        } else {
            let g_full = DVector::from_vec(objective.gradient(&r));
            let gz = basis.transpose() * g_full;
            let h = basis.transpose() * objective.hessian(&r) * &basis;
            step_norm = (&basis * newton_direction(&h, &gz)).amax();
        }
    }

    if objective.shift_invariant() {
        let offset = r[g_state];
        r.iter_mut().for_each(|x| *x -= offset);
    }
    Ok(LearnedReward {
        r_hat: RewardFunction::new(r)?,
        final_loss: f,
        gradient_norm: grad_norm,
        step_norm,
        iterations,
        converged: grad_norm <= options.tol && step_norm <= options.tol && !separable,
        separable,
        gauge,
        identified,
        loss_curve,
    })
}

/// Newton step `-H^{-1} g`, regularized until `H` is positive definite; falls
/// back to steepest descent.
fn newton_direction(h: &DMatrix<f64>, g: &DVector<f64>) -> DVector<f64> {
    let scale = h.diagonal().amax().max(1e-300);
    let mut mu = 0.0;
    for _ in 0..40 {
        let shifted = h + DMatrix::identity(h.nrows(), h.ncols()) * mu;
        if let Some(chol) = shifted.cholesky() {
            let step = -chol.solve(g);
            if step.iter().all(|x| x.is_finite()) && step.dot(g) < 0.0 {
                return step;
            }
        }
        mu = if mu == 0.0 { 1e-14 * scale } else { mu * 10.0 };
    }
    -g
}

/// Mean negative log-likelihood of the dataset under the learner's model.
pub fn empirical_loss(r_tilde: &[f64], data: &PreferenceDataset) -> Result<f64> {
    if data.is_empty() {
        return invalid("dataset is empty");
    }
    let mut total = 0.0;
    for rec in &data.records {
        rec.h.check_states(r_tilde.len())?;
        rec.hp.check_states(r_tilde.len())?;
        let x = segment_return(&rec.h, r_tilde) - segment_return(&rec.hp, r_tilde);
        total += if rec.y == 1 { softplus(-x) } else { softplus(x) };
    }
    Ok(total / data.len() as f64)
}

pub fn empirical_loss_gradient(r_tilde: &[f64], data: &PreferenceDataset) -> Result<Vec<f64>> {
    Ok(LogisticObjective::empirical(data, r_tilde.len(), 0.0)?.gradient(r_tilde))
}

/// Cross-entropy between bootstrapped-return choices and the learner's model,
/// in expectation over `d`.
pub fn asymptotic_loss(r_tilde: &[f64], d: &ComparisonDistribution, r: &[f64], v: &[f64]) -> Result<f64> {
    if r_tilde.len() != r.len() {
        return invalid("r_tilde and r lengths differ");
    }
    Ok(LogisticObjective::asymptotic(d, r, v)?.value(r_tilde))
}

pub fn asymptotic_loss_gradient(r_tilde: &[f64], d: &ComparisonDistribution, r: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    if r_tilde.len() != r.len() {
        return invalid("r_tilde and r lengths differ");
    }
    Ok(LogisticObjective::asymptotic(d, r, v)?.gradient(r_tilde))
}

/// Minimizer of the asymptotic loss with `r_hat(gauge_state) = 0`.
pub fn minimize_asymptotic(d: &ComparisonDistribution, r: &[f64], v: &[f64], gauge_state: usize, tol: f64) -> Result<LearnedReward> {
    if !compares_transitions(d) {
        return invalid("asymptotic minimization needs a distribution that compares transitions");
    }
    minimize(&LogisticObjective::asymptotic(d, r, v)?, MinimizeOptions::new(gauge_state, tol))
}

pub fn minimize_empirical(data: &PreferenceDataset, n_states: usize, gauge_state: usize, tol: f64, l2: f64) -> Result<LearnedReward> {
    minimize(&LogisticObjective::empirical(data, n_states, l2)?, MinimizeOptions::new(gauge_state, tol))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PipelineMode {
    Exact,
    Sampled { n: usize, seed: u64, l2: f64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineReport {
    pub params: CanonicalParams,
    pub mode: PipelineMode,
    pub threshold: f64,
    pub above_threshold: bool,
    pub optimal_value: Vec<f64>,
    pub learned: LearnedReward,
    pub proxy_optimal_policies: Vec<Vec<usize>>,
    pub proxy_policy: Vec<usize>,
    pub proxy_gain: f64,
    /// True average reward of each proxy-optimal policy.
    pub true_gains: Vec<f64>,
    pub true_gain: f64,
    pub aligned_gain: f64,
    pub misaligned: bool,
}

/// Learn a reward on the canonical example from comparisons, optimize it, and
/// score the result under the true reward.
pub fn misalignment_pipeline(params: CanonicalParams, d: &ComparisonDistribution, mode: PipelineMode) -> Result<PipelineReport> {
    let (mdp, r, _, v) = canonical::optimal_value(params)?;
    if !compares_transitions(d) {
        return invalid("pipeline needs a distribution that compares transitions");
    }
    if !crate::preference::comparison_graph(d, mdp.n_states())?.connects_all() {
        return invalid("pipeline needs a distribution that connects all states");
    }
    let learned = match mode {
        PipelineMode::Exact => minimize_asymptotic(d, r.values(), &v, canonical::COMMON, DEFAULT_TOL)?,
        PipelineMode::Sampled { n, seed, l2 } => {
            let data = sample_dataset(d, &r, &v, n, seed)?;
            minimize_empirical(&data, mdp.n_states(), canonical::COMMON, DEFAULT_TOL, l2)?
        }
    };
    let proxy = optimize(&mdp, &learned.r_hat)?;
    let true_gains = proxy
        .all_optimal_policies
        .iter()
        .map(|actions| average_reward(&mdp, &r, &Policy::deterministic(actions, mdp.n_actions())?))
        .collect::<Result<Vec<f64>>>()?;
    let true_gain = true_gains[0];
    let threshold = canonical::learning_threshold(params.epsilon);
    Ok(PipelineReport {
        params,
        mode,
        threshold,
        above_threshold: params.m > threshold,
        optimal_value: v,
        proxy_policy: proxy.optimal_actions.clone(),
        proxy_gain: proxy.optimal_gain,
        proxy_optimal_policies: proxy.all_optimal_policies,
        misaligned: (true_gain - canonical::WORST_GAIN).abs() <= crate::optimize::GAIN_TIE_TOL,
        true_gains,
        true_gain,
        aligned_gain: canonical::closed_form_gain(params),
        learned,
    })
}
