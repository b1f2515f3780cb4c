//! Independent reference computations for the integration tests.
//!
//! Nothing here calls into the library's solvers: chains are assembled by
//! hand, linear systems use plain Gaussian elimination, and long-run
//! averages come from power iteration or simulation.

#![allow(dead_code)]

use conflation_core::preference::{ComparisonDistribution, Trajectory, TrajectoryPair};
use conflation_core::Mdp;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub type Matrix = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// `P_pi[s][t] = sum_a pi[s][a] P[a][s][t]`.
pub fn chain(mdp: &Mdp, probs: &[Vec<f64>]) -> Matrix {
    let n = mdp.n_states();
    (0..n)
        .map(|s| (0..n).map(|t| (0..mdp.n_actions()).map(|a| probs[s][a] * mdp.prob(a, s, t)).sum()).collect())
        .collect()
}

pub fn one_hot_policy(actions: &[usize], n_actions: usize) -> Matrix {
    actions.iter().map(|&a| (0..n_actions).map(|b| if a == b { 1.0 } else { 0.0 }).collect()).collect()
}

pub fn det_chain(mdp: &Mdp, actions: &[usize]) -> Matrix {
    chain(mdp, &one_hot_policy(actions, mdp.n_actions()))
}

/// Cesaro average `(1/T) sum_{t<T} e_start^T P^t`.
pub fn power_cesaro(p: &Matrix, start: usize, steps: usize) -> Vec<f64> {
    let n = p.len();
    let mut dist = vec![0.0; n];
    dist[start] = 1.0;
    let mut acc = vec![0.0; n];
    for _ in 0..steps {
        for (a, d) in acc.iter_mut().zip(&dist) {
            *a += d;
        }
        let mut next = vec![0.0; n];
        for s in 0..n {
            for t in 0..n {
                next[t] += dist[s] * p[s][t];
            }
        }
        dist = next;
    }
    acc.iter().map(|x| x / steps as f64).collect()
}

/// Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Matrix, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        assert!(a[col][col].abs() > 1e-14, "singular oracle system");
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let tail: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - tail) / a[i][i];
    }
    x
}

/// Gain and bias of a unichain `p` from the bordered system
/// `[(I - P) 1; phi^T 0] [V; g] = [r; 0]`, with `phi` the stationary law.
pub fn poisson_oracle(p: &Matrix, r: &[f64]) -> (f64, Vec<f64>) {
    let n = p.len();
    let phi = stationary_oracle(p);
    let mut a = vec![vec![0.0; n + 1]; n + 1];
    let mut b = vec![0.0; n + 1];
    for s in 0..n {
        for t in 0..n {
            a[s][t] = f64::from(u8::from(s == t)) - p[s][t];
        }
        a[s][n] = 1.0;
        b[s] = r[s];
        a[n][s] = phi[s];
    }
    let x = gauss_solve(a, b);
    (x[n], x[..n].to_vec())
}

/// Stationary law of a unichain matrix: `phi^T (I - P) = 0`, `sum phi = 1`,
/// with the last balance equation replaced by the normalization.
pub fn stationary_oracle(p: &Matrix) -> Vec<f64> {
    let n = p.len();
    let mut a = vec![vec![0.0; n]; n];
    let mut b = vec![0.0; n];
    for t in 0..n - 1 {
        for s in 0..n {
            a[t][s] = f64::from(u8::from(s == t)) - p[s][t];
        }
    }
    a[n - 1] = vec![1.0; n];
    b[n - 1] = 1.0;
    gauss_solve(a, b)
}

/// Mean reward along one long simulated trajectory and its batch-means standard error.
pub fn rollout_gain(mdp: &Mdp, r: &[f64], probs: &[Vec<f64>], steps: usize, seed: u64) -> (f64, f64) {
    let mut rng = rng(seed);
    let batches = 100;
    let per = steps / batches;
    let mut s = mdp.initial_state();
    let mut means = Vec::with_capacity(batches);
    let sample = |weights: &[f64], rng: &mut ChaCha20Rng| {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        weights.iter().rposition(|&w| w > 0.0).unwrap()
    };
    for _ in 0..batches {
        let mut total = 0.0;
        for _ in 0..per {
            total += r[s];
            let a = sample(&probs[s], &mut rng);
            s = sample(mdp.row(a, s), &mut rng);
        }
        means.push(total / per as f64);
    }
    let mean = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (mean, (var / batches as f64).sqrt())
}

pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut up = x.to_vec();
            let mut down = x.to_vec();
            up[i] += h;
            down[i] -= h;
            (f(&up) - f(&down)) / (2.0 * h)
        })
        .collect()
}

pub fn all_policies(n_states: usize, n_actions: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..n_states {
        out = out
            .into_iter()
            .flat_map(|prefix: Vec<usize>| {
                (0..n_actions).map(move |a| {
                    let mut p = prefix.clone();
                    p.push(a);
                    p
                })
            })
            .collect();
    }
    out
}

pub fn random_distribution(rng: &mut ChaCha20Rng, n: usize, sparsity: f64) -> Vec<f64> {
    loop {
        let w: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < sparsity { 0.0 } else { rng.random::<f64>() }).collect();
        let total: f64 = w.iter().sum();
        if total > 1e-3 {
            let mut p: Vec<f64> = w.iter().map(|x| x / total).collect();
            let rest: f64 = p[..n - 1].iter().sum();
            p[n - 1] = (1.0 - rest).max(0.0);
            if (p.iter().sum::<f64>() - 1.0).abs() < 1e-13 {
                return p;
            }
        }
    }
}

/// Random MDP; `sparsity` is the chance that a transition entry is zero.
pub fn random_mdp(rng: &mut ChaCha20Rng, n: usize, k: usize, sparsity: f64) -> Mdp {
    let transitions = (0..k).map(|_| (0..n).map(|_| random_distribution(rng, n, sparsity)).collect()).collect();
    Mdp::new(transitions, rng.random_range(0..n)).unwrap()
}

pub fn random_policy(rng: &mut ChaCha20Rng, n: usize, k: usize) -> Matrix {
    (0..n).map(|_| random_distribution(rng, k, 0.3)).collect()
}

pub fn random_vector(rng: &mut ChaCha20Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn step(s: usize, a: usize, t: usize) -> Trajectory {
    Trajectory::new(vec![s, t], vec![a]).unwrap()
}

/// Random transition comparisons whose successor graph is a random spanning
/// tree plus a few extra edges. Needs at least two actions.
pub fn random_connecting_comparisons(rng: &mut ChaCha20Rng, mdp: &Mdp) -> ComparisonDistribution {
    let n = mdp.n_states();
    let k = mdp.n_actions();
    let mut edges = Vec::new();
    for v in 1..n {
        edges.push((rng.random_range(0..v), v));
    }
    for _ in 0..rng.random_range(0..n) {
        let u = rng.random_range(0..n);
        let v = rng.random_range(0..n);
        if u != v {
            edges.push((u, v));
        }
    }
    let pairs = edges
        .into_iter()
        .map(|(u, v)| {
            let s = rng.random_range(0..n);
            let a = rng.random_range(0..k);
            let b = (a + rng.random_range(1..k)) % k;
            (TrajectoryPair::new(step(s, a, u), step(s, b, v)), rng.random_range(0.1..1.0))
        })
        .collect::<Vec<_>>();
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let mut support: Vec<(TrajectoryPair, f64)> = pairs.into_iter().map(|(p, w)| (p, w / total)).collect();
    let rest: f64 = support[..support.len() - 1].iter().map(|p| p.1).sum();
    support.last_mut().unwrap().1 = 1.0 - rest;
    ComparisonDistribution::new(support).unwrap()
}

pub fn max_centered_deviation(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diff.iter().sum::<f64>() / diff.len() as f64;
    diff.iter().map(|d| (d - mean).abs()).fold(0.0, f64::max)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Equally spaced points, both ends included.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}
