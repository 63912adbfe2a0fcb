//! Independent reference computations used by the integration and acceptance tests.
//!
//! Nothing here calls the library routine it checks: gradients come from central
//! differences, posteriors from Bayes' rule over an explicit transition matrix,
//! forward marginals from step-by-step chains, coverage from all-pairs distances.

#![allow(dead_code)]

use codi_core::nn::{DiffusionNet, Gradients, ParamId};
use codi_core::schedule::NoiseSchedule;
use codi_core::Tensor2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Outcome of comparing analytic gradients with central differences.
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub entries: usize,
    pub passed: usize,
    pub worst_rel: f64,
}

impl GradCheck {
    pub fn fraction(&self) -> f64 {
        self.passed as f64 / self.entries.max(1) as f64
    }
}

/// Relative error with a floor so entries where both values are at round-off level compare as equal.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let diff = (a - b).abs();
    if diff < 1e-9 {
        return 0.0;
    }
    diff / a.abs().max(b.abs())
}

/// Central differences `(L(θ + h) − L(θ − h)) / 2h` for every parameter entry.
pub fn finite_difference_check(
    net: &DiffusionNet,
    analytic: &Gradients,
    h: f64,
    tol: f64,
    mut loss: impl FnMut(&DiffusionNet) -> f64,
) -> GradCheck {
    let mut probe = net.clone();
    let mut check = GradCheck {
        entries: 0,
        passed: 0,
        worst_rel: 0.0,
    };
    for p in 0..net.params().len() {
        let g = analytic
            .get(ParamId(p))
            .expect("every parameter has a gradient");
        for j in 0..net.params()[p].value.len() {
            let orig = net.params()[p].value.data()[j];
            probe.params_mut()[p].value.data_mut()[j] = orig + h;
            let up = loss(&probe);
            probe.params_mut()[p].value.data_mut()[j] = orig - h;
            let down = loss(&probe);
            probe.params_mut()[p].value.data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let r = rel_err(g.data()[j], numeric);
            check.entries += 1;
            if r <= tol {
                check.passed += 1;
            }
            check.worst_rel = check.worst_rel.max(r);
        }
    }
    check
}

/// Single-step kernel `Q_t[i][j] = q(x_t = i | x_{t−1} = j) = α_t 1[i=j] + (1 − α_t)/K`.
pub fn step_kernel(k: usize, alpha: f64) -> Vec<Vec<f64>> {
    (0..k)
        .map(|i| {
            (0..k)
                .map(|j| alpha * f64::from(u8::from(i == j)) + (1.0 - alpha) / k as f64)
                .collect()
        })
        .collect()
}

/// `q(x_t | x_0)` obtained by multiplying single-step kernels, not from the closed form.
pub fn marginal_by_products(k: usize, x0: usize, t: usize, sched: &NoiseSchedule) -> Vec<f64> {
    let mut p = vec![0.0; k];
    p[x0] = 1.0;
    for s in 1..=t {
        let q = step_kernel(k, sched.alpha(s));
        p = (0..k)
            .map(|i| (0..k).map(|j| q[i][j] * p[j]).sum())
            .collect();
    }
    p
}

/// `q(x_{t−1} = j | x_t = i, x_0 = a)` by Bayes' rule over enumerated states.
pub fn bayes_posterior(
    k: usize,
    xt: usize,
    x0: usize,
    t: usize,
    sched: &NoiseSchedule,
) -> Vec<f64> {
    let q = step_kernel(k, sched.alpha(t));
    let prior = marginal_by_products(k, x0, t - 1, sched);
    let joint: Vec<f64> = (0..k).map(|j| q[xt][j] * prior[j]).collect();
    let evidence: f64 = joint.iter().sum();
    joint.iter().map(|v| v / evidence).collect()
}

/// `Σ_a π(a) q(x_{t−1} | x_t, x_0 = a)`: reverse distribution as the explicit mixture.
pub fn explicit_mixture(
    k: usize,
    xt: usize,
    pi: &[f64],
    t: usize,
    sched: &NoiseSchedule,
) -> Vec<f64> {
    let mut out = vec![0.0; k];
    for (a, &w) in pi.iter().enumerate() {
        for (o, v) in out.iter_mut().zip(bayes_posterior(k, xt, a, t, sched)) {
            *o += w * v;
        }
    }
    out
}

/// Runs `n` independent Gaussian chains `x_s = √(1−β_s) x_{s−1} + √β_s ε` from `x0` to `t`.
pub fn gaussian_chain<R: Rng>(
    x0: f64,
    t: usize,
    n: usize,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Vec<f64> {
    let mut xs = vec![x0; n];
    for s in 1..=t {
        let b = sched.beta(s);
        let (a, sd) = ((1.0 - b).sqrt(), b.sqrt());
        for x in xs.iter_mut() {
            let e: f64 = StandardNormal.sample(rng);
            *x = a * *x + sd * e;
        }
    }
    xs
}

/// Runs `n` categorical chains with the single-step kernel and returns state frequencies.
pub fn categorical_chain<R: Rng>(
    k: usize,
    x0: usize,
    t: usize,
    n: usize,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Vec<f64> {
    let mut xs = vec![x0; n];
    for s in 1..=t {
        let alpha = sched.alpha(s);
        for x in xs.iter_mut() {
            // keep with probability α, otherwise resample uniformly (which may return the same state)
            if rng.random::<f64>() >= alpha {
                *x = rng.random_range(0..k);
            }
        }
    }
    let mut freq = vec![0.0; k];
    xs.iter().for_each(|&x| freq[x] += 1.0 / n as f64);
    freq
}

pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

pub fn tv(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Coverage from a full distance matrix: for each real point, sort its distances
/// to all other real points, take the k-th, and look for any fake point within it.
pub fn brute_force_coverage(real: &Tensor2, fake: &Tensor2, k: usize) -> f64 {
    let n = real.rows();
    let matrix: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| dist(real.row(i), real.row(j))).collect())
        .collect();
    let mut covered = 0;
    for (i, row) in matrix.iter().enumerate() {
        let mut others: Vec<f64> = row
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, d)| *d)
            .collect();
        others.sort_by(|a, b| a.total_cmp(b));
        let radius = others[k - 1];
        if (0..fake.rows()).any(|j| dist(real.row(i), fake.row(j)) <= radius) {
            covered += 1;
        }
    }
    covered as f64 / n as f64
}

pub fn random_points<R: Rng>(n: usize, d: usize, rng: &mut R) -> Tensor2 {
    Tensor2::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0))
}

pub fn randn<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor2 {
    Tensor2::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}
