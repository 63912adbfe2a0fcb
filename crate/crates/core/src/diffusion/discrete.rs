//! Multinomial diffusion over one-hot encoded discrete columns.
//!
//! Every discrete column `i` with `K_i` categories diffuses independently with
//! the uniform-noise kernel `q(x_t | x_{t−1}) = C(α_t·x_{t−1} + (1 − α_t)/K_i)`.
//! States are stored as one `batch × ΣK_i` matrix partitioned into column blocks.

use rand::Rng;

use super::row_timesteps;
use crate::nn::{Tape, Tensor2, Var};
use crate::schedule::NoiseSchedule;
use crate::{Error, Result};

/// Lower clamp applied before every logarithm.
pub const LOG_FLOOR: f64 = 1e-30;

const NORM_TOL: f64 = 1e-9;

#[inline]
fn safe_ln(p: f64) -> f64 {
    p.max(LOG_FLOOR).ln()
}

/// Per-column categorical distributions (or one-hot samples) for a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoricalState {
    sizes: Vec<usize>,
    probs: Tensor2,
    one_hot: bool,
}

impl CategoricalState {
    /// Validates that every row block is a distribution, and one-hot when flagged.
    pub fn new(sizes: Vec<usize>, probs: Tensor2, one_hot: bool) -> Result<Self> {
        if let Some(k) = sizes.iter().find(|&&k| k < 2) {
            return Err(Error::Categorical(format!("column with {k} categories")));
        }
        let width: usize = sizes.iter().sum();
        if probs.cols() != width {
            return Err(Error::shape("categorical blocks", width, probs.cols()));
        }
        let state = Self {
            sizes,
            probs,
            one_hot,
        };
        state.validate()?;
        Ok(state)
    }

    fn validate(&self) -> Result<()> {
        for r in 0..self.probs.rows() {
            let row = self.probs.row(r);
            let mut off = 0;
            for (col, &k) in self.sizes.iter().enumerate() {
                let block = &row[off..off + k];
                if block.iter().any(|p| !(-1e-12..=1.0 + 1e-12).contains(p)) {
                    return Err(Error::Categorical(format!(
                        "row {r} column {col}: entries outside [0, 1]"
                    )));
                }
                let sum: f64 = block.iter().sum();
                if (sum - 1.0).abs() > NORM_TOL {
                    return Err(Error::Categorical(format!(
                        "row {r} column {col}: block sums to {sum}"
                    )));
                }
                if self.one_hot && block.iter().any(|&p| p != 0.0 && p != 1.0) {
                    return Err(Error::Categorical(format!(
                        "row {r} column {col}: not one-hot"
                    )));
                }
                off += k;
            }
        }
        Ok(())
    }

    /// One-hot state from category indices, `indices[row][column]`.
    pub fn from_indices(sizes: Vec<usize>, indices: &[Vec<usize>]) -> Result<Self> {
        let width: usize = sizes.iter().sum();
        let mut probs = Tensor2::zeros(indices.len(), width);
        for (r, idx) in indices.iter().enumerate() {
            if idx.len() != sizes.len() {
                return Err(Error::shape(
                    format!("category indices row {r}"),
                    sizes.len(),
                    idx.len(),
                ));
            }
            let mut off = 0;
            for (&k, &c) in sizes.iter().zip(idx) {
                if c >= k {
                    return Err(Error::Categorical(format!(
                        "row {r}: category {c} out of {k}"
                    )));
                }
                probs.set(r, off + c, 1.0);
                off += k;
            }
        }
        Self::new(sizes, probs, true)
    }

    /// Uniform distribution `1/K_i` in every block.
    pub fn uniform(sizes: Vec<usize>, rows: usize) -> Result<Self> {
        let width: usize = sizes.iter().sum();
        let mut probs = Tensor2::zeros(rows, width);
        for r in 0..rows {
            let mut off = 0;
            for &k in &sizes {
                for v in &mut probs.row_mut(r)[off..off + k] {
                    *v = 1.0 / k as f64;
                }
                off += k;
            }
        }
        Self::new(sizes, probs, false)
    }

    /// A zero-column state, used as the condition when a table has no discrete columns.
    pub fn empty(rows: usize) -> Self {
        Self {
            sizes: Vec::new(),
            probs: Tensor2::zeros(rows, 0),
            one_hot: true,
        }
    }

    pub(crate) fn from_parts_unchecked(sizes: Vec<usize>, probs: Tensor2, one_hot: bool) -> Self {
        Self {
            sizes,
            probs,
            one_hot,
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn probs(&self) -> &Tensor2 {
        &self.probs
    }

    pub fn into_probs(self) -> Tensor2 {
        self.probs
    }

    pub fn is_one_hot(&self) -> bool {
        self.one_hot
    }

    pub fn rows(&self) -> usize {
        self.probs.rows()
    }

    pub fn width(&self) -> usize {
        self.probs.cols()
    }

    /// Starting column of each block.
    pub fn offsets(&self) -> Vec<usize> {
        block_offsets(&self.sizes)
    }

    /// Arg-max category per row and column; ties resolve to the lowest index.
    pub fn argmax(&self) -> Vec<Vec<usize>> {
        argmax_blocks(&self.probs, &self.sizes)
    }

    pub fn select_rows(&self, indices: &[usize]) -> Self {
        Self {
            sizes: self.sizes.clone(),
            probs: self.probs.select_rows(indices),
            one_hot: self.one_hot,
        }
    }
}

pub(crate) fn block_offsets(sizes: &[usize]) -> Vec<usize> {
    let mut offs = Vec::with_capacity(sizes.len());
    let mut acc = 0;
    for &k in sizes {
        offs.push(acc);
        acc += k;
    }
    offs
}

/// Arg-max per block of any `rows × ΣK` matrix (logits or probabilities).
pub fn argmax_blocks(values: &Tensor2, sizes: &[usize]) -> Vec<Vec<usize>> {
    let offs = block_offsets(sizes);
    (0..values.rows())
        .map(|r| {
            let row = values.row(r);
            sizes
                .iter()
                .zip(&offs)
                .map(|(&k, &o)| {
                    let mut best = 0;
                    for c in 1..k {
                        if row[o + c] > row[o + best] {
                            best = c;
                        }
                    }
                    best
                })
                .collect()
        })
        .collect()
}

/// Numerically stable softmax applied to each column block.
pub fn softmax_blocks(logits: &Tensor2, sizes: &[usize]) -> Result<Tensor2> {
    let width: usize = sizes.iter().sum();
    if logits.cols() != width {
        return Err(Error::shape("logit blocks", width, logits.cols()));
    }
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let mut off = 0;
        for &k in sizes {
            let block = &mut row[off..off + k];
            let max = block.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in block.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in block.iter_mut() {
                *v /= sum;
            }
            off += k;
        }
    }
    Ok(out)
}

/// Softmax vector-Jacobian product per block: `dz = π ⊙ (γ − ⟨π, γ⟩)`.
pub(crate) fn softmax_blocks_vjp(pi: &Tensor2, grad_pi: &Tensor2, sizes: &[usize]) -> Tensor2 {
    let mut out = Tensor2::zeros(pi.rows(), pi.cols());
    for r in 0..pi.rows() {
        let (p, g) = (pi.row(r), grad_pi.row(r));
        let o = out.row_mut(r);
        let mut off = 0;
        for &k in sizes {
            let dot: f64 = (off..off + k).map(|j| p[j] * g[j]).sum();
            for j in off..off + k {
                o[j] = p[j] * (g[j] - dot);
            }
            off += k;
        }
    }
    out
}

fn check_pair(a: &CategoricalState, b: &CategoricalState, what: &str) -> Result<()> {
    if a.sizes != b.sizes {
        return Err(Error::shape(
            what,
            format!("{:?}", a.sizes),
            format!("{:?}", b.sizes),
        ));
    }
    if a.rows() != b.rows() {
        return Err(Error::shape(what, a.rows(), b.rows()));
    }
    Ok(())
}

/// `q(x_t | x_0) = C(ᾱ_t·x_0 + (1 − ᾱ_t)/K_i)` for every column.
pub fn forward_marginal_cat(
    x0: &CategoricalState,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<CategoricalState> {
    forward_marginal_cat_rows(x0, &[t], sched)
}

pub fn forward_marginal_cat_rows(
    x0: &CategoricalState,
    ts: &[usize],
    sched: &NoiseSchedule,
) -> Result<CategoricalState> {
    x0.validate()?;
    let ts = row_timesteps(ts, x0.rows(), sched)?;
    let mut probs = x0.probs.clone();
    for (r, &t) in ts.iter().enumerate() {
        let ab = sched.alpha_bar(t);
        let row = probs.row_mut(r);
        let mut off = 0;
        for &k in &x0.sizes {
            for v in &mut row[off..off + k] {
                *v = ab * *v + (1.0 - ab) / k as f64;
            }
            off += k;
        }
    }
    Ok(CategoricalState::from_parts_unchecked(
        x0.sizes.clone(),
        probs,
        false,
    ))
}

/// Draws one category per row and column; returns a one-hot state.
pub fn sample_cat<R: Rng + ?Sized>(dist: &CategoricalState, rng: &mut R) -> CategoricalState {
    let mut probs = Tensor2::zeros(dist.rows(), dist.width());
    for r in 0..dist.rows() {
        let src = dist.probs.row(r);
        let dst = probs.row_mut(r);
        let mut off = 0;
        for &k in &dist.sizes {
            let u: f64 = rng.random();
            let block = &src[off..off + k];
            let mut chosen = None;
            let mut acc = 0.0;
            for (c, &p) in block.iter().enumerate() {
                acc += p;
                if u < acc {
                    chosen = Some(c);
                    break;
                }
            }
            // Rounding can leave the cumulative sum just under u; fall back to the last supported category.
            let c = chosen.unwrap_or_else(|| block.iter().rposition(|&p| p > 0.0).unwrap_or(k - 1));
            dst[off + c] = 1.0;
            off += k;
        }
    }
    CategoricalState::from_parts_unchecked(dist.sizes.clone(), probs, true)
}

/// `q(x_{t−1} | x_t, x_0) ∝ [α_t·x_t + (1 − α_t)/K] ⊙ [ᾱ_{t−1}·x_0 + (1 − ᾱ_{t−1})/K]`.
///
/// Defined for `t ≥ 2`; the `t = 1` term is the reconstruction likelihood.
pub fn posterior_cat(
    x_t: &CategoricalState,
    x0: &CategoricalState,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<CategoricalState> {
    posterior_cat_rows(x_t, x0, &[t], sched)
}

pub fn posterior_cat_rows(
    x_t: &CategoricalState,
    x0: &CategoricalState,
    ts: &[usize],
    sched: &NoiseSchedule,
) -> Result<CategoricalState> {
    check_pair(x_t, x0, "posterior_cat")?;
    let ts = row_timesteps(ts, x_t.rows(), sched)?;
    if let Some(&t) = ts.iter().find(|&&t| t < 2) {
        return Err(Error::Timestep {
            t,
            max: sched.timesteps(),
        });
    }
    let mut probs = Tensor2::zeros(x_t.rows(), x_t.width());
    for (r, &t) in ts.iter().enumerate() {
        let (alpha, ab_prev) = (sched.alpha(t), sched.alpha_bar(t - 1));
        let (xt, x0r) = (x_t.probs.row(r), x0.probs.row(r));
        let out = probs.row_mut(r);
        let mut off = 0;
        for &k in &x_t.sizes {
            let kf = k as f64;
            let mut sum = 0.0;
            for j in off..off + k {
                let v = (alpha * xt[j] + (1.0 - alpha) / kf)
                    * (ab_prev * x0r[j] + (1.0 - ab_prev) / kf);
                out[j] = v;
                sum += v;
            }
            if sum.is_nan() || sum <= 0.0 {
                return Err(Error::Numerical(format!(
                    "posterior normalizer {sum} at t={t}"
                )));
            }
            for v in &mut out[off..off + k] {
                *v /= sum;
            }
            off += k;
        }
    }
    Ok(CategoricalState::from_parts_unchecked(
        x_t.sizes.clone(),
        probs,
        false,
    ))
}

/// Quantities for one block of the reverse mixture.
struct MixBlock {
    u: Vec<f64>,
    z: Vec<f64>,
    p: Vec<f64>,
    ab_prev: f64,
    c: f64,
}

/// Mixture `Σ_k q(x_{t−1} | x_t, x̂_0 = k) · π_k` for one block.
///
/// Each posterior has normalizer `Z_k = ᾱ_{t−1}·u_k + c·Σu`, so the mixture is
/// `u ⊙ (ᾱ_{t−1}·w + c·Σw)` with `w_k = π_k / Z_k`: linear in `π`, no sum over k.
fn mix_block(xt: &[f64], pi: &[f64], alpha: f64, ab_prev: f64) -> MixBlock {
    let k = xt.len();
    let kf = k as f64;
    let c = (1.0 - ab_prev) / kf;
    let u: Vec<f64> = xt.iter().map(|&x| alpha * x + (1.0 - alpha) / kf).collect();
    let su: f64 = u.iter().sum();
    let z: Vec<f64> = u.iter().map(|&uk| ab_prev * uk + c * su).collect();
    let w: Vec<f64> = pi.iter().zip(&z).map(|(p, z)| p / z).collect();
    let sw: f64 = w.iter().sum();
    let p = u
        .iter()
        .zip(&w)
        .map(|(&uj, &wj)| uj * (ab_prev * wj + c * sw))
        .collect();
    MixBlock {
        u,
        z,
        p,
        ab_prev,
        c,
    }
}

/// `p_θ(x_{t−1} | x_t) = Σ_{x̂_0} q(x_{t−1} | x_t, x̂_0) · softmax(logits)(x̂_0)`.
///
/// At `t = 1` this is the predicted `x̂_0` distribution itself.
pub fn reverse_dist_cat(
    x_t: &CategoricalState,
    x0_logits: &Tensor2,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<CategoricalState> {
    reverse_dist_cat_rows(x_t, x0_logits, &[t], sched)
}

pub fn reverse_dist_cat_rows(
    x_t: &CategoricalState,
    x0_logits: &Tensor2,
    ts: &[usize],
    sched: &NoiseSchedule,
) -> Result<CategoricalState> {
    if x0_logits.rows() != x_t.rows() {
        return Err(Error::shape(
            "reverse_dist_cat rows",
            x_t.rows(),
            x0_logits.rows(),
        ));
    }
    let pi = softmax_blocks(x0_logits, &x_t.sizes)?;
    let ts = row_timesteps(ts, x_t.rows(), sched)?;
    let mut probs = Tensor2::zeros(x_t.rows(), x_t.width());
    for (r, &t) in ts.iter().enumerate() {
        let out = probs.row_mut(r);
        if t == 1 {
            out.copy_from_slice(pi.row(r));
            continue;
        }
        let (alpha, ab_prev) = (sched.alpha(t), sched.alpha_bar(t - 1));
        let (xt, pr) = (x_t.probs.row(r), pi.row(r));
        let mut off = 0;
        for &k in &x_t.sizes {
            let mix = mix_block(&xt[off..off + k], &pr[off..off + k], alpha, ab_prev);
            let sum: f64 = mix.p.iter().sum();
            for (o, p) in out[off..off + k].iter_mut().zip(&mix.p) {
                *o = p / sum;
            }
            off += k;
        }
    }
    Ok(CategoricalState::from_parts_unchecked(
        x_t.sizes.clone(),
        probs,
        false,
    ))
}

/// `KL(p ‖ q)` for two distributions over the same categories.
pub fn kl_categorical(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (safe_ln(pi) - safe_ln(qi)))
        .sum()
}

/// Batch-mean variational-bound term and its gradient with respect to the logits.
fn vb_loss(
    x0: &CategoricalState,
    x_t: &CategoricalState,
    logits: &Tensor2,
    ts: &[usize],
    sched: &NoiseSchedule,
    with_grad: bool,
) -> Result<(f64, Option<Tensor2>)> {
    check_pair(x0, x_t, "loss_diff_d")?;
    if logits.rows() != x0.rows() {
        return Err(Error::shape(
            "loss_diff_d logits rows",
            x0.rows(),
            logits.rows(),
        ));
    }
    let sizes = &x0.sizes;
    let pi = softmax_blocks(logits, sizes)?;
    let ts = row_timesteps(ts, x0.rows(), sched)?;
    let rows = x0.rows().max(1) as f64;
    let mut grad_pi = with_grad.then(|| Tensor2::zeros(pi.rows(), pi.cols()));
    let mut total = 0.0;

    for (r, &t) in ts.iter().enumerate() {
        let (a0, at, pr) = (x0.probs.row(r), x_t.probs.row(r), pi.row(r));
        let mut off = 0;
        for &k in sizes {
            let range = off..off + k;
            if t == 1 {
                for j in range.clone() {
                    total -= a0[j] * safe_ln(pr[j]);
                    if let Some(g) = grad_pi.as_mut() {
                        if pr[j] > LOG_FLOOR {
                            g.row_mut(r)[j] = -a0[j] / pr[j] / rows;
                        }
                    }
                }
            } else {
                let (alpha, ab_prev) = (sched.alpha(t), sched.alpha_bar(t - 1));
                let kf = k as f64;
                // true posterior q(x_{t−1} | x_t, x_0)
                let mut q: Vec<f64> = range
                    .clone()
                    .map(|j| {
                        (alpha * at[j] + (1.0 - alpha) / kf)
                            * (ab_prev * a0[j] + (1.0 - ab_prev) / kf)
                    })
                    .collect();
                let qs: f64 = q.iter().sum();
                q.iter_mut().for_each(|v| *v /= qs);
                let mix = mix_block(&at[range.clone()], &pr[range.clone()], alpha, ab_prev);
                let kl = kl_categorical(&q, &mix.p);
                total += kl;
                if let Some(g) = grad_pi.as_mut() {
                    // dL/dp_j = −q_j / p_j
                    let gp: Vec<f64> = q
                        .iter()
                        .zip(&mix.p)
                        .map(|(&qj, &pj)| if pj > LOG_FLOOR { -qj / pj } else { 0.0 })
                        .collect();
                    let gu: f64 = gp.iter().zip(&mix.u).map(|(g, u)| g * u).sum();
                    let row = g.row_mut(r);
                    for i in 0..k {
                        let dw = mix.ab_prev * mix.u[i] * gp[i] + mix.c * gu;
                        row[off + i] = dw / mix.z[i] / rows;
                    }
                }
            }
            off += k;
        }
    }
    let grad = grad_pi.map(|g| softmax_blocks_vjp(&pi, &g, sizes));
    Ok((total / rows, grad))
}

/// Discrete diffusion loss for sampled timesteps: summed per-column
/// `KL(q(x_{t−1}|x_t,x_0) ‖ p_θ(x_{t−1}|x_t))` for `t ≥ 2`, and the negative
/// log-likelihood `−log p_θ(x_0|x_1)` for `t = 1`; averaged over the batch.
pub fn loss_diff_d(
    x0: &CategoricalState,
    x_t: &CategoricalState,
    x0_logits: &Tensor2,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<f64> {
    Ok(vb_loss(x0, x_t, x0_logits, &[t], sched, false)?.0)
}

pub fn loss_diff_d_rows(
    x0: &CategoricalState,
    x_t: &CategoricalState,
    x0_logits: &Tensor2,
    ts: &[usize],
    sched: &NoiseSchedule,
) -> Result<f64> {
    Ok(vb_loss(x0, x_t, x0_logits, ts, sched, false)?.0)
}

/// Differentiable [`loss_diff_d`] with respect to the recorded logits.
pub fn loss_diff_d_var<'a>(
    tape: &mut Tape<'a>,
    x0: &CategoricalState,
    x_t: &CategoricalState,
    logits: Var,
    ts: &[usize],
    sched: &NoiseSchedule,
) -> Result<Var> {
    let (loss, grad) = vb_loss(x0, x_t, tape.value(logits), ts, sched, true)?;
    let grad = grad.expect("gradient requested");
    let value = Tensor2::from_vec_unchecked(1, 1, vec![loss]);
    Ok(tape.custom(&[logits], value, move |up| vec![grad.scale(up.data()[0])]))
}

/// Prior-matching term `Σ_i KL(q(x_T | x_0) ‖ C(1/K_i))`, batch mean. Parameter-free.
pub fn kl_prior(x0: &CategoricalState, sched: &NoiseSchedule) -> Result<f64> {
    let marg = forward_marginal_cat(x0, sched.timesteps(), sched)?;
    let offs = x0.offsets();
    let mut total = 0.0;
    for r in 0..x0.rows() {
        let row = marg.probs.row(r);
        for (&k, &o) in x0.sizes.iter().zip(&offs) {
            let uniform = vec![1.0 / k as f64; k];
            total += kl_categorical(&row[o..o + k], &uniform);
        }
    }
    Ok(total / x0.rows().max(1) as f64)
}
