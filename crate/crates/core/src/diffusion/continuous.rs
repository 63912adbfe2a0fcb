//! Gaussian diffusion over the min-max scaled continuous columns.

use std::borrow::Cow;

use super::row_timesteps;
use crate::nn::{Tape, Tensor2, Var};
use crate::schedule::NoiseSchedule;
use crate::{Error, Result};

fn same_shape(what: &str, a: &Tensor2, b: &Tensor2) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            what,
            format!("{:?}", a.shape()),
            format!("{:?}", b.shape()),
        ));
    }
    Ok(())
}

/// `x_t = √ᾱ_t · x_0 + √(1 − ᾱ_t) · ε`.
pub fn forward_sample_cont(
    x0: &Tensor2,
    t: usize,
    eps: &Tensor2,
    sched: &NoiseSchedule,
) -> Result<Tensor2> {
    forward_sample_cont_rows(x0, &[t], eps, sched)
}

/// [`forward_sample_cont`] with one timestep per row (or one shared).
pub fn forward_sample_cont_rows(
    x0: &Tensor2,
    ts: &[usize],
    eps: &Tensor2,
    sched: &NoiseSchedule,
) -> Result<Tensor2> {
    same_shape("forward_sample_cont noise", x0, eps)?;
    let ts = row_timesteps(ts, x0.rows(), sched)?;
    let mut out = x0.clone();
    for (r, &t) in ts.iter().enumerate() {
        let ab = sched.alpha_bar(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        for (o, e) in out.row_mut(r).iter_mut().zip(eps.row(r)) {
            *o = a * *o + b * e;
        }
    }
    Ok(out)
}

/// Batch mean of `‖ε − ε̂‖²`.
pub fn loss_diff_c(eps_pred: &Tensor2, eps: &Tensor2) -> Result<f64> {
    same_shape("loss_diff_c", eps, eps_pred)?;
    let total: f64 = eps
        .data()
        .iter()
        .zip(eps_pred.data())
        .map(|(e, p)| (e - p) * (e - p))
        .sum();
    Ok(total / eps.rows().max(1) as f64)
}

/// `σ_t² = (1 − ᾱ_{t−1}) / (1 − ᾱ_t) · β_t`; zero at `t = 1`.
pub fn reverse_variance(t: usize, sched: &NoiseSchedule) -> f64 {
    (1.0 - sched.alpha_bar(t - 1)) / (1.0 - sched.alpha_bar(t)) * sched.beta(t)
}

/// One ancestral step `x_{t−1} = μ_θ(x_t, t) + σ_t · z`, with
/// `μ_θ = (x_t − β_t / √(1 − ᾱ_t) · ε̂) / √α_t`. At `t = 1` the noise is ignored.
pub fn reverse_step_cont(
    x_t: &Tensor2,
    eps_pred: &Tensor2,
    t: usize,
    noise: &Tensor2,
    sched: &NoiseSchedule,
) -> Result<Tensor2> {
    sched.check(t)?;
    same_shape("reverse_step_cont prediction", x_t, eps_pred)?;
    if t > 1 {
        same_shape("reverse_step_cont noise", x_t, noise)?;
    }
    let coef = sched.beta(t) / (1.0 - sched.alpha_bar(t)).sqrt();
    let inv_sqrt_alpha = 1.0 / sched.alpha(t).sqrt();
    let sigma = reverse_variance(t, sched).sqrt();
    let mut out = x_t.clone();
    for (i, o) in out.data_mut().iter_mut().enumerate() {
        let mean = inv_sqrt_alpha * (*o - coef * eps_pred.data()[i]);
        *o = if t > 1 {
            mean + sigma * noise.data()[i]
        } else {
            mean
        };
    }
    Ok(out)
}

/// `x̂_0 = (x_t − √(1 − ᾱ_t) · ε̂) / √ᾱ_t`.
pub fn predict_x0_cont(
    x_t: &Tensor2,
    eps_pred: &Tensor2,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<Tensor2> {
    predict_x0_cont_rows(x_t, eps_pred, &[t], sched)
}

pub fn predict_x0_cont_rows(
    x_t: &Tensor2,
    eps_pred: &Tensor2,
    ts: &[usize],
    sched: &NoiseSchedule,
) -> Result<Tensor2> {
    same_shape("predict_x0_cont", x_t, eps_pred)?;
    let ts = row_timesteps(ts, x_t.rows(), sched)?;
    let mut out = x_t.clone();
    for (r, &t) in ts.iter().enumerate() {
        let ab = sched.alpha_bar(t);
        let (inv, s) = (1.0 / ab.sqrt(), (1.0 - ab).sqrt());
        for (o, e) in out.row_mut(r).iter_mut().zip(eps_pred.row(r)) {
            *o = (*o - s * e) * inv;
        }
    }
    Ok(out)
}

/// Differentiable [`predict_x0_cont`] with respect to the recorded `ε̂`.
pub fn predict_x0_var<'a>(
    tape: &mut Tape<'a>,
    x_t: &Tensor2,
    eps_pred: Var,
    ts: &[usize],
    sched: &NoiseSchedule,
) -> Result<Var> {
    let ts = row_timesteps(ts, x_t.rows(), sched)?;
    let mut offset = x_t.clone();
    let mut scale = Vec::with_capacity(ts.len());
    for (r, &t) in ts.iter().enumerate() {
        let ab = sched.alpha_bar(t);
        let inv = 1.0 / ab.sqrt();
        for v in offset.row_mut(r) {
            *v *= inv;
        }
        scale.push(-(1.0 - ab).sqrt() * inv);
    }
    tape.row_affine(eps_pred, scale, &offset)
}

/// Differentiable [`loss_diff_c`].
pub fn loss_diff_c_var<'a>(tape: &mut Tape<'a>, eps_pred: Var, eps: &'a Tensor2) -> Result<Var> {
    tape.mean_row_sq_dist(eps_pred, Cow::Borrowed(eps))
}
