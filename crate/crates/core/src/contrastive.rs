//! Negative conditions and triplet losses tying the two diffusion models together.
//!
//! The anchor is the clean record part `x_0`; the positive estimate is the
//! one-step `x̂_0` prediction under the matching condition, the negative estimate
//! the same prediction under a shuffled condition. Continuous parts are compared
//! with Euclidean distance, discrete parts with summed per-column cross-entropy.

use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::continuous::predict_x0_var;
use crate::diffusion::discrete::{softmax_blocks, softmax_blocks_vjp, CategoricalState, LOG_FLOOR};
use crate::nn::{DiffusionNet, Tape, Tensor2, Var};
use crate::schedule::NoiseSchedule;
use crate::{Error, Result};

/// How negative conditions are built from a batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegativeMethod {
    /// Two random columns shuffled with one shared row permutation.
    Method1,
    /// Two random columns shuffled with independent row permutations.
    Method2,
    /// Whole variable-type block shuffled, keeping within-type pairs intact.
    #[default]
    Method3,
}

impl FromStr for NegativeMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "method1" | "1" => Ok(Self::Method1),
            "method2" | "2" => Ok(Self::Method2),
            "method3" | "3" => Ok(Self::Method3),
            other => Err(Error::Config(format!("unknown negative_method {other:?}"))),
        }
    }
}

impl std::fmt::Display for NegativeMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Method1 => "method1",
            Self::Method2 => "method2",
            Self::Method3 => "method3",
        })
    }
}

/// Margin, loss weights and negative strategy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripletConfig {
    pub margin: f64,
    pub lambda_c: f64,
    pub lambda_d: f64,
    pub method: NegativeMethod,
}

impl Default for TripletConfig {
    fn default() -> Self {
        Self {
            margin: 1.0,
            lambda_c: 0.2,
            lambda_d: 0.2,
            method: NegativeMethod::Method3,
        }
    }
}

/// Shuffled conditions for one batch.
///
/// `neg_cond_c` row `j` is continuous row `permutation_c[j]` (Method 3); the
/// discrete side is analogous. For Methods 1 and 2 the permutations record the
/// shuffle of the first selected column.
#[derive(Clone, Debug, PartialEq)]
pub struct NegativePair {
    pub neg_cond_c: Tensor2,
    pub neg_cond_d: CategoricalState,
    pub permutation_c: Vec<usize>,
    pub permutation_d: Vec<usize>,
}

impl NegativePair {
    /// Rows that were mapped onto themselves (and so are not true negatives).
    pub fn fixed_points(&self) -> (usize, usize) {
        let count = |p: &[usize]| p.iter().enumerate().filter(|(i, &j)| *i == j).count();
        (count(&self.permutation_c), count(&self.permutation_d))
    }
}

fn permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// Method 3 negatives: one permutation for the continuous block and an
/// independently drawn one for the discrete block.
pub fn make_negative_condition<R: Rng + ?Sized>(
    batch_c: &Tensor2,
    batch_d: &CategoricalState,
    rng: &mut R,
) -> Result<NegativePair> {
    make_negative_condition_with(NegativeMethod::Method3, batch_c, batch_d, rng)
}

pub fn make_negative_condition_with<R: Rng + ?Sized>(
    method: NegativeMethod,
    batch_c: &Tensor2,
    batch_d: &CategoricalState,
    rng: &mut R,
) -> Result<NegativePair> {
    let n = batch_c.rows();
    if n != batch_d.rows() {
        return Err(Error::shape("negative condition rows", n, batch_d.rows()));
    }
    if n < 2 {
        return Err(Error::Config(
            "negative conditions need a batch of at least 2 rows".into(),
        ));
    }
    match method {
        NegativeMethod::Method3 => {
            let permutation_c = permutation(n, rng);
            let permutation_d = permutation(n, rng);
            Ok(NegativePair {
                neg_cond_c: batch_c.select_rows(&permutation_c),
                neg_cond_d: batch_d.select_rows(&permutation_d),
                permutation_c,
                permutation_d,
            })
        }
        NegativeMethod::Method1 | NegativeMethod::Method2 => {
            let shared = method == NegativeMethod::Method1;
            let widths_c = vec![1; batch_c.cols()];
            let (neg_c, permutation_c) = shuffle_columns(batch_c, &widths_c, shared, rng);
            let (neg_d, permutation_d) =
                shuffle_columns(batch_d.probs(), batch_d.sizes(), shared, rng);
            Ok(NegativePair {
                neg_cond_c: neg_c,
                neg_cond_d: CategoricalState::from_parts_unchecked(
                    batch_d.sizes().to_vec(),
                    neg_d,
                    batch_d.is_one_hot(),
                ),
                permutation_c,
                permutation_d,
            })
        }
    }
}

/// Shuffles the rows of two randomly chosen column blocks (all blocks when fewer exist).
fn shuffle_columns<R: Rng + ?Sized>(
    data: &Tensor2,
    widths: &[usize],
    shared: bool,
    rng: &mut R,
) -> (Tensor2, Vec<usize>) {
    let n = data.rows();
    let mut out = data.clone();
    if widths.is_empty() {
        return (out, (0..n).collect());
    }
    let mut offsets = Vec::with_capacity(widths.len());
    let mut acc = 0;
    for &w in widths {
        offsets.push(acc);
        acc += w;
    }
    let picked = index::sample(rng, widths.len(), widths.len().min(2)).into_vec();
    let first = permutation(n, rng);
    for (i, &col) in picked.iter().enumerate() {
        let perm = if shared || i == 0 {
            first.clone()
        } else {
            permutation(n, rng)
        };
        let (o, w) = (offsets[col], widths[col]);
        for (dst, &src) in perm.iter().enumerate() {
            let values = data.row(src)[o..o + w].to_vec();
            out.row_mut(dst)[o..o + w].copy_from_slice(&values);
        }
    }
    (out, first)
}

/// Distance used inside the triplet hinge.
#[derive(Clone, Debug, PartialEq)]
pub enum Distance {
    Euclidean,
    /// Summed per-column cross-entropy `−Σ_i Σ_k a_ik log p_ik` of one-hot anchors.
    CrossEntropy(Vec<usize>),
}

impl Distance {
    pub fn from_name(name: &str, sizes: &[usize]) -> Result<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "euclidean" | "l2" => Ok(Self::Euclidean),
            "cross_entropy" | "cross-entropy" | "ce" => Ok(Self::CrossEntropy(sizes.to_vec())),
            other => Err(Error::Config(format!("unknown distance metric {other:?}"))),
        }
    }

    /// Row-wise distance between `anchor` and `other` (probabilities for cross-entropy).
    pub fn rows(&self, anchor: &Tensor2, other: &Tensor2) -> Result<Vec<f64>> {
        if anchor.shape() != other.shape() {
            return Err(Error::shape(
                "triplet distance",
                format!("{:?}", anchor.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        Ok((0..anchor.rows())
            .map(|r| match self {
                Self::Euclidean => anchor
                    .row(r)
                    .iter()
                    .zip(other.row(r))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt(),
                Self::CrossEntropy(_) => anchor
                    .row(r)
                    .iter()
                    .zip(other.row(r))
                    .map(|(a, p)| -a * p.max(LOG_FLOOR).ln())
                    .sum(),
            })
            .collect())
    }
}

/// Batch mean of `max(d_p − d_n + m, 0)`.
pub fn hinge_mean(dp: &[f64], dn: &[f64], margin: f64) -> f64 {
    let n = dp.len().max(1) as f64;
    dp.iter()
        .zip(dn)
        .map(|(p, q)| (p - q + margin).max(0.0))
        .sum::<f64>()
        / n
}

/// Triplet hinge over a batch of anchors, positives and negatives.
pub fn triplet_loss(
    anchor: &Tensor2,
    positive: &Tensor2,
    negative: &Tensor2,
    distance: &Distance,
    margin: f64,
) -> Result<f64> {
    if let Distance::CrossEntropy(sizes) = distance {
        let width: usize = sizes.iter().sum();
        if anchor.cols() != width {
            return Err(Error::shape("cross-entropy blocks", width, anchor.cols()));
        }
    }
    let dp = distance.rows(anchor, positive)?;
    let dn = distance.rows(anchor, negative)?;
    Ok(hinge_mean(&dp, &dn, margin))
}

/// Differentiable row-wise Euclidean distance to a constant anchor (`rows × 1`).
pub fn euclidean_distance_var<'a>(tape: &mut Tape<'a>, anchor: &Tensor2, x: Var) -> Result<Var> {
    let xv = tape.value(x);
    let d = Distance::Euclidean.rows(anchor, xv)?;
    // ∂d_r/∂x_r = (x_r − a_r) / d_r, zero at d_r = 0
    let mut dir = xv.zip_map(anchor, |x, a| x - a);
    for (r, &dr) in d.iter().enumerate() {
        let inv = if dr > 0.0 { 1.0 / dr } else { 0.0 };
        dir.row_mut(r).iter_mut().for_each(|v| *v *= inv);
    }
    let value = Tensor2::from_vec_unchecked(d.len(), 1, d);
    Ok(tape.custom(&[x], value, move |up| {
        let mut g = dir.clone();
        for r in 0..g.rows() {
            let s = up.data()[r];
            g.row_mut(r).iter_mut().for_each(|v| *v *= s);
        }
        vec![g]
    }))
}

/// Differentiable cross-entropy distance between one-hot anchors and `softmax(logits)`.
pub fn cross_entropy_distance_var<'a>(
    tape: &mut Tape<'a>,
    anchor: &CategoricalState,
    logits: Var,
) -> Result<Var> {
    let sizes = anchor.sizes().to_vec();
    let pi = softmax_blocks(tape.value(logits), &sizes)?;
    let a = anchor.probs();
    let d = Distance::CrossEntropy(sizes.clone()).rows(a, &pi)?;
    let grad_pi = a.zip_map(&pi, |a, p| if p > LOG_FLOOR { -a / p } else { 0.0 });
    let dz = softmax_blocks_vjp(&pi, &grad_pi, &sizes);
    let value = Tensor2::from_vec_unchecked(d.len(), 1, d);
    Ok(tape.custom(&[logits], value, move |up| {
        let mut g = dz.clone();
        for r in 0..g.rows() {
            let s = up.data()[r];
            g.row_mut(r).iter_mut().for_each(|v| *v *= s);
        }
        vec![g]
    }))
}

/// Differentiable [`hinge_mean`]. The kink itself counts as inactive.
pub fn hinge_var<'a>(tape: &mut Tape<'a>, dp: Var, dn: Var, margin: f64) -> Result<Var> {
    let (p, q) = (tape.value(dp), tape.value(dn));
    if p.shape() != q.shape() || p.cols() != 1 {
        return Err(Error::shape(
            "triplet hinge",
            format!("{:?}", p.shape()),
            format!("{:?}", q.shape()),
        ));
    }
    let n = p.rows().max(1) as f64;
    let active: Vec<f64> = p
        .data()
        .iter()
        .zip(q.data())
        .map(|(a, b)| if a - b + margin > 0.0 { 1.0 / n } else { 0.0 })
        .collect();
    let loss = hinge_mean(p.data(), q.data(), margin);
    let rows = p.rows();
    let value = Tensor2::from_vec_unchecked(1, 1, vec![loss]);
    Ok(tape.custom(&[dp, dn], value, move |up| {
        let s = up.data()[0];
        let gp = Tensor2::from_vec_unchecked(rows, 1, active.iter().map(|a| a * s).collect());
        let gn = gp.scale(-1.0);
        vec![gp, gn]
    }))
}

/// Records the continuous triplet term given the positive `ε̂` already on the tape.
#[allow(clippy::too_many_arguments)]
pub(crate) fn continuous_triplet_on_tape<'a>(
    tape: &mut Tape<'a>,
    net: &'a DiffusionNet,
    x0: &Tensor2,
    x_t: &'a Tensor2,
    eps_pos: Var,
    neg_cond: &'a Tensor2,
    ts: &[usize],
    sched: &NoiseSchedule,
    margin: f64,
) -> Result<Var> {
    let xv = tape.constant_ref(x_t);
    let cv = tape.constant_ref(neg_cond);
    let eps_neg = net.forward(tape, xv, cv, ts)?;
    let x0_pos = predict_x0_var(tape, x_t, eps_pos, ts, sched)?;
    let x0_neg = predict_x0_var(tape, x_t, eps_neg, ts, sched)?;
    let dp = euclidean_distance_var(tape, x0, x0_pos)?;
    let dn = euclidean_distance_var(tape, x0, x0_neg)?;
    hinge_var(tape, dp, dn, margin)
}

/// Records the discrete triplet term given the positive logits already on the tape.
#[allow(clippy::too_many_arguments)]
pub(crate) fn discrete_triplet_on_tape<'a>(
    tape: &mut Tape<'a>,
    net: &'a DiffusionNet,
    x0: &CategoricalState,
    x_t: &'a Tensor2,
    logits_pos: Var,
    neg_cond: &'a Tensor2,
    ts: &[usize],
    margin: f64,
) -> Result<Var> {
    let xv = tape.constant_ref(x_t);
    let cv = tape.constant_ref(neg_cond);
    let logits_neg = net.forward(tape, xv, cv, ts)?;
    let dp = cross_entropy_distance_var(tape, x0, logits_pos)?;
    let dn = cross_entropy_distance_var(tape, x0, logits_neg)?;
    hinge_var(tape, dp, dn, margin)
}

/// Continuous contrastive loss: anchor `x_0^C`, positive `x̂_0^{C+}` predicted
/// with condition `x_t^D`, negative `x̂_0^{C−}` predicted with `x_t^{D−}`.
#[allow(clippy::too_many_arguments)]
pub fn contrastive_loss_c(
    x0_c: &Tensor2,
    x_t_c: &Tensor2,
    x_t_d: &CategoricalState,
    x_t_d_neg: &CategoricalState,
    net_c: &DiffusionNet,
    t: usize,
    sched: &NoiseSchedule,
    cfg: &TripletConfig,
) -> Result<f64> {
    let mut tape = Tape::new();
    let xv = tape.constant_ref(x_t_c);
    let cv = tape.constant_ref(x_t_d.probs());
    let eps_pos = net_c.forward(&mut tape, xv, cv, &[t])?;
    let loss = continuous_triplet_on_tape(
        &mut tape,
        net_c,
        x0_c,
        x_t_c,
        eps_pos,
        x_t_d_neg.probs(),
        &[t],
        sched,
        cfg.margin,
    )?;
    Ok(tape.scalar(loss))
}

/// Discrete contrastive loss: anchor `x_0^D`, estimates `softmax(logits)` under
/// condition `x_t^C` (positive) and `x_t^{C−}` (negative).
#[allow(clippy::too_many_arguments)]
pub fn contrastive_loss_d(
    x0_d: &CategoricalState,
    x_t_d: &CategoricalState,
    x_t_c: &Tensor2,
    x_t_c_neg: &Tensor2,
    net_d: &DiffusionNet,
    t: usize,
    sched: &NoiseSchedule,
    cfg: &TripletConfig,
) -> Result<f64> {
    sched.check(t)?;
    let mut tape = Tape::new();
    let xv = tape.constant_ref(x_t_d.probs());
    let cv = tape.constant_ref(x_t_c);
    let logits_pos = net_d.forward(&mut tape, xv, cv, &[t])?;
    let loss = discrete_triplet_on_tape(
        &mut tape,
        net_d,
        x0_d,
        x_t_d.probs(),
        logits_pos,
        x_t_c_neg,
        &[t],
        cfg.margin,
    )?;
    Ok(tape.scalar(loss))
}
