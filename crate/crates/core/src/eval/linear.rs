//! Deterministic linear models for downstream scoring.

use nalgebra::{DMatrix, DVector};

use crate::nn::Tensor2;
use crate::{Error, Result};

/// L2-regularised multinomial logistic regression fit by full-batch gradient descent.
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticRegression {
    /// `classes × (features + 1)`, last column is the intercept.
    weights: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogisticOptions {
    pub l2: f64,
    pub learning_rate: f64,
    pub iterations: usize,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        Self {
            l2: 1e-3,
            learning_rate: 0.5,
            iterations: 500,
        }
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    z.iter_mut().for_each(|v| *v /= s);
}

impl LogisticRegression {
    pub fn fit(x: &Tensor2, y: &[usize], classes: usize, opts: LogisticOptions) -> Result<Self> {
        if x.rows() != y.len() || x.rows() == 0 {
            return Err(Error::shape("logistic regression rows", x.rows(), y.len()));
        }
        if classes < 2 || y.iter().any(|&c| c >= classes) {
            return Err(Error::Config(format!("labels must lie in 0..{classes}")));
        }
        let (n, d) = (x.rows(), x.cols());
        let mut w = vec![vec![0.0; d + 1]; classes];
        let mut grad = vec![vec![0.0; d + 1]; classes];
        let mut p = vec![0.0; classes];
        for _ in 0..opts.iterations {
            grad.iter_mut()
                .for_each(|g| g.iter_mut().for_each(|v| *v = 0.0));
            for (r, &label) in y.iter().enumerate() {
                let row = x.row(r);
                for (c, pc) in p.iter_mut().enumerate() {
                    *pc = w[c][d] + w[c][..d].iter().zip(row).map(|(a, b)| a * b).sum::<f64>();
                }
                softmax_in_place(&mut p);
                for c in 0..classes {
                    let e = p[c] - if label == c { 1.0 } else { 0.0 };
                    for (g, xv) in grad[c][..d].iter_mut().zip(row) {
                        *g += e * xv;
                    }
                    grad[c][d] += e;
                }
            }
            for c in 0..classes {
                for j in 0..=d {
                    let reg = if j < d { opts.l2 * w[c][j] } else { 0.0 };
                    w[c][j] -= opts.learning_rate * (grad[c][j] / n as f64 + reg);
                }
            }
        }
        Ok(Self { weights: w })
    }

    pub fn predict_proba(&self, x: &Tensor2) -> Vec<Vec<f64>> {
        let d = x.cols();
        (0..x.rows())
            .map(|r| {
                let row = x.row(r);
                let mut z: Vec<f64> = self
                    .weights
                    .iter()
                    .map(|w| w[d] + w[..d].iter().zip(row).map(|(a, b)| a * b).sum::<f64>())
                    .collect();
                softmax_in_place(&mut z);
                z
            })
            .collect()
    }
}

/// Ridge regression with an unpenalised intercept, solved by Cholesky.
#[derive(Clone, Debug, PartialEq)]
pub struct RidgeRegression {
    coef: Vec<f64>,
    intercept: f64,
}

impl RidgeRegression {
    pub fn fit(x: &Tensor2, y: &[f64], l2: f64) -> Result<Self> {
        let (n, d) = (x.rows(), x.cols());
        if n != y.len() || n == 0 {
            return Err(Error::shape("ridge regression rows", n, y.len()));
        }
        let mean_x: Vec<f64> = x.column_sums().iter().map(|s| s / n as f64).collect();
        let mean_y = y.iter().sum::<f64>() / n as f64;
        let xc = DMatrix::from_fn(n, d, |r, c| x.get(r, c) - mean_x[c]);
        let yc = DVector::from_iterator(n, y.iter().map(|v| v - mean_y));
        let gram = xc.transpose() * &xc + DMatrix::identity(d, d) * l2.max(1e-12) * n as f64;
        let rhs = xc.transpose() * yc;
        let coef = gram
            .cholesky()
            .ok_or_else(|| {
                Error::Numerical("ridge normal equations are not positive definite".into())
            })?
            .solve(&rhs);
        let coef: Vec<f64> = coef.iter().copied().collect();
        let intercept = mean_y - coef.iter().zip(&mean_x).map(|(a, b)| a * b).sum::<f64>();
        Ok(Self { coef, intercept })
    }

    pub fn predict(&self, x: &Tensor2) -> Vec<f64> {
        (0..x.rows())
            .map(|r| {
                self.intercept
                    + self
                        .coef
                        .iter()
                        .zip(x.row(r))
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            })
            .collect()
    }
}

/// Area under the ROC curve from scores, ties counted as one half.
/// `None` when one of the classes is absent.
pub fn auroc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            if positive[k] {
                rank_sum += avg;
            }
        }
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

/// F1 of class `c`; 0 when it is never predicted nor present.
pub fn f1_for_class(truth: &[usize], pred: &[usize], c: usize) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&t, &p) in truth.iter().zip(pred) {
        match (t == c, p == c) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            _ => {}
        }
    }
    if tp == 0 {
        return 0.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
}

pub fn r2_score(truth: &[f64], pred: &[f64]) -> f64 {
    let mean = truth.iter().sum::<f64>() / truth.len().max(1) as f64;
    let ss_tot: f64 = truth.iter().map(|y| (y - mean).powi(2)).sum();
    let ss_res: f64 = truth.iter().zip(pred).map(|(y, p)| (y - p).powi(2)).sum();
    if ss_tot == 0.0 {
        return if ss_res == 0.0 {
            1.0
        } else {
            f64::NEG_INFINITY
        };
    }
    1.0 - ss_res / ss_tot
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn separable_data_is_learned() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor2::from_fn(200, 2, |_, _| rng.random_range(-1.0..1.0));
        let y: Vec<usize> = (0..200)
            .map(|r| usize::from(x.get(r, 0) + x.get(r, 1) > 0.0))
            .collect();
        let m = LogisticRegression::fit(&x, &y, 2, LogisticOptions::default()).unwrap();
        let pred: Vec<usize> = m
            .predict_proba(&x)
            .iter()
            .map(|p| usize::from(p[1] > p[0]))
            .collect();
        assert!(f1_for_class(&y, &pred, 1) > 0.95);
    }

    #[test]
    fn ridge_recovers_line() {
        let x = Tensor2::from_fn(50, 1, |r, _| r as f64 / 10.0);
        let y: Vec<f64> = (0..50).map(|r| 3.0 * r as f64 / 10.0 - 2.0).collect();
        let m = RidgeRegression::fit(&x, &y, 1e-9).unwrap();
        assert!(r2_score(&y, &m.predict(&x)) > 0.999_999);
    }

    #[test]
    fn auroc_cases() {
        assert_eq!(
            auroc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]),
            Some(1.0)
        );
        assert_eq!(auroc(&[0.5; 4], &[false, true, false, true]), Some(0.5));
        assert_eq!(auroc(&[0.1, 0.2], &[true, true]), None);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let scores: Vec<f64> = (0..4000).map(|_| rng.random()).collect();
        let labels: Vec<bool> = (0..4000).map(|i| i % 2 == 0).collect();
        assert!((auroc(&scores, &labels).unwrap() - 0.5).abs() < 0.05);
    }

    #[test]
    fn constant_prediction_has_non_positive_r2() {
        let y = [1.0, 2.0, 3.0, 4.0];
        assert!(r2_score(&y, &[2.5; 4]) <= 0.0);
        assert!(r2_score(&y, &[0.0; 4]) <= 0.0);
    }
}
