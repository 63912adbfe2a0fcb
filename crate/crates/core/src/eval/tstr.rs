use serde::{Deserialize, Serialize};

use super::linear::{
    auroc, f1_for_class, r2_score, LogisticOptions, LogisticRegression, RidgeRegression,
};
use crate::data::{encode, ColumnKind, Table, TableSchema, Task};
use crate::nn::Tensor2;
use crate::{Error, Result};

/// Train-on-synthetic, test-on-real scores. Classification fills the F1 and
/// AUROC fields, regression fills `r2` and `rmse`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TstrMetrics {
    pub task: Task,
    pub target: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub binary_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub macro_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auroc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r2: Option<f64>,
    /// RMSE divided by the standard deviation of the real test target.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
    pub degenerate_training_target: bool,
}

enum Target {
    Classes(Vec<usize>, usize),
    Values(Vec<f64>),
}

/// Encoded features of every column except the target, and the target itself.
fn split(table: &Table, schema: &TableSchema, target: &str) -> Result<(Tensor2, Target)> {
    let enc = encode(table, schema)?;
    let n = table.len();
    let mut feats: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut target_out = None;
    let (mut ci, mut off) = (0usize, 0usize);
    for col in schema.columns() {
        match &col.kind {
            ColumnKind::Continuous { .. } => {
                if col.name == target {
                    let j = table.column_index(target).expect("encoded column exists");
                    target_out = Some(Target::Values(
                        table
                            .rows
                            .iter()
                            .map(|r| r[j].as_num().unwrap_or(f64::NAN))
                            .collect(),
                    ));
                } else {
                    for (r, f) in feats.iter_mut().enumerate() {
                        f.push(enc.cont.get(r, ci));
                    }
                }
                ci += 1;
            }
            ColumnKind::Discrete { categories } => {
                let k = categories.len();
                if col.name == target {
                    let labels = (0..n)
                        .map(|r| {
                            let row = &enc.disc.probs().row(r)[off..off + k];
                            row.iter().position(|&v| v == 1.0).unwrap_or(0)
                        })
                        .collect();
                    target_out = Some(Target::Classes(labels, k));
                } else {
                    for (r, f) in feats.iter_mut().enumerate() {
                        f.extend_from_slice(&enc.disc.probs().row(r)[off..off + k]);
                    }
                }
                off += k;
            }
        }
    }
    let width = feats.first().map_or(0, Vec::len);
    let x = Tensor2::new(n, width, feats.concat())?;
    Ok((
        x,
        target_out.ok_or_else(|| Error::Schema(format!("no target column {target:?}")))?,
    ))
}

/// Fits a linear model on `fake_train` and scores it on `real_test`.
pub fn tstr(fake_train: &Table, real_test: &Table, schema: &TableSchema) -> Result<TstrMetrics> {
    let target = schema
        .target()
        .ok_or_else(|| Error::Schema("TSTR needs a target column".into()))?;
    let (x_tr, y_tr) = split(fake_train, schema, target)?;
    let (x_te, y_te) = split(real_test, schema, target)?;
    let mut out = TstrMetrics {
        task: schema.task(),
        target: target.to_string(),
        ..Default::default()
    };
    match (y_tr, y_te) {
        (Target::Classes(ytr, k), Target::Classes(yte, _)) => {
            let first = ytr[0];
            if ytr.iter().all(|&c| c == first) {
                log::warn!(
                    "TSTR: synthetic target {target:?} has a single class; the model is degenerate"
                );
                out.degenerate_training_target = true;
            }
            let model = LogisticRegression::fit(&x_tr, &ytr, k, LogisticOptions::default())?;
            let proba = model.predict_proba(&x_te);
            let pred: Vec<usize> = proba
                .iter()
                .map(|p| {
                    let mut best = 0;
                    for c in 1..p.len() {
                        if p[c] > p[best] {
                            best = c;
                        }
                    }
                    best
                })
                .collect();
            let present: Vec<usize> = (0..k)
                .filter(|c| yte.contains(c) || pred.contains(c))
                .collect();
            out.macro_f1 = Some(
                present
                    .iter()
                    .map(|&c| f1_for_class(&yte, &pred, c))
                    .sum::<f64>()
                    / present.len().max(1) as f64,
            );
            if k == 2 {
                out.binary_f1 = Some(f1_for_class(&yte, &pred, 1));
                let scores: Vec<f64> = proba.iter().map(|p| p[1]).collect();
                let pos: Vec<bool> = yte.iter().map(|&c| c == 1).collect();
                out.auroc = auroc(&scores, &pos);
            } else {
                let per: Vec<f64> = (0..k)
                    .filter_map(|c| {
                        let scores: Vec<f64> = proba.iter().map(|p| p[c]).collect();
                        let pos: Vec<bool> = yte.iter().map(|&y| y == c).collect();
                        auroc(&scores, &pos)
                    })
                    .collect();
                out.auroc = (!per.is_empty()).then(|| per.iter().sum::<f64>() / per.len() as f64);
            }
        }
        (Target::Values(ytr), Target::Values(yte)) => {
            let model = RidgeRegression::fit(&x_tr, &ytr, 1e-3)?;
            let pred = model.predict(&x_te);
            out.r2 = Some(r2_score(&yte, &pred));
            let n = yte.len() as f64;
            let mean = yte.iter().sum::<f64>() / n;
            let sd = (yte.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n).sqrt();
            let mse = yte
                .iter()
                .zip(&pred)
                .map(|(y, p)| (y - p).powi(2))
                .sum::<f64>()
                / n;
            out.rmse = Some(if sd > 0.0 {
                mse.sqrt() / sd
            } else {
                mse.sqrt()
            });
        }
        _ => unreachable!("target kind fixed by schema"),
    }
    Ok(out)
}
