use serde::{Deserialize, Serialize};

use crate::data::{Cell, ColumnKind, Table, TableSchema};
use crate::{Error, Result};

pub const HISTOGRAM_BINS: usize = 20;

/// Binned counts of one column in real and synthetic data.
///
/// Continuous columns use equal-width bins over the real range plus a final
/// bin for synthetic values outside it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnHistogram {
    pub column: String,
    pub labels: Vec<String>,
    pub real: Vec<usize>,
    pub fake: Vec<usize>,
    pub tv_distance: f64,
}

/// `½ Σ |p − q|` between two count vectors after normalisation.
pub fn tv_distance(p: &[usize], q: &[usize]) -> f64 {
    let (sp, sq) = (
        p.iter().sum::<usize>().max(1) as f64,
        q.iter().sum::<usize>().max(1) as f64,
    );
    0.5 * p
        .iter()
        .zip(q)
        .map(|(&a, &b)| (a as f64 / sp - b as f64 / sq).abs())
        .sum::<f64>()
}

pub fn histogram_continuous(name: &str, real: &[f64], fake: &[f64]) -> ColumnHistogram {
    let lo = real.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = real.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / HISTOGRAM_BINS as f64;
    let bin = |v: f64| -> usize {
        if !(v >= lo && v <= hi) {
            HISTOGRAM_BINS
        } else if width <= 0.0 {
            0
        } else {
            (((v - lo) / width) as usize).min(HISTOGRAM_BINS - 1)
        }
    };
    let count = |vals: &[f64]| {
        let mut c = vec![0usize; HISTOGRAM_BINS + 1];
        vals.iter().for_each(|&v| c[bin(v)] += 1);
        c
    };
    let mut labels: Vec<String> = (0..HISTOGRAM_BINS)
        .map(|i| {
            format!(
                "[{}, {})",
                lo + i as f64 * width,
                lo + (i + 1) as f64 * width
            )
        })
        .collect();
    labels.push("outside".into());
    let (r, f) = (count(real), count(fake));
    ColumnHistogram {
        column: name.into(),
        labels,
        tv_distance: tv_distance(&r, &f),
        real: r,
        fake: f,
    }
}

pub fn histogram_discrete(
    name: &str,
    categories: &[String],
    real: &[&str],
    fake: &[&str],
) -> ColumnHistogram {
    let count = |vals: &[&str]| {
        let mut c = vec![0usize; categories.len()];
        for v in vals {
            if let Some(k) = categories.iter().position(|c| c == v) {
                c[k] += 1;
            }
        }
        c
    };
    let (r, f) = (count(real), count(fake));
    ColumnHistogram {
        column: name.into(),
        labels: categories.to_vec(),
        tv_distance: tv_distance(&r, &f),
        real: r,
        fake: f,
    }
}

/// One histogram for a column of the given kind.
pub fn histogram_column(
    name: &str,
    real: &[Cell],
    fake: &[Cell],
    kind: &ColumnKind,
) -> Result<ColumnHistogram> {
    match kind {
        ColumnKind::Continuous { .. } => {
            let nums = |v: &[Cell]| -> Result<Vec<f64>> {
                v.iter()
                    .map(|c| {
                        c.as_num()
                            .ok_or_else(|| Error::Schema(format!("column {name:?} is not numeric")))
                    })
                    .collect()
            };
            Ok(histogram_continuous(name, &nums(real)?, &nums(fake)?))
        }
        ColumnKind::Discrete { categories } => {
            let strs = |v: &[Cell]| v.iter().map(|c| c.to_string()).collect::<Vec<_>>();
            let (r, f) = (strs(real), strs(fake));
            let rr: Vec<&str> = r.iter().map(String::as_str).collect();
            let ff: Vec<&str> = f.iter().map(String::as_str).collect();
            Ok(histogram_discrete(name, categories, &rr, &ff))
        }
    }
}

/// Histograms for every schema column.
pub fn histogram_report(
    real: &Table,
    fake: &Table,
    schema: &TableSchema,
) -> Result<Vec<ColumnHistogram>> {
    schema
        .columns()
        .iter()
        .map(|c| {
            let col = |t: &Table| -> Result<Vec<Cell>> {
                let j = t
                    .column_index(&c.name)
                    .ok_or_else(|| Error::Schema(format!("table has no column {:?}", c.name)))?;
                Ok(t.column(j).cloned().collect())
            };
            histogram_column(&c.name, &col(real)?, &col(fake)?, &c.kind)
        })
        .collect()
}

/// Histogram counts as CSV rows `column,bin,real,fake`.
pub fn histograms_csv(hists: &[ColumnHistogram]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["column", "bin", "real", "fake"])?;
    for h in hists {
        for ((l, r), f) in h.labels.iter().zip(&h.real).zip(&h.fake) {
            w.write_record([
                h.column.as_str(),
                l.as_str(),
                &r.to_string(),
                &f.to_string(),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Schema(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}
