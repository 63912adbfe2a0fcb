//! Coverage, train-on-synthetic/test-on-real scores and column histograms.

mod coverage;
mod histogram;
pub mod linear;
mod tstr;

use serde::{Deserialize, Serialize};

pub use coverage::{coverage_points, nn1_agreement, CoverageDirection};
pub use histogram::{
    histogram_column, histogram_continuous, histogram_discrete, histogram_report, histograms_csv,
    tv_distance, ColumnHistogram, HISTOGRAM_BINS,
};
pub use tstr::{tstr, TstrMetrics};

use crate::data::{encode, Table, TableSchema};
use crate::nn::Tensor2;
use crate::Result;

pub const DEFAULT_K: usize = 5;

/// Rows in the common distance space: scaled continuous columns then one-hot blocks.
pub fn embed(table: &Table, schema: &TableSchema) -> Result<Tensor2> {
    let e = encode(table, schema)?;
    e.cont.hcat(e.disc.probs())
}

/// Coverage of `fake` against `real` with `k` neighbours.
pub fn coverage(
    fake: &Table,
    real: &Table,
    schema: &TableSchema,
    k: usize,
    direction: CoverageDirection,
) -> Result<f64> {
    coverage_points(&embed(real, schema)?, &embed(fake, schema)?, k, direction)
}

/// Everything `eval` reports for one real/synthetic pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Coverage in the selected direction.
    pub coverage: f64,
    pub coverage_direction: CoverageDirection,
    pub coverage_real_neighborhoods: f64,
    pub coverage_fake_neighborhoods: f64,
    pub k: usize,
    pub real_rows: usize,
    pub fake_rows: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tstr: Option<TstrMetrics>,
    pub histograms: Vec<ColumnHistogram>,
    /// Wall-clock seconds spent generating the synthetic rows, when known.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample_seconds: Option<f64>,
}

impl EvalReport {
    pub fn mean_tv_distance(&self) -> f64 {
        let n = self.histograms.len().max(1) as f64;
        self.histograms.iter().map(|h| h.tv_distance).sum::<f64>() / n
    }

    /// Looks up a named scalar (`coverage`, `macro_f1`, `auroc`, `mean_tv`, ...).
    pub fn metric(&self, name: &str) -> Option<f64> {
        let t = self.tstr.as_ref();
        match name {
            "coverage" => Some(self.coverage),
            "coverage_real" | "coverage_real_neighborhoods" => {
                Some(self.coverage_real_neighborhoods)
            }
            "coverage_fake" | "coverage_fake_neighborhoods" => {
                Some(self.coverage_fake_neighborhoods)
            }
            "binary_f1" => t.and_then(|t| t.binary_f1),
            "macro_f1" => t.and_then(|t| t.macro_f1),
            "auroc" => t.and_then(|t| t.auroc),
            "r2" => t.and_then(|t| t.r2),
            "rmse" => t.and_then(|t| t.rmse),
            "mean_tv" => Some(self.mean_tv_distance()),
            "sample_seconds" => self.sample_seconds,
            _ => None,
        }
    }
}

/// Computes coverage in both directions, TSTR (when the schema names a target)
/// and per-column histograms.
pub fn evaluate(
    real: &Table,
    fake: &Table,
    schema: &TableSchema,
    k: usize,
    direction: CoverageDirection,
) -> Result<EvalReport> {
    let (r, f) = (embed(real, schema)?, embed(fake, schema)?);
    let real_dir = coverage_points(&r, &f, k, CoverageDirection::RealNeighborhoods)?;
    let fake_dir = coverage_points(&r, &f, k, CoverageDirection::FakeNeighborhoods)?;
    let tstr = match schema.target() {
        Some(_) => Some(tstr(fake, real, schema)?),
        None => None,
    };
    Ok(EvalReport {
        coverage: match direction {
            CoverageDirection::RealNeighborhoods => real_dir,
            CoverageDirection::FakeNeighborhoods => fake_dir,
        },
        coverage_direction: direction,
        coverage_real_neighborhoods: real_dir,
        coverage_fake_neighborhoods: fake_dir,
        k,
        real_rows: real.len(),
        fake_rows: fake.len(),
        tstr,
        histograms: histogram_report(real, fake, schema)?,
        sample_seconds: None,
    })
}
