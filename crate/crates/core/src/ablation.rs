//! Discrete-space versus continuous-space generation of categorical tables.
//!
//! The continuous-space variant encodes every category as its own continuous
//! column holding 0 or 1 (scaled to ±1), trains the Gaussian model alone on
//! those columns and decodes each block by argmax. Neither variant uses
//! conditioning or contrastive terms.

use serde::{Deserialize, Serialize};

use crate::data::{Cell, ColumnKind, ColumnSchema, Table, TableSchema, Task};
use crate::engine::{CoDiModel, TrainConfig};
use crate::eval::{coverage, CoverageDirection};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceAblationReport {
    pub seed: u64,
    pub rows: usize,
    pub samples: usize,
    pub k: usize,
    pub direction: CoverageDirection,
    pub discrete_space_coverage: f64,
    pub continuous_space_coverage: f64,
}

impl SpaceAblationReport {
    pub fn discrete_wins(&self) -> bool {
        self.discrete_space_coverage >= self.continuous_space_coverage
    }
}

fn categories(schema: &TableSchema) -> Result<Vec<(&str, &[String])>> {
    schema
        .columns()
        .iter()
        .map(|c| match &c.kind {
            ColumnKind::Discrete { categories } => Ok((c.name.as_str(), categories.as_slice())),
            ColumnKind::Continuous { .. } => Err(Error::Schema(format!(
                "space ablation needs a discrete-only table; {:?} is continuous",
                c.name
            ))),
        })
        .collect()
}

/// One `[0, 1]` continuous column per category, named `column=category`.
pub fn continuous_space_schema(schema: &TableSchema) -> Result<TableSchema> {
    let columns = categories(schema)?
        .into_iter()
        .flat_map(|(name, cats)| {
            cats.iter().map(move |cat| ColumnSchema {
                name: format!("{name}={cat}"),
                kind: ColumnKind::Continuous { min: 0.0, max: 1.0 },
            })
        })
        .collect();
    TableSchema::new(columns, None, Task::None)
}

pub fn to_continuous_space(table: &Table, schema: &TableSchema) -> Result<Table> {
    let cols = categories(schema)?;
    let cont = continuous_space_schema(schema)?;
    let pos: Vec<usize> = cols
        .iter()
        .map(|(n, _)| {
            table
                .column_index(n)
                .ok_or_else(|| Error::Schema(format!("table has no column {n:?}")))
        })
        .collect::<Result<_>>()?;
    let rows = table
        .rows
        .iter()
        .map(|r| {
            let mut out = Vec::with_capacity(cont.columns().len());
            for ((name, cats), &j) in cols.iter().zip(&pos) {
                let v = r[j].to_string();
                if !cats.contains(&v) {
                    return Err(Error::Categorical(format!(
                        "column {name:?}: unknown category {v:?}"
                    )));
                }
                out.extend(
                    cats.iter()
                        .map(|c| Cell::Num(if *c == v { 1.0 } else { 0.0 })),
                );
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(Table {
        names: cont.names(),
        rows,
    })
}

/// Argmax over each block of continuous-space columns, ties to the lowest index.
pub fn from_continuous_space(table: &Table, schema: &TableSchema) -> Result<Table> {
    let cols = categories(schema)?;
    let rows = table
        .rows
        .iter()
        .map(|r| {
            let mut off = 0;
            cols.iter()
                .map(|(_, cats)| {
                    let block = &r[off..off + cats.len()];
                    off += cats.len();
                    let mut best = 0;
                    for (k, c) in block.iter().enumerate() {
                        if c.as_num().unwrap_or(f64::NEG_INFINITY)
                            > block[best].as_num().unwrap_or(f64::NEG_INFINITY)
                        {
                            best = k;
                        }
                    }
                    Cell::Cat(cats[best].clone())
                })
                .collect()
        })
        .collect();
    Ok(Table {
        names: schema.names(),
        rows,
    })
}

/// Trains both variants with `config` and reports the coverage of `samples`
/// generated rows against `table`.
pub fn run_space_ablation(
    schema: &TableSchema,
    table: &Table,
    config: &TrainConfig,
    samples: usize,
    k: usize,
    mut on_progress: impl FnMut(&str, &crate::engine::TrainProgress),
) -> Result<SpaceAblationReport> {
    let cont_schema = continuous_space_schema(schema)?;
    let cfg = TrainConfig {
        lambda_c: 0.0,
        lambda_d: 0.0,
        ..config.clone()
    };
    let direction = CoverageDirection::RealNeighborhoods;
    let sample_seed = config.seed.wrapping_add(1);

    let mut disc = CoDiModel::new(schema.clone(), cfg.clone())?;
    disc.fit(&crate::data::encode(table, schema)?, cfg.epochs, |p| {
        on_progress("discrete", p)
    })?;
    let fake_d = disc.generate(samples, sample_seed)?;

    let cont_table = to_continuous_space(table, schema)?;
    let mut cont = CoDiModel::new(cont_schema.clone(), cfg.clone())?;
    cont.fit(
        &crate::data::encode(&cont_table, &cont_schema)?,
        cfg.epochs,
        |p| on_progress("continuous", p),
    )?;
    let fake_c = from_continuous_space(&cont.generate(samples, sample_seed)?, schema)?;

    Ok(SpaceAblationReport {
        seed: config.seed,
        rows: table.len(),
        samples,
        k,
        direction,
        discrete_space_coverage: coverage(&fake_d, table, schema, k, direction)?,
        continuous_space_coverage: coverage(&fake_c, table, schema, k, direction)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_latent_categorical;
    use crate::rng::{stream_rng, Stream};

    #[test]
    fn continuous_space_round_trip() {
        let (s, t) = generate_latent_categorical(50, &mut stream_rng(0, Stream::Toy, 0)).unwrap();
        let c = to_continuous_space(&t, &s).unwrap();
        assert_eq!(
            c.names.len(),
            crate::data::LATENT_SIZES.iter().sum::<usize>()
        );
        assert_eq!(from_continuous_space(&c, &s).unwrap(), t);
    }

    #[test]
    fn continuous_columns_are_rejected() {
        let (s, _) = crate::data::generate_toy(16, &mut stream_rng(0, Stream::Toy, 0)).unwrap();
        assert!(continuous_space_schema(&s).is_err());
    }

    #[test]
    fn tiny_run_reports_both_numbers() {
        let (s, t) = generate_latent_categorical(40, &mut stream_rng(1, Stream::Toy, 0)).unwrap();
        let cfg = TrainConfig {
            hidden: [8, 8, 8],
            emb_dim: 4,
            epochs: 2,
            batch_size: 20,
            timesteps: 5,
            ..Default::default()
        };
        let r = run_space_ablation(&s, &t, &cfg, 40, 5, |_, _| {}).unwrap();
        assert!((0.0..=1.0).contains(&r.discrete_space_coverage));
        assert!((0.0..=1.0).contains(&r.continuous_space_coverage));
        assert_eq!(
            r,
            run_space_ablation(&s, &t, &cfg, 40, 5, |_, _| {}).unwrap()
        );
    }
}
