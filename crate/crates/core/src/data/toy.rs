//! Synthetic datasets: the four-circle toy table and a latent-class categorical table.
//!
//! Toy layout: circles of radius 0.6 centred at `(±1, ±1)`, each split into four
//! 90° sectors. Circle `c` and sector `s` give colour `4c + s` (`"c00"`..`"c15"`).
//! Points sit on the circle at a uniform angle within their sector, jittered by
//! isotropic Gaussian noise with σ = 0.05. Rows are stratified so that row `i`
//! lands in circle `i mod 4` and sector `(i / 4) mod 4`, then shuffled.

use std::f64::consts::FRAC_PI_2;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::schema::{Cell, ColumnKind, ColumnSchema, Table, TableSchema, Task};
use crate::{Error, Result};

pub const TOY_CENTERS: [(f64, f64); 4] = [(-1.0, 1.0), (1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)];
pub const TOY_RADIUS: f64 = 0.6;
pub const TOY_JITTER: f64 = 0.05;
pub const TOY_MIN_ROWS: usize = 16;

pub fn toy_color_name(circle: usize, sector: usize) -> String {
    format!("c{:02}", circle * 4 + sector)
}

/// Generates `n ≥ 16` toy rows with columns `x, y, color, circle`; the target is `color`.
pub fn generate_toy<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<(TableSchema, Table)> {
    if n < TOY_MIN_ROWS {
        return Err(Error::Config(format!(
            "toy data needs at least {TOY_MIN_ROWS} rows, got {n}"
        )));
    }
    let jitter = Normal::new(0.0, TOY_JITTER).expect("valid sigma");
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let circle = i % 4;
        let sector = (i / 4) % 4;
        let angle = (sector as f64 + rng.random::<f64>()) * FRAC_PI_2;
        let (cx, cy) = TOY_CENTERS[circle];
        let x = cx + TOY_RADIUS * angle.cos() + jitter.sample(rng);
        let y = cy + TOY_RADIUS * angle.sin() + jitter.sample(rng);
        rows.push(vec![
            Cell::Num(x),
            Cell::Num(y),
            Cell::Cat(toy_color_name(circle, sector)),
            Cell::Cat(circle.to_string()),
        ]);
    }
    rows.shuffle(rng);

    let range = |k: usize| {
        let vals = rows.iter().map(|r: &Vec<Cell>| r[k].as_num().unwrap());
        let lo = vals.clone().fold(f64::INFINITY, f64::min);
        let hi = vals.fold(f64::NEG_INFINITY, f64::max);
        ColumnKind::Continuous { min: lo, max: hi }
    };
    let columns = vec![
        ColumnSchema {
            name: "x".into(),
            kind: range(0),
        },
        ColumnSchema {
            name: "y".into(),
            kind: range(1),
        },
        ColumnSchema {
            name: "color".into(),
            kind: ColumnKind::Discrete {
                categories: (0..16).map(|k| toy_color_name(k / 4, k % 4)).collect(),
            },
        },
        ColumnSchema {
            name: "circle".into(),
            kind: ColumnKind::Discrete {
                categories: (0..4).map(|c| c.to_string()).collect(),
            },
        },
    ];
    let schema = TableSchema::new(columns, Some("color".into()), Task::Multiclass)?;
    let table = Table {
        names: schema.names(),
        rows,
    };
    Ok((schema, table))
}

/// Category counts of the latent-class table.
pub const LATENT_SIZES: [usize; 6] = [2, 3, 4, 5, 6, 3];

/// Discrete-only table whose six columns share a hidden class `z ∈ {0..3}`.
/// Column `j` takes `z mod K_j` with probability 0.8 and a uniform category otherwise.
pub fn generate_latent_categorical<R: Rng + ?Sized>(
    n: usize,
    rng: &mut R,
) -> Result<(TableSchema, Table)> {
    if n < 2 {
        return Err(Error::Config(
            "latent-class data needs at least 2 rows".into(),
        ));
    }
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        // the first rows visit every category so vocabularies are complete
        let z = rng.random_range(0..4usize);
        let row = LATENT_SIZES
            .iter()
            .map(|&k| {
                let v = if i < 6 {
                    i % k
                } else if rng.random::<f64>() < 0.8 {
                    z % k
                } else {
                    rng.random_range(0..k)
                };
                Cell::Cat(format!("v{v}"))
            })
            .collect();
        rows.push(row);
    }
    rows.shuffle(rng);
    let columns = LATENT_SIZES
        .iter()
        .enumerate()
        .map(|(j, &k)| ColumnSchema {
            name: format!("d{j}"),
            kind: ColumnKind::Discrete {
                categories: (0..k).map(|v| format!("v{v}")).collect(),
            },
        })
        .collect();
    let schema = TableSchema::new(columns, None, Task::None)?;
    Ok((
        schema.clone(),
        Table {
            names: schema.names(),
            rows,
        },
    ))
}
