use super::schema::{Cell, ColumnKind, Table, TableSchema};
use crate::diffusion::discrete::{argmax_blocks, CategoricalState};
use crate::nn::Tensor2;
use crate::{Error, Result};

/// Model-space view of a table: min-max scaled continuous block and one-hot discrete block.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedBatch {
    pub cont: Tensor2,
    pub disc: CategoricalState,
}

impl EncodedBatch {
    pub fn rows(&self) -> usize {
        self.cont.rows()
    }

    pub fn select_rows(&self, indices: &[usize]) -> Self {
        Self {
            cont: self.cont.select_rows(indices),
            disc: self.disc.select_rows(indices),
        }
    }
}

fn column_positions(table: &Table, schema: &TableSchema) -> Result<Vec<usize>> {
    schema
        .columns()
        .iter()
        .map(|c| {
            table
                .column_index(&c.name)
                .ok_or_else(|| Error::Schema(format!("table has no column {:?}", c.name)))
        })
        .collect()
}

/// `v ↦ 2(v − min)/(max − min) − 1` for continuous columns, one-hot by category
/// index for discrete ones. Values outside the schema range clamp to `[−1, 1]`.
pub fn encode(table: &Table, schema: &TableSchema) -> Result<EncodedBatch> {
    let pos = column_positions(table, schema)?;
    let n = table.len();
    let n_c = schema.n_continuous();
    let sizes = schema.category_sizes();
    let mut cont = Tensor2::zeros(n, n_c);
    let mut indices = vec![Vec::with_capacity(sizes.len()); n];
    let mut ci = 0;
    for (col, &j) in schema.columns().iter().zip(&pos) {
        match &col.kind {
            ColumnKind::Continuous { min, max } => {
                let mut clamped = 0usize;
                for (r, row) in table.rows.iter().enumerate() {
                    let v = row[j].as_num().ok_or_else(|| Error::Row {
                        row: r + 1,
                        message: format!(
                            "column {:?} expects a number, found {}",
                            col.name, row[j]
                        ),
                    })?;
                    let z = 2.0 * (v - min) / (max - min) - 1.0;
                    if !(-1.0..=1.0).contains(&z) {
                        clamped += 1;
                    }
                    cont.set(r, ci, z.clamp(-1.0, 1.0));
                }
                if clamped > 0 {
                    log::warn!(
                        "column {:?}: {clamped} value(s) outside [{min}, {max}] clamped on encode",
                        col.name
                    );
                }
                ci += 1;
            }
            ColumnKind::Discrete { categories } => {
                for (r, row) in table.rows.iter().enumerate() {
                    let v = match &row[j] {
                        Cell::Cat(s) => s.clone(),
                        Cell::Num(x) => x.to_string(),
                    };
                    let k = categories.iter().position(|c| *c == v).ok_or_else(|| {
                        Error::Categorical(format!("column {:?}: unknown category {v:?}", col.name))
                    })?;
                    indices[r].push(k);
                }
            }
        }
    }
    let disc = if sizes.is_empty() {
        CategoricalState::empty(n)
    } else {
        CategoricalState::from_indices(sizes, &indices)?
    };
    Ok(EncodedBatch { cont, disc })
}

/// Inverse of [`encode`]: continuous values are clamped to `[−1, 1]` and
/// rescaled; discrete blocks (one-hot, probabilities or logits) decode by argmax,
/// ties to the lowest index.
pub fn decode(cont: &Tensor2, disc: &Tensor2, schema: &TableSchema) -> Result<Table> {
    let n_c = schema.n_continuous();
    let sizes = schema.category_sizes();
    let width: usize = sizes.iter().sum();
    if cont.cols() != n_c || disc.cols() != width || cont.rows() != disc.rows() {
        return Err(Error::shape(
            "decode",
            format!("(n, {n_c}) and (n, {width})"),
            format!("{:?} and {:?}", cont.shape(), disc.shape()),
        ));
    }
    let idx = argmax_blocks(disc, &sizes);
    let rows = (0..cont.rows())
        .map(|r| {
            let (mut ci, mut di) = (0, 0);
            schema
                .columns()
                .iter()
                .map(|c| match &c.kind {
                    ColumnKind::Continuous { min, max } => {
                        let z = cont.get(r, ci).clamp(-1.0, 1.0);
                        ci += 1;
                        Cell::Num(min + (z + 1.0) / 2.0 * (max - min))
                    }
                    ColumnKind::Discrete { categories } => {
                        let k = idx[r][di];
                        di += 1;
                        Cell::Cat(categories[k].clone())
                    }
                })
                .collect()
        })
        .collect();
    Ok(Table {
        names: schema.names(),
        rows,
    })
}

pub fn decode_batch(batch: &EncodedBatch, schema: &TableSchema) -> Result<Table> {
    decode(&batch.cont, batch.disc.probs(), schema)
}

#[cfg(test)]
mod tests {
    use super::super::csv_io::read_csv;
    use super::*;

    fn sample() -> (TableSchema, Table) {
        read_csv("x,c,y\n0,a,10\n2,b,20\n1,a,15\n".as_bytes(), None).unwrap()
    }

    #[test]
    fn endpoints_and_midpoint() {
        let (s, t) = sample();
        let e = encode(&t, &s).unwrap();
        assert_eq!(e.cont.row(0), &[-1.0, -1.0]);
        assert_eq!(e.cont.row(1), &[1.0, 1.0]);
        assert_eq!(e.cont.row(2), &[0.0, 0.0]);
        assert_eq!(e.disc.probs().row(1), &[0.0, 1.0]);
        assert!(e.disc.is_one_hot());
    }

    #[test]
    fn unknown_category_names_column_and_value() {
        let (s, mut t) = sample();
        t.rows[0][1] = Cell::Cat("zzz".into());
        let err = encode(&t, &s).unwrap_err().to_string();
        assert!(err.contains("\"c\"") && err.contains("zzz"), "{err}");
    }

    #[test]
    fn decode_clamps_and_breaks_ties_low() {
        let (s, _) = sample();
        let cont = Tensor2::new(1, 2, vec![3.7, -9.0]).unwrap();
        let logits = Tensor2::new(1, 2, vec![0.2, 0.2]).unwrap();
        let t = decode(&cont, &logits, &s).unwrap();
        assert_eq!(
            t.rows[0],
            vec![Cell::Num(2.0), Cell::Cat("a".into()), Cell::Num(10.0)]
        );
    }

    #[test]
    fn out_of_range_clamps_on_encode() {
        let (s, mut t) = sample();
        t.rows[0][0] = Cell::Num(7.0);
        let e = encode(&t, &s).unwrap();
        assert_eq!(e.cont.get(0, 0), 1.0);
    }

    #[test]
    fn round_trip() {
        let (s, t) = sample();
        let back = decode_batch(&encode(&t, &s).unwrap(), &s).unwrap();
        for (a, b) in t.rows.iter().zip(&back.rows) {
            for (x, y) in a.iter().zip(b) {
                match (x, y) {
                    (Cell::Num(x), Cell::Num(y)) => assert!((x - y).abs() < 1e-12),
                    _ => assert_eq!(x, y),
                }
            }
        }
    }
}
