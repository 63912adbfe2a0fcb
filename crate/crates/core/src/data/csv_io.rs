use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use super::schema::{
    Cell, ColumnKind, ColumnSchema, KindName, SchemaSpec, Table, TableSchema, Task,
};
use crate::{Error, Result};

struct RawTable {
    names: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_raw<R: Read>(reader: R) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let names: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    if names.is_empty() || names.iter().all(|n| n.is_empty()) {
        return Err(Error::Schema("csv has no header".into()));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Row {
            row: i + 1,
            message: e.to_string(),
        })?;
        if rec.len() != names.len() {
            return Err(Error::Row {
                row: i + 1,
                message: format!("expected {} fields, found {}", names.len(), rec.len()),
            });
        }
        let row: Vec<String> = rec.iter().map(|s| s.trim().to_string()).collect();
        if let Some(c) = row.iter().position(|s| s.is_empty()) {
            return Err(Error::Row {
                row: i + 1,
                message: format!("missing value in column {:?}", names[c]),
            });
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Schema("table has no rows".into()));
    }
    Ok(RawTable { names, rows })
}

fn parse_num(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| Error::io(path, e))
}

/// Reads a CSV, inferring the schema (numeric columns become continuous) except
/// where `spec` overrides it.
pub fn load_csv(path: &Path, spec: Option<&SchemaSpec>) -> Result<(TableSchema, Table)> {
    read_csv(open(path)?, spec)
}

pub fn read_csv<R: Read>(reader: R, spec: Option<&SchemaSpec>) -> Result<(TableSchema, Table)> {
    let raw = read_raw(reader)?;
    let empty = SchemaSpec::default();
    let spec = spec.unwrap_or(&empty);
    if let Some(c) = spec.columns.iter().find(|c| !raw.names.contains(&c.name)) {
        return Err(Error::Schema(format!(
            "schema column {:?} is not in the csv header",
            c.name
        )));
    }

    let mut columns = Vec::with_capacity(raw.names.len());
    for (j, name) in raw.names.iter().enumerate() {
        let over = spec.column(name);
        let values = || raw.rows.iter().map(move |r| r[j].as_str());
        let kind = match over.and_then(|c| c.kind) {
            Some(k) => k,
            None if over.is_some_and(|c| c.categories.is_some()) => KindName::Discrete,
            None if values().all(|v| parse_num(v).is_some()) => KindName::Continuous,
            None => KindName::Discrete,
        };
        let kind = match kind {
            KindName::Continuous => {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for (i, v) in values().enumerate() {
                    let x = parse_num(v).ok_or_else(|| Error::Row {
                        row: i + 1,
                        message: format!("column {name:?}: {v:?} is not a number"),
                    })?;
                    lo = lo.min(x);
                    hi = hi.max(x);
                }
                let min = over.and_then(|c| c.min).unwrap_or(lo);
                let max = over.and_then(|c| c.max).unwrap_or(hi);
                if min >= max {
                    return Err(Error::Schema(format!(
                        "continuous column {name:?} is constant"
                    )));
                }
                ColumnKind::Continuous { min, max }
            }
            KindName::Discrete => {
                let categories = match over.and_then(|c| c.categories.clone()) {
                    Some(cats) => {
                        for (i, v) in values().enumerate() {
                            if !cats.iter().any(|c| c == v) {
                                return Err(Error::Row {
                                    row: i + 1,
                                    message: format!(
                                        "column {name:?}: category {v:?} is not declared"
                                    ),
                                });
                            }
                        }
                        cats
                    }
                    None => values()
                        .collect::<BTreeSet<_>>()
                        .into_iter()
                        .map(str::to_string)
                        .collect(),
                };
                ColumnKind::Discrete { categories }
            }
        };
        columns.push(ColumnSchema {
            name: name.clone(),
            kind,
        });
    }

    let task = match (&spec.target, spec.task) {
        (_, Some(task)) => task,
        (None, None) => Task::None,
        (Some(t), None) => match columns.iter().find(|c| &c.name == t).map(|c| &c.kind) {
            Some(ColumnKind::Continuous { .. }) => Task::Regression,
            Some(ColumnKind::Discrete { categories }) if categories.len() == 2 => Task::Binary,
            _ => Task::Multiclass,
        },
    };
    let schema = TableSchema::new(columns, spec.target.clone(), task)?;
    let table = typed(&raw, &schema)?;
    Ok((schema, table))
}

/// Reads a CSV whose columns must follow `schema` (used for synthetic and test data).
pub fn load_csv_with_schema(path: &Path, schema: &TableSchema) -> Result<Table> {
    let raw = read_raw(open(path)?)?;
    typed(&raw, schema)
}

fn typed(raw: &RawTable, schema: &TableSchema) -> Result<Table> {
    let mut map = Vec::with_capacity(schema.columns().len());
    for c in schema.columns() {
        let j = raw
            .names
            .iter()
            .position(|n| n == &c.name)
            .ok_or_else(|| Error::Schema(format!("column {:?} missing from csv", c.name)))?;
        map.push((j, c));
    }
    let rows = raw
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            map.iter()
                .map(|(j, c)| {
                    let v = &r[*j];
                    match c.kind {
                        ColumnKind::Continuous { .. } => {
                            parse_num(v).map(Cell::Num).ok_or_else(|| Error::Row {
                                row: i + 1,
                                message: format!("column {:?}: {v:?} is not a number", c.name),
                            })
                        }
                        ColumnKind::Discrete { .. } => Ok(Cell::Cat(v.clone())),
                    }
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Table {
        names: schema.names(),
        rows,
    })
}

/// Writes a table with a header row; numbers use the shortest exact representation.
pub fn write_csv(path: &Path, table: &Table) -> Result<()> {
    let mut buf = Vec::new();
    write_csv_to(&mut buf, table)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn write_csv_to<W: Write>(writer: W, table: &Table) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(&table.names)?;
    for row in &table.rows {
        w.write_record(row.iter().map(|c| c.to_string()))?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}
