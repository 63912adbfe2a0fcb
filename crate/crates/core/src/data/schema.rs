use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// A single table cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Num(f64),
    Cat(String),
}

impl Cell {
    pub fn as_num(&self) -> Option<f64> {
        match self {
            Cell::Num(v) => Some(*v),
            Cell::Cat(_) => None,
        }
    }

    pub fn as_cat(&self) -> Option<&str> {
        match self {
            Cell::Cat(s) => Some(s),
            Cell::Num(_) => None,
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Num(v) => write!(f, "{v}"),
            Cell::Cat(s) => f.write_str(s),
        }
    }
}

/// Rows of typed cells under a header.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub names: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// All values of one column.
    pub fn column(&self, index: usize) -> impl Iterator<Item = &Cell> + '_ {
        self.rows.iter().map(move |r| &r[index])
    }

    pub fn select_rows(&self, indices: &[usize]) -> Table {
        Table {
            names: self.names.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }
}

/// Decoded model output.
pub type SynthTable = Table;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ColumnKind {
    Continuous { min: f64, max: f64 },
    Discrete { categories: Vec<String> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
}

impl ColumnSchema {
    pub fn is_continuous(&self) -> bool {
        matches!(self.kind, ColumnKind::Continuous { .. })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Binary,
    Multiclass,
    Regression,
    #[default]
    None,
}

/// Column layout, value ranges, vocabularies and downstream target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableSchema {
    columns: Vec<ColumnSchema>,
    target: Option<String>,
    task: Task,
}

impl TableSchema {
    pub fn new(columns: Vec<ColumnSchema>, target: Option<String>, task: Task) -> Result<Self> {
        let s = Self {
            columns,
            target,
            task,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.columns.is_empty() {
            return Err(Error::Schema("schema has no columns".into()));
        }
        let mut names = BTreeSet::new();
        for c in &self.columns {
            if !names.insert(c.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column {:?}", c.name)));
            }
            match &c.kind {
                ColumnKind::Continuous { min, max } => {
                    if !(min.is_finite() && max.is_finite() && min < max) {
                        return Err(Error::Schema(format!(
                            "continuous column {:?} needs finite min < max, got [{min}, {max}]",
                            c.name
                        )));
                    }
                }
                ColumnKind::Discrete { categories } => {
                    if categories.len() < 2 {
                        return Err(Error::Schema(format!(
                            "discrete column {:?} needs at least 2 categories, got {}",
                            c.name,
                            categories.len()
                        )));
                    }
                    let unique: BTreeSet<&String> = categories.iter().collect();
                    if unique.len() != categories.len() {
                        return Err(Error::Schema(format!(
                            "discrete column {:?} has duplicate categories",
                            c.name
                        )));
                    }
                }
            }
        }
        match (&self.target, self.task) {
            (None, Task::None) => {}
            (None, task) => {
                return Err(Error::Schema(format!(
                    "task {task:?} needs a target column"
                )))
            }
            (Some(t), task) => {
                let col = self.column(t).ok_or_else(|| {
                    Error::Schema(format!("target column {t:?} is not in the schema"))
                })?;
                let ok = match (task, &col.kind) {
                    (Task::Regression, ColumnKind::Continuous { .. }) => true,
                    (Task::Binary, ColumnKind::Discrete { categories }) => categories.len() == 2,
                    (Task::Multiclass, ColumnKind::Discrete { .. }) => true,
                    (Task::None, _) => true,
                    _ => false,
                };
                if !ok {
                    return Err(Error::Schema(format!(
                        "task {task:?} does not fit target column {t:?}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn columns(&self) -> &[ColumnSchema] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Option<&ColumnSchema> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn target(&self) -> Option<&str> {
        self.target.as_deref()
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn continuous(&self) -> impl Iterator<Item = &ColumnSchema> + '_ {
        self.columns.iter().filter(|c| c.is_continuous())
    }

    pub fn discrete(&self) -> impl Iterator<Item = &ColumnSchema> + '_ {
        self.columns.iter().filter(|c| !c.is_continuous())
    }

    /// `N_C`.
    pub fn n_continuous(&self) -> usize {
        self.continuous().count()
    }

    /// `K_i` for each discrete column, in schema order.
    pub fn category_sizes(&self) -> Vec<usize> {
        self.discrete()
            .map(|c| match &c.kind {
                ColumnKind::Discrete { categories } => categories.len(),
                ColumnKind::Continuous { .. } => unreachable!(),
            })
            .collect()
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("schema serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }

    pub fn to_spec(&self) -> SchemaSpec {
        SchemaSpec {
            columns: self
                .columns
                .iter()
                .map(|c| match &c.kind {
                    ColumnKind::Continuous { min, max } => ColumnSpec {
                        name: c.name.clone(),
                        kind: Some(KindName::Continuous),
                        min: Some(*min),
                        max: Some(*max),
                        categories: None,
                    },
                    ColumnKind::Discrete { categories } => ColumnSpec {
                        name: c.name.clone(),
                        kind: Some(KindName::Discrete),
                        min: None,
                        max: None,
                        categories: Some(categories.clone()),
                    },
                })
                .collect(),
            target: self.target.clone(),
            task: Some(self.task),
        }
    }

    /// Writes the schema as a fully pinned spec file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.to_spec())?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    /// Reads a fully pinned spec file (every column with kind and range or categories).
    pub fn load(path: &Path) -> Result<Self> {
        SchemaSpec::load(path)?.resolve_pinned()
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindName {
    Continuous,
    Discrete,
}

/// Per-column override in a schema spec. Unset fields are inferred from data.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<KindName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<Vec<String>>,
}

/// Declarative schema file: a JSON object with `columns`, `target` and `task`.
///
/// ```json
/// {"columns": [{"name": "flag", "kind": "discrete"}], "target": "flag", "task": "binary"}
/// ```
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SchemaSpec {
    #[serde(default)]
    pub columns: Vec<ColumnSpec>,
    #[serde(default)]
    pub target: Option<String>,
    #[serde(default)]
    pub task: Option<Task>,
}

impl SchemaSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn column(&self, name: &str) -> Option<&ColumnSpec> {
        self.columns.iter().find(|c| c.name == name)
    }

    /// Builds a schema without looking at data; every column must be fully specified.
    pub fn resolve_pinned(&self) -> Result<TableSchema> {
        let columns = self
            .columns
            .iter()
            .map(|c| {
                let kind = match (c.kind, c.min, c.max, &c.categories) {
                    (Some(KindName::Continuous) | None, Some(min), Some(max), None) => {
                        ColumnKind::Continuous { min, max }
                    }
                    (Some(KindName::Discrete) | None, None, None, Some(cats)) => {
                        ColumnKind::Discrete {
                            categories: cats.clone(),
                        }
                    }
                    _ => {
                        return Err(Error::Schema(format!(
                            "column {:?} is not fully specified (needs min/max or categories)",
                            c.name
                        )))
                    }
                };
                Ok(ColumnSchema {
                    name: c.name.clone(),
                    kind,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        TableSchema::new(columns, self.target.clone(), self.task.unwrap_or_default())
    }
}
