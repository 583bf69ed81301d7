//! Database schema catalog: tables, typed columns and primary-foreign key
//! links, plus the identifier lexicon consumed by masking and tagging.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("invalid schema json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("duplicate table name `{0}`")]
    DuplicateTable(String),
    #[error("duplicate column `{column}` in table `{table}`")]
    DuplicateColumn { table: String, column: String },
    #[error("table `{0}` has no columns")]
    EmptyTable(String),
    #[error("dangling link endpoint `{0}`")]
    DanglingLink(String),
    #[error("link endpoint `{0}` is not of the form table.column")]
    BadLinkFormat(String),
    #[error("self-loop link on table `{0}`")]
    SelfLoop(String),
    #[error("unknown table `{0}`")]
    UnknownTable(String),
    #[error("io error reading `{path}`: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv error in `{path}`: {message}")]
    Csv { path: String, message: String },
    #[error("row arity mismatch in table `{table}`: expected {expected}, got {got}")]
    RowArity {
        table: String,
        expected: usize,
        got: usize,
    },
    #[error("value `{value}` in table `{table}` column `{column}` is not numeric")]
    TypeMismatch {
        table: String,
        column: String,
        value: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnType {
    String,
    Numeric,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ColumnType,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<Column>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }
}

/// One primary-foreign key pair; endpoints are `table.column` strings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Link {
    pub from: String,
    pub to: String,
}

impl Link {
    pub fn from_parts(&self) -> (&str, &str) {
        split_qualified(&self.from).expect("validated at load")
    }

    pub fn to_parts(&self) -> (&str, &str) {
        split_qualified(&self.to).expect("validated at load")
    }
}

pub fn split_qualified(s: &str) -> Option<(&str, &str)> {
    let mut it = s.splitn(2, '.');
    match (it.next(), it.next()) {
        (Some(t), Some(c)) if !t.is_empty() && !c.is_empty() => Some((t, c)),
        _ => None,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Schema {
    pub tables: Vec<Table>,
    #[serde(default)]
    pub links: Vec<Link>,
}

impl Schema {
    pub fn from_json(text: &str) -> Result<Self, SchemaError> {
        let schema: Schema = serde_json::from_str(text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self, SchemaError> {
        let text = std::fs::read_to_string(path).map_err(|source| SchemaError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    fn validate(&self) -> Result<(), SchemaError> {
        let mut names = BTreeSet::new();
        for table in &self.tables {
            if !names.insert(table.name.clone()) {
                return Err(SchemaError::DuplicateTable(table.name.clone()));
            }
            if table.columns.is_empty() {
                return Err(SchemaError::EmptyTable(table.name.clone()));
            }
            let mut cols = BTreeSet::new();
            for col in &table.columns {
                if !cols.insert(col.name.clone()) {
                    return Err(SchemaError::DuplicateColumn {
                        table: table.name.clone(),
                        column: col.name.clone(),
                    });
                }
            }
        }
        for link in &self.links {
            let mut tables = Vec::new();
            for endpoint in [&link.from, &link.to] {
                let (t, c) = split_qualified(endpoint)
                    .ok_or_else(|| SchemaError::BadLinkFormat(endpoint.clone()))?;
                let table = self
                    .table(t)
                    .ok_or_else(|| SchemaError::DanglingLink(endpoint.clone()))?;
                if table.column(c).is_none() {
                    return Err(SchemaError::DanglingLink(endpoint.clone()));
                }
                tables.push(t.to_string());
            }
            if tables[0] == tables[1] {
                return Err(SchemaError::SelfLoop(tables[0].clone()));
            }
        }
        Ok(())
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// Tables linked to `table` by any primary-foreign key pair
    /// (undirected reading).
    pub fn join_partners(&self, table: &str) -> Result<BTreeSet<String>, SchemaError> {
        if self.table(table).is_none() {
            return Err(SchemaError::UnknownTable(table.to_string()));
        }
        let mut out = BTreeSet::new();
        for link in &self.links {
            let (ft, _) = link.from_parts();
            let (tt, _) = link.to_parts();
            if ft == table {
                out.insert(tt.to_string());
            } else if tt == table {
                out.insert(ft.to_string());
            }
        }
        Ok(out)
    }

    /// Link column pairs usable between `t1` and `t2`, as
    /// (t1-qualified, t2-qualified) token pairs.
    pub fn link_pairs(&self, t1: &str, t2: &str) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for link in &self.links {
            let (ft, fc) = link.from_parts();
            let (tt, tc) = link.to_parts();
            if ft == t1 && tt == t2 {
                out.push((format!("{ft}.{fc}"), format!("{tt}.{tc}")));
            } else if tt == t1 && ft == t2 {
                out.push((format!("{tt}.{tc}"), format!("{ft}.{fc}")));
            }
        }
        out
    }

    /// All qualified link endpoint tokens, sorted.
    pub fn link_endpoint_tokens(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for link in &self.links {
            out.insert(link.from.clone());
            out.insert(link.to.clone());
        }
        out
    }

    /// Identifier lexicon: sorted column tokens grouped by table, and
    /// sorted table tokens.
    pub fn identifier_tokens(&self) -> (BTreeMap<String, Vec<String>>, Vec<String>) {
        let mut columns = BTreeMap::new();
        let mut tables = Vec::new();
        for table in &self.tables {
            tables.push(table.name.clone());
            let mut cols: Vec<String> = table.columns.iter().map(|c| c.name.clone()).collect();
            cols.sort();
            columns.insert(table.name.clone(), cols);
        }
        tables.sort();
        (columns, tables)
    }

    /// Tables that declare a column with the given bare name.
    pub fn tables_with_column(&self, column: &str) -> BTreeSet<String> {
        self.tables
            .iter()
            .filter(|t| t.column(column).is_some())
            .map(|t| t.name.clone())
            .collect()
    }
}

/// In-memory cell value.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Str(String),
    Num(f64),
}

impl Value {
    /// Canonical text form, used for multiset comparison keys and CSV
    /// round-trips.  Numbers are rounded at 1e-9 so aggregate outputs
    /// compare with that tolerance.
    pub fn canonical(&self) -> String {
        match self {
            Value::Str(s) => format!("s:{s}"),
            Value::Num(n) => format!("n:{:.9}", n),
        }
    }

    pub fn as_num(&self) -> Option<f64> {
        match self {
            Value::Num(n) => Some(*n),
            Value::Str(_) => None,
        }
    }

    pub fn render(&self) -> String {
        match self {
            Value::Str(s) => s.clone(),
            Value::Num(n) => {
                if n.fract() == 0.0 && n.abs() < 1e15 {
                    format!("{}", *n as i64)
                } else {
                    format!("{n}")
                }
            }
        }
    }
}

/// A schema together with loaded rows for each table.
#[derive(Debug, Clone)]
pub struct Database {
    pub schema: Schema,
    pub rows: BTreeMap<String, Vec<Vec<Value>>>,
}

impl Database {
    pub fn new(schema: Schema) -> Self {
        let rows = schema
            .tables
            .iter()
            .map(|t| (t.name.clone(), Vec::new()))
            .collect();
        Database { schema, rows }
    }

    pub fn insert_row(&mut self, table: &str, row: Vec<Value>) -> Result<(), SchemaError> {
        let t = self
            .schema
            .table(table)
            .ok_or_else(|| SchemaError::UnknownTable(table.to_string()))?;
        if row.len() != t.columns.len() {
            return Err(SchemaError::RowArity {
                table: table.to_string(),
                expected: t.columns.len(),
                got: row.len(),
            });
        }
        for (col, value) in t.columns.iter().zip(&row) {
            if col.ty == ColumnType::Numeric && value.as_num().is_none() {
                return Err(SchemaError::TypeMismatch {
                    table: table.to_string(),
                    column: col.name.clone(),
                    value: value.render(),
                });
            }
        }
        self.rows.get_mut(table).expect("table exists").push(row);
        Ok(())
    }

    pub fn table_rows(&self, table: &str) -> &[Vec<Value>] {
        self.rows.get(table).map(|r| r.as_slice()).unwrap_or(&[])
    }

    /// Load one CSV file per table from `dir` (header row must equal the
    /// declared column names).
    pub fn load_csv_dir(schema: Schema, dir: &Path) -> Result<Self, SchemaError> {
        let mut db = Database::new(schema.clone());
        for table in &schema.tables {
            let path = dir.join(format!("{}.csv", table.name));
            db.load_csv_table(&table.name, &path)?;
        }
        Ok(db)
    }

    pub fn load_csv_table(&mut self, table: &str, path: &Path) -> Result<(), SchemaError> {
        let t = self
            .schema
            .table(table)
            .ok_or_else(|| SchemaError::UnknownTable(table.to_string()))?
            .clone();
        let mut reader =
            csv::Reader::from_path(path).map_err(|e| SchemaError::Csv {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        let headers = reader
            .headers()
            .map_err(|e| SchemaError::Csv {
                path: path.display().to_string(),
                message: e.to_string(),
            })?
            .clone();
        let expected: Vec<&str> = t.columns.iter().map(|c| c.name.as_str()).collect();
        let got: Vec<&str> = headers.iter().collect();
        if expected != got {
            return Err(SchemaError::Csv {
                path: path.display().to_string(),
                message: format!("header {:?} does not match schema columns {:?}", got, expected),
            });
        }
        for record in reader.records() {
            let record = record.map_err(|e| SchemaError::Csv {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            let mut row = Vec::with_capacity(t.columns.len());
            for (col, field) in t.columns.iter().zip(record.iter()) {
                let value = match col.ty {
                    ColumnType::Numeric => Value::Num(field.parse::<f64>().map_err(|_| {
                        SchemaError::TypeMismatch {
                            table: table.to_string(),
                            column: col.name.clone(),
                            value: field.to_string(),
                        }
                    })?),
                    ColumnType::String => Value::Str(field.to_string()),
                };
                row.push(value);
            }
            self.insert_row(table, row)?;
        }
        Ok(())
    }
}
