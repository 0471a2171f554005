//! Tabular reports with CSV and JSON emission.
//!
//! Floats are written with 17 significant digits in CSV and as shortest
//! round-trip decimals in JSON, so every value can be read back bit-exactly.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::Result;

/// 17 significant digits.
pub fn fmt_num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Bool(bool),
    Text(String),
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Num(x) => fmt_num(*x),
            Cell::Int(i) => i.to_string(),
            Cell::Bool(b) => b.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Num(x) => serde_json::Number::from_f64(*x)
                .map(Value::Number)
                .unwrap_or_else(|| Value::String(format!("{x}"))),
            Cell::Int(i) => Value::from(*i),
            Cell::Bool(b) => Value::Bool(*b),
            Cell::Text(s) => Value::String(s.clone()),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Num(x) => Some(*x),
            Cell::Int(i) => Some(*i as f64),
            _ => None,
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}
impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}
impl From<u64> for Cell {
    fn from(x: u64) -> Self {
        Cell::Int(x as i64)
    }
}
impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::Bool(x)
    }
}
impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::Text(x.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width mismatch");
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Numeric values of one column.
    pub fn values(&self, name: &str) -> Vec<f64> {
        let Some(i) = self.column(name) else {
            return Vec::new();
        };
        self.rows.iter().filter_map(|r| r[i].as_f64()).collect()
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "{}", self.columns.join(","))?;
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::csv).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    fn json_rows(&self) -> Value {
        Value::Array(
            self.rows
                .iter()
                .map(|row| {
                    let obj: Map<String, Value> = self
                        .columns
                        .iter()
                        .cloned()
                        .zip(row.iter().map(Cell::json))
                        .collect();
                    Value::Object(obj)
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    /// Reported for inspection; never gates an exit code.
    Audit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub id: String,
    pub status: Status,
    pub tolerance: Option<f64>,
    pub detail: String,
}

impl Verdict {
    pub fn check(id: &str, ok: bool, tolerance: f64, detail: String) -> Self {
        Self {
            id: id.to_string(),
            status: if ok { Status::Pass } else { Status::Fail },
            tolerance: Some(tolerance),
            detail,
        }
    }

    pub fn audit(id: &str, detail: String) -> Self {
        Self {
            id: id.to_string(),
            status: Status::Audit,
            tolerance: None,
            detail,
        }
    }
}

/// Self-contained experiment output: metadata, named tables, verdicts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentReport {
    pub meta: Map<String, Value>,
    pub tables: BTreeMap<String, Table>,
    pub verdicts: Vec<Verdict>,
}

impl ExperimentReport {
    pub fn new(name: &str) -> Self {
        let mut r = Self::default();
        r.meta.insert("experiment".into(), Value::from(name));
        r.meta.insert("engine_version".into(), Value::from(env!("CARGO_PKG_VERSION")));
        r
    }

    pub fn set_meta<V: Into<Value>>(&mut self, key: &str, v: V) {
        self.meta.insert(key.to_string(), v.into());
    }

    pub fn add_table(&mut self, name: &str, table: Table) {
        self.tables.insert(name.to_string(), table);
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.get(name)
    }

    /// True when no asserted verdict failed; audit rows are ignored.
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.status != Status::Fail)
    }

    pub fn to_json(&self) -> Value {
        let tables: Map<String, Value> = self
            .tables
            .iter()
            .map(|(k, t)| (k.clone(), t.json_rows()))
            .collect();
        let mut root = Map::new();
        root.insert("meta".into(), Value::Object(self.meta.clone()));
        root.insert("tables".into(), Value::Object(tables));
        root.insert(
            "verdicts".into(),
            serde_json::to_value(&self.verdicts).expect("verdicts serialize"),
        );
        Value::Object(root)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_json()).expect("report serializes")
    }

    /// One CSV per table, named `<stem>_<table>.csv` next to `path`.
    pub fn write_csv_files(&self, path: &Path) -> Result<Vec<std::path::PathBuf>> {
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
        let mut written = Vec::new();
        for (name, table) in &self.tables {
            let file = if self.tables.len() == 1 {
                path.to_path_buf()
            } else {
                dir.join(format!("{stem}_{name}.csv"))
            };
            let mut f = std::io::BufWriter::new(std::fs::File::create(&file)?);
            table.write_csv(&mut f)?;
            f.flush()?;
            written.push(file);
        }
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [0.1, 1.0 / 3.0, std::f64::consts::PI, 1e-300, 12345.678] {
            let s = fmt_num(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
            let mantissa = s.split('e').next().unwrap().replace(['.', '-'], "");
            assert_eq!(mantissa.len(), 17);
        }
    }

    #[test]
    fn json_schema_shape() {
        let mut r = ExperimentReport::new("demo");
        let mut t = Table::new(&["n", "x"]);
        t.push(vec![1usize.into(), 0.5.into()]);
        r.add_table("main", t);
        r.verdicts.push(Verdict::check("c1", true, 0.05, "ok".into()));
        r.verdicts.push(Verdict::audit("a1", "info".into()));
        let v = r.to_json();
        assert_eq!(v["meta"]["experiment"], "demo");
        assert_eq!(v["tables"]["main"][0]["x"], 0.5);
        assert_eq!(v["verdicts"][0]["status"], "pass");
        assert_eq!(v["verdicts"][1]["status"], "audit");
        assert!(r.passed());
    }
}
