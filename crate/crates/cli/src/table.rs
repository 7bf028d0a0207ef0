//! Typed tables with CSV and JSON emission.
//!
//! CSV layout: a `# units: ...` comment line, a header row, then one line
//! per row. Numbers are written with 17 significant digits; a column whose
//! unit is `text` holds strings.

use std::fmt;

use serde_json::{Map, Value};

use crate::CliError;

pub const TEXT_UNIT: &str = "text";
const UNITS_PREFIX: &str = "# units: ";

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Num(f64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Num(if v { 1.0 } else { 0.0 })
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Num(v) => write!(f, "{v:.16e}"),
            Cell::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Column {
    pub name: String,
    pub unit: String,
}

impl Column {
    pub fn new(name: &str, unit: &str) -> Self {
        Self {
            name: name.to_string(),
            unit: unit.to_string(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[(&str, &str)]) -> Self {
        Self {
            columns: columns.iter().map(|(n, u)| Column::new(n, u)).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) -> Result<(), CliError> {
        if row.len() != self.columns.len() {
            return Err(CliError::Table(format!(
                "row has {} cells, schema has {} columns",
                row.len(),
                self.columns.len()
            )));
        }
        for (cell, col) in row.iter().zip(&self.columns) {
            let text = col.unit == TEXT_UNIT;
            if matches!(cell, Cell::Text(_)) != text {
                return Err(CliError::Table(format!("cell type does not match column {}", col.name)));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn emit(&self, format: Format) -> Result<Vec<u8>, CliError> {
        match format {
            Format::Csv => self.to_csv(),
            Format::Json => self.to_json(),
        }
    }

    pub fn to_csv(&self) -> Result<Vec<u8>, CliError> {
        let mut out = Vec::new();
        let units: Vec<&str> = self.columns.iter().map(|c| c.unit.as_str()).collect();
        out.extend_from_slice(UNITS_PREFIX.as_bytes());
        out.extend_from_slice(units.join(",").as_bytes());
        out.push(b'\n');
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        writer.write_record(self.columns.iter().map(|c| c.name.as_str()))?;
        for row in &self.rows {
            writer.write_record(row.iter().map(|c| c.to_string()))?;
        }
        writer.into_inner().map_err(|e| CliError::Table(e.to_string()))
    }

    pub fn to_json(&self) -> Result<Vec<u8>, CliError> {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|row| {
                let mut obj = Map::new();
                for (cell, col) in row.iter().zip(&self.columns) {
                    let v = match cell {
                        Cell::Num(x) => serde_json::Number::from_f64(*x).map_or(Value::Null, Value::Number),
                        Cell::Text(s) => Value::String(s.clone()),
                    };
                    obj.insert(col.name.clone(), v);
                }
                Value::Object(obj)
            })
            .collect();
        let mut out = serde_json::to_vec_pretty(&rows)?;
        out.push(b'\n');
        Ok(out)
    }

    /// Parses the CSV layout written by [`Table::to_csv`].
    pub fn parse_csv(input: &str) -> Result<Self, CliError> {
        let (units_line, body) = match input.split_once('\n') {
            Some((first, rest)) if first.starts_with(UNITS_PREFIX) => (first, rest),
            _ => return Err(CliError::Table("missing units line".into())),
        };
        let units: Vec<&str> = units_line[UNITS_PREFIX.len()..].split(',').collect();
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
        let header = reader.headers()?.clone();
        if header.len() != units.len() {
            return Err(CliError::Table(format!(
                "{} units for {} columns",
                units.len(),
                header.len()
            )));
        }
        let columns: Vec<Column> = header.iter().zip(&units).map(|(n, u)| Column::new(n, u)).collect();
        let mut table = Table {
            columns,
            rows: Vec::new(),
        };
        for record in reader.records() {
            let record = record?;
            let row = record
                .iter()
                .zip(&table.columns)
                .map(|(field, col)| {
                    if col.unit == TEXT_UNIT {
                        Ok(Cell::Text(field.to_string()))
                    } else {
                        field
                            .parse::<f64>()
                            .map(Cell::Num)
                            .map_err(|_| CliError::Table(format!("bad number {field:?} in column {}", col.name)))
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            table.push(row)?;
        }
        Ok(table)
    }
}
