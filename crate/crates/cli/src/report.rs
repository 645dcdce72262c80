use std::io::Write;

use predregret::MinimaxCertificate;
use serde_json::{Map, Value};

use crate::config::{ExperimentConfig, Format};
use crate::error::CliResult;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Num(f64),
    Text(String),
    Bool(bool),
    Empty,
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::Num)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
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

/// Rounds to 12 significant digits.
pub fn round12(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        let r = round12(x);
        // normalise negative zero
        if r == 0.0 {
            "0".into()
        } else if r.abs() < 1e-4 || r.abs() >= 1e15 {
            format!("{r:e}")
        } else {
            format!("{r}")
        }
    }
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Num(v) => fmt_num(*v),
            Cell::Text(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Int(v) => Value::from(*v),
            Cell::Num(v) => num_value(*v),
            Cell::Text(s) => Value::from(s.as_str()),
            Cell::Bool(b) => Value::from(*b),
            Cell::Empty => Value::Null,
        }
    }
}

fn num_value(x: f64) -> Value {
    serde_json::Number::from_f64(round12(x)).map_or(Value::Null, Value::Number)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(name: &str, columns: &[S]) -> Self {
        Table {
            name: name.into(),
            columns: columns.iter().map(|c| c.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len(), "row width for table {}", self.name);
        self.rows.push(row);
    }

    #[cfg(test)]
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

#[derive(Debug, Clone)]
pub struct Report {
    pub config: ExperimentConfig,
    pub tables: Vec<Table>,
    pub certificates: Vec<MinimaxCertificate>,
}

/// Rounds every float in a JSON tree to 12 significant digits.
fn round_tree(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(x) = n.as_f64() {
                *v = num_value(x);
            }
        }
        Value::Array(a) => a.iter_mut().for_each(round_tree),
        Value::Object(o) => o.values_mut().for_each(round_tree),
        _ => {}
    }
}

fn certificate_value(c: &MinimaxCertificate) -> CliResult<Value> {
    let mut v = serde_json::to_value(c)?;
    round_tree(&mut v);
    Ok(v)
}

/// Tabular view of a certificate, one row per k. `gap` is |ζ(τ_k) + c| and
/// `identity_residual` is ζ(τ_k) − d(τ_k, π₀) + c.
pub fn certificate_table(c: &MinimaxCertificate) -> Table {
    let mut t = Table::new("certificate", &["k", "d", "zeta", "bound", "gap", "identity_residual"]);
    for (i, k) in c.k_values.iter().enumerate() {
        let d = c.d_values.get(i).copied();
        let z = c.zeta_values.get(i).copied();
        t.push(vec![
            Cell::Num(*k),
            d.into(),
            z.into(),
            c.bound_values.get(i).copied().flatten().into(),
            z.map(|z| (z + c.c).abs()).into(),
            d.zip(z).map(|(d, z)| z - d + c.c).into(),
        ]);
    }
    t
}

impl Report {
    pub fn new(config: ExperimentConfig) -> Self {
        Report {
            config,
            tables: Vec::new(),
            certificates: Vec::new(),
        }
    }

    #[cfg(test)]
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn render(&self) -> CliResult<Vec<u8>> {
        match self.config.format.unwrap_or(Format::Csv) {
            Format::Csv => self.render_csv(),
            Format::Json => self.render_json(),
        }
    }

    fn render_csv(&self) -> CliResult<Vec<u8>> {
        let mut out = Vec::new();
        writeln!(out, "# config: {}", serde_json::to_string(&self.config)?)?;
        for c in &self.certificates {
            writeln!(out, "# certificate: {}", serde_json::to_string(&certificate_value(c)?)?)?;
        }
        let sections = self.tables.len() > 1;
        for t in &self.tables {
            if sections {
                writeln!(out, "# table: {}", t.name)?;
            }
            let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
            w.write_record(&t.columns)?;
            for row in &t.rows {
                w.write_record(row.iter().map(Cell::csv))?;
            }
            out.extend(w.into_inner().map_err(|e| e.into_error())?);
        }
        Ok(out)
    }

    fn render_json(&self) -> CliResult<Vec<u8>> {
        let mut tables = Map::new();
        for t in &self.tables {
            let rows: Vec<Value> = t
                .rows
                .iter()
                .map(|r| Value::Object(t.columns.iter().cloned().zip(r.iter().map(Cell::json)).collect()))
                .collect();
            tables.insert(t.name.clone(), Value::Array(rows));
        }
        let mut root = Map::new();
        root.insert("config".into(), serde_json::to_value(&self.config)?);
        root.insert("tables".into(), Value::Object(tables));
        root.insert(
            "certificates".into(),
            Value::Array(
                self.certificates
                    .iter()
                    .map(certificate_value)
                    .collect::<CliResult<_>>()?,
            ),
        );
        let mut out = serde_json::to_vec_pretty(&Value::Object(root))?;
        out.push(b'\n');
        Ok(out)
    }

    /// Writes to the configured output path, or stdout.
    pub fn emit(&self) -> CliResult<()> {
        let bytes = self.render()?;
        match &self.config.output {
            Some(p) => std::fs::write(p, bytes)?,
            None => std::io::stdout().lock().write_all(&bytes)?,
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(format: Format) -> ExperimentConfig {
        ExperimentConfig {
            format: Some(format),
            seed: Some(0),
            ..Default::default()
        }
    }

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(fmt_num(0.1 + 0.2), "0.3");
        assert_eq!(fmt_num(-4.000000000000017), "-4");
        assert_eq!(fmt_num(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt_num(-0.0), "0");
        assert_eq!(fmt_num(1.4432899320127035e-15), "1.44328993201e-15");
        assert_eq!(fmt_num(f64::NAN), "NaN");
    }

    #[test]
    fn empty_table_is_header_only() {
        let mut r = Report::new(cfg(Format::Csv));
        r.tables.push(Table::new("converge", &["n", "m"]));
        let s = String::from_utf8(r.render().unwrap()).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("# config: "));
        assert_eq!(lines[1], "n,m");
    }

    #[test]
    fn json_uses_column_names() {
        let mut r = Report::new(cfg(Format::Json));
        let mut t = Table::new("loss", &["theta", "L"]);
        t.push(vec![Cell::Num(0.5), Cell::Num(-4.0)]);
        r.tables.push(t);
        let v: Value = serde_json::from_slice(&r.render().unwrap()).unwrap();
        assert_eq!(v["tables"]["loss"][0]["L"], Value::from(-4.0));
        assert!(v["certificates"].as_array().unwrap().is_empty());
    }

    #[test]
    fn sections_only_with_several_tables() {
        let mut r = Report::new(cfg(Format::Csv));
        r.tables.push(Table::new("a", &["x"]));
        r.tables.push(Table::new("b", &["y"]));
        let s = String::from_utf8(r.render().unwrap()).unwrap();
        assert!(s.contains("# table: a\nx\n# table: b\ny\n"));
    }
}
