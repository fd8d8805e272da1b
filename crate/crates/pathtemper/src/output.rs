//! Deterministic output artifacts: headered CSV tables with round-trip-exact
//! floats, the run report, and a small validator for the shipped report
//! schema.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// The JSON schema the run report must satisfy; shipped in the repo and
/// embedded here so the binary can self-validate.
pub const REPORT_SCHEMA: &str = include_str!("../schemas/report.schema.json");

/// 17 significant digits: round-trips through parse exactly.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".to_string() } else { "-inf".to_string() }
    } else {
        format!("{x:.16e}")
    }
}

/// CSV cell types used by the writers.
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}
impl From<i64> for Cell {
    fn from(x: i64) -> Self {
        Cell::Int(x)
    }
}
impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}
impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::Text(x.to_string())
    }
}

pub fn write_csv<P: AsRef<Path>>(
    path: P,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<Cell>>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        let line: Vec<String> = row
            .iter()
            .map(|c| match c {
                Cell::Int(i) => i.to_string(),
                Cell::Float(f) => fmt_f64(*f),
                Cell::Text(s) => s.clone(),
            })
            .collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Space-separated gnuplot-ready table without header.
pub fn write_gnuplot_dat<P: AsRef<Path>>(path: P, columns: &[&[f64]]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let rows = columns.iter().map(|c| c.len()).min().unwrap_or(0);
    for i in 0..rows {
        let line: Vec<String> = columns.iter().map(|c| fmt_f64(c[i])).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

fn finite_or_null(x: f64) -> Value {
    if x.is_finite() {
        serde_json::json!(x)
    } else {
        Value::Null
    }
}

/// Per-coordinate chain diagnostics for the report.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct DiagnosticsBlock {
    pub rhat: Vec<Option<f64>>,
    pub ess_bulk: Vec<Option<f64>>,
    pub ess_tail: Vec<Option<f64>>,
}

/// Run report written as report.json.
#[derive(Debug, Clone)]
pub struct Report {
    pub command: String,
    pub converged: bool,
    pub adaptations: usize,
    pub khat: f64,
    pub khat_history: Vec<f64>,
    pub diagnostics: DiagnosticsBlock,
    pub pass: Vec<(String, bool)>,
    pub grad_evals: u64,
    pub empty_target_warning: bool,
}

impl Report {
    pub fn to_json(&self) -> Value {
        let pass: serde_json::Map<String, Value> = self
            .pass
            .iter()
            .map(|(k, v)| (k.clone(), Value::Bool(*v)))
            .collect();
        serde_json::json!({
            "command": self.command,
            "converged": self.converged,
            "adaptations": self.adaptations,
            "khat": finite_or_null(self.khat),
            "khat_history": self.khat_history.iter().map(|k| finite_or_null(*k)).collect::<Vec<_>>(),
            "diagnostics": {
                "rhat": self.diagnostics.rhat,
                "ess_bulk": self.diagnostics.ess_bulk,
                "ess_tail": self.diagnostics.ess_tail,
            },
            "pass": Value::Object(pass),
            "grad_evals": self.grad_evals,
            "empty_target_warning": self.empty_target_warning,
        })
    }

    pub fn write<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let json = self.to_json();
        let schema: Value = serde_json::from_str(REPORT_SCHEMA)?;
        validate_against_schema(&schema, &json)
            .map_err(|e| Error::InvalidConfig(format!("report schema violation: {e}")))?;
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, &json)?;
        w.flush()?;
        Ok(())
    }
}

/// Validates `instance` against the subset of JSON Schema used by the shipped
/// report schema: type, required, properties, items.
pub fn validate_against_schema(schema: &Value, instance: &Value) -> std::result::Result<(), String> {
    validate_node(schema, instance, "$")
}

fn type_matches(ty: &str, v: &Value) -> bool {
    match ty {
        "object" => v.is_object(),
        "array" => v.is_array(),
        "string" => v.is_string(),
        "boolean" => v.is_boolean(),
        "integer" => v.as_i64().is_some() || v.as_u64().is_some(),
        "number" => v.is_number(),
        "null" => v.is_null(),
        _ => false,
    }
}

fn validate_node(schema: &Value, v: &Value, path: &str) -> std::result::Result<(), String> {
    if let Some(ty) = schema.get("type") {
        let ok = match ty {
            Value::String(s) => type_matches(s, v),
            Value::Array(options) => options
                .iter()
                .filter_map(|t| t.as_str())
                .any(|t| type_matches(t, v)),
            _ => true,
        };
        if !ok {
            return Err(format!("{path}: expected type {ty}, got {v}"));
        }
    }
    if let Some(required) = schema.get("required").and_then(|r| r.as_array()) {
        for key in required.iter().filter_map(|k| k.as_str()) {
            if v.get(key).is_none() {
                return Err(format!("{path}: missing required field `{key}`"));
            }
        }
    }
    if let Some(props) = schema.get("properties").and_then(|p| p.as_object()) {
        for (key, sub) in props {
            if let Some(child) = v.get(key) {
                validate_node(sub, child, &format!("{path}.{key}"))?;
            }
        }
    }
    if let Some(items) = schema.get("items") {
        if let Some(arr) = v.as_array() {
            for (i, child) in arr.iter().enumerate() {
                validate_node(items, child, &format!("{path}[{i}]"))?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_exactly() {
        for x in [
            1.0,
            -3.997147357203459,
            1e-300,
            std::f64::consts::PI,
            -0.0,
            6.02e23,
        ] {
            let s = fmt_f64(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{x} -> {s} -> {back}");
        }
    }

    #[test]
    fn report_validates_and_writes() {
        let dir = tempfile::tempdir().unwrap();
        let report = Report {
            command: "temper".into(),
            converged: true,
            adaptations: 3,
            khat: 0.42,
            khat_history: vec![f64::INFINITY, 1.2, 0.42],
            diagnostics: DiagnosticsBlock {
                rhat: vec![Some(1.002)],
                ess_bulk: vec![Some(812.0)],
                ess_tail: vec![Some(455.0)],
            },
            pass: vec![("khat".into(), true)],
            grad_evals: 123456,
            empty_target_warning: false,
        };
        let path = dir.path().join("report.json");
        report.write(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let v: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["khat_history"][0], Value::Null);
        assert_eq!(v["pass"]["khat"], Value::Bool(true));
    }

    #[test]
    fn schema_rejects_malformed_report() {
        let schema: Value = serde_json::from_str(REPORT_SCHEMA).unwrap();
        let bad = serde_json::json!({"command": 7});
        assert!(validate_against_schema(&schema, &bad).is_err());
    }
}
