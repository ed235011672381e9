//! Sweep reports and their canonical CSV / JSON serialization.
//!
//! Floats are written with 17 significant digits (`{:.16e}`), which
//! round-trips every `f64`, so export → parse → export is byte-identical.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const CSV_COLUMNS: [&str; 11] = [
    "axis",
    "axis_value",
    "estimator",
    "mse",
    "squared_bias",
    "variance",
    "error_rate",
    "mean_estimate",
    "true_value",
    "n_reps",
    "se_mse",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportRow {
    pub axis: String,
    pub axis_value: f64,
    pub estimator: String,
    pub mse: f64,
    pub squared_bias: f64,
    pub variance: f64,
    pub error_rate: f64,
    pub mean_estimate: f64,
    pub true_value: f64,
    pub n_reps: usize,
    /// `NaN` when it is undefined.
    #[serde(deserialize_with = "nullable_f64")]
    pub se_mse: f64,
}

fn nullable_f64<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

/// Excluded replications of one estimator at one axis value.
#[derive(Debug, Clone, PartialEq)]
pub struct FailureCount {
    pub axis_value: f64,
    pub estimator: String,
    pub failures: usize,
    pub first_error: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
    pub failures: Vec<FailureCount>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Csv,
    Json,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            _ => Err(HarnessError::Config(format!(
                "unknown format `{s}` (csv or json)"
            ))),
        }
    }
}

pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn json_float(x: f64) -> String {
    if x.is_finite() {
        format_float(x)
    } else {
        "null".to_string()
    }
}

fn json_string(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

impl ReportRow {
    fn csv_fields(&self) -> [String; 11] {
        [
            self.axis.clone(),
            format_float(self.axis_value),
            self.estimator.clone(),
            format_float(self.mse),
            format_float(self.squared_bias),
            format_float(self.variance),
            format_float(self.error_rate),
            format_float(self.mean_estimate),
            format_float(self.true_value),
            self.n_reps.to_string(),
            format_float(self.se_mse),
        ]
    }
}

impl ExperimentReport {
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(CSV_COLUMNS).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.csv_fields()).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }

    pub fn to_json(&self) -> String {
        let mut out = String::from("{\"columns\":[");
        for (i, c) in CSV_COLUMNS.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&json_string(c));
        }
        out.push_str("],\"rows\":[");
        for (i, r) in self.rows.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str("\n  ");
            write!(
                out,
                "{{\"axis\":{},\"axis_value\":{},\"estimator\":{},\"mse\":{},\"squared_bias\":{},\
                 \"variance\":{},\"error_rate\":{},\"mean_estimate\":{},\"true_value\":{},\
                 \"n_reps\":{},\"se_mse\":{}}}",
                json_string(&r.axis),
                json_float(r.axis_value),
                json_string(&r.estimator),
                json_float(r.mse),
                json_float(r.squared_bias),
                json_float(r.variance),
                json_float(r.error_rate),
                json_float(r.mean_estimate),
                json_float(r.true_value),
                r.n_reps,
                json_float(r.se_mse),
            )
            .expect("writing to a String");
        }
        if !self.rows.is_empty() {
            out.push('\n');
        }
        out.push_str("]}\n");
        out
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Csv => self.to_csv(),
            ReportFormat::Json => self.to_json(),
        }
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let parse_err = |line: usize, message: String| HarnessError::Parse {
            path: "<report.csv>".into(),
            line,
            message,
        };
        let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| parse_err(1, e.to_string()))?;
        if header.iter().ne(CSV_COLUMNS) {
            return Err(parse_err(1, format!("unexpected header {header:?}")));
        }
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
            if rec.len() != CSV_COLUMNS.len() {
                return Err(parse_err(line, format!("{} columns", rec.len())));
            }
            let num = |k: usize| -> Result<f64> {
                rec[k]
                    .parse::<f64>()
                    .map_err(|e| parse_err(line, format!("column {}: {e}", CSV_COLUMNS[k])))
            };
            rows.push(ReportRow {
                axis: rec[0].to_string(),
                axis_value: num(1)?,
                estimator: rec[2].to_string(),
                mse: num(3)?,
                squared_bias: num(4)?,
                variance: num(5)?,
                error_rate: num(6)?,
                mean_estimate: num(7)?,
                true_value: num(8)?,
                n_reps: rec[9]
                    .parse()
                    .map_err(|e| parse_err(line, format!("column n_reps: {e}")))?,
                se_mse: num(10)?,
            });
        }
        Ok(Self {
            rows,
            failures: Vec::new(),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Doc {
            columns: Vec<String>,
            rows: Vec<ReportRow>,
        }
        let doc: Doc = serde_json::from_str(text).map_err(|e| HarnessError::Parse {
            path: "<report.json>".into(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if doc.columns.iter().map(String::as_str).ne(CSV_COLUMNS) {
            return Err(HarnessError::Validation(format!(
                "unexpected columns {:?}",
                doc.columns
            )));
        }
        Ok(Self {
            rows: doc.rows,
            failures: Vec::new(),
        })
    }
}

/// Writes the report to `path` in `format`.
pub fn export_report(report: &ExperimentReport, path: &Path, format: ReportFormat) -> Result<()> {
    std::fs::write(path, report.render(format)).map_err(|e| HarnessError::io(path, e))
}
