//! Logged-data ingestion and export.
//!
//! A dataset is JSON Lines with one object per company:
//!
//! ```json
//! {"company_id":0,"seeker_id":3,"s":1,"r":0,"logging_prob":0.0125,"n_seekers":100}
//! ```
//!
//! `company_id` must cover `0..|C|` exactly once. `n_seekers` is optional
//! (all lines that carry it must agree); without it the seeker count is the
//! largest `seeker_id` plus one. `logging_prob` may be absent, in which case
//! propensities have to be estimated. Optional `company_features` and
//! `seeker_features` (the logged seeker's features) rebuild a
//! [`ContextSet`] when they cover every company and seeker; a
//! `contexts.json` sidecar holds the full feature tables otherwise.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use matchope_core::{ContextSet, LoggedDataset, Policy, Record};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    company_id: usize,
    seeker_id: usize,
    s: u8,
    r: u8,
    #[serde(default)]
    logging_prob: Option<f64>,
    #[serde(default)]
    n_seekers: Option<usize>,
    #[serde(default)]
    company_features: Option<Vec<f64>>,
    #[serde(default)]
    seeker_features: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContextsFile {
    company: Vec<Vec<f64>>,
    seeker: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyFile {
    label: String,
    probs: Vec<Vec<f64>>,
}

/// An ingested dataset and the contexts recovered from its lines, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub dataset: LoggedDataset,
    pub contexts: Option<ContextSet>,
}

impl Ingested {
    /// True when some record lacks a logged propensity.
    pub fn needs_propensity_estimation(&self) -> bool {
        !self.dataset.has_logged_propensities()
    }
}

fn bit(v: u8, field: &str) -> std::result::Result<bool, String> {
    match v {
        0 => Ok(false),
        1 => Ok(true),
        _ => Err(format!("{field} must be 0 or 1, got {v}")),
    }
}

fn table(rows: &[Vec<f64>], what: &str) -> std::result::Result<Array2<f64>, String> {
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(format!("{what} feature vectors have different lengths"));
    }
    Array2::from_shape_vec((rows.len(), width), rows.concat()).map_err(|e| e.to_string())
}

fn rows_of(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Parses JSONL text; `source` names the input in error messages.
pub fn parse_logged_data(text: &str, source: &Path) -> Result<Ingested> {
    let parse_err = |line: usize, message: String| HarnessError::Parse {
        path: source.to_path_buf(),
        line,
        message,
    };
    let mut by_company: BTreeMap<usize, (usize, Line)> = BTreeMap::new();
    let mut declared_seekers: Option<(usize, usize)> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let line: Line =
            serde_json::from_str(raw).map_err(|e| parse_err(line_no, e.to_string()))?;
        let s = bit(line.s, "s").map_err(|m| parse_err(line_no, m))?;
        let r = bit(line.r, "r").map_err(|m| parse_err(line_no, m))?;
        if !s && r {
            return Err(HarnessError::Validation(format!(
                "{}:{line_no}: s = 0 with r = 1 violates m = s * r (a reply requires a scout)",
                source.display()
            )));
        }
        if let Some(p) = line.logging_prob {
            if !(p > 0.0 && p <= 1.0) {
                return Err(HarnessError::Validation(format!(
                    "{}:{line_no}: logging_prob {p} is outside (0, 1]",
                    source.display()
                )));
            }
        }
        if let Some(n) = line.n_seekers {
            match declared_seekers {
                Some((m, first)) if m != n => {
                    return Err(parse_err(
                        line_no,
                        format!("n_seekers = {n} disagrees with {m} on line {first}"),
                    ))
                }
                None => declared_seekers = Some((n, line_no)),
                _ => {}
            }
        }
        if let Some((first, _)) = by_company.get(&line.company_id) {
            return Err(parse_err(
                line_no,
                format!("company {} already logged on line {first}", line.company_id),
            ));
        }
        by_company.insert(line.company_id, (line_no, line));
    }
    if by_company.is_empty() {
        return Err(HarnessError::Validation(format!(
            "{}: no records",
            source.display()
        )));
    }
    let n_companies = by_company.len();
    if let Some((&last, _)) = by_company.iter().next_back() {
        if last != n_companies - 1 {
            return Err(HarnessError::Validation(format!(
                "{}: company ids must be 0..{n_companies}, found {last}",
                source.display()
            )));
        }
    }
    let max_seeker = by_company
        .values()
        .map(|(_, l)| l.seeker_id)
        .max()
        .unwrap_or(0);
    let n_seekers = match declared_seekers {
        Some((n, _)) if n <= max_seeker => {
            return Err(HarnessError::Validation(format!(
                "{}: seeker {max_seeker} logged but n_seekers = {n}",
                source.display()
            )))
        }
        Some((n, _)) => n,
        None => max_seeker + 1,
    };

    let records: Vec<Record> = by_company
        .values()
        .map(|(_, l)| Record {
            seeker: l.seeker_id,
            s: l.s == 1,
            r: l.r == 1,
            logging_prob: l.logging_prob,
        })
        .collect();
    let dataset = LoggedDataset::new(records, n_seekers)?;

    let any_features = by_company
        .values()
        .any(|(_, l)| l.company_features.is_some() || l.seeker_features.is_some());
    let contexts = if any_features {
        collect_contexts(&by_company, n_seekers, source)?
    } else {
        None
    };
    Ok(Ingested { dataset, contexts })
}

fn collect_contexts(
    by_company: &BTreeMap<usize, (usize, Line)>,
    n_seekers: usize,
    source: &Path,
) -> Result<Option<ContextSet>> {
    let mut company = Vec::with_capacity(by_company.len());
    let mut seeker: Vec<Option<Vec<f64>>> = vec![None; n_seekers];
    for (c, (line_no, l)) in by_company {
        match &l.company_features {
            Some(f) => company.push(f.clone()),
            None => {
                log::warn!(
                    "{}: company {c} has no features; contexts not built",
                    source.display()
                );
                return Ok(None);
            }
        }
        if let Some(f) = &l.seeker_features {
            match &seeker[l.seeker_id] {
                Some(prev) if prev != f => {
                    return Err(HarnessError::Parse {
                        path: source.to_path_buf(),
                        line: *line_no,
                        message: format!("seeker {} has conflicting feature vectors", l.seeker_id),
                    })
                }
                _ => seeker[l.seeker_id] = Some(f.clone()),
            }
        }
    }
    let Some(seeker) = seeker.into_iter().collect::<Option<Vec<_>>>() else {
        log::warn!(
            "{}: not every seeker has logged features; supply a contexts file",
            source.display()
        );
        return Ok(None);
    };
    let company = table(&company, "company").map_err(HarnessError::Validation)?;
    let seeker = table(&seeker, "seeker").map_err(HarnessError::Validation)?;
    Ok(Some(ContextSet::new(company, seeker)?))
}

/// Reads a JSONL dataset from `path`.
pub fn ingest_logged_data(path: &Path) -> Result<Ingested> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_logged_data(&text, path)
}

/// JSONL text for `dataset`, with features when `contexts` is given.
pub fn render_logged_data(dataset: &LoggedDataset, contexts: Option<&ContextSet>) -> String {
    let mut out = String::new();
    for (c, rec) in dataset.records().iter().enumerate() {
        let mut obj = serde_json::Map::new();
        obj.insert("company_id".into(), c.into());
        obj.insert("seeker_id".into(), rec.seeker.into());
        obj.insert("s".into(), u8::from(rec.s).into());
        obj.insert("r".into(), u8::from(rec.r).into());
        if let Some(p) = rec.logging_prob {
            obj.insert("logging_prob".into(), p.into());
        }
        obj.insert("n_seekers".into(), dataset.n_seekers().into());
        if let Some(ctx) = contexts {
            obj.insert("company_features".into(), ctx.company(c).to_vec().into());
            obj.insert(
                "seeker_features".into(),
                ctx.seeker(rec.seeker).to_vec().into(),
            );
        }
        writeln!(out, "{}", serde_json::Value::Object(obj)).expect("writing to a String");
    }
    out
}

pub fn export_logged_data(
    dataset: &LoggedDataset,
    contexts: Option<&ContextSet>,
    path: &Path,
) -> Result<()> {
    std::fs::write(path, render_logged_data(dataset, contexts))
        .map_err(|e| HarnessError::io(path, e))
}

pub fn export_contexts(contexts: &ContextSet, path: &Path) -> Result<()> {
    let file = ContextsFile {
        company: rows_of(contexts.company_matrix()),
        seeker: rows_of(contexts.seeker_matrix()),
    };
    let text = serde_json::to_string(&file).expect("contexts serialize") + "\n";
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

pub fn load_contexts(path: &Path) -> Result<ContextSet> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let file: ContextsFile = serde_json::from_str(&text).map_err(|e| HarnessError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let company = table(&file.company, "company").map_err(HarnessError::Validation)?;
    let seeker = table(&file.seeker, "seeker").map_err(HarnessError::Validation)?;
    Ok(ContextSet::new(company, seeker)?)
}

pub fn export_policy(policy: &Policy, path: &Path) -> Result<()> {
    let file = PolicyFile {
        label: policy.label().to_string(),
        probs: rows_of(policy.probs()),
    };
    let text = serde_json::to_string(&file).expect("policy serializes") + "\n";
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

pub fn load_policy(path: &Path) -> Result<Policy> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let file: PolicyFile = serde_json::from_str(&text).map_err(|e| HarnessError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let probs = table(&file.probs, "policy").map_err(HarnessError::Validation)?;
    Ok(Policy::new(probs, file.label)?)
}
