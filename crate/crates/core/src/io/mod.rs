//! Dataset ingestion, configuration parsing, and bit-stable result
//! serialization.
//!
//! Formats: delimited text (comma, header row, UTF-8) for IPD and tabular
//! results, TOML for aggregate/scenario/analysis configs, JSON for structured
//! results. Emitted tables round reals to 6 significant digits; dataset
//! writes keep full precision so write/read round-trips are exact.

mod config;
mod format;
mod reports;

pub use config::{read_analysis_config, read_scenario_config, read_target_aggregate};
pub use format::{format_sig6, round_sig6};
pub use reports::{
    CalibrationTable, KmCurveTable, MedianRow, MedianTable, SummaryRows, Table, WeightHistogram,
};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::survival::{CovariateKind, CovariateSchema, SubjectRecord, SurvivalDataset};

/// What to do with rows that fail validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MissingPolicy {
    /// Fail the read with a per-column report.
    Reject,
    /// Drop offending rows, logging how many were lost.
    DropRow,
}

/// Column mapping for a delimited IPD file.
#[derive(Debug, Clone)]
pub struct IpdTableSpec {
    /// Optional id column; row numbers are used when absent.
    pub id_column: Option<String>,
    pub time_column: String,
    pub event_column: String,
    pub treatment_column: String,
    /// Covariate columns in schema order.
    pub covariates: Vec<(String, CovariateKind)>,
    pub missing_policy: MissingPolicy,
}

impl IpdTableSpec {
    /// Conventional column names (`time`, `event`, `treatment`) with the
    /// given covariates and the reject policy.
    pub fn standard(covariates: Vec<(String, CovariateKind)>) -> Self {
        IpdTableSpec {
            id_column: None,
            time_column: "time".into(),
            event_column: "event".into(),
            treatment_column: "treatment".into(),
            covariates,
            missing_policy: MissingPolicy::Reject,
        }
    }

    pub fn schema(&self) -> Result<CovariateSchema> {
        CovariateSchema::new(self.covariates.clone())
    }
}

fn is_missing(field: &str) -> bool {
    field.is_empty() || field.eq_ignore_ascii_case("na")
}

fn parse_flag(field: &str) -> Option<bool> {
    match field.trim() {
        "0" => Some(false),
        "1" => Some(true),
        _ => None,
    }
}

/// Read and validate a delimited IPD file against the column mapping.
pub fn read_ipd(path: &Path, spec: &IpdTableSpec) -> Result<SurvivalDataset> {
    let schema = spec.schema()?;
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let position = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::Invalid(format!("{}: column `{name}` not found in header", path.display()))
        })
    };
    let id_idx = spec.id_column.as_deref().map(position).transpose()?;
    let time_idx = position(&spec.time_column)?;
    let event_idx = position(&spec.event_column)?;
    let treatment_idx = position(&spec.treatment_column)?;
    let cov_idx: Vec<usize> =
        spec.covariates.iter().map(|(name, _)| position(name)).collect::<Result<_>>()?;

    // issues grouped per column for the error report
    let mut issues: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut records = Vec::new();
    let mut dropped = 0usize;
    for (row_idx, row) in reader.records().enumerate() {
        let row = row?;
        let row_no = row_idx + 2; // 1-based, after the header line
        let mut row_issues: Vec<(String, String)> = Vec::new();

        let field = |idx: usize| row.get(idx).unwrap_or("").trim();
        let number = |idx: usize, column: &str, row_issues: &mut Vec<(String, String)>| -> Option<f64> {
            let raw = field(idx);
            if is_missing(raw) {
                row_issues.push((column.into(), format!("row {row_no}: missing value")));
                return None;
            }
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Some(v),
                _ => {
                    row_issues
                        .push((column.into(), format!("row {row_no}: `{raw}` is not a finite number")));
                    None
                }
            }
        };

        let time = number(time_idx, &spec.time_column, &mut row_issues);
        if let Some(t) = time {
            if t <= 0.0 {
                row_issues.push((
                    spec.time_column.clone(),
                    format!("row {row_no}: time must be positive, got {t}"),
                ));
            }
        }
        let event = parse_flag(field(event_idx));
        if event.is_none() {
            row_issues.push((
                spec.event_column.clone(),
                format!("row {row_no}: `{}` is not a 0/1 flag", field(event_idx)),
            ));
        }
        let treatment = parse_flag(field(treatment_idx));
        if treatment.is_none() {
            row_issues.push((
                spec.treatment_column.clone(),
                format!("row {row_no}: `{}` is not a 0/1 flag", field(treatment_idx)),
            ));
        }
        let mut covariates = Vec::with_capacity(cov_idx.len());
        for ((name, kind), &idx) in spec.covariates.iter().zip(&cov_idx) {
            if let Some(v) = number(idx, name, &mut row_issues) {
                if *kind == CovariateKind::Binary && v != 0.0 && v != 1.0 {
                    row_issues
                        .push((name.clone(), format!("row {row_no}: binary covariate has value {v}")));
                }
                covariates.push(v);
            }
        }

        if row_issues.is_empty() {
            let id =
                id_idx.map(|i| field(i).to_string()).unwrap_or_else(|| format!("row{row_no}"));
            records.push(SubjectRecord {
                id,
                observed_time: time.unwrap(),
                event: event.unwrap(),
                treatment: treatment.unwrap(),
                covariates,
            });
        } else {
            dropped += 1;
            for (column, message) in row_issues {
                issues.entry(column).or_default().push(message);
            }
        }
    }

    if !issues.is_empty() {
        match spec.missing_policy {
            MissingPolicy::Reject => {
                let mut report = format!("{}: invalid rows", path.display());
                for (column, messages) in &issues {
                    let _ = write!(
                        report,
                        "\n  column `{column}`: {} ({}{})",
                        messages.len(),
                        messages[0],
                        if messages.len() > 1 { "; ..." } else { "" }
                    );
                }
                return Err(Error::Invalid(report));
            }
            MissingPolicy::DropRow => {
                log::warn!("{}: dropped {dropped} invalid rows", path.display());
            }
        }
    }
    SurvivalDataset::new(records, schema)
}

/// Write a dataset back out with full precision, so a read reproduces it
/// field-for-field.
pub fn write_ipd(data: &SurvivalDataset, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string(), "time".into(), "event".into(), "treatment".into()];
    header.extend(data.schema().entries().iter().map(|(n, _)| n.clone()));
    writer.write_record(&header)?;
    for rec in data.records() {
        let mut row = vec![
            rec.id.clone(),
            format!("{}", rec.observed_time),
            if rec.event { "1".into() } else { "0".into() },
            if rec.treatment { "1".into() } else { "0".into() },
        ];
        row.extend(rec.covariates.iter().map(|v| format!("{v}")));
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    /// Comma-separated table, reals at 6 significant digits.
    Tabular,
    /// Pretty JSON, reals rounded to 6 significant digits.
    Structured,
}

impl OutputFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tabular" | "csv" => Ok(OutputFormat::Tabular),
            "structured" | "json" => Ok(OutputFormat::Structured),
            other => Err(Error::Invalid(format!("unknown output format `{other}`"))),
        }
    }
}

/// Anything writable through [`write_results`]: serializable, with a tabular
/// projection.
pub trait ResultRecord: Serialize {
    fn table(&self) -> Table;
}

/// Deterministic serialization: fixed field order, reals at 6 significant
/// digits, byte-identical output for identical inputs.
pub fn write_results<T: ResultRecord>(value: &T, path: &Path, format: OutputFormat) -> Result<()> {
    let bytes = render_results(value, format)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn render_results<T: ResultRecord>(value: &T, format: OutputFormat) -> Result<Vec<u8>> {
    match format {
        OutputFormat::Tabular => {
            let table = value.table();
            let mut writer = csv::Writer::from_writer(Vec::new());
            writer.write_record(&table.columns)?;
            for row in &table.rows {
                writer.write_record(row)?;
            }
            writer.into_inner().map_err(|e| Error::Invalid(format!("csv flush: {e}")))
        }
        OutputFormat::Structured => {
            let mut json =
                serde_json::to_value(value).map_err(|e| Error::Invalid(format!("serialize: {e}")))?;
            round_json(&mut json);
            let mut out = serde_json::to_vec_pretty(&json)
                .map_err(|e| Error::Invalid(format!("serialize: {e}")))?;
            out.push(b'\n');
            Ok(out)
        }
    }
}

fn round_json(value: &mut serde_json::Value) {
    match value {
        serde_json::Value::Number(n) => {
            if n.is_f64() {
                let rounded = round_sig6(n.as_f64().unwrap());
                if let Some(new) = serde_json::Number::from_f64(rounded) {
                    *n = new;
                }
            }
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(round_json),
        serde_json::Value::Object(map) => map.values_mut().for_each(round_json),
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn covs() -> Vec<(String, CovariateKind)> {
        vec![("x1".into(), CovariateKind::Binary), ("age".into(), CovariateKind::Continuous)]
    }

    fn write(path: &Path, content: &str) {
        fs::write(path, content).unwrap();
    }

    #[test]
    fn well_formed_file_loads() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("ipd.csv");
        write(&p, "time,event,treatment,x1,age\n1.5,1,0,1,62.0\n2.0,0,1,0,55.5\n3.25,1,1,1,70.1\n");
        let data = read_ipd(&p, &IpdTableSpec::standard(covs())).unwrap();
        assert_eq!(data.len(), 3);
        assert_eq!(data.records()[1].observed_time, 2.0);
        assert!(!data.records()[1].event);
    }

    #[test]
    fn negative_time_rejected_with_row_and_column() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("ipd.csv");
        write(&p, "time,event,treatment,x1,age\n-1,1,0,1,62.0\n");
        let err = read_ipd(&p, &IpdTableSpec::standard(covs())).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("time") && msg.contains("row 2"), "{msg}");
    }

    #[test]
    fn event_flag_must_be_binary() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("ipd.csv");
        write(&p, "time,event,treatment,x1,age\n1.0,2,0,1,62.0\n");
        let err = read_ipd(&p, &IpdTableSpec::standard(covs())).unwrap_err();
        assert!(err.to_string().contains("event"), "{err}");
    }

    #[test]
    fn unmapped_column_is_an_error() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("ipd.csv");
        write(&p, "time,event,treatment,x1\n1.0,1,0,1\n");
        let err = read_ipd(&p, &IpdTableSpec::standard(covs())).unwrap_err();
        assert!(err.to_string().contains("age"), "{err}");
    }

    #[test]
    fn drop_row_policy_keeps_the_rest() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("ipd.csv");
        write(&p, "time,event,treatment,x1,age\n1.0,1,0,1,62.0\nNA,1,0,1,55.0\n2.0,0,1,0,41.0\n");
        let mut spec = IpdTableSpec::standard(covs());
        spec.missing_policy = MissingPolicy::DropRow;
        let data = read_ipd(&p, &spec).unwrap();
        assert_eq!(data.len(), 2);
    }

    #[test]
    fn ipd_round_trip_is_exact() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("ipd.csv");
        let schema = CovariateSchema::new(covs()).unwrap();
        let records = vec![
            SubjectRecord {
                id: "a".into(),
                observed_time: 0.123456789123,
                event: true,
                treatment: false,
                covariates: vec![1.0, 61.731],
            },
            SubjectRecord {
                id: "b".into(),
                observed_time: 7.25e-3,
                event: false,
                treatment: true,
                covariates: vec![0.0, -0.11111111111111],
            },
        ];
        let data = SurvivalDataset::new(records, schema).unwrap();
        write_ipd(&data, &p).unwrap();
        let mut spec = IpdTableSpec::standard(covs());
        spec.id_column = Some("id".into());
        let back = read_ipd(&p, &spec).unwrap();
        assert_eq!(back, data);
    }
}
