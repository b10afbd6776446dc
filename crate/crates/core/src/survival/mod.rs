//! Foundational survival-analysis numerics: datasets, Cox partial-likelihood
//! fitting with optional time-varying weights, Breslow baseline hazard,
//! weighted Kaplan-Meier, and Weibull inverse-transform sampling.
//!
//! All operations are pure functions of their inputs; datasets and fits are
//! immutable after construction and safe to share across threads.

mod cox;
mod km;
mod step;
mod weibull;

pub use cox::{breslow_cumhaz, fit_cox, fit_cox_with, CoxFit, CoxOptions};
pub(crate) use cox::fit_cox_core;
pub use km::{km_survival_at, weighted_km, KMCurve};
pub use step::StepFunction;
pub use weibull::{weibull_inverse_transform, weibull_survival};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovariateKind {
    Binary,
    Continuous,
}

/// Ordered covariate layout shared by every record of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSchema {
    entries: Vec<(String, CovariateKind)>,
}

impl CovariateSchema {
    pub fn new(entries: Vec<(String, CovariateKind)>) -> Result<Self> {
        for (i, (name, _)) in entries.iter().enumerate() {
            if name == "treatment" {
                return Err(Error::Invalid(
                    "`treatment` is reserved for the treatment indicator".into(),
                ));
            }
            if entries[..i].iter().any(|(other, _)| other == name) {
                return Err(Error::Invalid(format!("duplicate covariate name `{name}`")));
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(String, CovariateKind)] {
        &self.entries
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn kind_of(&self, name: &str) -> Option<CovariateKind> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, k)| *k)
    }
}

/// One source-trial participant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub id: String,
    /// Observed follow-up time (event or censoring), strictly positive.
    pub observed_time: f64,
    /// True when the event was observed, false when censored.
    pub event: bool,
    pub treatment: bool,
    pub covariates: Vec<f64>,
}

/// Which indicator defines an "event" for a fit: the outcome event itself, or
/// censoring (used when modelling the censoring hazard).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventFlag {
    Event,
    Censoring,
}

impl EventFlag {
    #[inline]
    pub fn indicates(self, record: &SubjectRecord) -> bool {
        match self {
            EventFlag::Event => record.event,
            EventFlag::Censoring => !record.event,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            EventFlag::Event => "outcome",
            EventFlag::Censoring => "censoring",
        }
    }
}

/// A column of a Cox design: the treatment indicator or a named covariate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DesignColumn {
    Treatment,
    Covariate(String),
}

impl DesignColumn {
    /// Parse a column selector; the reserved name `treatment` selects the
    /// treatment indicator.
    pub fn parse(name: &str) -> DesignColumn {
        if name == "treatment" {
            DesignColumn::Treatment
        } else {
            DesignColumn::Covariate(name.to_string())
        }
    }

    pub fn name(&self) -> &str {
        match self {
            DesignColumn::Treatment => "treatment",
            DesignColumn::Covariate(n) => n,
        }
    }
}

/// Immutable survival dataset with a cached grid of distinct event times.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalDataset {
    records: Vec<SubjectRecord>,
    schema: CovariateSchema,
    event_times: Vec<f64>,
}

impl SurvivalDataset {
    pub fn new(records: Vec<SubjectRecord>, schema: CovariateSchema) -> Result<Self> {
        for (i, rec) in records.iter().enumerate() {
            if !(rec.observed_time > 0.0) || !rec.observed_time.is_finite() {
                return Err(Error::Invalid(format!(
                    "record {} (`{}`): observed_time must be positive and finite, got {}",
                    i, rec.id, rec.observed_time
                )));
            }
            if rec.covariates.len() != schema.len() {
                return Err(Error::Invalid(format!(
                    "record {} (`{}`): {} covariates, schema declares {}",
                    i,
                    rec.id,
                    rec.covariates.len(),
                    schema.len()
                )));
            }
            for ((name, kind), &value) in schema.entries().iter().zip(&rec.covariates) {
                if !value.is_finite() {
                    return Err(Error::Invalid(format!(
                        "record {} (`{}`): covariate `{name}` is not finite",
                        i, rec.id
                    )));
                }
                if *kind == CovariateKind::Binary && value != 0.0 && value != 1.0 {
                    return Err(Error::Invalid(format!(
                        "record {} (`{}`): binary covariate `{name}` has value {value}",
                        i, rec.id
                    )));
                }
            }
        }
        let event_times = distinct_times(&records, EventFlag::Event);
        Ok(Self { records, schema, event_times })
    }

    pub fn records(&self) -> &[SubjectRecord] {
        &self.records
    }

    pub fn schema(&self) -> &CovariateSchema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Sorted distinct times at which the outcome event was observed.
    pub fn event_times(&self) -> &[f64] {
        &self.event_times
    }

    /// Sorted distinct times of the chosen indicator.
    pub fn flag_times(&self, flag: EventFlag) -> Vec<f64> {
        match flag {
            EventFlag::Event => self.event_times.clone(),
            EventFlag::Censoring => distinct_times(&self.records, EventFlag::Censoring),
        }
    }

    pub fn n_events(&self) -> usize {
        self.records.iter().filter(|r| r.event).count()
    }

    pub fn n_censored(&self) -> usize {
        self.records.iter().filter(|r| !r.event).count()
    }

    /// A dataset of the given records (with replacement allowed), sharing this
    /// schema. Used by the bootstrap.
    pub fn resample(&self, indices: &[usize]) -> Result<SurvivalDataset> {
        let records = indices.iter().map(|&i| self.records[i].clone()).collect();
        SurvivalDataset::new(records, self.schema.clone())
    }

    /// Value of a design column for one record.
    #[inline]
    pub(crate) fn column_value(&self, record: &SubjectRecord, column_idx: ColumnIdx) -> f64 {
        match column_idx {
            ColumnIdx::Treatment => {
                if record.treatment {
                    1.0
                } else {
                    0.0
                }
            }
            ColumnIdx::Covariate(j) => record.covariates[j],
        }
    }

    /// Resolve design columns against the schema.
    pub(crate) fn resolve_design(&self, design: &[DesignColumn]) -> Result<Vec<ColumnIdx>> {
        design
            .iter()
            .map(|col| match col {
                DesignColumn::Treatment => Ok(ColumnIdx::Treatment),
                DesignColumn::Covariate(name) => self
                    .schema
                    .index_of(name)
                    .map(ColumnIdx::Covariate)
                    .ok_or_else(|| Error::Invalid(format!("unknown covariate `{name}`"))),
            })
            .collect()
    }

    /// Row-major design matrix (n x p) for the given columns.
    pub(crate) fn design_matrix(&self, design: &[DesignColumn]) -> Result<Vec<f64>> {
        let cols = self.resolve_design(design)?;
        let mut z = Vec::with_capacity(self.len() * cols.len());
        for rec in &self.records {
            for &c in &cols {
                z.push(self.column_value(rec, c));
            }
        }
        Ok(z)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum ColumnIdx {
    Treatment,
    Covariate(usize),
}

fn distinct_times(records: &[SubjectRecord], flag: EventFlag) -> Vec<f64> {
    let mut times: Vec<f64> =
        records.iter().filter(|r| flag.indicates(r)).map(|r| r.observed_time).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    times
}
