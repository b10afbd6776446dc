//! The three weight layers: method-of-moments participation weights,
//! time-varying censoring weights, and their truncated product.

mod ipcw;
mod mom;

pub use ipcw::{fit_censoring_weights, CensoringWeights};
pub use mom::{build_balance_spec, center_design, solve_mom_weights, MomOptions};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;
use crate::survival::{CovariateKind, SurvivalDataset};

/// Per-covariate target moments: mean (a proportion for binary covariates)
/// plus an optional standard deviation for continuous ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEntry {
    pub name: String,
    pub kind: CovariateKind,
    pub mean: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sd: Option<f64>,
}

/// Aggregate description of the target population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetAggregate {
    entries: Vec<TargetEntry>,
    target_n: usize,
}

impl TargetAggregate {
    pub fn new(entries: Vec<TargetEntry>, target_n: usize) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Invalid("target aggregate has no covariate entries".into()));
        }
        if target_n == 0 {
            return Err(Error::Invalid("target sample size must be positive".into()));
        }
        for (i, e) in entries.iter().enumerate() {
            if entries[..i].iter().any(|other| other.name == e.name) {
                return Err(Error::Invalid(format!("duplicate target entry `{}`", e.name)));
            }
            if !e.mean.is_finite() {
                return Err(Error::Invalid(format!("target mean for `{}` is not finite", e.name)));
            }
            match e.kind {
                CovariateKind::Binary => {
                    if !(e.mean > 0.0 && e.mean < 1.0) {
                        return Err(Error::Invalid(format!(
                            "binary target `{}` needs a proportion in (0,1), got {}",
                            e.name, e.mean
                        )));
                    }
                    if e.sd.is_some() {
                        return Err(Error::Invalid(format!(
                            "binary target `{}` must not carry an sd",
                            e.name
                        )));
                    }
                }
                CovariateKind::Continuous => {
                    if let Some(sd) = e.sd {
                        if !(sd > 0.0) || !sd.is_finite() {
                            return Err(Error::Invalid(format!(
                                "target sd for `{}` must be positive, got {sd}",
                                e.name
                            )));
                        }
                    }
                }
            }
        }
        Ok(Self { entries, target_n })
    }

    /// Moments of the named covariates computed from a dataset: proportions
    /// for binary covariates, mean and sample sd for continuous ones.
    pub fn from_dataset(data: &SurvivalDataset, names: &[String]) -> Result<Self> {
        if data.len() < 2 {
            return Err(Error::Invalid("need at least two records to aggregate".into()));
        }
        let mut entries = Vec::with_capacity(names.len());
        for name in names {
            let idx = data
                .schema()
                .index_of(name)
                .ok_or_else(|| Error::Invalid(format!("unknown covariate `{name}`")))?;
            let kind = data.schema().kind_of(name).unwrap();
            let values: Vec<f64> = data.records().iter().map(|r| r.covariates[idx]).collect();
            let mean = stats::mean(&values);
            let sd = match kind {
                CovariateKind::Binary => None,
                CovariateKind::Continuous => Some(stats::sample_sd(&values)),
            };
            entries.push(TargetEntry { name: name.clone(), kind, mean, sd });
        }
        TargetAggregate::new(entries, data.len())
    }

    pub fn entries(&self) -> &[TargetEntry] {
        &self.entries
    }

    pub fn entry(&self, name: &str) -> Option<&TargetEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn target_n(&self) -> usize {
        self.target_n
    }
}

/// One balance function h_k: either the covariate itself (matching the target
/// mean) or its centered square (matching the target variance).
#[derive(Debug, Clone, PartialEq)]
pub enum BalanceFunction {
    Mean { covariate: String, target: f64 },
    CenteredSquare { covariate: String, center: f64, target: f64 },
}

impl BalanceFunction {
    pub fn covariate(&self) -> &str {
        match self {
            BalanceFunction::Mean { covariate, .. }
            | BalanceFunction::CenteredSquare { covariate, .. } => covariate,
        }
    }

    pub fn order(&self) -> u8 {
        match self {
            BalanceFunction::Mean { .. } => 1,
            BalanceFunction::CenteredSquare { .. } => 2,
        }
    }

    pub fn target(&self) -> f64 {
        match self {
            BalanceFunction::Mean { target, .. }
            | BalanceFunction::CenteredSquare { target, .. } => *target,
        }
    }

    pub fn label(&self) -> String {
        match self {
            BalanceFunction::Mean { covariate, .. } => covariate.clone(),
            BalanceFunction::CenteredSquare { covariate, .. } => format!("{covariate}^2"),
        }
    }
}

/// Ordered list of balance functions to match against the target.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceSpec {
    functions: Vec<BalanceFunction>,
}

impl BalanceSpec {
    pub(crate) fn from_functions(functions: Vec<BalanceFunction>) -> Self {
        Self { functions }
    }

    pub fn functions(&self) -> &[BalanceFunction] {
        &self.functions
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn labels(&self) -> Vec<String> {
        self.functions.iter().map(|f| f.label()).collect()
    }
}

/// Exponential-tilting participation weights and the solve that produced them.
#[derive(Debug, Clone)]
pub struct ParticipationWeights {
    pub zeta: Vec<f64>,
    pub weights: Vec<f64>,
    pub centered_design: DMatrix<f64>,
    pub converged: bool,
}

/// Per-subject weight step functions over the dataset's ordered event-time
/// grid. Row `i` stores one value per grid time at which subject `i` is still
/// at risk (grid times `<= observed_time`), so rows are prefixes of the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeVaryingWeights {
    grid: Vec<f64>,
    rows: Vec<Vec<f64>>,
    truncation: Option<f64>,
    all_unit: bool,
}

impl TimeVaryingWeights {
    pub(crate) fn from_rows(grid: Vec<f64>, rows: Vec<Vec<f64>>, truncation: Option<f64>) -> Result<Self> {
        for (i, row) in rows.iter().enumerate() {
            for &v in row {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(Error::Invalid(format!(
                        "weight for subject {i} must be positive and finite, got {v}"
                    )));
                }
            }
        }
        let all_unit = rows.iter().all(|row| row.iter().all(|&v| v == 1.0));
        Ok(Self { grid, rows, truncation, all_unit })
    }

    /// Unit weights over the dataset's event-time grid.
    pub fn unit(data: &SurvivalDataset) -> Self {
        Self::from_subject_weights(data, &vec![1.0; data.len()]).expect("unit weights are valid")
    }

    /// Broadcast one weight per subject across the grid times at which the
    /// subject is at risk.
    pub fn from_subject_weights(data: &SurvivalDataset, weights: &[f64]) -> Result<Self> {
        if weights.len() != data.len() {
            return Err(Error::WeightShapeMismatch(format!(
                "{} weights for {} subjects",
                weights.len(),
                data.len()
            )));
        }
        Self::from_fn(data, |i, _, _| weights[i])
    }

    /// Build weights over the dataset's event-time grid from a function of
    /// (subject index, grid index, grid time), evaluated while at risk.
    pub fn from_fn(
        data: &SurvivalDataset,
        f: impl Fn(usize, usize, f64) -> f64,
    ) -> Result<Self> {
        let grid = data.event_times().to_vec();
        let rows = data
            .records()
            .iter()
            .enumerate()
            .map(|(i, rec)| {
                let len = grid.partition_point(|&t| t <= rec.observed_time);
                (0..len).map(|k| f(i, k, grid[k])).collect()
            })
            .collect();
        Self::from_rows(grid, rows, None)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn n_subjects(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, subject: usize) -> &[f64] {
        &self.rows[subject]
    }

    /// Weight of `subject` at grid index `k`; the subject must be at risk there.
    #[inline]
    pub fn value(&self, subject: usize, k: usize) -> f64 {
        self.rows[subject][k]
    }

    /// All stored (subject, time) weight values.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().flat_map(|row| row.iter().copied())
    }

    pub fn n_values(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Threshold applied by [`truncate_weights`], if any.
    pub fn truncation_threshold(&self) -> Option<f64> {
        self.truncation
    }

    pub fn is_unit(&self) -> bool {
        self.all_unit
    }

    /// Every value multiplied by a positive constant (the truncation marker,
    /// if set, scales along).
    pub fn scale(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0) || !factor.is_finite() {
            return Err(Error::Invalid(format!("scale factor must be positive, got {factor}")));
        }
        let rows = self.rows.iter().map(|row| row.iter().map(|v| v * factor).collect()).collect();
        Self::from_rows(self.grid.clone(), rows, self.truncation.map(|t| t * factor))
    }
}

/// Elementwise product of the participation weights (broadcast over the grid)
/// and the censoring weights.
pub fn combine_final_weights(
    participation: &ParticipationWeights,
    censoring: &TimeVaryingWeights,
) -> Result<TimeVaryingWeights> {
    if participation.weights.len() != censoring.n_subjects() {
        return Err(Error::WeightShapeMismatch(format!(
            "{} participation weights for {} subjects",
            participation.weights.len(),
            censoring.n_subjects()
        )));
    }
    if let Some(threshold) = censoring.truncation_threshold() {
        return Err(Error::AlreadyTruncated { threshold });
    }
    let rows = censoring
        .rows
        .iter()
        .zip(&participation.weights)
        .map(|(row, &w)| row.iter().map(|v| v * w).collect())
        .collect();
    TimeVaryingWeights::from_rows(censoring.grid.clone(), rows, None)
}

/// Quantile cutoffs supported for final-weight capping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TruncationCutoff {
    Q80,
    Q90,
    Q95,
    Q99,
}

impl TruncationCutoff {
    pub fn fraction(self) -> f64 {
        match self {
            TruncationCutoff::Q80 => 0.80,
            TruncationCutoff::Q90 => 0.90,
            TruncationCutoff::Q95 => 0.95,
            TruncationCutoff::Q99 => 0.99,
        }
    }

    pub const ALL: [TruncationCutoff; 4] =
        [TruncationCutoff::Q80, TruncationCutoff::Q90, TruncationCutoff::Q95, TruncationCutoff::Q99];

    /// Parse `"0.95"`, `"95"`, `"95%"` or `"none"` (`None`).
    pub fn parse(s: &str) -> Result<Option<TruncationCutoff>> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("none") {
            return Ok(None);
        }
        let raw = s.trim_end_matches('%');
        let value: f64 = raw
            .parse()
            .map_err(|_| Error::Invalid(format!("unrecognized truncation cutoff `{s}`")))?;
        let fraction = if value > 1.0 { value / 100.0 } else { value };
        for cutoff in TruncationCutoff::ALL {
            if (cutoff.fraction() - fraction).abs() < 1e-9 {
                return Ok(Some(cutoff));
            }
        }
        Err(Error::Invalid(format!(
            "unsupported truncation cutoff `{s}` (use 0.80, 0.90, 0.95, 0.99 or none)"
        )))
    }
}

impl std::fmt::Display for TruncationCutoff {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.2}", self.fraction())
    }
}

/// Cap every stored weight at the pooled quantile of all (subject, time)
/// values. `None` is the identity. Capping twice is rejected so the pipeline
/// can prove truncation happened exactly once, after combination.
pub fn truncate_weights(
    weights: &TimeVaryingWeights,
    cutoff: Option<TruncationCutoff>,
) -> Result<TimeVaryingWeights> {
    let Some(cutoff) = cutoff else {
        return Ok(weights.clone());
    };
    if let Some(threshold) = weights.truncation_threshold() {
        return Err(Error::AlreadyTruncated { threshold });
    }
    let mut pooled: Vec<f64> = weights.values().collect();
    if pooled.is_empty() {
        return Err(Error::Invalid("cannot truncate an empty weight set".into()));
    }
    let threshold = stats::quantile_unstable(&mut pooled, cutoff.fraction());
    let rows = weights
        .rows
        .iter()
        .map(|row| row.iter().map(|&v| v.min(threshold)).collect())
        .collect();
    TimeVaryingWeights::from_rows(weights.grid.clone(), rows, Some(threshold))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::survival::{CovariateSchema, SubjectRecord};

    fn toy_data() -> SurvivalDataset {
        let schema = CovariateSchema::new(vec![("x".into(), CovariateKind::Binary)]).unwrap();
        let records = vec![
            SubjectRecord { id: "a".into(), observed_time: 1.0, event: true, treatment: true, covariates: vec![1.0] },
            SubjectRecord { id: "b".into(), observed_time: 2.0, event: false, treatment: false, covariates: vec![0.0] },
            SubjectRecord { id: "c".into(), observed_time: 3.0, event: true, treatment: false, covariates: vec![1.0] },
        ];
        SurvivalDataset::new(records, schema).unwrap()
    }

    #[test]
    fn rows_are_at_risk_prefixes() {
        let data = toy_data();
        let w = TimeVaryingWeights::unit(&data);
        assert_eq!(w.grid(), &[1.0, 3.0]);
        assert_eq!(w.row(0).len(), 1); // at risk at t=1 only
        assert_eq!(w.row(1).len(), 1); // censored at 2, at risk at t=1
        assert_eq!(w.row(2).len(), 2);
        assert!(w.is_unit());
    }

    #[test]
    fn combine_broadcasts_participation() {
        let data = toy_data();
        let ipcw = TimeVaryingWeights::unit(&data);
        let part = ParticipationWeights {
            zeta: vec![0.0],
            weights: vec![2.0, 3.0, 4.0],
            centered_design: DMatrix::zeros(3, 1),
            converged: true,
        };
        let combined = combine_final_weights(&part, &ipcw).unwrap();
        assert_eq!(combined.row(0), &[2.0]);
        assert_eq!(combined.row(1), &[3.0]);
        assert_eq!(combined.row(2), &[4.0, 4.0]);
    }

    #[test]
    fn combine_rejects_shape_mismatch_and_pre_truncated() {
        let data = toy_data();
        let ipcw = TimeVaryingWeights::unit(&data);
        let part = ParticipationWeights {
            zeta: vec![],
            weights: vec![1.0, 1.0],
            centered_design: DMatrix::zeros(2, 0),
            converged: true,
        };
        assert!(matches!(
            combine_final_weights(&part, &ipcw),
            Err(Error::WeightShapeMismatch(_))
        ));
        let truncated = truncate_weights(&ipcw, Some(TruncationCutoff::Q80)).unwrap();
        let part3 = ParticipationWeights {
            zeta: vec![],
            weights: vec![1.0; 3],
            centered_design: DMatrix::zeros(3, 0),
            converged: true,
        };
        assert!(matches!(
            combine_final_weights(&part3, &truncated),
            Err(Error::AlreadyTruncated { .. })
        ));
    }

    #[test]
    fn truncation_identity_and_all_equal_noop() {
        let data = toy_data();
        let w = TimeVaryingWeights::from_subject_weights(&data, &[2.0, 2.0, 2.0]).unwrap();
        let same = truncate_weights(&w, None).unwrap();
        assert_eq!(same, w);
        let capped = truncate_weights(&w, Some(TruncationCutoff::Q80)).unwrap();
        assert_eq!(capped.row(2), &[2.0, 2.0]);
        assert_eq!(capped.truncation_threshold(), Some(2.0));
    }

    #[test]
    fn truncating_twice_is_rejected() {
        let data = toy_data();
        let w = TimeVaryingWeights::from_subject_weights(&data, &[1.0, 2.0, 3.0]).unwrap();
        let once = truncate_weights(&w, Some(TruncationCutoff::Q90)).unwrap();
        assert!(matches!(
            truncate_weights(&once, Some(TruncationCutoff::Q95)),
            Err(Error::AlreadyTruncated { .. })
        ));
    }

    #[test]
    fn cutoff_parsing() {
        assert_eq!(TruncationCutoff::parse("none").unwrap(), None);
        assert_eq!(TruncationCutoff::parse("0.95").unwrap(), Some(TruncationCutoff::Q95));
        assert_eq!(TruncationCutoff::parse("95%").unwrap(), Some(TruncationCutoff::Q95));
        assert_eq!(TruncationCutoff::parse("80").unwrap(), Some(TruncationCutoff::Q80));
        assert!(TruncationCutoff::parse("0.5").is_err());
    }

    #[test]
    fn aggregate_validation() {
        let bin = |mean: f64, sd: Option<f64>| TargetEntry {
            name: "b".into(),
            kind: CovariateKind::Binary,
            mean,
            sd,
        };
        assert!(TargetAggregate::new(vec![bin(0.4, None)], 10).is_ok());
        assert!(TargetAggregate::new(vec![bin(1.2, None)], 10).is_err());
        assert!(TargetAggregate::new(vec![bin(0.4, Some(0.2))], 10).is_err());
        assert!(TargetAggregate::new(vec![], 10).is_err());
    }
}
