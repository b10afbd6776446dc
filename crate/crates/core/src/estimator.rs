//! The end-to-end transport pipeline: participation weights, optional
//! censoring weights, quantile capping, a treatment-only marginal structural
//! Cox fit, and nonparametric bootstrap inference.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, StageExt};
use crate::rng::{scope, stream};
use crate::stats;
use crate::survival::{fit_cox_core, CoxOptions, DesignColumn, EventFlag, SurvivalDataset};
use crate::weights::{
    build_balance_spec, center_design, combine_final_weights, fit_censoring_weights,
    solve_mom_weights, truncate_weights, TargetAggregate, TimeVaryingWeights, TruncationCutoff,
};

/// Whether the pipeline models censoring (IPCW) or ignores it, using the
/// participation weights alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CensoringStrategy {
    Adjusted,
    Ignored,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisConfig {
    /// Covariates whose target moments the participation weights must match.
    pub balance_covariates: Vec<String>,
    /// Censoring-model design columns; the reserved name `treatment` selects
    /// the treatment indicator. May differ from the balance set.
    pub censoring_covariates: Vec<String>,
    pub include_second_moments: bool,
    pub truncation_cutoff: Option<TruncationCutoff>,
    pub censoring_strategy: CensoringStrategy,
    pub bootstrap_b: usize,
    pub seed: u64,
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bootstrap_b == 0 {
            return Err(Error::Invalid("bootstrap_b must be at least 1".into()));
        }
        if self.balance_covariates.is_empty() {
            return Err(Error::Invalid("balance covariate list is empty".into()));
        }
        if self.censoring_strategy == CensoringStrategy::Adjusted
            && self.censoring_covariates.is_empty()
        {
            return Err(Error::Invalid(
                "censoring covariate list is empty but the adjusted strategy is active".into(),
            ));
        }
        Ok(())
    }

    fn censoring_design(&self) -> Vec<DesignColumn> {
        self.censoring_covariates.iter().map(|n| DesignColumn::parse(n)).collect()
    }
}

/// Summary of the final weights actually used by a fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightDiagnostics {
    pub min: f64,
    pub max: f64,
    /// (level, value) pairs over the pooled (subject, time) weight values.
    pub quantiles: Vec<(f64, f64)>,
    /// (sum w)^2 / sum w^2 over the weights at the reference time (the first
    /// event time, where every subject still under observation is at risk).
    pub effective_sample_size: f64,
    pub truncation_threshold: Option<f64>,
}

const DIAGNOSTIC_LEVELS: [f64; 6] = [0.25, 0.50, 0.75, 0.90, 0.95, 0.99];

impl WeightDiagnostics {
    fn from_weights(weights: &TimeVaryingWeights) -> Self {
        let mut pooled: Vec<f64> = weights.values().collect();
        pooled.sort_by(f64::total_cmp);
        let quantiles = DIAGNOSTIC_LEVELS
            .iter()
            .map(|&q| (q, stats::quantile_sorted(&pooled, q)))
            .collect();
        let reference: Vec<f64> = (0..weights.n_subjects())
            .filter(|&i| !weights.row(i).is_empty())
            .map(|i| weights.value(i, 0))
            .collect();
        WeightDiagnostics {
            min: *pooled.first().unwrap(),
            max: *pooled.last().unwrap(),
            quantiles,
            effective_sample_size: effective_sample_size(&reference),
            truncation_threshold: weights.truncation_threshold(),
        }
    }
}

/// `(sum w)^2 / sum w^2`; equals the count when weights are constant and
/// approaches 1 when a single weight dominates.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let sum: f64 = weights.iter().sum();
    let sum_sq: f64 = weights.iter().map(|w| w * w).sum();
    if sum_sq == 0.0 {
        0.0
    } else {
        sum * sum / sum_sq
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointEstimate {
    pub log_hr: f64,
    pub weight_diagnostics: WeightDiagnostics,
}

/// Transported treatment effect with percentile-bootstrap inference.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransportEstimate {
    pub log_hr: f64,
    pub hr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Successful resampled HRs in draw order.
    pub bootstrap_draws: Vec<f64>,
    pub failed_draws: usize,
    pub weight_diagnostics: WeightDiagnostics,
}

impl TransportEstimate {
    /// Standard deviation of the bootstrap draws.
    pub fn bootstrap_se(&self) -> f64 {
        if self.bootstrap_draws.len() < 2 {
            0.0
        } else {
            stats::sample_sd(&self.bootstrap_draws)
        }
    }
}

/// Run the full weighting pipeline and fit the treatment-only marginal
/// structural Cox model on the source data.
pub fn tada_point_estimate(
    data: &SurvivalDataset,
    target: &TargetAggregate,
    config: &AnalysisConfig,
) -> Result<PointEstimate> {
    config.validate()?;
    let (log_hr, final_weights) = pipeline_log_hr(data, target, config)?;
    Ok(PointEstimate { log_hr, weight_diagnostics: WeightDiagnostics::from_weights(&final_weights) })
}

/// The pipeline core: build final weights, fit, return both.
fn pipeline_log_hr(
    data: &SurvivalDataset,
    target: &TargetAggregate,
    config: &AnalysisConfig,
) -> Result<(f64, TimeVaryingWeights)> {
    let spec = build_balance_spec(
        data.schema(),
        &restrict_target(target, &config.balance_covariates)?,
        config.include_second_moments,
    )
    .at_stage("balance spec")?;
    let centered = center_design(data, &spec).at_stage("centering")?;
    let mom = solve_mom_weights(&centered, &spec.labels()).at_stage("participation weights")?;
    if !mom.converged {
        return Err(Error::NotConverged { what: "participation weight solve".into(), iterations: 0 }
            .at_stage("participation weights"));
    }

    let combined = match config.censoring_strategy {
        CensoringStrategy::Ignored => {
            TimeVaryingWeights::from_subject_weights(data, &mom.weights)
                .at_stage("participation weights")?
        }
        CensoringStrategy::Adjusted => {
            let censoring = fit_censoring_weights(data, &config.censoring_design())
                .at_stage("censoring model")?;
            combine_final_weights(&mom, &censoring.weights).at_stage("final weights")?
        }
    };
    let final_weights =
        truncate_weights(&combined, config.truncation_cutoff).at_stage("truncation")?;

    let fit = fit_cox_core(
        data,
        &[DesignColumn::Treatment],
        Some(&final_weights),
        EventFlag::Event,
        &CoxOptions::default(),
    )
    .at_stage("outcome model")?;
    if !fit.converged {
        return Err(Error::NotConverged {
            what: "marginal structural Cox model".into(),
            iterations: fit.iterations,
        }
        .at_stage("outcome model"));
    }
    Ok((fit.coefficients[0], final_weights))
}

/// Keep only the target entries named in the balance list, in list order.
fn restrict_target(target: &TargetAggregate, names: &[String]) -> Result<TargetAggregate> {
    let entries = names
        .iter()
        .map(|n| {
            target
                .entry(n)
                .cloned()
                .ok_or_else(|| Error::Invalid(format!("target aggregate has no entry `{n}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    TargetAggregate::new(entries, target.target_n())
}

/// Nonparametric bootstrap over source subjects; the target aggregate is held
/// fixed. Each resample reruns the full pipeline (moment solve, censoring
/// model, its own pooled truncation threshold). Draws that fail to converge
/// are dropped and counted; more than 20% failures aborts.
pub fn bootstrap_transport(
    data: &SurvivalDataset,
    target: &TargetAggregate,
    config: &AnalysisConfig,
) -> Result<TransportEstimate> {
    config.validate()?;
    let point = tada_point_estimate(data, target, config)?;

    let n = data.len();
    let b_total = config.bootstrap_b;
    let results: Vec<Option<f64>> = (0..b_total)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(config.seed, &[scope::BOOTSTRAP, b as u64]);
            let indices: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let resampled = data.resample(&indices).ok()?;
            pipeline_log_hr(&resampled, target, config).ok().map(|(log_hr, _)| log_hr.exp())
        })
        .collect();

    let draws: Vec<f64> = results.iter().flatten().copied().collect();
    let failed = b_total - draws.len();
    if failed * 5 > b_total {
        return Err(Error::BootstrapFailure { failed, total: b_total });
    }
    let mut sorted = draws.clone();
    sorted.sort_by(f64::total_cmp);
    let ci_low = stats::quantile_sorted(&sorted, 0.025);
    let ci_high = stats::quantile_sorted(&sorted, 0.975);

    Ok(TransportEstimate {
        log_hr: point.log_hr,
        hr: point.log_hr.exp(),
        ci_low,
        ci_high,
        bootstrap_draws: draws,
        failed_draws: failed,
        weight_diagnostics: point.weight_diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ess_trivial_cases() {
        assert!((effective_sample_size(&vec![1.0; 200]) - 200.0).abs() < 1e-12);
        let dominated = {
            let mut w = vec![1e-9; 50];
            w[0] = 1.0;
            w
        };
        assert!(effective_sample_size(&dominated) < 1.001);
        assert!((effective_sample_size(&[1.0, 1.0, 2.0]) - 16.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let cfg = AnalysisConfig {
            balance_covariates: vec![],
            censoring_covariates: vec![],
            include_second_moments: true,
            truncation_cutoff: None,
            censoring_strategy: CensoringStrategy::Ignored,
            bootstrap_b: 10,
            seed: 1,
        };
        assert!(cfg.validate().is_err());
        let ok = AnalysisConfig { balance_covariates: vec!["x".into()], ..cfg.clone() };
        assert!(ok.validate().is_ok());
        let adjusted =
            AnalysisConfig { censoring_strategy: CensoringStrategy::Adjusted, ..ok.clone() };
        assert!(adjusted.validate().is_err());
        let zero_b = AnalysisConfig { bootstrap_b: 0, ..ok };
        assert!(zero_b.validate().is_err());
    }
}
