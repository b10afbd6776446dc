//! Monte Carlo harness: Weibull data-generating mechanisms for the source
//! trial and the aggregate-described target population, a 10-scenario grid of
//! treatment-covariate interaction patterns crossed with four censoring
//! levels, bias/coverage performance measures, and sensitivity analyses over
//! truncation cutoffs, source sample sizes, and target-data contamination.

mod generate;
mod study;

pub use generate::{
    generate_study_ipd, generate_target, inject_abnormal_values, pseudo_true_hr,
    pseudo_true_summary,
};
pub use study::{
    censoring_calibration_report, run_scenario, run_scenario_abnormal, sensitivity_abnormal,
    sensitivity_sample_size, sensitivity_truncation, CensoringCalibration, DistributionSummary,
    ReplicateOutcome, ScenarioRun, ScenarioSummary, StrategySummary,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{AnalysisConfig, CensoringStrategy};
use crate::survival::{CovariateKind, CovariateSchema};
use crate::weights::TruncationCutoff;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeibullParams {
    pub shape: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationConfig {
    /// Individuals generated before subsampling.
    pub superpopulation: usize,
    /// Individuals kept in the final dataset.
    pub sample: usize,
    pub x1_prob: f64,
    pub x2_prob: f64,
    pub x3_mean: f64,
    pub x3_sd: f64,
}

/// Treatment-covariate interaction triples for the 10 study scenarios.
pub const INTERACTION_GRID: [[f64; 3]; 10] = [
    [1.20, 0.35, 1.30],
    [0.58, 0.35, 1.30],
    [-0.90, 0.35, 1.30],
    [-0.60, 0.35, 1.30],
    [1.20, 0.20, 1.30],
    [1.20, -0.70, 1.30],
    [1.20, -0.10, 1.30],
    [1.20, 0.35, 0.45],
    [1.20, 0.35, -0.30],
    [1.20, 0.35, -0.85],
];

/// Censoring-intercept calibration: each level sets the censoring-model
/// intercept so the overall censoring proportion lands near the named percent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CensoringLevel {
    Twenty,
    Thirty,
    Forty,
    Fifty,
}

impl CensoringLevel {
    pub const ALL: [CensoringLevel; 4] =
        [CensoringLevel::Twenty, CensoringLevel::Thirty, CensoringLevel::Forty, CensoringLevel::Fifty];

    pub fn intercept(self) -> f64 {
        match self {
            CensoringLevel::Twenty => 2.5,
            CensoringLevel::Thirty => 3.3,
            CensoringLevel::Forty => 3.7,
            CensoringLevel::Fifty => 4.3,
        }
    }

    pub fn percent(self) -> u32 {
        match self {
            CensoringLevel::Twenty => 20,
            CensoringLevel::Thirty => 30,
            CensoringLevel::Forty => 40,
            CensoringLevel::Fifty => 50,
        }
    }

    pub fn from_percent(pct: u32) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.percent() == pct)
            .ok_or_else(|| Error::Invalid(format!("unsupported censoring level {pct}% (use 20, 30, 40 or 50)")))
    }
}

/// Full parameterization of one simulated scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub scenario_id: u32,
    /// Main effects of (x1, x2, x3) on the event log hazard.
    pub main_effects: [f64; 3],
    pub treatment_effect: f64,
    /// Treatment-covariate interactions (x1, x2, x3).
    pub interactions: [f64; 3],
    pub event_weibull: WeibullParams,
    pub censor_weibull: WeibullParams,
    pub censor_intercept: f64,
    /// Main effects of (x1, x2, x3) on the censoring log hazard.
    pub censor_effects: [f64; 3],
    pub censor_treatment_effect: f64,
    pub source: PopulationConfig,
    pub target: PopulationConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            scenario_id: 1,
            main_effects: [0.5, -0.3, 0.2],
            treatment_effect: -0.4,
            interactions: INTERACTION_GRID[0],
            event_weibull: WeibullParams { shape: 1.5, scale: 0.1 },
            censor_weibull: WeibullParams { shape: 1.5, scale: 0.001 },
            censor_intercept: CensoringLevel::Twenty.intercept(),
            censor_effects: [-0.2, 0.4, -0.1],
            censor_treatment_effect: 0.25,
            source: PopulationConfig {
                superpopulation: 50_000,
                sample: 200,
                x1_prob: 0.45,
                x2_prob: 0.65,
                x3_mean: 0.0,
                x3_sd: 1.0,
            },
            target: PopulationConfig {
                superpopulation: 200_000,
                sample: 1_000,
                x1_prob: 0.35,
                x2_prob: 0.55,
                x3_mean: 0.21,
                x3_sd: 1.5,
            },
        }
    }
}

impl ScenarioConfig {
    /// One of the 10 study scenarios at the given censoring level.
    pub fn scenario(id: u32, level: CensoringLevel) -> Result<Self> {
        if !(1..=10).contains(&id) {
            return Err(Error::Invalid(format!("unknown scenario id {id} (use 1..=10)")));
        }
        Ok(ScenarioConfig {
            scenario_id: id,
            interactions: INTERACTION_GRID[(id - 1) as usize],
            censor_intercept: level.intercept(),
            ..ScenarioConfig::default()
        })
    }

    /// The covariate layout every generated dataset uses.
    pub fn schema() -> CovariateSchema {
        CovariateSchema::new(vec![
            ("x1".into(), CovariateKind::Binary),
            ("x2".into(), CovariateKind::Binary),
            ("x3".into(), CovariateKind::Continuous),
        ])
        .expect("static schema is valid")
    }

    pub fn covariate_names() -> Vec<String> {
        vec!["x1".into(), "x2".into(), "x3".into()]
    }

    pub(crate) fn eta_event(&self, x1: f64, x2: f64, x3: f64, treated: bool) -> f64 {
        let a = if treated { 1.0 } else { 0.0 };
        self.main_effects[0] * x1
            + self.main_effects[1] * x2
            + self.main_effects[2] * x3
            + self.treatment_effect * a
            + a * (self.interactions[0] * x1 + self.interactions[1] * x2 + self.interactions[2] * x3)
    }

    pub(crate) fn eta_censor(&self, x1: f64, x2: f64, x3: f64, treated: bool) -> f64 {
        let a = if treated { 1.0 } else { 0.0 };
        self.censor_intercept
            + self.censor_effects[0] * x1
            + self.censor_effects[1] * x2
            + self.censor_effects[2] * x3
            + self.censor_treatment_effect * a
    }

    pub fn validate(&self) -> Result<()> {
        if self.source.sample == 0 || self.source.sample > self.source.superpopulation {
            return Err(Error::Invalid("source sample must be in 1..=superpopulation".into()));
        }
        if self.target.sample == 0 || self.target.sample > self.target.superpopulation {
            return Err(Error::Invalid("target sample must be in 1..=superpopulation".into()));
        }
        for (label, p) in [
            ("source x1", self.source.x1_prob),
            ("source x2", self.source.x2_prob),
            ("target x1", self.target.x1_prob),
            ("target x2", self.target.x2_prob),
        ] {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Invalid(format!("{label} probability must lie in (0,1)")));
            }
        }
        for (label, v) in [
            ("event shape", self.event_weibull.shape),
            ("event scale", self.event_weibull.scale),
            ("censor shape", self.censor_weibull.shape),
            ("censor scale", self.censor_weibull.scale),
            ("source x3 sd", self.source.x3_sd),
            ("target x3 sd", self.target.x3_sd),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Invalid(format!("{label} must be positive")));
            }
        }
        Ok(())
    }
}

/// Contamination pattern for the target pseudo-data: a fraction of x2 values
/// flipped and a fraction of x3 values shifted by a multiple of the column's
/// standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbnormalValueSpec {
    pub flip_fraction_x2: f64,
    pub extreme_fraction_x3: f64,
    pub extreme_multiplier: f64,
}

impl AbnormalValueSpec {
    /// The seven predefined contamination patterns (1 = clean baseline).
    pub fn pattern(abv_type: u32) -> Result<Self> {
        let (flip, extreme, mult) = match abv_type {
            1 => (0.0, 0.0, 0.0),
            2 => (0.01, 0.0, 0.0),
            3 => (0.05, 0.0, 0.0),
            4 => (0.0, 0.01, 3.0),
            5 => (0.0, 0.05, 3.0),
            6 => (0.01, 0.01, 3.0),
            7 => (0.05, 0.05, 3.0),
            other => return Err(Error::Invalid(format!("unknown abnormal-value type {other} (use 1..=7)"))),
        };
        Ok(AbnormalValueSpec {
            flip_fraction_x2: flip,
            extreme_fraction_x3: extreme,
            extreme_multiplier: mult,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_fraction_x2)
            || !(0.0..=1.0).contains(&self.extreme_fraction_x3)
        {
            return Err(Error::Invalid("abnormal-value fractions must lie in [0,1]".into()));
        }
        if self.extreme_fraction_x3 > 0.0 && !(self.extreme_multiplier > 0.0) {
            return Err(Error::Invalid("extreme multiplier must be positive".into()));
        }
        Ok(())
    }
}

/// The analysis settings the simulation study uses: balance on all three
/// covariates with second moments, censoring model on treatment plus all
/// covariates, 95% final-weight capping.
pub fn default_analysis(bootstrap_b: usize, seed: u64) -> AnalysisConfig {
    AnalysisConfig {
        balance_covariates: ScenarioConfig::covariate_names(),
        censoring_covariates: vec!["treatment".into(), "x1".into(), "x2".into(), "x3".into()],
        include_second_moments: true,
        truncation_cutoff: Some(TruncationCutoff::Q95),
        censoring_strategy: CensoringStrategy::Adjusted,
        bootstrap_b,
        seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_grid_bounds() {
        assert!(ScenarioConfig::scenario(0, CensoringLevel::Twenty).is_err());
        assert!(ScenarioConfig::scenario(11, CensoringLevel::Twenty).is_err());
        let s3 = ScenarioConfig::scenario(3, CensoringLevel::Thirty).unwrap();
        assert_eq!(s3.interactions, [-0.90, 0.35, 1.30]);
        assert_eq!(s3.censor_intercept, 3.3);
    }

    #[test]
    fn abnormal_patterns() {
        assert_eq!(
            AbnormalValueSpec::pattern(7).unwrap(),
            AbnormalValueSpec { flip_fraction_x2: 0.05, extreme_fraction_x3: 0.05, extreme_multiplier: 3.0 }
        );
        assert!(AbnormalValueSpec::pattern(0).is_err());
        assert!(AbnormalValueSpec::pattern(8).is_err());
    }
}
