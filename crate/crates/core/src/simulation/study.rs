//! Replicate orchestration and performance measures: bias against the
//! replicate-averaged benchmark, percentile-interval coverage, Monte Carlo SD
//! versus mean bootstrap SE, censoring calibration, and the three sensitivity
//! analyses.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{bootstrap_transport, AnalysisConfig, CensoringStrategy};
use crate::rng::derive_seed;
use crate::stats;
use crate::survival::SurvivalDataset;
use crate::weights::{TargetAggregate, TruncationCutoff};

use super::generate::{generate_study_ipd, generate_target, inject_abnormal_values, pseudo_true_hr, pseudo_true_summary};
use super::{AbnormalValueSpec, ScenarioConfig};

/// One replicate's estimates under both censoring strategies.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub hr_adjusted: f64,
    pub hr_ignored: f64,
    pub ci_adjusted: (f64, f64),
    pub ci_ignored: (f64, f64),
    pub se_adjusted: f64,
    pub se_ignored: f64,
    pub pseudo_true_hr: f64,
    pub censor_overall: f64,
    pub censor_treated: f64,
    pub censor_control: f64,
}

/// Performance measures for one strategy across replicates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategySummary {
    pub mean_hr: f64,
    /// Mean of the per-replicate bootstrap interval bounds.
    pub mean_ci: (f64, f64),
    /// Mean hazard-ratio estimate minus the replicate-averaged benchmark.
    pub bias: f64,
    /// 2.5/97.5 percentiles of the per-replicate deviations from the benchmark.
    pub bias_interval: (f64, f64),
    /// Fraction of replicate intervals containing the benchmark.
    pub coverage: f64,
    pub monte_carlo_sd: f64,
    pub mean_bootstrap_se: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub scenario_id: u32,
    pub replicates_requested: usize,
    pub replicates_used: usize,
    pub replicates_failed: usize,
    pub pseudo_true_hr: f64,
    pub pseudo_true_ci: (f64, f64),
    pub adjusted: StrategySummary,
    pub ignored: StrategySummary,
}

/// A scenario run: the summary plus the raw replicate outcomes it was
/// computed from.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub summary: ScenarioSummary,
    pub replicates: Vec<ReplicateOutcome>,
}

fn censor_fractions(data: &SurvivalDataset) -> (f64, f64, f64) {
    let mut censored = [0usize; 2];
    let mut total = [0usize; 2];
    for rec in data.records() {
        let arm = usize::from(rec.treatment);
        total[arm] += 1;
        if !rec.event {
            censored[arm] += 1;
        }
    }
    let overall = (censored[0] + censored[1]) as f64 / data.len() as f64;
    let frac = |arm: usize| {
        if total[arm] == 0 {
            f64::NAN
        } else {
            censored[arm] as f64 / total[arm] as f64
        }
    };
    (overall, frac(1), frac(0))
}

/// Per-replicate inputs shared by every analysis variant of that replicate.
struct ReplicateData {
    study: SurvivalDataset,
    aggregate: TargetAggregate,
    pseudo_true: f64,
    censor: (f64, f64, f64),
}

fn replicate_data(
    config: &ScenarioConfig,
    rep_seed: u64,
    abnormal: Option<&AbnormalValueSpec>,
) -> Result<ReplicateData> {
    let study = generate_study_ipd(config, rep_seed)?;
    let (aggregate, pseudo) = generate_target(config, rep_seed)?;
    // the benchmark always comes from the clean pseudo-data; contamination
    // only disturbs the aggregate handed to the weighting pipeline
    let pseudo_true = pseudo_true_hr(&pseudo)?;
    let aggregate = match abnormal {
        None => aggregate,
        Some(spec) => inject_abnormal_values(&pseudo, spec, rep_seed)?.1,
    };
    let censor = censor_fractions(&study);
    Ok(ReplicateData { study, aggregate, pseudo_true, censor })
}

fn run_replicate(
    data: &ReplicateData,
    base: &AnalysisConfig,
    rep_seed: u64,
    replicate: usize,
    cutoff: Option<TruncationCutoff>,
) -> Result<ReplicateOutcome> {
    let mut adjusted_cfg = base.clone();
    adjusted_cfg.censoring_strategy = CensoringStrategy::Adjusted;
    adjusted_cfg.truncation_cutoff = cutoff;
    adjusted_cfg.seed = rep_seed;
    let adjusted = bootstrap_transport(&data.study, &data.aggregate, &adjusted_cfg)?;

    let mut ignored_cfg = adjusted_cfg.clone();
    ignored_cfg.censoring_strategy = CensoringStrategy::Ignored;
    let ignored = bootstrap_transport(&data.study, &data.aggregate, &ignored_cfg)?;

    Ok(ReplicateOutcome {
        replicate,
        hr_adjusted: adjusted.hr,
        hr_ignored: ignored.hr,
        ci_adjusted: (adjusted.ci_low, adjusted.ci_high),
        ci_ignored: (ignored.ci_low, ignored.ci_high),
        se_adjusted: adjusted.bootstrap_se(),
        se_ignored: ignored.bootstrap_se(),
        pseudo_true_hr: data.pseudo_true,
        censor_overall: data.censor.0,
        censor_treated: data.censor.1,
        censor_control: data.censor.2,
    })
}

fn summarize(
    config: &ScenarioConfig,
    requested: usize,
    outcomes: Vec<ReplicateOutcome>,
) -> Result<ScenarioRun> {
    if outcomes.is_empty() {
        return Err(Error::Invalid("every replicate failed".into()));
    }
    let used = outcomes.len();
    let hrs_true: Vec<f64> = outcomes.iter().map(|o| o.pseudo_true_hr).collect();
    let (benchmark, benchmark_ci) = pseudo_true_summary(&hrs_true);

    let strategy = |hr: fn(&ReplicateOutcome) -> f64,
                    ci: fn(&ReplicateOutcome) -> (f64, f64),
                    se: fn(&ReplicateOutcome) -> f64|
     -> StrategySummary {
        let hrs: Vec<f64> = outcomes.iter().map(hr).collect();
        let mut sorted = hrs.clone();
        sorted.sort_by(f64::total_cmp);
        let mean_hr = stats::mean(&hrs);
        let cis: Vec<(f64, f64)> = outcomes.iter().map(ci).collect();
        let covered = cis.iter().filter(|(lo, hi)| *lo <= benchmark && benchmark <= *hi).count();
        StrategySummary {
            mean_hr,
            mean_ci: (
                stats::mean(&cis.iter().map(|c| c.0).collect::<Vec<_>>()),
                stats::mean(&cis.iter().map(|c| c.1).collect::<Vec<_>>()),
            ),
            bias: mean_hr - benchmark,
            bias_interval: (
                stats::quantile_sorted(&sorted, 0.025) - benchmark,
                stats::quantile_sorted(&sorted, 0.975) - benchmark,
            ),
            coverage: covered as f64 / used as f64,
            monte_carlo_sd: if used > 1 { stats::sample_sd(&hrs) } else { 0.0 },
            mean_bootstrap_se: stats::mean(&outcomes.iter().map(se).collect::<Vec<_>>()),
        }
    };

    let summary = ScenarioSummary {
        scenario_id: config.scenario_id,
        replicates_requested: requested,
        replicates_used: used,
        replicates_failed: requested - used,
        pseudo_true_hr: benchmark,
        pseudo_true_ci: benchmark_ci,
        adjusted: strategy(|o| o.hr_adjusted, |o| o.ci_adjusted, |o| o.se_adjusted),
        ignored: strategy(|o| o.hr_ignored, |o| o.ci_ignored, |o| o.se_ignored),
    };
    Ok(ScenarioRun { summary, replicates: outcomes })
}

fn rep_seed(config: &ScenarioConfig, master_seed: u64, replicate: usize) -> u64 {
    derive_seed(master_seed, &[config.scenario_id as u64, replicate as u64])
}

/// Run `r` fresh replicates of one scenario: per replicate, generate source
/// and target data, estimate under both strategies with `b` bootstrap
/// resamples, and summarize bias/coverage against the replicate-averaged
/// benchmark. Failed replicates are excluded and counted.
pub fn run_scenario(
    config: &ScenarioConfig,
    r: usize,
    b: usize,
    base: &AnalysisConfig,
    master_seed: u64,
) -> Result<ScenarioRun> {
    run_scenario_inner(config, None, r, b, base, master_seed)
}

/// [`run_scenario`] with the target aggregate computed from contaminated
/// pseudo-data (the benchmark stays clean).
pub fn run_scenario_abnormal(
    config: &ScenarioConfig,
    abnormal: &AbnormalValueSpec,
    r: usize,
    b: usize,
    base: &AnalysisConfig,
    master_seed: u64,
) -> Result<ScenarioRun> {
    run_scenario_inner(config, Some(abnormal), r, b, base, master_seed)
}

fn run_scenario_inner(
    config: &ScenarioConfig,
    abnormal: Option<&AbnormalValueSpec>,
    r: usize,
    b: usize,
    base: &AnalysisConfig,
    master_seed: u64,
) -> Result<ScenarioRun> {
    if r == 0 {
        return Err(Error::Invalid("need at least one replicate".into()));
    }
    let mut base = base.clone();
    base.bootstrap_b = b;
    let outcomes: Vec<Option<ReplicateOutcome>> = (0..r)
        .into_par_iter()
        .map(|rep| {
            let seed = rep_seed(config, master_seed, rep);
            let data = replicate_data(config, seed, abnormal).ok()?;
            run_replicate(&data, &base, seed, rep, base.truncation_cutoff).ok()
        })
        .collect();
    summarize(config, r, outcomes.into_iter().flatten().collect())
}

/// Distribution summary of a batch of fractions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub mean: f64,
    pub q3: f64,
    pub max: f64,
}

impl DistributionSummary {
    fn from_values(values: &[f64]) -> Self {
        let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        sorted.sort_by(f64::total_cmp);
        DistributionSummary {
            min: sorted[0],
            q1: stats::quantile_sorted(&sorted, 0.25),
            median: stats::quantile_sorted(&sorted, 0.5),
            mean: stats::mean(&sorted),
            q3: stats::quantile_sorted(&sorted, 0.75),
            max: *sorted.last().unwrap(),
        }
    }
}

/// Censoring-proportion distributions over replicates: overall and per arm.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CensoringCalibration {
    pub scenario_id: u32,
    pub replicates: usize,
    pub overall: DistributionSummary,
    pub treated: DistributionSummary,
    pub control: DistributionSummary,
}

pub fn censoring_calibration_report(
    config: &ScenarioConfig,
    r: usize,
    master_seed: u64,
) -> Result<CensoringCalibration> {
    if r == 0 {
        return Err(Error::Invalid("need at least one replicate".into()));
    }
    let fractions: Vec<(f64, f64, f64)> = (0..r)
        .into_par_iter()
        .map(|rep| {
            let study = generate_study_ipd(config, rep_seed(config, master_seed, rep))?;
            Ok(censor_fractions(&study))
        })
        .collect::<Result<_>>()?;
    let pick = |f: fn(&(f64, f64, f64)) -> f64| -> Vec<f64> { fractions.iter().map(f).collect() };
    Ok(CensoringCalibration {
        scenario_id: config.scenario_id,
        replicates: r,
        overall: DistributionSummary::from_values(&pick(|t| t.0)),
        treated: DistributionSummary::from_values(&pick(|t| t.1)),
        control: DistributionSummary::from_values(&pick(|t| t.2)),
    })
}

/// One summary per truncation cutoff, sharing each replicate's generated data
/// and bootstrap resamples across cutoffs so runs differ only through the
/// truncation stage. Results equal independent [`run_scenario`] calls with
/// the same seed.
pub fn sensitivity_truncation(
    config: &ScenarioConfig,
    cutoffs: &[Option<TruncationCutoff>],
    r: usize,
    b: usize,
    base: &AnalysisConfig,
    master_seed: u64,
) -> Result<Vec<(Option<TruncationCutoff>, ScenarioSummary)>> {
    if r == 0 {
        return Err(Error::Invalid("need at least one replicate".into()));
    }
    let mut base = base.clone();
    base.bootstrap_b = b;
    // per replicate: one data generation, one outcome per cutoff
    let per_replicate: Vec<Vec<Option<ReplicateOutcome>>> = (0..r)
        .into_par_iter()
        .map(|rep| {
            let seed = rep_seed(config, master_seed, rep);
            match replicate_data(config, seed, None) {
                Err(_) => vec![None; cutoffs.len()],
                Ok(data) => cutoffs
                    .iter()
                    .map(|cutoff| run_replicate(&data, &base, seed, rep, *cutoff).ok())
                    .collect(),
            }
        })
        .collect();

    cutoffs
        .iter()
        .enumerate()
        .map(|(ci, cutoff)| {
            let outcomes: Vec<ReplicateOutcome> =
                per_replicate.iter().filter_map(|row| row[ci].clone()).collect();
            Ok((*cutoff, summarize(config, r, outcomes)?.summary))
        })
        .collect()
}

/// One summary per source sample size, all other settings held fixed.
pub fn sensitivity_sample_size(
    config: &ScenarioConfig,
    sizes: &[usize],
    r: usize,
    b: usize,
    base: &AnalysisConfig,
    master_seed: u64,
) -> Result<Vec<(usize, ScenarioSummary)>> {
    sizes
        .iter()
        .map(|&n| {
            let mut cfg = config.clone();
            cfg.source.sample = n;
            Ok((n, run_scenario(&cfg, r, b, base, master_seed)?.summary))
        })
        .collect()
}

/// One summary per contamination pattern, sharing each replicate's generated
/// data across patterns.
pub fn sensitivity_abnormal(
    config: &ScenarioConfig,
    patterns: &[(u32, AbnormalValueSpec)],
    r: usize,
    b: usize,
    base: &AnalysisConfig,
    master_seed: u64,
) -> Result<Vec<(u32, ScenarioSummary)>> {
    patterns
        .iter()
        .map(|(label, spec)| {
            Ok((*label, run_scenario_abnormal(config, spec, r, b, base, master_seed)?.summary))
        })
        .collect()
}
