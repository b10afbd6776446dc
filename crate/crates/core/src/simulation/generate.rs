//! Data-generating mechanisms: source trial data with covariate-dependent
//! Weibull event and censoring times, and the target population emitted both
//! as aggregate moments and as uncensored pseudo-data for benchmarking.

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal, Open01};

use crate::error::{Error, Result};
use crate::rng::{scope, stream};
use crate::stats;
use crate::survival::{
    fit_cox_core, weibull_inverse_transform, CoxOptions, DesignColumn, EventFlag, SubjectRecord,
    SurvivalDataset,
};
use crate::weights::TargetAggregate;

use super::{AbnormalValueSpec, PopulationConfig, ScenarioConfig};

struct Covariates {
    x1: Vec<f64>,
    x2: Vec<f64>,
    x3: Vec<f64>,
}

fn draw_covariates(pop: &PopulationConfig, rng: &mut ChaCha12Rng) -> Result<Covariates> {
    let normal = Normal::new(pop.x3_mean, pop.x3_sd)
        .map_err(|e| Error::Invalid(format!("x3 distribution: {e}")))?;
    let n = pop.superpopulation;
    let mut x1 = Vec::with_capacity(n);
    let mut x2 = Vec::with_capacity(n);
    let mut x3 = Vec::with_capacity(n);
    for _ in 0..n {
        x1.push(if rng.random_bool(pop.x1_prob) { 1.0 } else { 0.0 });
        x2.push(if rng.random_bool(pop.x2_prob) { 1.0 } else { 0.0 });
        x3.push(normal.sample(rng));
    }
    Ok(Covariates { x1, x2, x3 })
}

fn open01(rng: &mut ChaCha12Rng) -> f64 {
    Open01.sample(rng)
}

/// Simulate the source superpopulation, then uniformly subsample the trial:
/// randomized treatment, Weibull event and censoring times from the
/// covariate-dependent linear predictors, observed time = min of the two.
pub fn generate_study_ipd(config: &ScenarioConfig, seed: u64) -> Result<SurvivalDataset> {
    config.validate()?;
    let mut rng = stream(seed, &[scope::STUDY_DATA]);
    let pop = &config.source;
    let covs = draw_covariates(pop, &mut rng)?;

    let n = pop.superpopulation;
    let mut treated = Vec::with_capacity(n);
    let mut observed = Vec::with_capacity(n);
    let mut event = Vec::with_capacity(n);
    for i in 0..n {
        let a = rng.random_bool(0.5);
        let eta_e = config.eta_event(covs.x1[i], covs.x2[i], covs.x3[i], a);
        let eta_c = config.eta_censor(covs.x1[i], covs.x2[i], covs.x3[i], a);
        let t = weibull_inverse_transform(
            open01(&mut rng),
            config.event_weibull.scale,
            config.event_weibull.shape,
            eta_e,
        )?;
        let c = weibull_inverse_transform(
            open01(&mut rng),
            config.censor_weibull.scale,
            config.censor_weibull.shape,
            eta_c,
        )?;
        treated.push(a);
        observed.push(t.min(c));
        event.push(t <= c);
    }

    let chosen = index::sample(&mut rng, n, pop.sample);
    let records = chosen
        .iter()
        .map(|i| SubjectRecord {
            id: i.to_string(),
            observed_time: observed[i],
            event: event[i],
            treatment: treated[i],
            covariates: vec![covs.x1[i], covs.x2[i], covs.x3[i]],
        })
        .collect();
    SurvivalDataset::new(records, ScenarioConfig::schema())
}

/// Simulate the target superpopulation, subsample it, and emit both the
/// aggregate moments (proportions of x1 and x2; mean and sd of x3) and the
/// uncensored pseudo-data used to benchmark the true transported effect. The
/// pseudo-data use the same event model and coefficients as the source.
pub fn generate_target(
    config: &ScenarioConfig,
    seed: u64,
) -> Result<(TargetAggregate, SurvivalDataset)> {
    config.validate()?;
    let mut rng = stream(seed, &[scope::TARGET_DATA]);
    let pop = &config.target;
    let covs = draw_covariates(pop, &mut rng)?;
    let chosen = index::sample(&mut rng, pop.superpopulation, pop.sample);

    let mut records = Vec::with_capacity(pop.sample);
    for i in chosen.iter() {
        let a = rng.random_bool(0.5);
        let eta_e = config.eta_event(covs.x1[i], covs.x2[i], covs.x3[i], a);
        let t = weibull_inverse_transform(
            open01(&mut rng),
            config.event_weibull.scale,
            config.event_weibull.shape,
            eta_e,
        )?;
        records.push(SubjectRecord {
            id: i.to_string(),
            observed_time: t,
            event: true,
            treatment: a,
            covariates: vec![covs.x1[i], covs.x2[i], covs.x3[i]],
        });
    }
    let pseudo = SurvivalDataset::new(records, ScenarioConfig::schema())?;
    let aggregate = TargetAggregate::from_dataset(&pseudo, &ScenarioConfig::covariate_names())?;
    Ok((aggregate, pseudo))
}

/// Marginal hazard ratio from an unweighted treatment-only Cox fit on the
/// target pseudo-data; callers average this over replicates.
pub fn pseudo_true_hr(pseudo: &SurvivalDataset) -> Result<f64> {
    let fit = fit_cox_core(
        pseudo,
        &[DesignColumn::Treatment],
        None,
        EventFlag::Event,
        &CoxOptions::default(),
    )?;
    if !fit.converged {
        return Err(Error::NotConverged {
            what: "benchmark Cox model".into(),
            iterations: fit.iterations,
        });
    }
    Ok(fit.coefficients[0].exp())
}

/// Replicate-averaged benchmark hazard ratio with a normal-approximation
/// 95% interval over the replicates.
pub fn pseudo_true_summary(hrs: &[f64]) -> (f64, (f64, f64)) {
    let mean = stats::mean(hrs);
    if hrs.len() < 2 {
        return (mean, (mean, mean));
    }
    let half = 1.96 * stats::sample_sd(hrs) / (hrs.len() as f64).sqrt();
    (mean, (mean - half, mean + half))
}

/// Contaminate the target pseudo-data: flip x2 for a uniformly chosen
/// fraction of records and shift x3 by `multiplier * sd(x3)` for another,
/// then recompute the aggregate so the contamination flows into the moments
/// the participation weights will try to match.
pub fn inject_abnormal_values(
    pseudo: &SurvivalDataset,
    spec: &AbnormalValueSpec,
    seed: u64,
) -> Result<(SurvivalDataset, TargetAggregate)> {
    spec.validate()?;
    let schema = pseudo.schema().clone();
    let x2_idx = schema.index_of("x2").ok_or_else(|| Error::Invalid("no x2 covariate".into()))?;
    let x3_idx = schema.index_of("x3").ok_or_else(|| Error::Invalid("no x3 covariate".into()))?;

    let mut rng = stream(seed, &[scope::ABNORMAL]);
    let n = pseudo.len();
    let mut records: Vec<SubjectRecord> = pseudo.records().to_vec();

    let n_flip = (spec.flip_fraction_x2 * n as f64).floor() as usize;
    for i in index::sample(&mut rng, n, n_flip) {
        let v = &mut records[i].covariates[x2_idx];
        *v = 1.0 - *v;
    }

    let n_extreme = (spec.extreme_fraction_x3 * n as f64).floor() as usize;
    if n_extreme > 0 {
        let x3: Vec<f64> = records.iter().map(|r| r.covariates[x3_idx]).collect();
        let shift = spec.extreme_multiplier * stats::sample_sd(&x3);
        for i in index::sample(&mut rng, n, n_extreme) {
            records[i].covariates[x3_idx] += shift;
        }
    }

    let contaminated = SurvivalDataset::new(records, schema)?;
    let aggregate =
        TargetAggregate::from_dataset(&contaminated, &ScenarioConfig::covariate_names())?;
    Ok((contaminated, aggregate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::CensoringLevel;

    fn small_config() -> ScenarioConfig {
        let mut cfg = ScenarioConfig::scenario(1, CensoringLevel::Twenty).unwrap();
        cfg.source.superpopulation = 2_000;
        cfg.source.sample = 150;
        cfg.target.superpopulation = 3_000;
        cfg.target.sample = 400;
        cfg
    }

    #[test]
    fn study_generation_is_deterministic() {
        let cfg = small_config();
        let a = generate_study_ipd(&cfg, 99).unwrap();
        let b = generate_study_ipd(&cfg, 99).unwrap();
        assert_eq!(a, b);
        let c = generate_study_ipd(&cfg, 100).unwrap();
        assert_ne!(a, c);
        assert_eq!(a.len(), 150);
    }

    #[test]
    fn target_pair_is_deterministic_and_consistent() {
        let cfg = small_config();
        let (agg1, pseudo1) = generate_target(&cfg, 7).unwrap();
        let (agg2, pseudo2) = generate_target(&cfg, 7).unwrap();
        assert_eq!(pseudo1, pseudo2);
        assert_eq!(agg1, agg2);
        // aggregate recomputed from the pseudo-data matches exactly
        let recomputed =
            TargetAggregate::from_dataset(&pseudo1, &ScenarioConfig::covariate_names()).unwrap();
        assert_eq!(agg1, recomputed);
        assert!(pseudo1.records().iter().all(|r| r.event));
    }

    #[test]
    fn null_dgm_has_unit_hazard_ratio() {
        let mut cfg = small_config();
        cfg.main_effects = [0.0; 3];
        cfg.interactions = [0.0; 3];
        cfg.treatment_effect = 0.0;
        cfg.target.sample = 2_000;
        let mut hrs = Vec::new();
        for seed in 0..8 {
            let (_, pseudo) = generate_target(&cfg, seed).unwrap();
            hrs.push(pseudo_true_hr(&pseudo).unwrap());
        }
        let (mean, _) = pseudo_true_summary(&hrs);
        assert!((mean - 1.0).abs() < 0.05, "null HR came out {mean}");
    }

    #[test]
    fn abnormal_type1_is_identity_and_counts_are_exact() {
        let cfg = small_config();
        let (_, pseudo) = generate_target(&cfg, 3).unwrap();
        let clean = AbnormalValueSpec::pattern(1).unwrap();
        let (same, agg) = inject_abnormal_values(&pseudo, &clean, 11).unwrap();
        assert_eq!(same, pseudo);
        assert_eq!(agg, TargetAggregate::from_dataset(&pseudo, &ScenarioConfig::covariate_names()).unwrap());

        let spec = AbnormalValueSpec::pattern(7).unwrap();
        let (modified, _) = inject_abnormal_values(&pseudo, &spec, 11).unwrap();
        let n = pseudo.len();
        let expect = (0.05 * n as f64).floor() as usize;
        let x2_idx = pseudo.schema().index_of("x2").unwrap();
        let x3_idx = pseudo.schema().index_of("x3").unwrap();
        let flips = pseudo
            .records()
            .iter()
            .zip(modified.records())
            .filter(|(a, b)| a.covariates[x2_idx] != b.covariates[x2_idx])
            .count();
        let shifts = pseudo
            .records()
            .iter()
            .zip(modified.records())
            .filter(|(a, b)| a.covariates[x3_idx] != b.covariates[x3_idx])
            .count();
        assert_eq!(flips, expect);
        assert_eq!(shifts, expect);
    }

    #[test]
    fn flipping_twice_with_same_seed_is_identity_on_x2() {
        let cfg = small_config();
        let (_, pseudo) = generate_target(&cfg, 5).unwrap();
        let spec = AbnormalValueSpec { flip_fraction_x2: 0.08, extreme_fraction_x3: 0.0, extreme_multiplier: 0.0 };
        let (once, _) = inject_abnormal_values(&pseudo, &spec, 21).unwrap();
        assert_ne!(once, pseudo);
        let (twice, _) = inject_abnormal_values(&once, &spec, 21).unwrap();
        assert_eq!(twice, pseudo);
    }
}
