//! Weighted Kaplan-Meier product-limit estimation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::weights::TimeVaryingWeights;

use super::SurvivalDataset;

/// A weighted Kaplan-Meier curve over the event-time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMCurve {
    pub times: Vec<f64>,
    /// Survival just after each grid time; non-increasing, starts <= 1.
    pub survival: Vec<f64>,
    pub n_risk_weighted: Vec<f64>,
    pub n_event_weighted: Vec<f64>,
    /// Smallest grid time with survival <= 0.5, when the curve gets there.
    pub median: Option<f64>,
}

/// Product-limit estimator with time-varying weights:
/// `S(t) = prod_{t_j <= t} (1 - event_mass(t_j) / risk_mass(t_j))`.
/// Unit weights reproduce the classical Kaplan-Meier estimator, and scaling
/// every weight by a constant leaves the curve unchanged.
pub fn weighted_km(data: &SurvivalDataset, weights: &TimeVaryingWeights) -> Result<KMCurve> {
    let grid = data.event_times();
    if weights.grid() != grid {
        return Err(Error::WeightShapeMismatch(
            "weights are not on this dataset's event-time grid".into(),
        ));
    }
    let n = data.len();
    let mut survival = Vec::with_capacity(grid.len());
    let mut n_risk = Vec::with_capacity(grid.len());
    let mut n_event = Vec::with_capacity(grid.len());
    let mut s = 1.0;
    for (k, &t) in grid.iter().enumerate() {
        let mut risk_mass = 0.0;
        let mut event_mass = 0.0;
        for i in 0..n {
            let rec = &data.records()[i];
            if rec.observed_time >= t {
                let w = weights.value(i, k);
                risk_mass += w;
                if rec.event && rec.observed_time == t {
                    event_mass += w;
                }
            }
        }
        if !(risk_mass > 0.0) {
            return Err(Error::Invalid(format!("weighted risk-set mass is zero at time {t}")));
        }
        s *= 1.0 - event_mass / risk_mass;
        survival.push(s);
        n_risk.push(risk_mass);
        n_event.push(event_mass);
    }
    let median = grid
        .iter()
        .zip(&survival)
        .find(|(_, &s)| s <= 0.5)
        .map(|(&t, _)| t);
    Ok(KMCurve {
        times: grid.to_vec(),
        survival,
        n_risk_weighted: n_risk,
        n_event_weighted: n_event,
        median,
    })
}

/// Right-continuous evaluation of the curve; times before the first event
/// return 1, times beyond the last grid point return the final value.
pub fn km_survival_at(curve: &KMCurve, t: f64) -> f64 {
    let idx = curve.times.partition_point(|&k| k <= t);
    if idx == 0 {
        1.0
    } else {
        curve.survival[idx - 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::survival::{CovariateSchema, SubjectRecord};

    fn dataset(spec: &[(f64, bool)]) -> SurvivalDataset {
        let records = spec
            .iter()
            .enumerate()
            .map(|(i, &(t, event))| SubjectRecord {
                id: format!("s{i}"),
                observed_time: t,
                event,
                treatment: false,
                covariates: vec![],
            })
            .collect();
        SurvivalDataset::new(records, CovariateSchema::new(vec![]).unwrap()).unwrap()
    }

    #[test]
    fn all_events_unit_weights() {
        let data = dataset(&[(1.0, true), (2.0, true), (3.0, true), (4.0, true)]);
        let curve = weighted_km(&data, &TimeVaryingWeights::unit(&data)).unwrap();
        assert_eq!(curve.survival, vec![0.75, 0.5, 0.25, 0.0]);
        assert_eq!(curve.median, Some(2.0));
        assert_eq!(curve.n_risk_weighted, vec![4.0, 3.0, 2.0, 1.0]);
    }

    #[test]
    fn censored_toy_set_matches_hand_product_limit() {
        // events at 1 (n=5) and 3 (n=3), censored at 2 and 3+, one survivor
        let data = dataset(&[(1.0, true), (2.0, false), (3.0, true), (3.5, false), (5.0, false)]);
        let curve = weighted_km(&data, &TimeVaryingWeights::unit(&data)).unwrap();
        // S(1) = 1 - 1/5 = 0.8; S(3) = 0.8 * (1 - 1/3)
        assert!((curve.survival[0] - 0.8).abs() < 1e-15);
        assert!((curve.survival[1] - 0.8 * (2.0 / 3.0)).abs() < 1e-15);
        assert_eq!(curve.median, None); // never reaches 0.5
    }

    #[test]
    fn weight_scale_invariance() {
        let data = dataset(&[(1.0, true), (2.0, false), (3.0, true), (4.0, true)]);
        let w = TimeVaryingWeights::from_subject_weights(&data, &[0.5, 1.5, 2.0, 0.7]).unwrap();
        let base = weighted_km(&data, &w).unwrap();
        let scaled = weighted_km(&data, &w.scale(7.25).unwrap()).unwrap();
        for (a, b) in base.survival.iter().zip(&scaled.survival) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn evaluation_conventions() {
        let data = dataset(&[(1.0, true), (2.0, true), (4.0, true)]);
        let curve = weighted_km(&data, &TimeVaryingWeights::unit(&data)).unwrap();
        assert_eq!(km_survival_at(&curve, 0.0), 1.0);
        assert_eq!(km_survival_at(&curve, 1.0), curve.survival[0]); // post-jump at the knot
        assert_eq!(km_survival_at(&curve, 100.0), *curve.survival.last().unwrap());
    }
}
