//! Inverse-probability-of-censoring weights from a Cox model of the censoring
//! hazard. For subject `i` at event time `t` the weight is the reciprocal of
//! the estimated probability of remaining uncensored,
//! `1 / S_c(t- | A_i, X_i) = exp(H_c0(t-) * exp(eta_i))`, with the Breslow
//! baseline evaluated at the left limit so a subject's own censoring jump
//! never inflates its weight at its exit time.

use crate::error::{Error, Result};
use crate::survival::{fit_cox, CoxFit, DesignColumn, EventFlag, StepFunction, SurvivalDataset};

use super::TimeVaryingWeights;

/// The fitted censoring model (absent when the data carry no censored records,
/// in which case the weights are exactly unit) plus the per-subject IPCW rows
/// on the dataset's event-time grid.
#[derive(Debug, Clone)]
pub struct CensoringWeights {
    pub fit: Option<CoxFit>,
    pub weights: TimeVaryingWeights,
}

/// Fit the censoring hazard model (censoring as the event) and build the
/// time-varying IPCW rows. Rows are >= 1 and non-decreasing over the grid.
pub fn fit_censoring_weights(
    data: &SurvivalDataset,
    design: &[DesignColumn],
) -> Result<CensoringWeights> {
    if data.n_censored() == 0 {
        return Ok(CensoringWeights { fit: None, weights: TimeVaryingWeights::unit(data) });
    }
    let fit = fit_cox(data, design, None, EventFlag::Censoring)?;
    if !fit.converged {
        return Err(Error::NotConverged {
            what: "censoring hazard model".into(),
            iterations: fit.iterations,
        });
    }
    let weights = ipcw_rows(data, design, &fit.coefficients, &fit.baseline_cumhaz)?;
    Ok(CensoringWeights { fit: Some(fit), weights })
}

/// IPCW rows for given censoring-model coefficients and baseline cumulative
/// hazard: `w_i(t) = exp(H_c0(t-) * exp(eta_i))` over the event-time grid.
fn ipcw_rows(
    data: &SurvivalDataset,
    design: &[DesignColumn],
    coefficients: &[f64],
    baseline: &StepFunction,
) -> Result<TimeVaryingWeights> {
    let grid = data.event_times().to_vec();
    let h_left: Vec<f64> = grid.iter().map(|&t| baseline.evaluate_before(t)).collect();
    let z = data.design_matrix(design)?;
    let p = design.len();
    let rows = data
        .records()
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            let eta: f64 =
                z[i * p..(i + 1) * p].iter().zip(coefficients).map(|(zv, b)| zv * b).sum();
            let risk = eta.exp();
            let len = grid.partition_point(|&t| t <= rec.observed_time);
            (0..len).map(|k| (h_left[k] * risk).exp()).collect()
        })
        .collect();
    TimeVaryingWeights::from_rows(grid, rows, None)
}
