//! Cox proportional-hazards fitting by damped Newton iteration on the
//! (optionally weighted) partial likelihood, with the Breslow convention for
//! ties and the Breslow estimator for the baseline cumulative hazard.
//!
//! Time-varying weights enter through a counting-process view: at each
//! distinct event time the risk-set sums use every at-risk subject's weight
//! evaluated at that time, which reproduces the weighted partial likelihood
//! exactly.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::weights::TimeVaryingWeights;

use super::step::StepFunction;
use super::{DesignColumn, EventFlag, SurvivalDataset};

/// A fitted Cox model.
#[derive(Debug, Clone)]
pub struct CoxFit {
    /// Log-hazard-ratio coefficients, aligned with `covariate_names`.
    pub coefficients: Vec<f64>,
    pub covariate_names: Vec<String>,
    /// Weighted log partial likelihood at `coefficients`.
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Breslow baseline cumulative hazard.
    pub baseline_cumhaz: StepFunction,
}

impl CoxFit {
    /// Linear predictor for one record under this fit's design.
    pub fn linear_predictor(&self, values: &[f64]) -> f64 {
        self.coefficients.iter().zip(values).map(|(b, z)| b * z).sum()
    }
}

#[derive(Debug, Clone)]
pub struct CoxOptions {
    pub max_iterations: usize,
    /// Convergence: max-norm of the score vector below this.
    pub gradient_tolerance: f64,
    /// Monotone-likelihood guard: error out when any |coefficient| passes this.
    pub separation_bound: f64,
}

impl Default for CoxOptions {
    fn default() -> Self {
        Self { max_iterations: 50, gradient_tolerance: 1e-8, separation_bound: 20.0 }
    }
}

/// Maximize the weighted partial likelihood. With `weights` absent (or all
/// unit) this is the classical Breslow-ties Cox fit. Non-convergence within
/// the iteration budget is reported through `converged`, not as an error;
/// separation and a singular information matrix are errors.
pub fn fit_cox(
    data: &SurvivalDataset,
    design: &[DesignColumn],
    weights: Option<&TimeVaryingWeights>,
    flag: EventFlag,
) -> Result<CoxFit> {
    fit_cox_with(data, design, weights, flag, &CoxOptions::default())
}

pub fn fit_cox_with(
    data: &SurvivalDataset,
    design: &[DesignColumn],
    weights: Option<&TimeVaryingWeights>,
    flag: EventFlag,
    options: &CoxOptions,
) -> Result<CoxFit> {
    let core = fit_cox_core(data, design, weights, flag, options)?;
    let baseline_cumhaz = breslow_cumhaz(data, design, &core.coefficients, weights, flag)?;
    Ok(CoxFit {
        coefficients: core.coefficients,
        covariate_names: design.iter().map(|c| c.name().to_string()).collect(),
        loglik: core.loglik,
        converged: core.converged,
        iterations: core.iterations,
        baseline_cumhaz,
    })
}

/// Fit without materializing the baseline hazard (bootstrap hot path).
pub(crate) struct CoxCoreFit {
    pub coefficients: Vec<f64>,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
}

pub(crate) fn fit_cox_core(
    data: &SurvivalDataset,
    design: &[DesignColumn],
    weights: Option<&TimeVaryingWeights>,
    flag: EventFlag,
    options: &CoxOptions,
) -> Result<CoxCoreFit> {
    if design.is_empty() {
        return Err(Error::Invalid("empty design".into()));
    }
    let problem = Problem::build(data, design, weights, flag)?;
    if problem.grid.is_empty() {
        return Err(Error::NoEvents { kind: flag.label().to_string() });
    }
    let names: Vec<String> = design.iter().map(|c| c.name().to_string()).collect();
    newton(&problem, &names, options)
}

/// Breslow estimator of the baseline cumulative hazard for the given
/// coefficients: jumps of (weighted events) / (weighted risk-set mass) at each
/// distinct time of the chosen indicator. With no such times the zero function
/// is returned.
pub fn breslow_cumhaz(
    data: &SurvivalDataset,
    design: &[DesignColumn],
    coefficients: &[f64],
    weights: Option<&TimeVaryingWeights>,
    flag: EventFlag,
) -> Result<StepFunction> {
    if coefficients.len() != design.len() {
        return Err(Error::Invalid(format!(
            "{} coefficients for {} design columns",
            coefficients.len(),
            design.len()
        )));
    }
    let problem = Problem::build(data, design, weights, flag)?;
    if problem.grid.is_empty() {
        return Ok(StepFunction::zero());
    }
    let risk = problem.risk_scores(coefficients);
    let mut cumulative = 0.0;
    let mut values = Vec::with_capacity(problem.grid.len());
    for k in 0..problem.grid.len() {
        let mut denom = 0.0;
        for &j in &problem.order[problem.risk_from[k]..] {
            denom += problem.weight(j, k) * risk[j];
        }
        let mut d = 0.0;
        problem.for_each_event(k, |i| d += problem.weight(i, k));
        if !(denom > 0.0) || !denom.is_finite() {
            return Err(Error::Invalid(format!(
                "degenerate risk set at time {}",
                problem.grid[k]
            )));
        }
        cumulative += d / denom;
        values.push(cumulative);
    }
    StepFunction::new(problem.grid.clone(), values, 0.0)
}

// ---------------------------------------------------------------------------
// Internal machinery
// ---------------------------------------------------------------------------

enum WeightView<'a> {
    Unit,
    Varying(&'a TimeVaryingWeights),
}

/// Precomputed sufficient statistics for the weighted single-binary-column
/// fast path: per event time, at-risk and event weight mass by arm.
struct BinarySums {
    w0: Vec<f64>,
    w1: Vec<f64>,
    d0: Vec<f64>,
    d1: Vec<f64>,
}

enum Mode {
    /// Unit weights, any design: descending-time accumulation.
    Unit,
    /// Time-varying weights with one binary column.
    BinarySingle(BinarySums),
    /// Time-varying weights, general design.
    Generic,
}

pub(super) struct Problem<'a> {
    n: usize,
    p: usize,
    /// Row-major n x p design values in subject order.
    z: Vec<f64>,
    time: Vec<f64>,
    flagged: Vec<bool>,
    /// Subject indices ascending by time.
    order: Vec<usize>,
    /// Distinct times of the chosen indicator, ascending.
    grid: Vec<f64>,
    /// grid index -> first position in `order` whose time >= grid value.
    risk_from: Vec<usize>,
    /// grid index -> positions in `order` holding times == grid value.
    tie_range: Vec<(usize, usize)>,
    weights: WeightView<'a>,
    mode: Mode,
}

impl<'a> Problem<'a> {
    fn build(
        data: &SurvivalDataset,
        design: &[DesignColumn],
        weights: Option<&'a TimeVaryingWeights>,
        flag: EventFlag,
    ) -> Result<Self> {
        let n = data.len();
        let p = design.len();
        let z = data.design_matrix(design)?;
        let time: Vec<f64> = data.records().iter().map(|r| r.observed_time).collect();
        let flagged: Vec<bool> = data.records().iter().map(|r| flag.indicates(r)).collect();

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| time[a].total_cmp(&time[b]).then(a.cmp(&b)));

        let mut grid = data.flag_times(flag);
        grid.shrink_to_fit();

        let mut risk_from = Vec::with_capacity(grid.len());
        let mut tie_range = Vec::with_capacity(grid.len());
        let mut pos = 0usize;
        for &t in &grid {
            while pos < n && time[order[pos]] < t {
                pos += 1;
            }
            let start = pos;
            let mut end = pos;
            while end < n && time[order[end]] == t {
                end += 1;
            }
            risk_from.push(start);
            tie_range.push((start, end));
        }

        let weights = match weights {
            None => WeightView::Unit,
            Some(w) => {
                if w.grid() != grid.as_slice() {
                    return Err(Error::WeightShapeMismatch(format!(
                        "weights are on a {}-point grid, the {} grid has {} points",
                        w.grid().len(),
                        flag.label(),
                        grid.len()
                    )));
                }
                for (i, &t) in time.iter().enumerate() {
                    let expect = grid.partition_point(|&g| g <= t);
                    if w.row(i).len() != expect {
                        return Err(Error::WeightShapeMismatch(format!(
                            "subject {i}: weight row covers {} grid times, expected {expect}",
                            w.row(i).len()
                        )));
                    }
                }
                if w.is_unit() {
                    WeightView::Unit
                } else {
                    WeightView::Varying(w)
                }
            }
        };

        let mut problem = Problem {
            n,
            p,
            z,
            time,
            flagged,
            order,
            grid,
            risk_from,
            tie_range,
            weights,
            mode: Mode::Unit,
        };
        problem.mode = problem.choose_mode();
        Ok(problem)
    }

    fn choose_mode(&self) -> Mode {
        match self.weights {
            WeightView::Unit => Mode::Unit,
            WeightView::Varying(_) => {
                let binary = self.p == 1 && self.z.iter().all(|&v| v == 0.0 || v == 1.0);
                if binary {
                    Mode::BinarySingle(self.binary_sums())
                } else {
                    Mode::Generic
                }
            }
        }
    }

    fn binary_sums(&self) -> BinarySums {
        let k_count = self.grid.len();
        let mut sums = BinarySums {
            w0: vec![0.0; k_count],
            w1: vec![0.0; k_count],
            d0: vec![0.0; k_count],
            d1: vec![0.0; k_count],
        };
        for k in 0..k_count {
            for &j in &self.order[self.risk_from[k]..] {
                let w = self.weight(j, k);
                if self.z[j] == 1.0 {
                    sums.w1[k] += w;
                } else {
                    sums.w0[k] += w;
                }
            }
            self.for_each_event(k, |i| {
                let w = self.weight(i, k);
                if self.z[i] == 1.0 {
                    sums.d1[k] += w;
                } else {
                    sums.d0[k] += w;
                }
            });
        }
        sums
    }

    #[inline]
    fn weight(&self, subject: usize, k: usize) -> f64 {
        match self.weights {
            WeightView::Unit => 1.0,
            WeightView::Varying(w) => w.value(subject, k),
        }
    }

    #[inline]
    fn for_each_event(&self, k: usize, mut f: impl FnMut(usize)) {
        let (start, end) = self.tie_range[k];
        for &i in &self.order[start..end] {
            if self.flagged[i] {
                f(i);
            }
        }
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.z[i * self.p..(i + 1) * self.p]
    }

    fn risk_scores(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let eta: f64 = self.row(i).iter().zip(beta).map(|(z, b)| z * b).sum();
                eta.exp()
            })
            .collect()
    }

    /// Log partial likelihood, score, and information at `beta`.
    fn eval(&self, beta: &[f64], grad: &mut [f64], info: &mut DMatrix<f64>) -> f64 {
        grad.fill(0.0);
        info.fill(0.0);
        match &self.mode {
            Mode::BinarySingle(sums) => self.eval_binary(sums, beta[0], Some((grad, info))),
            Mode::Unit => self.eval_unit(beta, Some((grad, info))),
            Mode::Generic => self.eval_generic(beta, Some((grad, info))),
        }
    }

    fn loglik(&self, beta: &[f64]) -> f64 {
        match &self.mode {
            Mode::BinarySingle(sums) => self.eval_binary(sums, beta[0], None),
            Mode::Unit => self.eval_unit(beta, None),
            Mode::Generic => self.eval_generic(beta, None),
        }
    }

    fn eval_binary(
        &self,
        sums: &BinarySums,
        beta: f64,
        mut derivs: Option<(&mut [f64], &mut DMatrix<f64>)>,
    ) -> f64 {
        let r = beta.exp();
        let mut ll = 0.0;
        for k in 0..self.grid.len() {
            let s0 = sums.w0[k] + r * sums.w1[k];
            let d = sums.d0[k] + sums.d1[k];
            if d == 0.0 {
                continue;
            }
            ll += beta * sums.d1[k] - d * s0.ln();
            if let Some((grad, info)) = derivs.as_mut() {
                let p1 = r * sums.w1[k] / s0;
                grad[0] += sums.d1[k] - d * p1;
                info[(0, 0)] += d * p1 * (1.0 - p1);
            }
        }
        ll
    }

    /// Unit weights: single descending-time sweep with accumulating risk sums.
    fn eval_unit(&self, beta: &[f64], mut derivs: Option<(&mut [f64], &mut DMatrix<f64>)>) -> f64 {
        let p = self.p;
        let risk = self.risk_scores(beta);
        let mut ll = 0.0;
        let mut s0 = 0.0;
        let mut s1 = vec![0.0; p];
        let mut s2: DMatrix<f64> = DMatrix::zeros(p, p);
        let want_derivs = derivs.is_some();

        let mut pos = self.n;
        while pos > 0 {
            // group of tied times [start, pos)
            let t = self.time[self.order[pos - 1]];
            let mut start = pos;
            while start > 0 && self.time[self.order[start - 1]] == t {
                start -= 1;
            }
            for &j in &self.order[start..pos] {
                let r = risk[j];
                s0 += r;
                let row = self.row(j);
                if want_derivs {
                    for a in 0..p {
                        s1[a] += r * row[a];
                        for b in a..p {
                            s2[(a, b)] += r * row[a] * row[b];
                        }
                    }
                } else {
                    for a in 0..p {
                        s1[a] += r * row[a];
                    }
                }
            }
            let mut d = 0.0;
            let mut sum_eta = 0.0;
            let mut sum_z = vec![0.0; p];
            for &i in &self.order[start..pos] {
                if self.flagged[i] {
                    d += 1.0;
                    let row = self.row(i);
                    sum_eta += row.iter().zip(beta).map(|(z, b)| z * b).sum::<f64>();
                    for a in 0..p {
                        sum_z[a] += row[a];
                    }
                }
            }
            if d > 0.0 {
                ll += sum_eta - d * s0.ln();
                if let Some((grad, info)) = derivs.as_mut() {
                    for a in 0..p {
                        let mean_a = s1[a] / s0;
                        grad[a] += sum_z[a] - d * mean_a;
                        for b in a..p {
                            info[(a, b)] += d * (s2[(a, b)] / s0 - mean_a * s1[b] / s0);
                        }
                    }
                }
            }
            pos = start;
        }
        if let Some((_, info)) = derivs.as_mut() {
            symmetrize_upper(info);
        }
        ll
    }

    /// Time-varying weights, general design: per event time, a pass over the
    /// at-risk suffix with that time's weights.
    fn eval_generic(
        &self,
        beta: &[f64],
        mut derivs: Option<(&mut [f64], &mut DMatrix<f64>)>,
    ) -> f64 {
        let p = self.p;
        let risk = self.risk_scores(beta);
        let mut ll = 0.0;
        let mut s1 = vec![0.0; p];
        let mut s2: DMatrix<f64> = DMatrix::zeros(p, p);
        let want_derivs = derivs.is_some();

        for k in 0..self.grid.len() {
            let mut s0 = 0.0;
            s1.fill(0.0);
            if want_derivs {
                s2.fill(0.0);
            }
            for &j in &self.order[self.risk_from[k]..] {
                let wr = self.weight(j, k) * risk[j];
                s0 += wr;
                let row = self.row(j);
                if want_derivs {
                    for a in 0..p {
                        s1[a] += wr * row[a];
                        for b in a..p {
                            s2[(a, b)] += wr * row[a] * row[b];
                        }
                    }
                } else {
                    for a in 0..p {
                        s1[a] += wr * row[a];
                    }
                }
            }
            let mut d = 0.0;
            let mut sum_w_eta = 0.0;
            let mut sum_wz = vec![0.0; p];
            self.for_each_event(k, |i| {
                let w = self.weight(i, k);
                d += w;
                let row = self.row(i);
                sum_w_eta += w * row.iter().zip(beta).map(|(z, b)| z * b).sum::<f64>();
                for a in 0..p {
                    sum_wz[a] += w * row[a];
                }
            });
            if d > 0.0 {
                ll += sum_w_eta - d * s0.ln();
                if let Some((grad, info)) = derivs.as_mut() {
                    for a in 0..p {
                        let mean_a = s1[a] / s0;
                        grad[a] += sum_wz[a] - d * mean_a;
                        for b in a..p {
                            info[(a, b)] += d * (s2[(a, b)] / s0 - mean_a * s1[b] / s0);
                        }
                    }
                }
            }
        }
        if let Some((_, info)) = derivs.as_mut() {
            symmetrize_upper(info);
        }
        ll
    }
}

fn symmetrize_upper(m: &mut DMatrix<f64>) {
    let p = m.nrows();
    for a in 0..p {
        for b in (a + 1)..p {
            m[(b, a)] = m[(a, b)];
        }
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

fn solve_information(info: &DMatrix<f64>, grad: &[f64]) -> Result<Vec<f64>> {
    let rhs = DVector::from_column_slice(grad);
    if let Some(chol) = info.clone().cholesky() {
        let sol = chol.solve(&rhs);
        if sol.iter().all(|v| v.is_finite()) {
            return Ok(sol.as_slice().to_vec());
        }
    }
    let lu = info.clone().lu();
    match lu.solve(&rhs) {
        Some(sol) if sol.iter().all(|v| v.is_finite()) => Ok(sol.as_slice().to_vec()),
        _ => Err(Error::SingularHessian),
    }
}

/// A vanishing score alone does not mean a maximum was reached: on a monotone
/// likelihood the score decays exponentially while Newton keeps proposing O(1)
/// increments. Convergence therefore requires both a small score and a small
/// proposed increment; flat ridges keep walking until the separation bound
/// trips.
const STEP_TOLERANCE: f64 = 1e-6;

fn newton(problem: &Problem, names: &[String], options: &CoxOptions) -> Result<CoxCoreFit> {
    let p = problem.p;
    let mut beta = vec![0.0; p];
    let mut grad = vec![0.0; p];
    let mut info = DMatrix::zeros(p, p);
    let mut ll = problem.eval(&beta, &mut grad, &mut info);
    let mut iterations = 0;
    let mut converged = false;

    loop {
        let step = solve_information(&info, &grad)?;
        if max_abs(&grad) < options.gradient_tolerance && max_abs(&step) < STEP_TOLERANCE {
            converged = true;
            break;
        }
        if iterations >= options.max_iterations {
            break;
        }
        iterations += 1;
        // step-halving when the full Newton step decreases the log likelihood
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let candidate: Vec<f64> =
                beta.iter().zip(&step).map(|(b, s)| b + scale * s).collect();
            let cand_ll = problem.loglik(&candidate);
            if cand_ll.is_finite() && cand_ll >= ll - 1e-10 * (1.0 + ll.abs()) {
                beta = candidate;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
        for (m, b) in beta.iter().enumerate() {
            if b.abs() > options.separation_bound {
                return Err(Error::Separation {
                    term: names[m].clone(),
                    bound: options.separation_bound,
                });
            }
        }
        ll = problem.eval(&beta, &mut grad, &mut info);
    }

    Ok(CoxCoreFit { coefficients: beta, loglik: ll, converged, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::survival::{CovariateKind, CovariateSchema, SubjectRecord};

    fn rec(t: f64, event: bool, trt: bool) -> SubjectRecord {
        SubjectRecord {
            id: format!("t{t}"),
            observed_time: t,
            event,
            treatment: trt,
            covariates: vec![],
        }
    }

    fn dataset(records: Vec<SubjectRecord>) -> SurvivalDataset {
        SurvivalDataset::new(records, CovariateSchema::new(vec![]).unwrap()).unwrap()
    }

    #[test]
    fn complete_separation_is_reported() {
        let data = dataset(vec![rec(1.0, true, true), rec(2.0, true, false)]);
        let err = fit_cox(&data, &[DesignColumn::Treatment], None, EventFlag::Event).unwrap_err();
        assert!(matches!(err, Error::Separation { .. }), "got {err:?}");
    }

    #[test]
    fn no_events_is_an_error() {
        let data = dataset(vec![rec(1.0, false, true), rec(2.0, false, false)]);
        assert!(matches!(
            fit_cox(&data, &[DesignColumn::Treatment], None, EventFlag::Event),
            Err(Error::NoEvents { .. })
        ));
    }

    #[test]
    fn breslow_single_event_unit_risk() {
        // one event at t=1 among 4 at-risk subjects, eta = 0 -> jump 1/4
        let data = dataset(vec![
            rec(1.0, true, false),
            rec(2.0, false, false),
            rec(3.0, false, false),
            rec(4.0, false, false),
        ]);
        let h = breslow_cumhaz(&data, &[DesignColumn::Treatment], &[0.0], None, EventFlag::Event)
            .unwrap();
        assert_eq!(h.knots(), &[1.0]);
        assert!((h.evaluate(1.0) - 0.25).abs() < 1e-15);
        assert_eq!(h.evaluate_before(1.0), 0.0);
    }

    #[test]
    fn breslow_no_events_is_zero() {
        let data = dataset(vec![rec(1.0, true, false), rec(2.0, true, false)]);
        let h =
            breslow_cumhaz(&data, &[DesignColumn::Treatment], &[0.0], None, EventFlag::Censoring)
                .unwrap();
        assert_eq!(h.knots().len(), 0);
        assert_eq!(h.evaluate(10.0), 0.0);
    }

    #[test]
    fn unit_weight_reduction_is_bit_exact() {
        let data = dataset(vec![
            rec(1.0, true, true),
            rec(2.0, true, false),
            rec(2.5, false, true),
            rec(3.0, true, true),
            rec(4.0, true, false),
            rec(5.0, false, false),
        ]);
        let unit = TimeVaryingWeights::unit(&data);
        let bare = fit_cox(&data, &[DesignColumn::Treatment], None, EventFlag::Event).unwrap();
        let with =
            fit_cox(&data, &[DesignColumn::Treatment], Some(&unit), EventFlag::Event).unwrap();
        assert_eq!(bare.coefficients, with.coefficients);
        assert_eq!(bare.loglik, with.loglik);
        assert!(bare.converged);
    }

    #[test]
    fn censoring_flag_swaps_the_event_indicator() {
        let data = dataset(vec![
            rec(1.0, false, true),
            rec(2.0, false, false),
            rec(2.5, true, true),
            rec(3.0, false, true),
            rec(4.0, false, false),
        ]);
        let fit = fit_cox(&data, &[DesignColumn::Treatment], None, EventFlag::Censoring).unwrap();
        assert!(fit.converged);
        // censoring "events" drive the fit; knots at censoring times only
        assert_eq!(fit.baseline_cumhaz.knots(), &[1.0, 2.0, 3.0, 4.0]);
    }
}
