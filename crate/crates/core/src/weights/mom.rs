//! Method-of-moments participation weights: exponential tilting solved by
//! Newton iteration on the convex objective `Q(zeta) = sum_i exp(x_i . zeta)`
//! over the target-centered balance functions, whose stationary point makes
//! the weighted source moments match the target moments exactly.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::survival::{CovariateKind, CovariateSchema, SurvivalDataset};

use super::{BalanceFunction, BalanceSpec, ParticipationWeights, TargetAggregate};

/// First-order balance functions for every target entry; centered-square
/// functions (matching the target variance sd^2) for continuous entries when
/// `include_second_moments` is set.
pub fn build_balance_spec(
    schema: &CovariateSchema,
    target: &TargetAggregate,
    include_second_moments: bool,
) -> Result<BalanceSpec> {
    let mut functions = Vec::new();
    for entry in target.entries() {
        let kind = schema
            .kind_of(&entry.name)
            .ok_or_else(|| Error::Invalid(format!("target covariate `{}` missing from schema", entry.name)))?;
        if kind != entry.kind {
            return Err(Error::Invalid(format!(
                "target covariate `{}` kind does not match the schema",
                entry.name
            )));
        }
        functions.push(BalanceFunction::Mean { covariate: entry.name.clone(), target: entry.mean });
        if include_second_moments && kind == CovariateKind::Continuous {
            let sd = entry.sd.ok_or_else(|| {
                Error::Invalid(format!(
                    "second moments requested but target `{}` has no sd",
                    entry.name
                ))
            })?;
            functions.push(BalanceFunction::CenteredSquare {
                covariate: entry.name.clone(),
                center: entry.mean,
                target: sd * sd,
            });
        }
    }
    Ok(BalanceSpec::from_functions(functions))
}

/// Target-centered design matrix: column k holds `h_k(X_i) - target_k`, so
/// moment matching becomes "weighted column means are zero". For
/// centered-square functions the entry is `(x - target_mean)^2 - target_var`.
pub fn center_design(data: &SurvivalDataset, spec: &BalanceSpec) -> Result<DMatrix<f64>> {
    let n = data.len();
    let k = spec.len();
    let mut columns = Vec::with_capacity(k);
    for f in spec.functions() {
        let idx = data
            .schema()
            .index_of(f.covariate())
            .ok_or_else(|| Error::Invalid(format!("unknown covariate `{}`", f.covariate())))?;
        columns.push((idx, f.clone()));
    }
    let mut m = DMatrix::zeros(n, k);
    for (i, rec) in data.records().iter().enumerate() {
        for (j, (idx, f)) in columns.iter().enumerate() {
            let x = rec.covariates[*idx];
            m[(i, j)] = match f {
                BalanceFunction::Mean { target, .. } => x - target,
                BalanceFunction::CenteredSquare { center, target, .. } => {
                    let c = x - center;
                    c * c - target
                }
            };
        }
    }
    Ok(m)
}

#[derive(Debug, Clone)]
pub struct MomOptions {
    pub max_iterations: usize,
    /// Convergence on the max-norm of the weighted moment residual
    /// `sum(x w) / sum(w)`, i.e. the tilted gradient normalized by the mean
    /// tilt. Normalizing matters: when an infeasible target drives every
    /// weight toward zero the raw gradient vanishes even though the moment
    /// constraint is nowhere near satisfied.
    pub gradient_tolerance: f64,
    /// Infeasibility guard: no tilting parameter may pass this magnitude.
    pub zeta_bound: f64,
    /// Starting point for the active tilting parameters; zero when absent.
    pub initial_zeta: Option<Vec<f64>>,
}

impl Default for MomOptions {
    fn default() -> Self {
        Self { max_iterations: 200, gradient_tolerance: 1e-10, zeta_bound: 100.0, initial_zeta: None }
    }
}

/// Solve for the tilting parameters. `labels` name the balance columns for
/// error reporting and must align with the matrix columns.
///
/// Columns that are identically zero impose no constraint (the source already
/// matches the target exactly there) and are held at zeta = 0.
pub fn solve_mom_weights(centered: &DMatrix<f64>, labels: &[String]) -> Result<ParticipationWeights> {
    solve_mom_weights_with(centered, labels, &MomOptions::default())
}

pub fn solve_mom_weights_with(
    centered: &DMatrix<f64>,
    labels: &[String],
    options: &MomOptions,
) -> Result<ParticipationWeights> {
    let n = centered.nrows();
    let k = centered.ncols();
    if labels.len() != k {
        return Err(Error::Invalid(format!("{} labels for {k} balance columns", labels.len())));
    }
    if n == 0 {
        return Err(Error::Invalid("no source subjects to weight".into()));
    }

    let active: Vec<usize> =
        (0..k).filter(|&j| centered.column(j).iter().any(|&v| v != 0.0)).collect();
    let ka = active.len();

    let mut zeta_active = match &options.initial_zeta {
        None => DVector::zeros(ka),
        Some(init) => {
            if init.len() != ka {
                return Err(Error::Invalid(format!(
                    "initial zeta has {} entries, {ka} active columns",
                    init.len()
                )));
            }
            DVector::from_column_slice(init)
        }
    };
    let mut converged = ka == 0;
    if ka > 0 {
        let x = centered.select_columns(active.iter());
        let inv_n = 1.0 / n as f64;
        let objective = |zeta: &DVector<f64>| -> f64 {
            (0..n).map(|i| (x.row(i) * zeta)[0].exp()).sum::<f64>() * inv_n
        };
        let mut tilts = DVector::from_element(n, 1.0);
        let mut grad = DVector::zeros(ka);
        let mut obj: f64;
        let eval = |zeta: &DVector<f64>, tilts: &mut DVector<f64>, grad: &mut DVector<f64>| -> f64 {
            let mut total = 0.0;
            grad.fill(0.0);
            for i in 0..n {
                let e = (x.row(i) * zeta)[0].exp();
                tilts[i] = e;
                total += e;
                for (jj, _) in active.iter().enumerate() {
                    grad[jj] += x[(i, jj)] * e;
                }
            }
            *grad *= inv_n;
            total * inv_n
        };
        obj = eval(&zeta_active, &mut tilts, &mut grad);

        for _ in 0..options.max_iterations {
            // grad / obj is the weighted moment residual sum(x w) / sum(w)
            if grad.amax() < options.gradient_tolerance * obj {
                converged = true;
                break;
            }
            // Hessian of Q: X' diag(tilts) X / n
            let mut hess = DMatrix::zeros(ka, ka);
            for i in 0..n {
                let w = tilts[i] * inv_n;
                for a in 0..ka {
                    let xa = x[(i, a)];
                    for b in a..ka {
                        hess[(a, b)] += w * xa * x[(i, b)];
                    }
                }
            }
            for a in 0..ka {
                for b in (a + 1)..ka {
                    hess[(b, a)] = hess[(a, b)];
                }
            }
            let step = match hess.clone().cholesky() {
                Some(chol) => chol.solve(&grad),
                None => {
                    return Err(Error::RankDeficient(format!(
                        "balance columns {} are linearly dependent",
                        active
                            .iter()
                            .map(|&j| labels[j].as_str())
                            .collect::<Vec<_>>()
                            .join(", ")
                    )))
                }
            };
            let mut scale = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let candidate = &zeta_active - scale * &step;
                let cand_obj = objective(&candidate);
                if cand_obj.is_finite() && cand_obj <= obj + 1e-12 * (1.0 + obj.abs()) {
                    zeta_active = candidate;
                    accepted = true;
                    break;
                }
                scale *= 0.5;
            }
            if !accepted {
                break;
            }
            if zeta_active.amax() > options.zeta_bound {
                return Err(infeasible(&active, labels, &grad));
            }
            obj = eval(&zeta_active, &mut tilts, &mut grad);
        }
        if !converged && grad.amax() < options.gradient_tolerance * obj {
            converged = true;
        }
        if !converged && zeta_active.amax() > 0.5 * options.zeta_bound {
            return Err(infeasible(&active, labels, &grad));
        }
    }

    let mut zeta = vec![0.0; k];
    for (jj, &j) in active.iter().enumerate() {
        zeta[j] = zeta_active[jj];
    }
    let weights: Vec<f64> = (0..n)
        .map(|i| (0..k).map(|j| centered[(i, j)] * zeta[j]).sum::<f64>().exp())
        .collect();

    Ok(ParticipationWeights { zeta, weights, centered_design: centered.clone(), converged })
}

fn infeasible(active: &[usize], labels: &[String], grad: &DVector<f64>) -> Error {
    // report the components whose moment constraint is furthest from holding
    let worst = grad.amax();
    let components = active
        .iter()
        .enumerate()
        .filter(|(jj, _)| grad[*jj].abs() > 0.1 * worst)
        .map(|(_, &j)| labels[j].clone())
        .collect();
    Error::InfeasibleTarget { components }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::survival::{CovariateKind, SubjectRecord, SurvivalDataset};
    use crate::weights::TargetEntry;

    fn labels(k: usize) -> Vec<String> {
        (0..k).map(|j| format!("h{j}")).collect()
    }

    #[test]
    fn zero_centered_columns_give_unit_weights() {
        let m = DMatrix::from_row_slice(4, 1, &[-1.0, 1.0, -2.0, 2.0]);
        let sol = solve_mom_weights(&m, &labels(1)).unwrap();
        assert!(sol.converged);
        assert!(sol.zeta[0].abs() < 1e-9);
        for w in &sol.weights {
            assert!((w - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn two_subject_closed_form() {
        // X in {0,1}, target mean 0.75: centered (-0.75, 0.25), zeta = ln 3
        let m = DMatrix::from_row_slice(2, 1, &[-0.75, 0.25]);
        let sol = solve_mom_weights(&m, &labels(1)).unwrap();
        assert!(sol.converged);
        assert!((sol.zeta[0] - 3.0f64.ln()).abs() < 1e-8, "zeta = {}", sol.zeta[0]);
        assert!((sol.weights[0] - 3.0f64.powf(-0.75)).abs() < 1e-8);
        assert!((sol.weights[1] - 3.0f64.powf(0.25)).abs() < 1e-8);
        // weighted mean of X is exactly 3/4
        let weighted_mean = sol.weights[1] / (sol.weights[0] + sol.weights[1]);
        assert!((weighted_mean - 0.75).abs() < 1e-10);
    }

    #[test]
    fn infeasible_target_is_detected() {
        // X in {0,1}, target mean 1.2 lies outside the support hull
        let m = DMatrix::from_row_slice(2, 1, &[-1.2, -0.2]);
        let err = solve_mom_weights(&m, &labels(1)).unwrap_err();
        assert!(matches!(err, Error::InfeasibleTarget { .. }), "{err:?}");
    }

    #[test]
    fn duplicated_columns_are_rank_deficient() {
        let m = DMatrix::from_row_slice(3, 2, &[-1.0, -1.0, 0.5, 0.5, 2.0, 2.0]);
        let err = solve_mom_weights(&m, &labels(2)).unwrap_err();
        assert!(matches!(err, Error::RankDeficient(_)), "{err:?}");
    }

    fn schema3() -> CovariateSchema {
        CovariateSchema::new(vec![
            ("x1".into(), CovariateKind::Binary),
            ("x2".into(), CovariateKind::Binary),
            ("x3".into(), CovariateKind::Continuous),
        ])
        .unwrap()
    }

    fn target3() -> TargetAggregate {
        TargetAggregate::new(
            vec![
                TargetEntry { name: "x1".into(), kind: CovariateKind::Binary, mean: 0.35, sd: None },
                TargetEntry { name: "x2".into(), kind: CovariateKind::Binary, mean: 0.55, sd: None },
                TargetEntry {
                    name: "x3".into(),
                    kind: CovariateKind::Continuous,
                    mean: 0.21,
                    sd: Some(1.5f64.sqrt()),
                },
            ],
            1000,
        )
        .unwrap()
    }

    #[test]
    fn balance_spec_counts() {
        let schema = schema3();
        let target = target3();
        let with = build_balance_spec(&schema, &target, true).unwrap();
        assert_eq!(with.len(), 4);
        assert_eq!(with.labels(), vec!["x1", "x2", "x3", "x3^2"]);
        let without = build_balance_spec(&schema, &target, false).unwrap();
        assert_eq!(without.len(), 3);
    }

    #[test]
    fn balance_spec_binary_only_with_flag_on() {
        let schema = CovariateSchema::new(vec![("x1".into(), CovariateKind::Binary)]).unwrap();
        let target = TargetAggregate::new(
            vec![TargetEntry { name: "x1".into(), kind: CovariateKind::Binary, mean: 0.4, sd: None }],
            50,
        )
        .unwrap();
        let spec = build_balance_spec(&schema, &target, true).unwrap();
        assert_eq!(spec.len(), 1);
    }

    #[test]
    fn balance_spec_errors() {
        let schema = schema3();
        let missing = TargetAggregate::new(
            vec![TargetEntry { name: "zz".into(), kind: CovariateKind::Binary, mean: 0.4, sd: None }],
            50,
        )
        .unwrap();
        assert!(build_balance_spec(&schema, &missing, false).is_err());
        let no_sd = TargetAggregate::new(
            vec![TargetEntry { name: "x3".into(), kind: CovariateKind::Continuous, mean: 0.2, sd: None }],
            50,
        )
        .unwrap();
        assert!(build_balance_spec(&schema, &no_sd, true).is_err());
        assert!(build_balance_spec(&schema, &no_sd, false).is_ok());
    }

    #[test]
    fn centered_entries_are_plain_arithmetic() {
        let schema = schema3();
        let records = vec![
            SubjectRecord {
                id: "a".into(),
                observed_time: 1.0,
                event: true,
                treatment: false,
                covariates: vec![0.0, 1.0, 1.2],
            },
            SubjectRecord {
                id: "b".into(),
                observed_time: 2.0,
                event: true,
                treatment: true,
                covariates: vec![1.0, 0.0, 0.2],
            },
        ];
        let data = SurvivalDataset::new(records, schema).unwrap();
        let target = TargetAggregate::new(
            vec![
                TargetEntry { name: "x1".into(), kind: CovariateKind::Binary, mean: 0.75, sd: None },
                TargetEntry {
                    name: "x3".into(),
                    kind: CovariateKind::Continuous,
                    mean: 0.2,
                    sd: Some(1.5f64.sqrt()),
                },
            ],
            100,
        )
        .unwrap();
        let spec = build_balance_spec(data.schema(), &target, true).unwrap();
        let m = center_design(&data, &spec).unwrap();
        // x1 centered: (-0.75, 0.25)
        assert!((m[(0, 0)] + 0.75).abs() < 1e-15);
        assert!((m[(1, 0)] - 0.25).abs() < 1e-15);
        // x3 = 1.2, target mean 0.2 -> centered 1.0; square entry 1.0 - 1.5 = -0.5
        assert!((m[(0, 1)] - 1.0).abs() < 1e-15);
        assert!((m[(0, 2)] + 0.5).abs() < 1e-12);
        // x3 = 0.2 -> centered 0 exactly
        assert_eq!(m[(1, 1)], 0.0);
    }
}
