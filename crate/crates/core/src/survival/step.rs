//! Right-continuous step functions, the carrier for cumulative hazards and
//! survival curves.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A right-continuous step function with left limits: `evaluate(t)` returns
/// the value at the largest knot `<= t`, or the pre-knot value when `t`
/// precedes every knot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    knots: Vec<f64>,
    values: Vec<f64>,
    value_before: f64,
}

impl StepFunction {
    pub fn new(knots: Vec<f64>, values: Vec<f64>, value_before: f64) -> Result<Self> {
        if knots.len() != values.len() {
            return Err(Error::Invalid(format!(
                "step function: {} knots but {} values",
                knots.len(),
                values.len()
            )));
        }
        for (i, &k) in knots.iter().enumerate() {
            if !(k > 0.0) || !k.is_finite() {
                return Err(Error::Invalid(format!("step function: knot {k} is not positive")));
            }
            if i > 0 && knots[i - 1] >= k {
                return Err(Error::Invalid("step function knots must be strictly increasing".into()));
            }
        }
        Ok(Self { knots, values, value_before })
    }

    /// The zero function (no knots).
    pub fn zero() -> Self {
        Self { knots: Vec::new(), values: Vec::new(), value_before: 0.0 }
    }

    /// Value at the largest knot `<= t` (right-continuous evaluation).
    pub fn evaluate(&self, t: f64) -> f64 {
        let idx = self.knots.partition_point(|&k| k <= t);
        if idx == 0 {
            self.value_before
        } else {
            self.values[idx - 1]
        }
    }

    /// Left limit: value at the largest knot strictly `< t`.
    pub fn evaluate_before(&self, t: f64) -> f64 {
        let idx = self.knots.partition_point(|&k| k < t);
        if idx == 0 {
            self.value_before
        } else {
            self.values[idx - 1]
        }
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value_before_first_knot(&self) -> f64 {
        self.value_before
    }

    pub fn is_non_decreasing(&self) -> bool {
        let mut prev = self.value_before;
        for &v in &self.values {
            if v < prev {
                return false;
            }
            prev = v;
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluation_is_right_continuous_with_left_limits() {
        let f = StepFunction::new(vec![1.0, 2.0, 4.0], vec![0.1, 0.3, 0.9], 0.0).unwrap();
        assert_eq!(f.evaluate(0.5), 0.0);
        assert_eq!(f.evaluate(1.0), 0.1); // right continuity at the knot
        assert_eq!(f.evaluate_before(1.0), 0.0); // left limit
        assert_eq!(f.evaluate(1.9), 0.1);
        assert_eq!(f.evaluate(2.0), 0.3);
        assert_eq!(f.evaluate_before(2.0), 0.1);
        assert_eq!(f.evaluate(100.0), 0.9);
        assert!(f.is_non_decreasing());
    }

    #[test]
    fn zero_function() {
        let f = StepFunction::zero();
        assert_eq!(f.evaluate(3.0), 0.0);
        assert_eq!(f.evaluate_before(3.0), 0.0);
    }

    #[test]
    fn rejects_unsorted_knots() {
        assert!(StepFunction::new(vec![2.0, 1.0], vec![0.0, 0.0], 0.0).is_err());
        assert!(StepFunction::new(vec![1.0, 1.0], vec![0.0, 0.0], 0.0).is_err());
        assert!(StepFunction::new(vec![0.0], vec![0.0], 0.0).is_err());
    }
}
