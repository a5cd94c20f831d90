use serde::{Deserialize, Serialize};

use crate::dataset::Target;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Softmax cross-entropy over logits.
    CrossEntropy,
    /// Mean over outputs of the squared residual.
    SquaredError,
}

impl Loss {
    /// Per-sample loss and its gradient with respect to the network output.
    pub fn value_and_grad(&self, output: &[f64], target: &Target) -> Result<(f64, Vec<f64>)> {
        match (self, target) {
            (Loss::CrossEntropy, Target::Class(c)) => {
                if *c >= output.len() {
                    return Err(Error::DimensionMismatch {
                        expected: output.len(),
                        got: *c + 1,
                    });
                }
                let max = output.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = output.iter().map(|v| (v - max).exp()).collect();
                let sum: f64 = exps.iter().sum();
                let loss = sum.ln() + max - output[*c];
                let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
                grad[*c] -= 1.0;
                Ok((loss, grad))
            }
            (Loss::SquaredError, Target::Value(y)) => {
                if y.len() != output.len() {
                    return Err(Error::DimensionMismatch {
                        expected: output.len(),
                        got: y.len(),
                    });
                }
                let m = output.len() as f64;
                let residual: Vec<f64> = output.iter().zip(y.iter()).map(|(o, t)| o - t).collect();
                let loss = residual.iter().map(|r| r * r).sum::<f64>() / m;
                let grad = residual.iter().map(|r| 2.0 * r / m).collect();
                Ok((loss, grad))
            }
            (loss, target) => Err(Error::InvalidArgument(format!(
                "loss {loss:?} cannot score target {target:?}"
            ))),
        }
    }

    pub fn value(&self, output: &[f64], target: &Target) -> Result<f64> {
        self.value_and_grad(output, target).map(|(l, _)| l)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Vector;

    #[test]
    fn uniform_logits_give_ln_k() {
        for k in [2usize, 3, 7] {
            let l = Loss::CrossEntropy
                .value(&vec![0.3; k], &Target::Class(1))
                .unwrap();
            assert!((l - (k as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_onehot() {
        let (_, g) = Loss::CrossEntropy
            .value_and_grad(&[0.0, 0.0], &Target::Class(0))
            .unwrap();
        assert_eq!(g, vec![-0.5, 0.5]);
    }

    #[test]
    fn cross_entropy_is_stable_for_large_logits() {
        let l = Loss::CrossEntropy
            .value(&[1000.0, 0.0], &Target::Class(0))
            .unwrap();
        assert!(l.is_finite() && l < 1e-12);
    }

    #[test]
    fn squared_error_mean_over_outputs() {
        let (l, g) = Loss::SquaredError
            .value_and_grad(&[1.0, 3.0], &Target::Value(Vector::new(vec![0.0, 1.0])))
            .unwrap();
        assert_eq!(l, 2.5);
        assert_eq!(g, vec![1.0, 2.0]);
    }

    #[test]
    fn mismatched_target_kind_is_rejected() {
        assert!(Loss::CrossEntropy
            .value(&[0.0], &Target::Value(Vector::new(vec![0.0])))
            .is_err());
        assert!(Loss::SquaredError.value(&[0.0], &Target::Class(0)).is_err());
    }
}
