//! Dense numeric kernels.

mod adam;
mod gradcheck;
mod matrix;
mod mlp;

pub use adam::AdamState;
pub use gradcheck::{compare_gradient, gradient_check};
pub use matrix::{solve_linear_system, Cholesky, Matrix};
pub use mlp::{mlp_forward, mlp_gradient, mlp_train_step, output_gradient, MlpParams, Batch};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix is not positive definite (pivot {pivot} = {value})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("empty input")]
    Empty,
    #[error("training diverged: loss = {0}")]
    Divergence(f64),
    #[error("invalid argument: {0}")]
    Invalid(String),
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(v: &[f64]) -> Result<Vec<f64>, NumericError> {
    if v.is_empty() {
        return Err(NumericError::Empty);
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = v.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    Ok(out)
}

/// Index of the largest entry; ties go to the lowest index. NaN entries never win.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, &x) in v.iter().enumerate() {
        if x > best_val {
            best = i;
            best_val = x;
        }
    }
    best
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        for c in [-300.0, 0.0, 7.5, 1e3] {
            let p = softmax(&[c; 4]).unwrap();
            p.iter().for_each(|&x| assert!((x - 0.25).abs() < 1e-15));
        }
        // e / (e + 1)
        let p = softmax(&[1.0, 0.0]).unwrap();
        assert!((p[0] - 0.731_058_578_630_004_9).abs() < 1e-15);
        assert!((p[1] - 0.268_941_421_369_995_1).abs() < 1e-15);
        assert_eq!(softmax(&[]), Err(NumericError::Empty));
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
        assert_eq!(argmax(&[f64::NAN, -1.0]), 1);
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(
            v in prop::collection::vec(-50.0f64..50.0, 1..12),
            shift in -100.0f64..100.0,
        ) {
            let p = softmax(&v).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&x| x > 0.0));
            let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
            let q = softmax(&shifted).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
