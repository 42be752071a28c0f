use serde::{Deserialize, Serialize};

use super::Matrix;

/// Adam moments for a list of weight matrices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Vec<Matrix>,
    pub second_moment: Vec<Matrix>,
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon_hat: f64,
}

impl AdamState {
    pub fn new(shapes: &[Matrix], learning_rate: f64) -> Self {
        let zeros: Vec<Matrix> = shapes
            .iter()
            .map(|m| Matrix::zeros(m.rows(), m.cols()))
            .collect();
        Self {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon_hat: 1e-8,
        }
    }

    /// One bias-corrected Adam step, `params -= lr · m̂ / (√v̂ + ε)`.
    pub fn step(&mut self, params: &mut [Matrix], grads: &[Matrix]) {
        self.step_count += 1;
        let t = self.step_count as f64;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powf(t);
        let c2 = 1.0 - b2.powf(t);
        let lr = self.learning_rate;
        let eps = self.epsilon_hat;
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            for (((w, &gi), mi), vi) in p
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .zip(m.as_mut_slice())
                .zip(v.as_mut_slice())
            {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = vec![Matrix::from_vec(1, 2, vec![1.0, -1.0]).unwrap()];
        let g = vec![Matrix::from_vec(1, 2, vec![0.5, -2.0]).unwrap()];
        let mut adam = AdamState::new(&p, 1e-3);
        adam.step(&mut p, &g);
        // bias-corrected first step is lr · sign(g) up to ε
        assert!((p[0].get(0, 0) - (1.0 - 1e-3)).abs() < 1e-10);
        assert!((p[0].get(0, 1) - (-1.0 + 1e-3)).abs() < 1e-10);
        assert_eq!(adam.step_count, 1);
        assert!(adam.second_moment[0].as_slice().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![Matrix::from_vec(1, 1, vec![0.3]).unwrap()];
        let g = vec![Matrix::zeros(1, 1)];
        let mut adam = AdamState::new(&p, 1e-3);
        for _ in 0..5 {
            adam.step(&mut p, &g);
        }
        assert_eq!(p[0].get(0, 0), 0.3);
    }
}
