use serde::{Deserialize, Serialize};

use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moment accumulators with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, parameter_count: usize) -> Self {
        Self {
            config,
            m: vec![0.0; parameter_count],
            v: vec![0.0; parameter_count],
            t: 0,
        }
    }

    /// Apply one descent step. Non-finite gradients are rejected before any
    /// state is touched.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<(), NnError> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(NnError::Dimension {
                what: "adam step",
                expected: self.m.len(),
                got: if params.len() != self.m.len() {
                    params.len()
                } else {
                    grad.len()
                },
            });
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(NnError::Divergence(format!(
                "non-finite gradient entry {} at index {i}",
                grad[i]
            )));
        }
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.t += 1;
        let t = self.t as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / bias1;
            let v_hat = self.v[i] / bias2;
            params[i] -= learning_rate * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut adam = AdamState::new(AdamConfig::default(), 3);
        let mut p = vec![1.0, -2.0, 3.0];
        adam.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let lr = 1e-3;
        let mut adam = AdamState::new(AdamConfig::with_learning_rate(lr), 4);
        let mut p = vec![0.0; 4];
        adam.step(&mut p, &[0.5, -0.5, 3.0, -7.0]).unwrap();
        for (pi, g) in p.iter().zip([0.5f64, -0.5, 3.0, -7.0]) {
            assert!((pi + lr * g.signum()).abs() < 1e-9, "{pi}");
        }
    }

    #[test]
    fn rejects_non_finite_without_mutation() {
        let mut adam = AdamState::new(AdamConfig::default(), 2);
        let mut p = vec![1.0, 1.0];
        let err = adam.step(&mut p, &[f64::NAN, 0.0]).unwrap_err();
        assert!(matches!(err, NnError::Divergence(_)));
        assert_eq!(p, vec![1.0, 1.0]);
        assert_eq!(adam.t, 0);
    }

    #[test]
    fn descends_convex_quadratic() {
        // f(x) = sum_i c_i (x_i - s_i)^2, scalar oracle for value and gradient
        let centers = [3.0, -1.0, 0.5];
        let curv = [1.0, 4.0, 0.25];
        let f = |x: &[f64]| -> f64 {
            x.iter().zip(centers).zip(curv).map(|((xi, s), c)| c * (xi - s) * (xi - s)).sum()
        };
        let mut adam = AdamState::new(AdamConfig::with_learning_rate(0.05), 3);
        let mut x = vec![0.0; 3];
        let mut losses = vec![f(&x)];
        for _ in 0..100 {
            let g: Vec<f64> = x.iter().zip(centers).zip(curv).map(|((xi, s), c)| 2.0 * c * (xi - s)).collect();
            adam.step(&mut x, &g).unwrap();
            losses.push(f(&x));
        }
        // strictly decreasing during the approach phase
        for w in losses[..30].windows(2) {
            assert!(w[1] < w[0], "{w:?}");
        }
        assert!(losses[100] < 0.05 * losses[0]);
    }
}
