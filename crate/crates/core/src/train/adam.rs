//! Adam with bias-corrected moment estimates.

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..AdamConfig::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(config: AdamConfig, dim: usize) -> Self {
        Adam {
            config,
            step: 0,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update in place. Parameters with zero gradient stay put only at
    /// the first step; afterwards stale momentum still moves them, which is
    /// the standard behaviour.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        assert_eq!(grads.len(), self.m.len(), "gradient count changed");
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // with bias correction the first update is lr * g / (|g| + eps)
        let mut opt = Adam::new(AdamConfig::with_learning_rate(0.05), 2);
        let mut p = vec![1.0, -3.0];
        opt.step(&mut p, &[0.2, -0.7]);
        assert!((p[0] - (1.0 - 0.05)).abs() < 1e-6);
        assert!((p[1] - (-3.0 + 0.05)).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_is_a_no_op_initially() {
        let mut opt = Adam::new(AdamConfig::default(), 3);
        let mut p = vec![0.5, -0.5, 2.0];
        let before = p.clone();
        opt.step(&mut p, &[0.0; 3]);
        assert_eq!(p, before);
    }

    #[test]
    fn converges_on_a_quadratic() {
        let mut opt = Adam::new(AdamConfig::with_learning_rate(0.1), 1);
        let mut p = vec![4.0];
        for _ in 0..500 {
            let g = 2.0 * (p[0] - 1.5);
            opt.step(&mut p, &[g]);
        }
        assert!((p[0] - 1.5).abs() < 1e-3, "got {}", p[0]);
    }
}
