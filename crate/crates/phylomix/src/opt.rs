//! First-order adaptive-moment optimizer used for SBN logits and branch
//! parameters.

/// Adam with the usual bias correction. `step` maximizes: parameters move
/// along the supplied gradient.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, n_params: usize) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), grad.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / b1t;
            let vhat = self.v[i] / b2t;
            params[i] += self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }

    /// Serialized optimizer state (first moments, second moments, step).
    pub fn state(&self) -> (&[f64], &[f64], u64) {
        (&self.m, &self.v, self.t)
    }

    pub fn restore(lr: f64, m: Vec<f64>, v: Vec<f64>, t: u64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m, v, t }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn climbs_a_quadratic() {
        // Maximize -(x-3)^2: gradient is -2(x-3).
        let mut adam = Adam::new(0.1, 1);
        let mut x = vec![0.0];
        for _ in 0..500 {
            let g = [-2.0 * (x[0] - 3.0)];
            adam.step(&mut x, &g);
        }
        assert!((x[0] - 3.0).abs() < 1e-3);
    }

    #[test]
    fn zero_lr_leaves_params_unchanged() {
        let mut adam = Adam::new(0.0, 2);
        let mut x = vec![1.0, -2.0];
        adam.step(&mut x, &[0.5, -0.5]);
        assert_eq!(x, vec![1.0, -2.0]);
    }
}
